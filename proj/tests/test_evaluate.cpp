#include <cmath>
#include <filesystem>
#include <map>

#include "c2f/errors.hpp"
#include "c2f/evaluate.hpp"
#include "c2f/rng.hpp"
#include "doctest.h"

using namespace c2f;
using namespace c2f::bench;

namespace {

const Suite& suite() {
    static const Suite s = synthetic_suite();
    return s;
}

EvaluateOptions small(std::vector<Level> levels, int episodes = 3, int seeds = 2) {
    EvaluateOptions o;
    o.levels = std::move(levels);
    o.episodes_per_variation = episodes;
    o.seeds = seeds;
    return o;
}

}  // namespace

TEST_CASE("oracle policy solves every level") {
    const auto r = evaluate(suite(), {}, small({Level::train, Level::L1, Level::L2, Level::L3, Level::L4}));
    REQUIRE(r.levels.size() == 5);
    for (const auto& [level, stat] : r.levels) {
        CAPTURE(to_string(level));
        CHECK(stat.mean == 1.0);
        CHECK(stat.std == 0.0);
    }
    for (const auto& e : r.episodes) {
        CHECK(e.error.empty());
        CHECK(e.steps <= e.max_steps);
        CHECK(e.anomalies == 0);
    }
}

TEST_CASE("statistics recompute from the raw episode log") {
    PolicyOptions p;
    p.kind = PolicyKind::noisy_oracle;
    p.planner_mode = PlannerMode::monolithic;
    const auto r = evaluate(suite(), p, small({Level::L4}, 4, 3));
    std::map<int, std::pair<double, double>> per_seed;
    for (const auto& e : r.episodes) {
        per_seed[e.seed_index].first += e.success;
        per_seed[e.seed_index].second += 1;
    }
    std::vector<double> rates;
    for (const auto& [s, v] : per_seed) rates.push_back(v.first / v.second);
    double mean = 0.0;
    for (double v : rates) mean += v / rates.size();
    double var = 0.0;
    for (double v : rates) var += (v - mean) * (v - mean) / rates.size();
    REQUIRE(r.levels.size() == 1);
    CHECK(std::abs(r.levels[0].second.mean - mean) < 1e-9);
    CHECK(std::abs(r.levels[0].second.std - std::sqrt(var)) < 1e-9);

    const auto s = seed_statistics({0.2, 0.4, 0.9});
    CHECK(s.mean == doctest::Approx(0.5));
    CHECK(s.std == doctest::Approx(std::sqrt((0.09 + 0.01 + 0.16) / 3.0)));
}

TEST_CASE("report json validates and rejects broken reports") {
    const auto r = evaluate(suite(), {}, small({Level::L3}, 2, 2));
    const auto j = to_json(r);
    CHECK_NOTHROW(validate_report_json(j));
    auto bad = j;
    bad.erase("levels");
    CHECK_THROWS_AS(validate_report_json(bad), DataError);
    bad = j;
    bad["episodes"][0]["success"] = "yes";
    CHECK_THROWS_AS(validate_report_json(bad), DataError);
    bad = j;
    bad["tasks"][0]["success"]["per_seed"].push_back(1.0);
    CHECK_THROWS_AS(validate_report_json(bad), DataError);
    bad = j;
    bad["episodes"][0]["steps"] = 1000;
    CHECK_THROWS_AS(validate_report_json(bad), DataError);

    const auto table = render_table(r);
    CHECK(table.find("open_drawer@L3") != std::string::npos);
    CHECK(table.find("Avg. L3") != std::string::npos);
}

TEST_CASE("evaluation is independent of the worker count") {
    PolicyOptions p;
    p.kind = PolicyKind::noisy_oracle;
    auto o = small({Level::L2, Level::L4}, 2, 2);
    const auto a = to_json(evaluate(suite(), p, o));
    o.jobs = 3;
    const auto b = to_json(evaluate(suite(), p, o));
    CHECK(a.dump() == b.dump());
    o.seed = 1;
    CHECK(to_json(evaluate(suite(), p, o)).dump() != a.dump());
}

TEST_CASE("staged planning beats the monolithic ablation on L4") {
    PolicyOptions p;
    p.kind = PolicyKind::noisy_oracle;
    const auto staged = evaluate(suite(), p, small({Level::L4}, 5, 2));
    p.planner_mode = PlannerMode::monolithic;
    const auto mono = evaluate(suite(), p, small({Level::L4}, 5, 2));
    CHECK(staged.levels[0].second.mean - mono.levels[0].second.mean >= 0.2);
    for (const auto& e : mono.episodes) CHECK(e.steps <= e.max_steps);
}

TEST_CASE("grasp chance matches a brute-force estimate") {
    const auto& task = suite().task("put_in_cup@train");
    const auto ep = generate_scene(task, task.variations[0], 0);
    const auto& s = ep.scene;
    Rng rng(11);
    const int n = 400000;
    int hits = 0;
    std::vector<Vec3> points;
    for (const auto& pose : object_poses(s)) points.push_back(pose.position);
    for (int i = 0; i < n; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(s.bounds.min[a], s.bounds.max[a]);
        for (const auto& q : points) {
            if ((p - q).norm() <= s.params.grasp_radius) {
                ++hits;
                break;
            }
        }
    }
    const double mc = static_cast<double>(hits) / n;
    const double p = grasp_chance(ep);
    CHECK(mc <= p + 4.0 * std::sqrt(p / n));
    CHECK(mc >= 0.5 * p);
    CHECK(chance_baseline(ep) == doctest::Approx(1.0 - std::pow(1.0 - p, 2.0 * ep.plan.step_count())));
}

TEST_CASE("random policy stays under the chance baseline") {
    PolicyOptions p;
    p.kind = PolicyKind::random;
    const auto r = evaluate(suite(), p, small({Level::train}, 5, 2));
    std::map<std::string, std::pair<int, int>> counts;
    for (const auto& e : r.episodes) {
        counts[e.task_id].first += e.success;
        counts[e.task_id].second += 1;
    }
    for (const auto& t : suite().tasks) {
        if (t.level != Level::train) continue;
        const auto ep = generate_scene(t, t.variations[0], 0);
        const double bound = chance_baseline(ep);
        const auto [ok, total] = counts[t.id];
        // Binomial slack: even one success would exceed 3 sd of the bound here.
        CHECK(ok <= bound * total + 3.0 * std::sqrt(bound * total) + 1e-9);
    }
}

TEST_CASE("noisy oracle decode recovers the keypoint within 2 cm") {
    PolicyOptions p;
    p.kind = PolicyKind::noisy_oracle;
    const auto& task = suite().task("stack@train");
    int within = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto ep = generate_scene(task, task.variations[trial % 2], static_cast<std::uint64_t>(trial));
        Scene live = ep.scene;
        auto planner = make_planner(p, ep, &live, static_cast<std::uint64_t>(trial));
        auto exec = make_executor(p, 0);
        const auto frame = planner::view_frame(live.bounds, 64);
        const std::size_t step = static_cast<std::size_t>(trial) % ep.plan.step_count();
        const std::string previous = step == 0 ? planning::kInitialStateSentinel : ep.plan.steps()[step - 1];
        const auto r = planner->round2({frame, ep.plan.subtasks[0], previous});
        geometry::PointCloud cloud;
        const Action a = exec->act({ep, live, r, cloud, frame});
        within += (a.position - ep.keyframe_actions[step].position).norm() <= 0.02;
    }
    CHECK(within >= 190);
}

TEST_CASE("grid decoding") {
    const geometry::WorkspaceBounds region{Vec3(0, 0, 0), Vec3(0.1, 0.1, 0.1)};
    CHECK(keypoint::grid_candidates(region, 0.05).size() == 27);
    CHECK_THROWS_AS(keypoint::grid_candidates(region, 0.0), InvalidArgument);
    const Vec3 g(0.0312, 0.0771, 0.0145);
    const auto maps = keypoint::render_targets(g, region, 64);
    const auto k = keypoint::decode_on_grid(maps, region, region, 0.01);
    CHECK((k.position - g).cwiseAbs().maxCoeff() <= 0.0025 + 1e-9);
}

TEST_CASE("transcripts are written and referenced") {
    const auto dir = std::filesystem::temp_directory_path() / "c2f_test_eval_transcripts";
    std::filesystem::remove_all(dir);
    auto o = small({Level::L4}, 1, 1);
    o.tasks = {"stack_three@L4"};
    o.transcript_dir = dir;
    const auto r = evaluate(suite(), {}, o);
    REQUIRE(r.episodes.size() == 2);
    for (const auto& e : r.episodes) {
        REQUIRE_FALSE(e.transcript.empty());
        CHECK(std::filesystem::exists(dir / e.transcript));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("rendered observations do not change oracle outcomes") {
    auto o = small({Level::L1}, 1, 1);
    o.tasks = {"put_in_drawer@L1"};
    o.force_views = true;
    o.image_size = 32;
    o.resolution = 32;
    o.render.rgb_gain = 0.8f;
    o.render.table_color = Color(0.3f, 0.3f, 0.35f);
    const auto r = evaluate(suite(), {}, o);
    for (const auto& e : r.episodes) {
        CAPTURE(e.error);
        CHECK(e.success);
    }
}

TEST_CASE("policy names and errors") {
    CHECK(policy_from_string("noisy-oracle") == PolicyKind::noisy_oracle);
    CHECK_THROWS_AS(policy_from_string("psychic"), InvalidArgument);
    CHECK(planner_mode_from_string("monolithic") == PlannerMode::monolithic);
    PolicyOptions p;
    p.kind = PolicyKind::trained;
    CHECK_THROWS_AS(make_executor(p, 0), ConfigError);
    const auto& task = suite().task("stack@train");
    const auto ep = generate_scene(task, task.variations[0], 0);
    CHECK_THROWS_AS(ground_truth_action(ep, "dance"), UnknownProgressError);
    CHECK_THROWS_AS(evaluate(suite(), {}, small({}, 0, 1)), InvalidArgument);
}

namespace {

// Oracle served over the wire format, as an out-of-process planner would be.
class WireOracle : public planner::Planner {
public:
    WireOracle(const GeneratedEpisode& ep, const std::filesystem::path& root, std::string corrupt = "")
        : server_(ep, nullptr),
          client_(
              [this, corrupt, root](const std::string& request) {
                  if (!corrupt.empty()) return corrupt;
                  if (nlohmann::json::parse(request)["round"] == 1) {
                      return planner::to_wire(server_.round1(planner::round1_query_from_wire(request))).dump();
                  }
                  return planner::to_wire(server_.round2(planner::round2_query_from_wire(request, root))).dump();
              },
              {planner::ViewTransport::path, root}) {}
    planner::Round1Response round1(const planner::Round1Query& q) override { return client_.round1(q); }
    planner::Round2Response round2(const planner::Round2Query& q) override { return client_.round2(q); }

private:
    planner::OraclePlanner server_;
    planner::WirePlanner client_;
};

}  // namespace

TEST_CASE("an external planner drives episodes through the wire format") {
    auto o = small({Level::L4}, 1, 1);
    o.tasks = {"open_then_put_in_drawer@L4"};
    o.image_size = 32;
    o.resolution = 32;
    const auto root = std::filesystem::temp_directory_path() / "c2f_test_eval_wire";
    std::filesystem::remove_all(root);
    PolicyOptions p;
    p.planner_factory = [&](const GeneratedEpisode& ep) { return std::make_unique<WireOracle>(ep, root); };
    const auto r = evaluate(suite(), p, o);
    REQUIRE_FALSE(r.episodes.empty());
    for (const auto& e : r.episodes) {
        CAPTURE(e.error);
        CHECK(e.success);
    }

    p.planner_factory = [&](const GeneratedEpisode& ep) { return std::make_unique<WireOracle>(ep, root, "{oops"); };
    const auto bad = evaluate(suite(), p, o);
    for (const auto& e : bad.episodes) {
        CHECK_FALSE(e.success);
        CHECK(e.error.rfind("parse: ", 0) == 0);
    }
    std::filesystem::remove_all(root);
}
