#include "c2f/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "c2f/errors.hpp"
#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"

namespace c2f::bench {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::oracle: return "oracle";
        case PolicyKind::noisy_oracle: return "noisy-oracle";
        case PolicyKind::trained: return "trained";
        case PolicyKind::random: return "random";
    }
    return "unknown";
}

PolicyKind policy_from_string(std::string_view s) {
    for (auto k : {PolicyKind::oracle, PolicyKind::noisy_oracle, PolicyKind::trained, PolicyKind::random}) {
        if (to_string(k) == s) return k;
    }
    throw InvalidArgument("unknown policy '" + std::string(s) + "'");
}

std::string_view to_string(PlannerMode m) { return m == PlannerMode::staged ? "staged" : "monolithic"; }

PlannerMode planner_mode_from_string(std::string_view s) {
    if (s == "staged") return PlannerMode::staged;
    if (s == "monolithic") return PlannerMode::monolithic;
    throw InvalidArgument("unknown planner mode '" + std::string(s) + "'");
}

const Action& ground_truth_action(const GeneratedEpisode& episode, const std::string& instruction) {
    const auto loc = episode.plan.locate(instruction);
    if (!loc) throw UnknownProgressError("instruction '" + instruction + "' is not in the plan");
    return episode.keyframe_actions.at(loc->flat);
}

namespace {

class OracleExecutor : public Executor {
public:
    Action act(const StepContext& ctx) override { return ground_truth_action(ctx.episode, ctx.response.instruction); }
};

// Fine stage whose heatmaps are ground-truth Gaussians over the crop around the planner keypoint.
class NoisyOracleExecutor : public Executor {
public:
    explicit NoisyOracleExecutor(const PolicyOptions& o) : o_(o) {}

    Action act(const StepContext& ctx) override {
        Action a = ground_truth_action(ctx.episode, ctx.response.instruction);
        const auto crop = geometry::WorkspaceBounds::cube(ctx.response.keypoint.world, o_.cube_side);
        keypoint::HeatmapSet maps;
        for (std::size_t k = 0; k < 3; ++k) {
            maps[k] = keypoint::render_gaussian(a.position, geometry::kAllViews[k], crop, o_.fine_resolution,
                                                o_.heatmap_sigma);
        }
        geometry::WorkspaceBounds region{crop.min.cwiseMax(ctx.scene.bounds.min), crop.max.cwiseMin(ctx.scene.bounds.max)};
        try {
            a.position = keypoint::decode_on_grid(maps, crop, region, o_.grid_step).position;
        } catch (const NoSignalError&) {
            a.position = ctx.response.keypoint.world;
        }
        return a;
    }

private:
    PolicyOptions o_;
};

class RandomExecutor : public Executor {
public:
    explicit RandomExecutor(std::uint64_t seed) : rng_(seed) {}

    Action act(const StepContext& ctx) override {
        Action a = ground_truth_action(ctx.episode, ctx.response.instruction);
        const auto& b = ctx.scene.bounds;
        for (int i = 0; i < 3; ++i) a.position[i] = rng_.uniform(b.min[i], b.max[i]);
        a.gripper = rng_.below(2) ? GripperState::closed : GripperState::open;
        return a;
    }

private:
    Rng rng_;
};

}  // namespace

std::unique_ptr<Executor> make_executor(const PolicyOptions& options, std::uint64_t seed) {
    switch (options.kind) {
        case PolicyKind::oracle: return std::make_unique<OracleExecutor>();
        case PolicyKind::noisy_oracle: return std::make_unique<NoisyOracleExecutor>(options);
        case PolicyKind::random: return std::make_unique<RandomExecutor>(seed);
        case PolicyKind::trained:
            if (!options.trained_executor) throw ConfigError("trained policy needs a checkpoint");
            return options.trained_executor();
    }
    throw InvalidArgument("unknown policy");
}

std::unique_ptr<planner::Planner> make_planner(const PolicyOptions& options, const GeneratedEpisode& episode,
                                               const Scene* live, std::uint64_t seed) {
    if (options.planner_factory) return options.planner_factory(episode);
    const double sigma = options.kind == PolicyKind::oracle ? 0.0 : options.noise_sigma;
    if (options.planner_mode == PlannerMode::monolithic) {
        return std::make_unique<planner::MonolithicPlanner>(episode, live, sigma, seed);
    }
    if (options.kind == PolicyKind::oracle || options.kind == PolicyKind::random) {
        return std::make_unique<planner::OraclePlanner>(episode, live);
    }
    return std::make_unique<planner::NoisyOraclePlanner>(episode, live, sigma, seed);
}

std::uint64_t episode_seed(std::uint64_t seed, int seed_index, const std::string& task_id,
                           const std::string& variation_id, int episode) {
    return derive_seed({seed, static_cast<std::uint64_t>(seed_index), hash_string(task_id), hash_string(variation_id),
                        static_cast<std::uint64_t>(episode)});
}

EpisodeResult run_episode(const TaskSpec& task, const Variation& variation, int seed_index, int episode,
                          const PolicyOptions& policy, const EvaluateOptions& options) {
    EpisodeResult res;
    res.task_id = task.id;
    res.variation_id = variation.id;
    res.level = task.level;
    res.seed_index = seed_index;
    res.episode = episode;

    const std::uint64_t seed = episode_seed(options.seed, seed_index, task.id, variation.id, episode);
    GenerateOptions gen;
    gen.image_size = options.image_size;
    const GeneratedEpisode ep = generate_scene(task, variation, seed, gen);
    Scene live = ep.scene;
    auto planner = make_planner(policy, ep, &live, derive_seed({seed, hash_string("planner")}));
    auto executor = make_executor(policy, derive_seed({seed, hash_string("executor")}));
    const bool render = options.force_views || planner->needs_views() || executor->needs_views();

    RenderOptions ro = options.render;
    ro.width = ro.height = options.image_size;
    const auto frame = planner::view_frame(live.bounds, options.resolution);
    planner::PlannerSession session(ep.plan.task);
    res.max_steps = 2 * static_cast<int>(ep.plan.step_count());
    try {
        while (res.steps < res.max_steps) {
            if (session.round1(*planner).empty()) break;
            geometry::PointCloud cloud;
            geometry::ViewSet views = frame;
            if (render) {
                cloud = observe_cloud(live, ro);
                views = geometry::project_canonical(cloud, live.bounds, options.resolution);
            }
            const auto response = session.round2(*planner, views);
            session.advance(response);
            const Action action = executor->act({ep, live, response, cloud, views});
            apply_action(live, action);
            ++res.steps;
        }
    } catch (const ProtocolViolation& e) {
        res.error = std::string("protocol: ") + e.what();
    } catch (const UnknownProgressError& e) {
        res.error = std::string("progress: ") + e.what();
    } catch (const ContractError& e) {
        res.error = std::string("action: ") + e.what();
    } catch (const ParseError& e) {
        res.error = std::string("parse: ") + e.what();
    }
    res.success = res.error.empty() && success(ep.goals, live);
    res.anomalies = session.anomalies().size();

    if (!options.transcript_dir.empty()) {
        const fs::path rel = fs::path(task.id) / variation.id /
                             ("s" + std::to_string(seed_index) + "_e" + std::to_string(episode) + ".jsonl");
        fs::create_directories((options.transcript_dir / rel).parent_path());
        std::ofstream out(options.transcript_dir / rel, std::ios::binary);
        planner::write_transcript(out, session.transcript());
        if (!out) throw DataError("cannot write transcript " + (options.transcript_dir / rel).string());
        res.transcript = rel.generic_string();
    }
    return res;
}

Stat seed_statistics(std::vector<double> per_seed) {
    Stat s;
    s.per_seed = std::move(per_seed);
    if (s.per_seed.empty()) return s;
    double sum = 0.0;
    for (double v : s.per_seed) sum += v;
    s.mean = sum / static_cast<double>(s.per_seed.size());
    double var = 0.0;
    for (double v : s.per_seed) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(s.per_seed.size()));
    return s;
}

void summarize(Report& report) {
    const int seeds = report.options.seeds;
    struct Acc {
        Level level = Level::train;
        std::vector<double> ok, n;
    };
    std::vector<std::string> order;
    std::map<std::string, Acc> by_task;
    std::map<Level, Acc> by_level;
    for (const auto& e : report.episodes) {
        if (!by_task.count(e.task_id)) order.push_back(e.task_id);
        for (Acc* acc : {&by_task[e.task_id], &by_level[e.level]}) {
            if (acc->ok.empty()) {
                acc->ok.assign(seeds, 0.0);
                acc->n.assign(seeds, 0.0);
            }
            acc->level = e.level;
            acc->ok.at(e.seed_index) += e.success ? 1.0 : 0.0;
            acc->n.at(e.seed_index) += 1.0;
        }
    }
    auto rates = [](const Acc& a) {
        std::vector<double> r(a.ok.size(), 0.0);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = a.n[i] > 0 ? a.ok[i] / a.n[i] : 0.0;
        return r;
    };
    report.tasks.clear();
    for (const auto& id : order) report.tasks.push_back({id, by_task[id].level, seed_statistics(rates(by_task[id]))});
    report.levels.clear();
    for (const auto& [level, acc] : by_level) report.levels.emplace_back(level, seed_statistics(rates(acc)));
}

Report evaluate(const Suite& suite, const PolicyOptions& policy, const EvaluateOptions& options) {
    if (options.episodes_per_variation < 1 || options.seeds < 1) {
        throw InvalidArgument("episodes and seeds must be positive");
    }
    struct Job {
        const TaskSpec* task;
        const Variation* variation;
        int seed_index;
        int episode;
    };
    std::vector<Job> jobs;
    for (const auto& t : suite.tasks) {
        if (!options.levels.empty() && std::find(options.levels.begin(), options.levels.end(), t.level) == options.levels.end()) {
            continue;
        }
        if (!options.tasks.empty() && std::find(options.tasks.begin(), options.tasks.end(), t.id) == options.tasks.end()) {
            continue;
        }
        for (int s = 0; s < options.seeds; ++s) {
            for (const auto& v : t.variations) {
                for (int e = 0; e < options.episodes_per_variation; ++e) jobs.push_back({&t, &v, s, e});
            }
        }
    }

    Report report;
    report.suite = suite.name;
    report.policy = std::string(to_string(policy.kind));
    report.planner_mode = std::string(to_string(policy.planner_mode));
    report.options = options;
    report.episodes.resize(jobs.size());

    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const auto& j = jobs[i];
                report.episodes[i] = run_episode(*j.task, *j.variation, j.seed_index, j.episode, policy, options);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                next = jobs.size();
            }
        }
    };
    const int n = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
    std::vector<std::thread> threads;
    for (int t = 1; t < n; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);

    summarize(report);
    return report;
}

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"per_seed", s.per_seed}}; }

}  // namespace

json to_json(const Report& r) {
    json episodes = json::array();
    for (const auto& e : r.episodes) {
        episodes.push_back({{"task", e.task_id},
                            {"variation", e.variation_id},
                            {"level", std::string(to_string(e.level))},
                            {"seed_index", e.seed_index},
                            {"episode", e.episode},
                            {"success", e.success},
                            {"steps", e.steps},
                            {"max_steps", e.max_steps},
                            {"anomalies", e.anomalies},
                            {"error", e.error},
                            {"transcript", e.transcript}});
    }
    json tasks = json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back({{"task", t.task_id}, {"level", std::string(to_string(t.level))}, {"success", stat_json(t.success)}});
    }
    json levels = json::object();
    for (const auto& [l, s] : r.levels) levels[std::string(to_string(l))] = stat_json(s);
    return {{"format", "c2f.report"},
            {"version", kReportFormatVersion},
            {"suite", r.suite},
            {"policy", r.policy},
            {"planner_mode", r.planner_mode},
            {"episodes_per_variation", r.options.episodes_per_variation},
            {"seeds", r.options.seeds},
            {"seed", r.options.seed},
            {"levels", levels},
            {"tasks", tasks},
            {"episodes", episodes}};
}

void validate_report_json(const json& j) {
    auto need = [](const json& obj, const char* key, json::value_t type, const std::string& where) {
        if (!obj.is_object() || !obj.contains(key)) throw DataError(where + " is missing '" + key + "'");
        const auto t = obj.at(key).type();
        const bool numeric = type == json::value_t::number_float &&
                             (t == json::value_t::number_integer || t == json::value_t::number_unsigned);
        const bool integral = type == json::value_t::number_integer && t == json::value_t::number_unsigned;
        if (t != type && !numeric && !integral) throw DataError(where + "." + key + " has the wrong type");
    };
    using V = json::value_t;
    need(j, "format", V::string, "report");
    if (j["format"] != "c2f.report") throw DataError("not a report");
    need(j, "version", V::number_integer, "report");
    if (j["version"].get<int>() != kReportFormatVersion) throw DataError("unsupported report version");
    for (const char* k : {"suite", "policy", "planner_mode"}) need(j, k, V::string, "report");
    for (const char* k : {"episodes_per_variation", "seeds"}) need(j, k, V::number_integer, "report");
    need(j, "levels", V::object, "report");
    need(j, "tasks", V::array, "report");
    need(j, "episodes", V::array, "report");
    auto check_stat = [&](const json& s, const std::string& where) {
        need(s, "mean", V::number_float, where);
        need(s, "std", V::number_float, where);
        need(s, "per_seed", V::array, where);
        if (s["per_seed"].size() != j["seeds"].get<std::size_t>()) throw DataError(where + " per_seed size mismatch");
    };
    for (const auto& [name, s] : j["levels"].items()) {
        level_from_string(name);
        check_stat(s, "levels." + name);
    }
    for (const auto& t : j["tasks"]) {
        need(t, "task", V::string, "task");
        need(t, "level", V::string, "task");
        need(t, "success", V::object, "task");
        check_stat(t["success"], "task.success");
    }
    for (const auto& e : j["episodes"]) {
        for (const char* k : {"task", "variation", "level", "error", "transcript"}) need(e, k, V::string, "episode");
        for (const char* k : {"seed_index", "episode", "steps", "max_steps", "anomalies"}) {
            need(e, k, V::number_integer, "episode");
        }
        need(e, "success", V::boolean, "episode");
        if (e["steps"].get<int>() > e["max_steps"].get<int>()) throw DataError("episode exceeds its step budget");
    }
}

std::string render_table(const Report& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "suite " << r.suite << "  policy " << r.policy << "  planner " << r.planner_mode << "  episodes "
       << r.options.episodes_per_variation << "  seeds " << r.options.seeds << "\n\n";
    std::size_t w = 4;
    for (const auto& t : r.tasks) w = std::max(w, t.task_id.size());
    os << std::left << std::setw(static_cast<int>(w)) << "Task" << "  " << std::setw(5) << "Level" << std::right
       << std::setw(8) << "Mean" << std::setw(8) << "Std";
    for (int s = 0; s < r.options.seeds; ++s) os << std::setw(8) << ("s" + std::to_string(s));
    os << "\n";
    auto row = [&](const std::string& name, const std::string& level, const Stat& st) {
        os << std::left << std::setw(static_cast<int>(w)) << name << "  " << std::setw(5) << level << std::right
           << std::setw(8) << 100.0 * st.mean << std::setw(8) << 100.0 * st.std;
        for (double v : st.per_seed) os << std::setw(8) << 100.0 * v;
        os << "\n";
    };
    for (const auto& t : r.tasks) row(t.task_id, std::string(to_string(t.level)), t.success);
    os << "\n";
    for (const auto& [l, s] : r.levels) row("Avg. " + std::string(to_string(l)), std::string(to_string(l)), s);
    return os.str();
}

double grasp_chance(const GeneratedEpisode& episode) {
    const Scene& s = episode.scene;
    const double r = s.params.grasp_radius;
    const double ball = 4.0 / 3.0 * M_PI * r * r * r;
    const Vec3 ext = s.bounds.extent();
    const double volume = ext.x() * ext.y() * ext.z();
    // Drawers expose one handle; every other object is graspable at its center.
    return std::min(1.0, static_cast<double>(s.objects.size()) * ball / volume);
}

double chance_baseline(const GeneratedEpisode& episode) {
    const double p = grasp_chance(episode);
    const int steps = 2 * static_cast<int>(episode.plan.step_count());
    return 1.0 - std::pow(1.0 - p, steps);
}

}  // namespace c2f::bench
