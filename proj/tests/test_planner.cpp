#include <filesystem>
#include <set>
#include <sstream>

#include "c2f/errors.hpp"
#include "c2f/planner.hpp"
#include "c2f/tasks.hpp"
#include "doctest.h"

using namespace c2f;
using namespace c2f::planner;
using bench::GeneratedEpisode;

template <typename T>
concept CarriesViews = requires(T q) { q.views; };
static_assert(!CarriesViews<Round1Query>, "round 1 is text only");
static_assert(CarriesViews<Round2Query>);

namespace {

GeneratedEpisode episode(const std::string& task_id, std::size_t variation = 0, std::uint64_t seed = 0) {
    static const bench::Suite suite = bench::synthetic_suite();
    const auto& t = suite.task(task_id);
    return bench::generate_scene(t, t.variations[variation], seed);
}

const ViewSet kFrame = view_frame(bench::default_workspace(), 64);

// Runs the session to completion, executing the ground-truth action for each instruction.
struct Run {
    PlannerSession session;
    bench::Scene scene;
    std::vector<std::size_t> subtask_per_step;
};

Run run_episode(const GeneratedEpisode& ep, Planner& planner, bench::Scene& live) {
    Run run{PlannerSession(ep.plan.task), ep.scene, {}};
    live = ep.scene;
    for (int guard = 0; guard < 100; ++guard) {
        if (run.session.round1(planner).empty()) break;
        const auto r = run.session.round2(planner, kFrame);
        run.subtask_per_step.push_back(run.session.subtask_index());
        run.session.advance(r);
        const auto loc = ep.plan.locate(r.instruction);
        REQUIRE(loc);
        bench::apply_action(live, ep.keyframe_actions[loc->flat]);
    }
    run.scene = live;
    return run;
}

class ScriptedPlanner : public Planner {
public:
    SubTask subtask;
    Round2Response reply;
    Round1Response round1(const Round1Query&) override { return {subtask}; }
    Round2Response round2(const Round2Query&) override { return reply; }
};

}  // namespace

TEST_CASE("round 1 with the sentinel returns the first sub-task") {
    const auto ep = episode("open_drawer@train");
    CHECK(ep.plan.task == "open the top drawer");
    bench::Scene live = ep.scene;
    OraclePlanner oracle(ep, &live);
    PlannerSession s(ep.plan.task);
    CHECK(s.previous() == "the robot is currently at the initial state");
    const SubTask expected{"The robot arm lowers itself to align with the handle of the top drawer",
                           "The robot arm grasps the top drawer's handle firmly",
                           "The robot pulls the handle back, smoothly opening the top drawer"};
    CHECK(s.round1(oracle) == expected);
    CHECK(s.subtask_index() == 0);
}

TEST_CASE("round 1 successor and termination rules") {
    const auto ep = episode("stack_three@L4");
    bench::Scene live = ep.scene;
    OraclePlanner oracle(ep, &live);
    const auto& st = ep.plan.subtasks;
    REQUIRE(st.size() == 2);
    CHECK(oracle.round1({ep.plan.task, st[0].back()}).subtask == st[1]);
    CHECK(oracle.round1({ep.plan.task, st[0][1]}).subtask == st[0]);
    CHECK(oracle.round1({ep.plan.task, st[1].back()}).subtask.empty());
    CHECK_THROWS_AS(oracle.round1({ep.plan.task, "juggle the cups"}), UnknownProgressError);
}

TEST_CASE("oracle keypoint is the ground-truth keyframe position") {
    const auto ep = episode("put_in_cup@train");
    bench::Scene live = ep.scene;
    OraclePlanner oracle(ep, &live);
    PlannerSession s(ep.plan.task);
    s.round1(oracle);
    const auto r = s.round2(oracle, kFrame);
    CHECK(r.instruction == ep.plan.subtasks[0][0]);
    CHECK(r.keypoint.world == ep.keyframe_actions[0].position);
    CHECK_FALSE(r.objects.empty());
    CHECK(s.previous() == planning::kInitialStateSentinel);
    s.advance(r);
    CHECK(s.previous() == r.instruction);
    CHECK(s.subtask_index() == 0);
}

TEST_CASE("off-plan and inconsistent responses are protocol violations") {
    ScriptedPlanner p;
    p.subtask = {"a", "b"};
    p.reply.instruction = "c";
    p.reply.keypoint = make_keypoint(Vec3(0.1, 0.1, 0.2), kFrame);
    PlannerSession s("do a then b");
    s.round1(p);
    CHECK_THROWS_AS(s.round2(p, kFrame), ProtocolViolation);

    p.reply.instruction = "a";
    p.reply.keypoint.pixels[1].u += 5;
    CHECK_THROWS_AS(s.round2(p, kFrame), ProtocolViolation);

    p.reply.keypoint = make_keypoint(Vec3(0.1, 0.1, 0.2), kFrame);
    p.reply.keypoint.world = Vec3(0.1, 0.1, 5.0);
    CHECK_THROWS_AS(s.round2(p, kFrame), ProtocolViolation);

    p.reply.keypoint = make_keypoint(Vec3(0.1, 0.1, 0.2), kFrame);
    p.reply.objects = {{"cube", {Pixel{70, 3}, std::nullopt, std::nullopt}}};
    CHECK_THROWS_AS(s.round2(p, kFrame), ProtocolViolation);

    p.reply.objects.clear();
    CHECK_NOTHROW(s.round2(p, kFrame));
    CHECK(s.anomalies().empty());
}

TEST_CASE("previous step outside the sub-task restarts it and is logged") {
    ScriptedPlanner p;
    p.subtask = {"a", "b"};
    p.reply.keypoint = make_keypoint(Vec3(0.0, 0.0, 0.1), kFrame);
    PlannerSession s("task");
    s.round1(p);
    p.reply.instruction = "a";
    s.advance(s.round2(p, kFrame));
    p.subtask = {"x", "y"};
    s.round1(p);
    CHECK(s.anomalies().size() == 1);
    CHECK(s.expected_step() == 0);
    p.reply.instruction = "x";
    s.round2(p, kFrame);
    CHECK(s.anomalies().size() == 2);
    p.reply.instruction = "y";
    s.round2(p, kFrame);
    CHECK(s.anomalies().size() == 4);
}

TEST_CASE("cup stacking transcript follows sub-task boundaries") {
    const auto ep = episode("stack_cups@L4");
    CHECK(ep.plan.task == "stack the blue and yellow cup on the red cup");
    bench::Scene live;
    OraclePlanner oracle(ep, &live);
    auto run = run_episode(ep, oracle, live);
    std::vector<std::size_t> expected(ep.plan.subtasks[0].size(), 0);
    expected.insert(expected.end(), ep.plan.subtasks[1].size(), 1);
    std::vector<std::size_t> seen;
    for (const auto& e : run.session.transcript()) {
        if (e.round == 2) seen.push_back(e.subtask_index);
    }
    CHECK(seen == expected);
    CHECK(run.subtask_per_step == std::vector<std::size_t>(expected.begin(), expected.end()));
    CHECK(run.session.done());
    CHECK(run.session.anomalies().empty());
    CHECK(bench::success(ep.goals, run.scene));
    CHECK(run.session.subtask_index() == 2);
}

TEST_CASE("every L4 task completes through the session with the oracle") {
    const bench::Suite suite = bench::synthetic_suite();
    for (const auto& t : suite.tasks) {
        if (t.level != bench::Level::L4) continue;
        for (std::size_t v = 0; v < t.variations.size(); ++v) {
            const auto ep = episode(t.id, v, 3);
            bench::Scene live;
            OraclePlanner oracle(ep, &live);
            const auto run = run_episode(ep, oracle, live);
            CHECK(bench::success(ep.goals, run.scene));
            const auto steps = ep.plan.steps();
            CHECK(std::set<std::string>(steps.begin(), steps.end()).size() == steps.size());
        }
    }
}

TEST_CASE("session replay is deterministic") {
    const auto ep = episode("two_in_cups@L4", 1, 5);
    auto transcript = [&] {
        bench::Scene live;
        NoisyOraclePlanner p(ep, &live, 0.01, 99);
        auto run = run_episode(ep, p, live);
        std::ostringstream os;
        write_transcript(os, run.session.transcript());
        return os.str();
    };
    const auto a = transcript();
    CHECK(a == transcript());
    CHECK_FALSE(a.empty());
}

TEST_CASE("noisy oracle keypoints stay in bounds and match their pixels") {
    const auto ep = episode("pick_and_lift@train");
    bench::Scene live = ep.scene;
    NoisyOraclePlanner p(ep, &live, 0.5, 1);
    for (int i = 0; i < 50; ++i) {
        const Round2Query q{kFrame, ep.plan.subtasks[0], planning::kInitialStateSentinel};
        const auto r = p.round2(q);
        CHECK(kFrame[0].bounds.contains(r.keypoint.world));
        CHECK_NOTHROW(validate_response(r, q, 0));
    }
    CHECK_THROWS_AS(NoisyOraclePlanner(ep, &live, -1.0, 1), InvalidArgument);
}

TEST_CASE("monolithic planner guesses among sub-tasks of matching length") {
    const auto ep = episode("two_in_cups@L4");
    bench::Scene live = ep.scene;
    MonolithicPlanner p(ep, &live, 0.0, 4);
    const auto all = ep.plan.steps();
    CHECK(p.round1({ep.plan.task, planning::kInitialStateSentinel}).subtask == all);
    int second = 0;
    for (int trial = 0; trial < 200; ++trial) {
        MonolithicPlanner q(ep, &live, 0.0, static_cast<std::uint64_t>(trial));
        const auto r = q.round2({kFrame, all, planning::kInitialStateSentinel});
        CHECK((r.instruction == ep.plan.subtasks[0][0] || r.instruction == ep.plan.subtasks[1][0]));
        second += r.instruction == ep.plan.subtasks[1][0];
    }
    CHECK(second > 60);
    CHECK(second < 140);
}

TEST_CASE("wire messages roundtrip") {
    const Round1Query q1{"open the top drawer", planning::kInitialStateSentinel};
    const auto back1 = round1_query_from_wire(to_wire(q1).dump());
    CHECK(back1.task == q1.task);
    CHECK(back1.previous == q1.previous);

    const Round1Response r1{{"a", "b"}};
    CHECK(round1_response_from_wire(to_wire(r1).dump()).subtask == r1.subtask);
    CHECK(round1_response_from_wire(to_wire(Round1Response{}).dump()).subtask.empty());

    Round2Response r2;
    r2.objects = {{"red_cube", {Pixel{1, 2}, std::nullopt, Pixel{5, 6}}}};
    r2.instruction = "a";
    r2.keypoint = make_keypoint(Vec3(0.11, -0.2, 0.3), kFrame);
    const auto text = to_wire(r2).dump();
    CHECK(text.find("\"objects\"") < text.find("\"instruction\""));
    CHECK(text.find("\"instruction\"") < text.find("\"keypoint\""));
    const auto back2 = round2_response_from_wire(text);
    CHECK(back2.instruction == "a");
    CHECK(back2.keypoint.world == r2.keypoint.world);
    CHECK(back2.keypoint.pixels == r2.keypoint.pixels);
    REQUIRE(back2.objects.size() == 1);
    CHECK(back2.objects[0].pixels == r2.objects[0].pixels);
}

TEST_CASE("round 2 views travel by path or inline png") {
    const auto ep = episode("put_in_cup@train");
    auto scene = ep.scene;
    bench::install_default_cameras(scene, 48, 48);
    bench::RenderOptions ro;
    ro.width = ro.height = 48;
    const auto views = geometry::project_canonical(bench::observe_cloud(scene, ro), scene.bounds, 32);
    const Round2Query q{views, ep.plan.subtasks[0], planning::kInitialStateSentinel};

    const auto root = std::filesystem::temp_directory_path() / "c2f_test_wire";
    std::filesystem::remove_all(root);
    const auto by_path = to_wire(q, {ViewTransport::path, root});
    const auto ref = by_path["views"]["ref"].get<std::string>();
    CHECK(ref.rfind("views/", 0) == 0);
    CHECK(to_wire(q, {ViewTransport::path, {}})["views"]["ref"] == ref);
    const auto back = round2_query_from_wire(by_path.dump(), root);
    CHECK(back.views[2].xyz.size() == views[2].xyz.size());
    CHECK(back.views[1].rgb == views[1].rgb);
    CHECK(back.subtask == q.subtask);

    const auto inline_msg = to_wire(q, {ViewTransport::inline_png, {}});
    const auto back_png = round2_query_from_wire(inline_msg.dump(), {});
    REQUIRE(back_png.views[0].rgb.size() == views[0].rgb.size());
    for (std::size_t i = 0; i < views[0].rgb.size(); ++i) {
        CHECK(back_png.views[0].rgb[i] == doctest::Approx(views[0].rgb[i]).epsilon(0.003));
    }
    CHECK(back_png.views[0].xyz.empty());

    const auto frame_only = round2_query_from_wire(to_wire(Round2Query{kFrame, {"a"}, "b"}, {}).dump(), {});
    CHECK(frame_only.views[0].resolution == 64);
    std::filesystem::remove_all(root);
}

TEST_CASE("malformed wire input raises ParseError with the raw text") {
    const std::string garbage = "not json at all";
    try {
        round1_response_from_wire(garbage);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.raw() == garbage);
    }
    auto j = to_wire(Round1Response{{"a"}});
    j["version"] = 2;
    CHECK_THROWS_AS(round1_response_from_wire(j.dump()), ParseError);
    j = to_wire(Round1Response{{"a"}});
    CHECK_THROWS_AS(round2_response_from_wire(j.dump()), ParseError);
    j = to_wire(Round1Response{{"a"}});
    j["subtask"] = 3;
    CHECK_THROWS_AS(round1_response_from_wire(j.dump()), ParseError);

    Round2Response r;
    r.instruction = "a";
    r.keypoint = make_keypoint(Vec3(0, 0, 0.1), kFrame);
    auto k = to_wire(r);
    k["keypoint"]["world"] = {1.0, 2.0};
    CHECK_THROWS_AS(round2_response_from_wire(k.dump()), ParseError);
    CHECK_THROWS_AS(round2_query_from_wire(to_wire(Round1Query{"t", "p"}).dump(), {}), ParseError);
}

TEST_CASE("wire planner matches the in-process oracle") {
    const auto ep = episode("open_then_put_in_drawer@L4");
    bench::Scene live_a, live_b;
    OraclePlanner direct(ep, &live_a);
    const auto expected = run_episode(ep, direct, live_a);

    OraclePlanner server(ep, &live_b);
    std::vector<std::string> requests;
    WirePlanner client(
        [&](const std::string& request) {
            requests.push_back(request);
            const auto j = nlohmann::json::parse(request);
            if (j["round"] == 1) return to_wire(server.round1(round1_query_from_wire(request))).dump();
            return to_wire(server.round2(round2_query_from_wire(request, {}))).dump();
        },
        {});
    const auto via_wire = run_episode(ep, client, live_b);
    CHECK(bench::success(ep.goals, via_wire.scene));
    std::ostringstream a, b;
    write_transcript(a, expected.session.transcript());
    write_transcript(b, via_wire.session.transcript());
    CHECK(a.str() == b.str());
    CHECK(requests.size() == via_wire.session.transcript().size());
}

TEST_CASE("transcript jsonl roundtrip") {
    const auto ep = episode("pick_and_lift@train");
    bench::Scene live;
    OraclePlanner oracle(ep, &live);
    const auto run = run_episode(ep, oracle, live);
    std::stringstream ss;
    write_transcript(ss, run.session.transcript());
    const auto back = read_transcript(ss);
    REQUIRE(back.size() == run.session.transcript().size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].round == run.session.transcript()[i].round);
        CHECK(back[i].response == run.session.transcript()[i].response);
    }
    std::stringstream bad("{\"round\": 1}\n");
    CHECK_THROWS_AS(read_transcript(bad), ParseError);
}

TEST_CASE("fused pixels average the occupied lookups") {
    const auto ep = episode("stack@train");
    const auto cloud = bench::observe_cloud(ep.scene);
    const auto views = geometry::project_canonical(cloud, ep.scene.bounds, 64);
    std::size_t checked = 0;
    for (std::size_t i = 0; i < cloud.size(); i += 97) {
        if (!cloud.valid[i] || !ep.scene.bounds.contains(cloud.points[i])) continue;
        const auto kp = make_keypoint(cloud.points[i], views);
        Vec3 sum = Vec3::Zero();
        int hits = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            if (const auto w = geometry::pixel_to_world(views[k], kp.pixels[k].u, kp.pixels[k].v)) {
                sum += *w;
                ++hits;
            }
        }
        REQUIRE(hits > 0);
        const auto fused = fuse_pixels(views, kp.pixels);
        REQUIRE(fused);
        CHECK((*fused - sum / hits).norm() == doctest::Approx(0.0));
        ++checked;
    }
    CHECK(checked > 10);
    CHECK_FALSE(fuse_pixels(kFrame, {Pixel{1, 1}, Pixel{2, 2}, Pixel{3, 3}}));
    CHECK_THROWS_AS(fuse_pixels(views, {Pixel{64, 0}, Pixel{0, 0}, Pixel{0, 0}}), IndexError);
}
