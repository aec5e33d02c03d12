#include <filesystem>
#include <set>

#include "c2f/config.hpp"
#include "c2f/errors.hpp"
#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"
#include "doctest.h"

using namespace c2f;
using namespace c2f::config;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("c2f_test_config_" + name);
    fs::remove_all(p);
    return p;
}

// Perturbs every field to a valid non-default value.
Config shuffled_config(std::uint64_t seed) {
    Rng rng(seed);
    Config c;
    c.seed = rng.below(1000000);
    c.jobs = 1 + static_cast<int>(rng.below(8));
    c.out = "runs/" + std::to_string(rng.below(100));
    c.suite = rng.below(2) ? "synthetic" : "bundled";
    c.workspace.min = Vec3(-0.5 + 0.1 * rng.uniform(), -0.45, -0.1 * rng.uniform());
    c.workspace.max = Vec3(0.5, 0.41 + rng.uniform(), 0.7 + rng.uniform());
    c.coarse_resolution = 32 + 8 * static_cast<int>(rng.below(20));
    c.fine_resolution = 8 * (2 + static_cast<int>(rng.below(10)));
    c.image_size = 16 + static_cast<int>(rng.below(100));
    c.levels = {"L2", "train"};
    c.tasks = {"stack@train", "a,b"};
    c.generate_episodes = 1 + static_cast<int>(rng.below(5));
    c.traj_dir = "t";
    c.m = static_cast<int>(rng.below(9));
    c.strategy = "symmetric";
    c.sigma = rng.uniform(0.5, 3.0);
    c.cube_side = rng.uniform(0.15, 0.4);
    c.crop_jitter = rng.uniform(0.0, 0.05);
    c.grid_step = rng.uniform(0.005, 0.02);
    c.dim = 16;
    c.layers = 3;
    c.mlp_hidden = 17;
    c.vocab = 99;
    c.max_words = 7;
    c.bands = 3;
    c.rotation_bins = 36;
    c.init_scale = rng.uniform(0.5, 2.0);
    c.dataset = "d";
    c.lr = rng.uniform(1e-5, 1e-2);
    c.batch = 1 + static_cast<int>(rng.below(300));
    c.epochs = static_cast<int>(rng.below(30));
    c.holdout = rng.uniform(0.0, 0.5);
    c.heatmap_weight = rng.uniform();
    c.rotation_weight = rng.uniform();
    c.gripper_weight = rng.uniform();
    c.beta1 = rng.uniform(0.5, 0.95);
    c.beta2 = rng.uniform(0.9, 0.9999);
    c.adam_eps = 1e-7 * rng.uniform(0.1, 10.0);
    c.policy = "noisy-oracle";
    c.planner_mode = "monolithic";
    c.episodes = 1 + static_cast<int>(rng.below(40));
    c.seeds = 1 + static_cast<int>(rng.below(9));
    c.noise_sigma = rng.uniform(0.0, 0.05);
    c.checkpoint = "c.c2fk";
    c.transcripts = true;
    c.object_scenes = static_cast<int>(rng.below(100));
    return c;
}

}  // namespace

TEST_CASE("every field is documented and serialized") {
    const auto j = to_json(Config{});
    REQUIRE(j.size() == fields().size());
    std::set<std::string> names;
    for (const auto& f : fields()) {
        CAPTURE(f.name);
        CHECK_FALSE(f.help.empty());
        CHECK(j.contains(f.name));
        names.insert(f.name);
    }
    CHECK(names.size() == fields().size());
    CHECK_NOTHROW(validate(Config{}));
    const Config d;
    CHECK(d.m == 5);
    CHECK(d.coarse_resolution == 224);
    CHECK(d.batch == 192);
    CHECK(d.epochs == 5);
    CHECK(d.episodes == 20);
    CHECK(d.seeds == 5);
}

TEST_CASE("config round-trips through json unchanged") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const Config c = shuffled_config(s);
        REQUIRE_NOTHROW(validate(c));
        const auto text = to_json(c).dump();
        const Config back = config_from_json(nlohmann::json::parse(text));
        CHECK(back == c);
        CHECK(to_json(back).dump() == text);
    }
    const auto path = temp("roundtrip.json");
    const Config c = shuffled_config(99);
    io::write_json(path, nlohmann::json(to_json(c)));
    CHECK(load_config(path) == c);
    fs::remove(path);
}

TEST_CASE("command-line text round-trips for every field") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Config c = shuffled_config(s);
        Config d;
        for (const auto& f : fields()) {
            if (f.name == "tasks") continue;  // commas inside ids cannot survive the list syntax
            set_field(d, f.name, field_text(c, f.name));
        }
        d.tasks = c.tasks;
        CHECK(d == c);
    }
}

TEST_CASE("malformed config is rejected") {
    CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"m", "five"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"m", 2.5}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"seed", -1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"levels", "L1"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"workspace", {{"min", {0, 0, 0}}, {"max", {0, 1, 1}}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), ConfigError);
    Config c;
    CHECK_THROWS_AS(set_field(c, "jobs", "2x"), ConfigError);
    CHECK_THROWS_AS(set_field(c, "transcripts", "maybe"), ConfigError);
    CHECK_THROWS_AS(set_field(c, "workspace", "0,0,0,1,1"), ConfigError);
    CHECK_THROWS_AS(set_field(c, "nope", "1"), ConfigError);
    CHECK_THROWS_AS(load_config(temp("missing.json")), ConfigError);
}

TEST_CASE("validation names bad values") {
    auto bad = [](auto mutate) {
        Config c;
        mutate(c);
        CHECK_THROWS_AS(validate(c), ConfigError);
    };
    bad([](Config& c) { c.lr = 0.0; });
    bad([](Config& c) { c.lr = -1e-3; });
    bad([](Config& c) { c.jobs = 0; });
    bad([](Config& c) { c.m = -1; });
    bad([](Config& c) { c.levels = {"L9"}; });
    bad([](Config& c) { c.policy = "psychic"; });
    bad([](Config& c) { c.planner_mode = "flat"; });
    bad([](Config& c) { c.strategy = "random"; });
    bad([](Config& c) { c.fine_resolution = 60; });
    bad([](Config& c) { c.crop_jitter = 0.2; });
    bad([](Config& c) { c.episodes = 0; });
    bad([](Config& c) { c.grid_step = 0.0; });
}

TEST_CASE("precedence: flag over environment over file over default") {
    const auto path = temp("precedence.json");
    io::write_json(path, {{"seed", 5}, {"m", 3}, {"lr", 0.01}});
    const Config file_only = resolve(path, {}, nullptr);
    CHECK(file_only.seed == 5);
    CHECK(file_only.m == 3);
    CHECK(file_only.lr == 0.01);
    CHECK(file_only.batch == Config{}.batch);

    const Config env = resolve(path, {}, "7");
    CHECK(env.seed == 7);
    CHECK(env.m == 3);

    const Config flags = resolve(path, {{"seed", "11"}, {"m", "2"}}, "7");
    CHECK(flags.seed == 11);
    CHECK(flags.m == 2);
    CHECK(flags.lr == 0.01);

    CHECK(resolve(std::nullopt, {}, nullptr) == Config{});
    CHECK_THROWS_AS(resolve(path, {}, "seven"), ConfigError);
    CHECK_THROWS_AS(resolve(path, {{"lr", "0"}}, nullptr), ConfigError);
    fs::remove(path);
}

TEST_CASE("derived options mirror the config") {
    const Config c = shuffled_config(3);
    const auto m = model_config(c);
    CHECK(m.resolution == c.fine_resolution);
    CHECK(m.dim == c.dim);
    CHECK(m.rotation_bins == c.rotation_bins);
    const auto t = train_config(c);
    CHECK(t.lr == c.lr);
    CHECK(t.seed == c.seed);
    CHECK(t.weights.rotation == c.rotation_weight);
    CHECK(t.eps == c.adam_eps);
    const auto d = dataset_options(c);
    CHECK(d.m == c.m);
    CHECK(d.resolution == c.coarse_resolution);
    REQUIRE(d.bounds.has_value());
    CHECK(d.bounds->min == c.workspace.min);
    const auto p = policy_options(c);
    CHECK(p.kind == bench::PolicyKind::noisy_oracle);
    CHECK(p.planner_mode == bench::PlannerMode::monolithic);
    const auto e = evaluate_options(c);
    CHECK(e.episodes_per_variation == c.episodes);
    CHECK(e.levels == std::vector<bench::Level>{bench::Level::L2, bench::Level::train});
    CHECK(e.transcript_dir == fs::path(c.out) / "eval" / "transcripts");
    CHECK(traj_dir(Config{}) == fs::path("out") / "trajectories");
    CHECK(checkpoint_path(c) == fs::path("c.c2fk"));
}

TEST_CASE("bundled suite files match the built-in suites") {
    const fs::path root = C2F_SOURCE_DIR;
    CHECK(io::read_json(root / "suites" / "synthetic.json") == bench::to_json(bench::synthetic_suite()));
    CHECK(io::read_json(root / "suites" / "bundled.json") == bench::to_json(bench::bundled_suite()));
    Config c;
    c.suite = (root / "suites" / "synthetic.json").string();
    CHECK(bench::to_json(load_suite(c)) == bench::to_json(bench::synthetic_suite()));
    c.suite = "nowhere.json";
    CHECK_THROWS_AS(load_suite(c), DataError);
}
