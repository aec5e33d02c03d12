#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/plan.hpp"
#include "c2f/scene.hpp"
#include "c2f/trajectory.hpp"

namespace c2f::bench {

enum class Level { train, L1, L2, L3, L4 };

std::string_view to_string(Level level);
Level level_from_string(std::string_view s);

using Params = std::map<std::string, std::string>;

struct Variation {
    std::string id;
    Params params;
};

/// A task family instantiated at one level with its variations.
struct TaskSpec {
    std::string id;      ///< unique within a suite, e.g. "put_in_cup@L2"
    std::string family;  ///< generator key
    Level level = Level::train;
    std::vector<Variation> variations;
};

struct Suite {
    std::string name;
    std::vector<TaskSpec> tasks;

    const TaskSpec& task(std::string_view id) const;
};

inline constexpr int kSuiteFormatVersion = 1;

nlohmann::json to_json(const Suite& suite);
Suite suite_from_json(const nlohmann::json& j);
Suite load_suite(const std::filesystem::path& path);

/// Families that exist as single tasks; compositions are L4-only.
const std::vector<std::string>& base_families();
const std::vector<std::string>& composed_families();

/// Train split, L1 placements, L2 colors/shapes, L3 drawer variants, L4 compositions.
Suite synthetic_suite();
/// pick_and_lift, put_in_cup, open_drawer and put_in_drawer at the train level.
Suite bundled_suite();

/// Variation parameters a level varies, used to check level separation.
std::set<std::string> parameter_values(const Suite& suite, Level level, const std::string& key);

/// Task description L for a family and its parameters.
std::string describe(const std::string& family, const Params& params);

/// Success condition over scene state.
struct Goal {
    enum class Kind { lifted, in_cup, on_top, drawer_open, drawer_closed, in_drawer };
    Kind kind = Kind::lifted;
    std::string object;
    std::string target;
    double reference_z = 0.0;
};

bool goal_satisfied(const Goal& goal, const Scene& scene);
bool success(const std::vector<Goal>& goals, const Scene& scene);

struct GenerateOptions {
    bool render = false;  ///< render per-step camera images into the trajectory
    int image_size = 64;
    RenderOptions render_options;
};

struct GeneratedEpisode {
    Scene scene;  ///< initial state
    planning::Plan plan;
    data::Trajectory trajectory;
    std::vector<Action> keyframe_actions;  ///< one per plan step
    std::vector<int> event_steps;          ///< generator's keyframe timesteps
    std::vector<Goal> goals;
    std::string task_id;
    std::string variation_id;
};

/// Deterministic scene, scripted expert trajectory and ground-truth plan.
/// Throws GenerationError when placement fails after bounded rejection sampling.
GeneratedEpisode generate_scene(const TaskSpec& task, const Variation& variation, std::uint64_t seed,
                                const GenerateOptions& options = {});

/// Placement seed stream; L1 draws from a different domain than train.
std::uint64_t placement_seed(Level level, std::uint64_t seed);

/// Ground-truth reference points recorded in observations (handles for drawers).
std::vector<data::ObjectPose> object_poses(const Scene& scene);

/// Speed of the scripted expert between keyframes, meters per step.
inline constexpr double kExpertStepLength = 0.03;

}  // namespace c2f::bench
