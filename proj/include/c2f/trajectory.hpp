#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/action.hpp"
#include "c2f/geometry.hpp"
#include "c2f/plan.hpp"

namespace c2f::bench {
struct Scene;
}

namespace c2f::data {

using geometry::CameraModel;
using geometry::Pixel;
using geometry::RgbdImage;
using geometry::WorkspaceBounds;

struct ObjectPose {
    std::string name;
    Vec3 position = Vec3::Zero();

    friend bool operator==(const ObjectPose&, const ObjectPose&) = default;
};

struct Observation {
    int timestep = 0;
    GripperState gripper = GripperState::open;
    std::vector<RgbdImage> images;   ///< one per camera, may be empty when not rendered
    std::vector<ObjectPose> objects; ///< ground-truth reference points
};

struct Trajectory {
    std::string task;
    std::vector<Observation> observations;
    std::vector<Action> actions;
    std::vector<int> keyframes;
    std::vector<std::string> camera_names;
    std::vector<CameraModel> cameras;
    WorkspaceBounds bounds;
    double dt = 0.1;  ///< seconds between steps

    std::size_t size() const noexcept { return actions.size(); }
    /// Throws ContractError when lengths, timesteps or keyframes are inconsistent.
    void validate() const;
};

inline constexpr double kDefaultVelocityEpsilon = 1e-3;
inline constexpr int kDefaultWindow = 5;

/// t is a keyframe when the gripper changes between t-1 and t, or when the speed at t is
/// below `vel_epsilon` and is a local minimum (strictly below t-1, not above t+1).
/// The final index is always included. Speeds are backward differences of action positions.
std::vector<int> extract_keyframes(std::span<const Action> actions, double dt,
                                   double vel_epsilon = kDefaultVelocityEpsilon);
std::vector<int> extract_keyframes(const Trajectory& traj,
                                   double vel_epsilon = kDefaultVelocityEpsilon);

/// Throws ContractError unless keyframes are strictly increasing, in range, and end at len-1.
void check_keyframes(std::span<const int> keyframes, int traj_len);

struct Segment {
    int first = 0;  ///< t_{k-1} + 1, or 0
    int last = 0;   ///< t_k
    int keyframe = 0;
    Action action;

    int size() const { return last - first + 1; }
};

/// Segment k covers (t_{k-1}, t_k]; the first segment starts at 0.
std::vector<Segment> segment(const Trajectory& traj, std::span<const int> keyframes);

/// Keyframe an observation at t should predict: the smallest t_k > t. None at or past the
/// final keyframe.
std::optional<int> target_keyframe(std::span<const int> keyframes, int t);

struct SamplePair {
    int observation = 0;
    int target = 0;

    friend bool operator==(const SamplePair&, const SamplePair&) = default;
};

/// Index 0 paired with t_1, then t_k .. min(t_k + m, t_{k+1} - 1) paired with t_{k+1}.
std::vector<SamplePair> sample_training_indices(std::span<const int> keyframes, int traj_len,
                                                int m = kDefaultWindow);

/// Rejected alternatives, kept for ablations only.
enum class SamplingStrategy { post_keyframe, every_n, symmetric };

SamplingStrategy sampling_from_string(std::string_view s);
std::string_view to_string(SamplingStrategy s);

std::vector<SamplePair> sample_indices(SamplingStrategy strategy, std::span<const int> keyframes,
                                       int traj_len, int m);

struct ObjectTarget {
    std::string name;
    Vec3 position = Vec3::Zero();
    std::array<Pixel, 3> pixels{};  ///< front, left, top
};

struct TrainingSample {
    std::string trajectory_id;
    int observation_index = 0;
    int target_index = 0;
    Observation observation;
    std::string previous_instruction;
    std::vector<std::string> subtask_plan;
    std::size_t subtask_index = 0;
    std::string target_instruction;
    std::vector<ObjectTarget> objects;
    Vec3 keypoint = Vec3::Zero();
    std::array<Pixel, 3> keypoint_pixels{};
    Action action;
};

/// One sample per sampled index. Targets use the canonical views over `bounds` at `resolution`.
/// Throws AlignmentError when the plan's step count differs from the number of keyframes.
std::vector<TrainingSample> build_training_samples(const Trajectory& traj, const planning::Plan& plan,
                                                   int m, const WorkspaceBounds& bounds,
                                                   int resolution,
                                                   SamplingStrategy strategy = SamplingStrategy::post_keyframe);

/// Object reference points inside `bounds` with their pixel coordinates in every view.
std::vector<ObjectTarget> object_targets(std::span<const ObjectPose> objects,
                                         const WorkspaceBounds& bounds, int resolution,
                                         std::size_t* skipped = nullptr);

/// Fused point cloud of an observation's images, filtered to `bounds`.
geometry::PointCloud observation_cloud(const Observation& obs, std::span<const CameraModel> cameras,
                                       const WorkspaceBounds& bounds);

struct ObjectPositionRecord {
    geometry::ViewSet views;
    std::vector<ObjectTarget> objects;
};

struct ObjectPositionDataset {
    std::vector<ObjectPositionRecord> records;
    std::size_t skipped_objects = 0;
    std::size_t empty_scenes = 0;
};

/// Renders each scene, projects it to canonical views and records every object's pixels.
ObjectPositionDataset build_object_position_dataset(std::span<const bench::Scene> scenes, int resolution);

// ---- on-disk trajectories -------------------------------------------------

inline constexpr int kTrajectoryFormatVersion = 1;

/// Writes meta.json and arrays.c2fb under `dir`.
void save_trajectory(const std::filesystem::path& dir, const Trajectory& traj,
                     const planning::Plan& plan);

struct StoredTrajectory {
    Trajectory trajectory;
    planning::Plan plan;
};

StoredTrajectory load_trajectory(const std::filesystem::path& dir);

nlohmann::json to_json(const Action& a);
Action action_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraModel& c);
CameraModel camera_from_json(const nlohmann::json& j);

// ---- dataset files ----------------------------------------------------------

struct DatasetOptions {
    int m = kDefaultWindow;
    int resolution = geometry::kDefaultResolution;
    SamplingStrategy strategy = SamplingStrategy::post_keyframe;
    int jobs = 1;
    std::optional<WorkspaceBounds> bounds;  ///< projection bounds, default the trajectory's own
};

nlohmann::json sample_to_json(const TrainingSample& s, const std::string& views_ref);

/// Builds samples for every trajectory directory under `traj_root` and writes
/// samples/<trajectory>.jsonl, views/<hash>.{c2fb,json} and manifest.json under `out`.
/// Returns the manifest.
nlohmann::json build_dataset(const std::filesystem::path& traj_root, const std::filesystem::path& out,
                             const DatasetOptions& options);

/// Sorted trajectory directories (those containing meta.json) under `root`.
std::vector<std::filesystem::path> list_trajectories(const std::filesystem::path& root);

}  // namespace c2f::data
