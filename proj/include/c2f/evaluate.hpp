#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/keypoint.hpp"
#include "c2f/planner.hpp"
#include "c2f/tasks.hpp"

namespace c2f::bench {

enum class PolicyKind { oracle, noisy_oracle, trained, random };
enum class PlannerMode { staged, monolithic };

std::string_view to_string(PolicyKind k);
PolicyKind policy_from_string(std::string_view s);
std::string_view to_string(PlannerMode m);
PlannerMode planner_mode_from_string(std::string_view s);

/// What the fine stage sees at one step.
struct StepContext {
    const GeneratedEpisode& episode;
    const Scene& scene;
    const planner::Round2Response& response;
    const geometry::PointCloud& cloud;  ///< empty unless views were rendered
    const geometry::ViewSet& views;
};

/// Fine stage: turns the planner's step instruction and keypoint into an action.
class Executor {
public:
    virtual ~Executor() = default;
    virtual Action act(const StepContext& ctx) = 0;
    virtual bool needs_views() const { return false; }
};

/// Ground-truth keyframe action for the step the instruction names.
/// Throws UnknownProgressError when the instruction is not in the episode's plan.
const Action& ground_truth_action(const GeneratedEpisode& episode, const std::string& instruction);

struct PolicyOptions {
    PolicyKind kind = PolicyKind::oracle;
    PlannerMode planner_mode = PlannerMode::staged;
    double noise_sigma = 0.01;     ///< planner keypoint noise for noisy-oracle and trained
    double cube_side = 0.2;        ///< fine-stage crop
    int fine_resolution = 64;
    double heatmap_sigma = keypoint::kDefaultSigma;
    double grid_step = 0.01;       ///< coarse grid spacing for grid decoding
    /// Builds the fine stage for PolicyKind::trained.
    std::function<std::unique_ptr<Executor>()> trained_executor;
    /// Replaces the scripted planner, e.g. with a WirePlanner. Called once per episode.
    std::function<std::unique_ptr<planner::Planner>(const GeneratedEpisode&)> planner_factory;
};

std::unique_ptr<Executor> make_executor(const PolicyOptions& options, std::uint64_t seed);
std::unique_ptr<planner::Planner> make_planner(const PolicyOptions& options, const GeneratedEpisode& episode,
                                               const Scene* live, std::uint64_t seed);

struct EvaluateOptions {
    int episodes_per_variation = 20;
    int seeds = 5;
    std::uint64_t seed = 0;
    int jobs = 1;
    int resolution = 64;   ///< coarse canonical views
    int image_size = 64;   ///< camera images
    RenderOptions render;  ///< rgb gain/bias and table color approximate lighting changes
    bool force_views = false;  ///< render even when no component reads the images
    std::vector<Level> levels;        ///< empty = all
    std::vector<std::string> tasks;   ///< empty = all
    std::filesystem::path transcript_dir;  ///< empty = no transcripts
};

struct EpisodeResult {
    std::string task_id;
    std::string variation_id;
    Level level = Level::train;
    int seed_index = 0;
    int episode = 0;
    bool success = false;
    int steps = 0;
    int max_steps = 0;
    std::size_t anomalies = 0;
    std::string error;       ///< protocol or contract failure, empty otherwise
    std::string transcript;  ///< path relative to transcript_dir, empty when not written
};

/// Per-episode stream: (evaluation seed, task, variation, episode).
std::uint64_t episode_seed(std::uint64_t seed, int seed_index, const std::string& task_id,
                           const std::string& variation_id, int episode);

EpisodeResult run_episode(const TaskSpec& task, const Variation& variation, int seed_index, int episode,
                          const PolicyOptions& policy, const EvaluateOptions& options);

struct Stat {
    double mean = 0.0;
    double std = 0.0;  ///< population std over seeds
    std::vector<double> per_seed;
};

Stat seed_statistics(std::vector<double> per_seed);

struct TaskSummary {
    std::string task_id;
    Level level = Level::train;
    Stat success;
};

struct Report {
    std::string suite;
    std::string policy;
    std::string planner_mode;
    EvaluateOptions options;
    std::vector<EpisodeResult> episodes;
    std::vector<TaskSummary> tasks;
    std::vector<std::pair<Level, Stat>> levels;
};

/// Runs every selected (task, variation, seed, episode) on `jobs` threads. Results are
/// ordered independently of scheduling.
Report evaluate(const Suite& suite, const PolicyOptions& policy, const EvaluateOptions& options);

/// Rebuilds task and level statistics from the episode log.
void summarize(Report& report);

inline constexpr int kReportFormatVersion = 1;

nlohmann::json to_json(const Report& report);
/// Throws DataError when required fields are missing or have the wrong type.
void validate_report_json(const nlohmann::json& j);
std::string render_table(const Report& report);

/// Upper bound on the success rate of uniformly random actions: at least one grasp is needed,
/// so success <= 1 - (1 - p)^max_steps with p the chance one uniform point lands within
/// grasp_radius of a graspable point.
double chance_baseline(const GeneratedEpisode& episode);
/// Per-step grasp chance p used by chance_baseline.
double grasp_chance(const GeneratedEpisode& episode);

}  // namespace c2f::bench
