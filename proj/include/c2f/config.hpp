#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/evaluate.hpp"
#include "c2f/predictor.hpp"
#include "c2f/trajectory.hpp"

namespace c2f::config {

/// Everything a command reads. Empty path fields resolve under `out`.
struct Config {
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out = "out";
    std::string suite = "bundled";  ///< "bundled", "synthetic" or a suite JSON file
    geometry::WorkspaceBounds workspace = bench::default_workspace();
    int coarse_resolution = geometry::kDefaultResolution;
    int fine_resolution = 64;
    int image_size = 64;
    std::vector<std::string> levels;  ///< empty = all
    std::vector<std::string> tasks;   ///< empty = all

    int generate_episodes = 2;  ///< trajectories per variation
    std::string traj_dir;       ///< default <out>/trajectories
    int m = data::kDefaultWindow;
    std::string strategy = "post_keyframe";

    double sigma = keypoint::kDefaultSigma;
    double cube_side = 0.2;
    double crop_jitter = 0.03;
    double grid_step = 0.01;

    int patch = 8;
    int dim = 32;
    int layers = 2;
    int mlp_hidden = 64;
    int vocab = 512;
    int max_words = 24;
    int bands = 8;
    int rotation_bins = 72;
    double init_scale = 1.0;

    std::string dataset;  ///< default <out>/dataset
    double lr = 0.0024;
    int batch = 192;
    int epochs = 5;
    double holdout = 0.1;
    double heatmap_weight = 1.0;
    double rotation_weight = 1.0;
    double gripper_weight = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    std::string policy = "oracle";
    std::string planner_mode = "staged";
    int episodes = 20;  ///< per variation per seed
    int seeds = 5;
    double noise_sigma = 0.01;
    std::string checkpoint;  ///< default <out>/train/checkpoint.c2fk
    bool transcripts = false;

    int object_scenes = 50;
};

/// Field-by-field, through the serialized form.
bool operator==(const Config& a, const Config& b);

enum class FieldType { integer, number, text, boolean, bounds, list };

struct FieldInfo {
    std::string name;
    FieldType type;
    std::string help;
};

/// Every field in serialization order.
const std::vector<FieldInfo>& fields();

nlohmann::ordered_json to_json(const Config& c);
/// Applies the keys present in `j` on top of `base`. Throws ConfigError on unknown keys or bad types.
Config config_from_json(const nlohmann::json& j, Config base = {});
Config load_config(const std::filesystem::path& path, Config base = {});

/// Parses command-line text for one field. Lists are comma separated, bounds are
/// "xmin,ymin,zmin,xmax,ymax,zmax".
void set_field(Config& c, std::string_view name, std::string_view text);
/// Display form of a field, the inverse of set_field.
std::string field_text(const Config& c, std::string_view name);

/// Throws ConfigError naming the first bad field.
void validate(const Config& c);

inline constexpr const char* kSeedEnv = "C2F_SEED";

/// Flag > C2F_SEED > config file > default. `env_seed` is the raw variable, null when unset.
Config resolve(const std::optional<std::filesystem::path>& file, const std::map<std::string, std::string>& flags,
               const char* env_seed);

std::filesystem::path traj_dir(const Config& c);
std::filesystem::path dataset_dir(const Config& c);
std::filesystem::path checkpoint_path(const Config& c);

bench::Suite load_suite(const Config& c);
std::vector<bench::Level> levels(const Config& c);
predictor::ModelConfig model_config(const Config& c);
predictor::TrainConfig train_config(const Config& c);
data::DatasetOptions dataset_options(const Config& c);
bench::PolicyOptions policy_options(const Config& c);
bench::EvaluateOptions evaluate_options(const Config& c);

}  // namespace c2f::config
