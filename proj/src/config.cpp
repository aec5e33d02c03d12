#include "c2f/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <variant>

#include "c2f/errors.hpp"
#include "c2f/serialization.hpp"

namespace c2f::config {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

using Member = std::variant<std::uint64_t Config::*, int Config::*, double Config::*, std::string Config::*,
                            bool Config::*, std::vector<std::string> Config::*, geometry::WorkspaceBounds Config::*>;

struct Field {
    FieldInfo info;
    Member member;
};

FieldType type_of(const Member& m) {
    switch (m.index()) {
        case 0:
        case 1: return FieldType::integer;
        case 2: return FieldType::number;
        case 3: return FieldType::text;
        case 4: return FieldType::boolean;
        case 5: return FieldType::list;
        default: return FieldType::bounds;
    }
}

const std::vector<Field>& table() {
    static const std::vector<Field> t = [] {
        std::vector<Field> f;
        auto add = [&f](std::string name, Member m, std::string help) {
            f.push_back({{std::move(name), type_of(m), std::move(help)}, m});
        };
        add("seed", &Config::seed, "root seed for every random stream; C2F_SEED overrides the file");
        add("jobs", &Config::jobs, "worker threads");
        add("out", &Config::out, "output root");
        add("suite", &Config::suite, "bundled, synthetic, or a suite JSON file");
        add("workspace", &Config::workspace, "workspace bounds xmin,ymin,zmin,xmax,ymax,zmax");
        add("coarse_resolution", &Config::coarse_resolution, "canonical view resolution of datasets and planner views");
        add("fine_resolution", &Config::fine_resolution, "resolution of the fine-stage crop views");
        add("image_size", &Config::image_size, "camera image width and height");
        add("levels", &Config::levels, "comma-separated levels to run, empty for all");
        add("tasks", &Config::tasks, "comma-separated task ids to run, empty for all");
        add("generate_episodes", &Config::generate_episodes, "trajectories generated per task variation");
        add("traj_dir", &Config::traj_dir, "trajectory directory, empty for <out>/trajectories");
        add("m", &Config::m, "observations sampled after each keyframe");
        add("strategy", &Config::strategy, "sampling strategy: post_keyframe, every_n or symmetric");
        add("sigma", &Config::sigma, "heatmap Gaussian width in pixels");
        add("cube_side", &Config::cube_side, "fine-stage crop side in meters");
        add("crop_jitter", &Config::crop_jitter, "training crop center jitter in meters");
        add("grid_step", &Config::grid_step, "candidate grid spacing for keypoint decoding in meters");
        add("patch", &Config::patch, "image patch size of the fine model");
        add("dim", &Config::dim, "token width");
        add("layers", &Config::layers, "attention layers");
        add("mlp_hidden", &Config::mlp_hidden, "hidden width of each MLP block");
        add("vocab", &Config::vocab, "hashed word buckets of the text encoder");
        add("max_words", &Config::max_words, "instruction words kept");
        add("bands", &Config::bands, "Fourier bands of the 3D position embedding");
        add("rotation_bins", &Config::rotation_bins, "bins per Euler angle");
        add("init_scale", &Config::init_scale, "scale of the initial weights");
        add("dataset", &Config::dataset, "dataset directory, empty for <out>/dataset");
        add("lr", &Config::lr, "Adam learning rate");
        add("batch", &Config::batch, "batch size");
        add("epochs", &Config::epochs, "training epochs");
        add("holdout", &Config::holdout, "fraction of samples held out for validation");
        add("heatmap_weight", &Config::heatmap_weight, "heatmap loss weight");
        add("rotation_weight", &Config::rotation_weight, "rotation loss weight");
        add("gripper_weight", &Config::gripper_weight, "gripper loss weight");
        add("beta1", &Config::beta1, "Adam first moment decay");
        add("beta2", &Config::beta2, "Adam second moment decay");
        add("adam_eps", &Config::adam_eps, "Adam epsilon");
        add("policy", &Config::policy, "oracle, noisy-oracle, trained or random");
        add("planner_mode", &Config::planner_mode, "staged or monolithic");
        add("episodes", &Config::episodes, "evaluation episodes per variation per seed");
        add("seeds", &Config::seeds, "evaluation seeds");
        add("noise_sigma", &Config::noise_sigma, "planner keypoint noise in meters");
        add("checkpoint", &Config::checkpoint, "model checkpoint, empty for <out>/train/checkpoint.c2fk");
        add("transcripts", &Config::transcripts, "write planner transcripts during evaluation");
        add("object_scenes", &Config::object_scenes, "scenes in the exported object-position data");
        return f;
    }();
    return t;
}

const Field& find(std::string_view name) {
    for (const auto& f : table()) {
        if (f.info.name == name) return f;
    }
    throw ConfigError("unknown config field '" + std::string(name) + "'");
}

std::string number_text(double v) { return json(v).dump(); }

template <class T>
T parse_integer(std::string_view name, std::string_view text) {
    T v{};
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || text.empty()) {
        throw ConfigError("field '" + std::string(name) + "' expects an integer, got '" + std::string(text) + "'");
    }
    return v;
}

double parse_number(std::string_view name, std::string_view text) {
    const std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw ConfigError("field '" + std::string(name) + "' expects a number, got '" + s + "'");
    }
    return v;
}

std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in{std::string(text)};
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

geometry::WorkspaceBounds checked_bounds(const geometry::WorkspaceBounds& b) {
    try {
        b.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("workspace: ") + e.what());
    }
    return b;
}

template <class F>
void require(bool ok, F&& message) {
    if (!ok) throw ConfigError(message());
}

}  // namespace

const std::vector<FieldInfo>& fields() {
    static const std::vector<FieldInfo> f = [] {
        std::vector<FieldInfo> out;
        for (const auto& x : table()) out.push_back(x.info);
        return out;
    }();
    return f;
}

ordered_json to_json(const Config& c) {
    ordered_json j = ordered_json::object();
    for (const auto& f : table()) {
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(std::declval<Config&>().*member)>;
                if constexpr (std::is_same_v<T, geometry::WorkspaceBounds>) {
                    j[f.info.name] = ordered_json(io::to_json(c.*member));
                } else {
                    j[f.info.name] = c.*member;
                }
            },
            f.member);
    }
    return j;
}

bool operator==(const Config& a, const Config& b) { return to_json(a) == to_json(b); }

Config config_from_json(const json& j, Config base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        const Field& f = find(key);
        auto bad = [&](const char* want) { return ConfigError("field '" + key + "' expects " + want); };
        std::visit(
            [&](auto member) {
                using T = std::remove_cvref_t<decltype(std::declval<Config&>().*member)>;
                if constexpr (std::is_same_v<T, std::uint64_t>) {
                    if (!value.is_number_unsigned()) throw bad("a nonnegative integer");
                    base.*member = value.get<std::uint64_t>();
                } else if constexpr (std::is_same_v<T, int>) {
                    if (!value.is_number_integer()) throw bad("an integer");
                    const auto v = value.get<std::int64_t>();
                    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
                        throw bad("an integer in range");
                    }
                    base.*member = static_cast<int>(v);
                } else if constexpr (std::is_same_v<T, double>) {
                    if (!value.is_number()) throw bad("a number");
                    base.*member = value.get<double>();
                } else if constexpr (std::is_same_v<T, std::string>) {
                    if (!value.is_string()) throw bad("a string");
                    base.*member = value.get<std::string>();
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (!value.is_boolean()) throw bad("true or false");
                    base.*member = value.get<bool>();
                } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                    if (!value.is_array()) throw bad("an array of strings");
                    std::vector<std::string> v;
                    for (const auto& s : value) {
                        if (!s.is_string()) throw bad("an array of strings");
                        v.push_back(s.get<std::string>());
                    }
                    base.*member = std::move(v);
                } else {
                    try {
                        base.*member = io::bounds_from_json(value);
                    } catch (const std::exception& e) {
                        throw ConfigError("field '" + key + "' expects {\"min\": [x, y, z], \"max\": [x, y, z]}: " +
                                          e.what());
                    }
                }
            },
            f.member);
    }
    return base;
}

Config load_config(const fs::path& path, Config base) {
    json j;
    try {
        j = io::read_json(path);
    } catch (const std::exception& e) {
        throw ConfigError("cannot read config " + path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

void set_field(Config& c, std::string_view name, std::string_view text) {
    const Field& f = find(name);
    std::visit(
        [&](auto member) {
            using T = std::remove_cvref_t<decltype(std::declval<Config&>().*member)>;
            if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
                c.*member = parse_integer<T>(name, text);
            } else if constexpr (std::is_same_v<T, double>) {
                c.*member = parse_number(name, text);
            } else if constexpr (std::is_same_v<T, std::string>) {
                c.*member = std::string(text);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (text == "true" || text == "1") {
                    c.*member = true;
                } else if (text == "false" || text == "0") {
                    c.*member = false;
                } else {
                    throw ConfigError("field '" + std::string(name) + "' expects true or false");
                }
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                c.*member = split(text);
            } else {
                const auto parts = split(text);
                if (parts.size() != 6) throw ConfigError("field '" + std::string(name) + "' expects six numbers");
                geometry::WorkspaceBounds b;
                for (int i = 0; i < 3; ++i) {
                    b.min[i] = parse_number(name, parts[i]);
                    b.max[i] = parse_number(name, parts[i + 3]);
                }
                c.*member = checked_bounds(b);
            }
        },
        f.member);
}

std::string field_text(const Config& c, std::string_view name) {
    const Field& f = find(name);
    return std::visit(
        [&](auto member) -> std::string {
            using T = std::remove_cvref_t<decltype(std::declval<Config&>().*member)>;
            const T& v = c.*member;
            if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
                return std::to_string(v);
            } else if constexpr (std::is_same_v<T, double>) {
                return number_text(v);
            } else if constexpr (std::is_same_v<T, std::string>) {
                return v;
            } else if constexpr (std::is_same_v<T, bool>) {
                return v ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                std::string s;
                for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
                return s;
            } else {
                std::string s;
                for (int i = 0; i < 6; ++i) s += (i ? "," : "") + number_text(i < 3 ? v.min[i] : v.max[i - 3]);
                return s;
            }
        },
        f.member);
}

void validate(const Config& c) {
    require(c.jobs >= 1, [] { return "jobs must be at least 1"; });
    require(!c.out.empty(), [] { return "out must not be empty"; });
    require(!c.suite.empty(), [] { return "suite must not be empty"; });
    checked_bounds(c.workspace);
    require(c.coarse_resolution > 0, [] { return "coarse_resolution must be positive"; });
    require(c.fine_resolution > 0, [] { return "fine_resolution must be positive"; });
    require(c.image_size > 0, [] { return "image_size must be positive"; });
    for (const auto& l : c.levels) {
        try {
            bench::level_from_string(l);
        } catch (const Error&) {
            throw ConfigError("unknown level '" + l + "'");
        }
    }
    require(c.generate_episodes >= 1, [] { return "generate_episodes must be at least 1"; });
    require(c.m >= 0, [] { return "m must be nonnegative"; });
    try {
        data::sampling_from_string(c.strategy);
    } catch (const Error&) {
        throw ConfigError("unknown sampling strategy '" + c.strategy + "'");
    }
    require(c.grid_step > 0.0, [] { return "grid_step must be positive"; });
    // The command line refuses lr = 0 even though the trainer accepts it.
    require(c.lr > 0.0 && std::isfinite(c.lr), [] { return "lr must be a positive number"; });
    model_config(c).validate();
    train_config(c).validate();
    try {
        bench::policy_from_string(c.policy);
    } catch (const Error&) {
        throw ConfigError("unknown policy '" + c.policy + "'");
    }
    try {
        bench::planner_mode_from_string(c.planner_mode);
    } catch (const Error&) {
        throw ConfigError("unknown planner_mode '" + c.planner_mode + "'");
    }
    require(c.episodes >= 1, [] { return "episodes must be at least 1"; });
    require(c.seeds >= 1, [] { return "seeds must be at least 1"; });
    require(c.noise_sigma >= 0.0, [] { return "noise_sigma must be nonnegative"; });
    require(c.object_scenes >= 0, [] { return "object_scenes must be nonnegative"; });
}

Config resolve(const std::optional<fs::path>& file, const std::map<std::string, std::string>& flags,
               const char* env_seed) {
    Config c;
    if (file) c = load_config(*file, c);
    if (env_seed) {
        try {
            set_field(c, "seed", env_seed);
        } catch (const ConfigError&) {
            throw ConfigError(std::string(kSeedEnv) + " must be a nonnegative integer, got '" + env_seed + "'");
        }
    }
    for (const auto& [name, text] : flags) set_field(c, name, text);
    validate(c);
    return c;
}

fs::path traj_dir(const Config& c) { return c.traj_dir.empty() ? fs::path(c.out) / "trajectories" : fs::path(c.traj_dir); }

fs::path dataset_dir(const Config& c) { return c.dataset.empty() ? fs::path(c.out) / "dataset" : fs::path(c.dataset); }

fs::path checkpoint_path(const Config& c) {
    return c.checkpoint.empty() ? fs::path(c.out) / "train" / "checkpoint.c2fk" : fs::path(c.checkpoint);
}

bench::Suite load_suite(const Config& c) {
    if (c.suite == "bundled") return bench::bundled_suite();
    if (c.suite == "synthetic") return bench::synthetic_suite();
    try {
        return bench::load_suite(c.suite);
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("cannot load suite " + c.suite + ": " + e.what());
    }
}

std::vector<bench::Level> levels(const Config& c) {
    std::vector<bench::Level> out;
    for (const auto& l : c.levels) out.push_back(bench::level_from_string(l));
    return out;
}

predictor::ModelConfig model_config(const Config& c) {
    predictor::ModelConfig m;
    m.resolution = c.fine_resolution;
    m.patch = c.patch;
    m.dim = c.dim;
    m.layers = c.layers;
    m.mlp_hidden = c.mlp_hidden;
    m.vocab = c.vocab;
    m.max_words = c.max_words;
    m.bands = c.bands;
    m.rotation_bins = c.rotation_bins;
    m.init_scale = c.init_scale;
    return m;
}

predictor::TrainConfig train_config(const Config& c) {
    predictor::TrainConfig t;
    t.lr = c.lr;
    t.batch = c.batch;
    t.epochs = c.epochs;
    t.seed = c.seed;
    t.holdout = c.holdout;
    t.crop_jitter = c.crop_jitter;
    t.cube_side = c.cube_side;
    t.sigma = c.sigma;
    t.weights = {c.heatmap_weight, c.rotation_weight, c.gripper_weight};
    t.beta1 = c.beta1;
    t.beta2 = c.beta2;
    t.eps = c.adam_eps;
    return t;
}

data::DatasetOptions dataset_options(const Config& c) {
    data::DatasetOptions d;
    d.m = c.m;
    d.resolution = c.coarse_resolution;
    d.strategy = data::sampling_from_string(c.strategy);
    d.jobs = c.jobs;
    d.bounds = c.workspace;
    return d;
}

bench::PolicyOptions policy_options(const Config& c) {
    bench::PolicyOptions p;
    p.kind = bench::policy_from_string(c.policy);
    p.planner_mode = bench::planner_mode_from_string(c.planner_mode);
    p.noise_sigma = c.noise_sigma;
    p.cube_side = c.cube_side;
    p.fine_resolution = c.fine_resolution;
    p.heatmap_sigma = c.sigma;
    p.grid_step = c.grid_step;
    return p;
}

bench::EvaluateOptions evaluate_options(const Config& c) {
    bench::EvaluateOptions e;
    e.episodes_per_variation = c.episodes;
    e.seeds = c.seeds;
    e.seed = c.seed;
    e.jobs = c.jobs;
    e.resolution = c.coarse_resolution;
    e.image_size = c.image_size;
    e.levels = levels(c);
    e.tasks = c.tasks;
    if (c.transcripts) e.transcript_dir = fs::path(c.out) / "eval" / "transcripts";
    return e;
}

}  // namespace c2f::config
