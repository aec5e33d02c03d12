#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "c2f/config.hpp"
#include "c2f/errors.hpp"
#include "c2f/evaluate.hpp"
#include "c2f/predictor.hpp"
#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"
#include "c2f/tasks.hpp"
#include "c2f/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace c2f;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, internal = 3 };

std::string dashed(std::string s) {
    for (char& ch : s) {
        if (ch == '_') ch = '-';
    }
    return s;
}

// Path-valued fields differ between reruns into different roots; keep them out of artifacts.
json portable(const config::Config& c) {
    json j = config::to_json(c);
    for (const char* k : {"out", "traj_dir", "dataset", "checkpoint", "jobs"}) j.erase(k);
    return j;
}

std::vector<const bench::TaskSpec*> selected_tasks(const bench::Suite& suite, const config::Config& c) {
    const auto levels = config::levels(c);
    std::vector<const bench::TaskSpec*> out;
    for (const auto& t : suite.tasks) {
        if (!levels.empty() && std::find(levels.begin(), levels.end(), t.level) == levels.end()) continue;
        if (!c.tasks.empty() && std::find(c.tasks.begin(), c.tasks.end(), t.id) == c.tasks.end()) continue;
        out.push_back(&t);
    }
    if (out.empty()) throw ConfigError("no task in suite '" + suite.name + "' matches the selected levels and tasks");
    return out;
}

template <class F>
void parallel_for(std::size_t n, int jobs, F&& body) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) body(i);
    };
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    std::exception_ptr first;
    std::mutex mu;
    auto guarded = [&] {
        try {
            worker();
        } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
            next = n;
        }
    };
    for (std::size_t j = 1; j < k; ++j) pool.emplace_back(guarded);
    guarded();
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

std::string trajectory_name(const bench::TaskSpec& t, const bench::Variation& v, int episode) {
    std::ostringstream s;
    s << t.id << "__" << v.id << "__" << std::setw(3) << std::setfill('0') << episode;
    return s.str();
}

int cmd_generate(const config::Config& c) {
    const auto suite = config::load_suite(c);
    struct Unit {
        const bench::TaskSpec* task;
        const bench::Variation* variation;
        int episode;
    };
    std::vector<Unit> units;
    for (const auto* t : selected_tasks(suite, c)) {
        for (const auto& v : t->variations) {
            for (int e = 0; e < c.generate_episodes; ++e) units.push_back({t, &v, e});
        }
    }
    const fs::path root = config::traj_dir(c);
    fs::create_directories(root);
    bench::GenerateOptions g;
    g.render = true;
    g.image_size = c.image_size;
    std::vector<json> index(units.size());
    parallel_for(units.size(), c.jobs, [&](std::size_t i) {
        const auto& u = units[i];
        const auto seed = derive_seed({c.seed, hash_string("generate"), hash_string(u.task->id),
                                       hash_string(u.variation->id), static_cast<std::uint64_t>(u.episode)});
        const auto ep = bench::generate_scene(*u.task, *u.variation, seed, g);
        const std::string name = trajectory_name(*u.task, *u.variation, u.episode);
        data::save_trajectory(root / name, ep.trajectory, ep.plan);
        index[i] = {{"id", name},
                    {"task", u.task->id},
                    {"variation", u.variation->id},
                    {"episode", u.episode},
                    {"steps", ep.trajectory.size()},
                    {"keyframes", ep.event_steps}};
    });
    io::write_json(root / "index.json", {{"format", "c2f.trajectory_index"}, {"suite", suite.name},
                                         {"config", portable(c)}, {"trajectories", index}});
    std::cout << root.string() << "\n";
    return ok;
}

int cmd_build_dataset(const config::Config& c) {
    const fs::path src = config::traj_dir(c);
    if (!fs::is_directory(src)) throw DataError("trajectory directory " + src.string() + " does not exist");
    const fs::path out = config::dataset_dir(c);
    const auto manifest = data::build_dataset(src, out, config::dataset_options(c));
    std::cerr << "samples: " << manifest.at("total").get<std::size_t>() << "\n";
    std::cout << (out / "manifest.json").string() << "\n";
    return ok;
}

int cmd_train(const config::Config& c) {
    const auto tc = config::train_config(c);
    std::size_t empty = 0;
    const auto samples = predictor::load_fine_samples(config::dataset_dir(c), tc, c.fine_resolution, &empty);
    predictor::ActionPredictor model(config::model_config(c), c.seed);
    const fs::path ckpt = config::checkpoint_path(c);
    fs::create_directories(ckpt.parent_path().empty() ? fs::path(".") : ckpt.parent_path());
    const auto report = predictor::train(model, samples, tc, ckpt);
    json rj = report.to_json();
    rj["empty_crops"] = empty;
    predictor::save_checkpoint(ckpt, model, {{"config", portable(c)}, {"train", rj}});
    io::write_json(fs::path(c.out) / "train" / "report.json", rj);
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
        std::cerr << "epoch " << e + 1 << " loss " << report.epoch_loss[e] << "\n";
    }
    std::cout << ckpt.string() << "\n";
    return ok;
}

int cmd_evaluate(const config::Config& c) {
    const auto suite = config::load_suite(c);
    auto policy = config::policy_options(c);
    if (policy.kind == bench::PolicyKind::trained) {
        const fs::path ckpt = config::checkpoint_path(c);
        if (!fs::exists(ckpt)) throw DataError("checkpoint " + ckpt.string() + " does not exist");
        auto model = std::make_shared<const predictor::ActionPredictor>(predictor::load_checkpoint(ckpt));
        policy.trained_executor = [model, c] { return predictor::make_trained_executor(model, c.cube_side, c.grid_step); };
    }
    const auto report = bench::evaluate(suite, policy, config::evaluate_options(c));
    const fs::path dir = fs::path(c.out) / "eval";
    io::write_json(dir / "report.json", bench::to_json(report));
    const auto table = bench::render_table(report);
    io::write_text(dir / "report.txt", table);
    std::cerr << table;
    std::cout << (dir / "report.json").string() << "\n";
    return ok;
}

// ---- inspect ------------------------------------------------------------------

json sidecar(const fs::path& p) {
    const fs::path j = fs::path(p).replace_extension(".json");
    if (!fs::exists(j)) return json();
    try {
        return io::read_json(j);
    } catch (const std::exception&) {
        return json();
    }
}

bool is_checkpoint(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    char magic[8] = {};
    in.read(magic, 8);
    return in && std::memcmp(magic, "C2FCKPT", 8) == 0;
}

void print_report(const json& j) {
    bench::validate_report_json(j);
    std::cout << "policy " << j.at("policy").get<std::string>() << ", planner " << j.at("planner_mode").get<std::string>()
              << ", " << j.at("episodes").size() << " episodes\n";
    for (const auto& l : j.at("levels")) std::cout << l.dump() << "\n";
}

void inspect_one(const fs::path& p, const fs::path& out, const geometry::ViewSet* overlay_views) {
    if (fs::is_directory(p)) {
        if (fs::exists(p / "meta.json")) {
            const auto st = data::load_trajectory(p);
            std::cout << "trajectory " << p.filename().string() << ": " << st.trajectory.task << ", "
                      << st.trajectory.size() << " steps, keyframes";
            for (int k : st.trajectory.keyframes) std::cout << " " << k;
            std::cout << "\n";
            for (const auto& s : st.plan.steps()) std::cout << "  " << s << "\n";
            return;
        }
        if (fs::exists(p / "manifest.json")) return inspect_one(p / "manifest.json", out, overlay_views);
        throw DataError("unknown directory type: " + p.string());
    }
    if (!fs::exists(p)) throw DataError(p.string() + " does not exist");
    const auto ext = p.extension().string();
    if (ext == ".png") {
        const auto [w, h] = io::png_dimensions(io::read_file(p));
        std::cout << p.filename().string() << ": " << w << "x" << h << " PNG\n";
        return;
    }
    if (is_checkpoint(p)) {
        std::cout << predictor::checkpoint_header(p).dump(2) << "\n";
        return;
    }
    const json meta = (ext == ".json" || ext == ".c2fb") ? sidecar(p) : json();
    const std::string format = meta.is_object() ? meta.value("format", "") : "";
    const std::string stem = fs::path(p).replace_extension().filename().string();
    if (format == "c2f.views") {
        const auto views = io::load_views(p);
        for (const auto& v : views) {
            const fs::path png = out / (stem + "_" + std::string(geometry::to_string(v.id)) + ".png");
            io::write_png_rgb(png, v.resolution, v.resolution, io::view_rgb8(v));
            std::cout << png.string() << "\n";
        }
        return;
    }
    if (format == "c2f.heatmaps") {
        const auto maps = io::load_heatmaps(p);
        for (std::size_t k = 0; k < 3; ++k) {
            const auto& h = maps[k];
            const geometry::CanonicalView* view = overlay_views ? &(*overlay_views)[k] : nullptr;
            const fs::path png = out / (stem + "_" + std::string(geometry::to_string(h.view)) + "_heatmap.png");
            io::write_png_rgb(png, h.resolution, h.resolution, io::heatmap_overlay_rgb8(view, h));
            const auto m = h.argmax();
            std::cout << png.string() << " argmax " << m.u << " " << m.v << "\n";
        }
        return;
    }
    if (format == "c2f.dataset") {
        std::cout << "dataset m=" << meta.at("m") << " resolution=" << meta.at("resolution")
                  << " strategy=" << meta.at("strategy").get<std::string>() << " total=" << meta.at("total") << "\n";
        for (const auto& [task, n] : meta.at("counts_per_task").items()) std::cout << "  " << task << " " << n << "\n";
        return;
    }
    if (format == "c2f.report") return print_report(meta);
    if (format == "c2f.trajectory") return inspect_one(p.parent_path(), out, overlay_views);
    if (format == "c2f.suite") {
        for (const auto& t : bench::suite_from_json(meta).tasks) {
            std::cout << t.id << " (" << t.variations.size() << " variations)\n";
        }
        return;
    }
    throw DataError("unknown file type: " + p.string());
}

int cmd_inspect(const config::Config& c, const std::vector<std::string>& paths) {
    const fs::path out = fs::path(c.out) / "inspect";
    fs::create_directories(out);
    // A views file given alongside heatmaps becomes their background.
    std::optional<geometry::ViewSet> views;
    for (const auto& p : paths) {
        if (sidecar(p).is_object() && sidecar(p).value("format", "") == "c2f.views") views = io::load_views(p);
    }
    for (const auto& p : paths) inspect_one(p, out, views ? &*views : nullptr);
    return ok;
}

// ---- planner data -------------------------------------------------------------

json pixel_json(const geometry::Pixel& px) { return json::array({px.u, px.v}); }

int cmd_export_planner_data(const config::Config& c) {
    const auto suite = config::load_suite(c);
    const auto tasks = selected_tasks(suite, c);
    const fs::path root = fs::path(c.out) / "planner_data";
    fs::create_directories(root);

    std::ostringstream plans;
    std::size_t plan_count = 0;
    for (const auto* t : tasks) {
        for (const auto& v : t->variations) {
            const auto ep = bench::generate_scene(*t, v, derive_seed({c.seed, hash_string("plan"), hash_string(t->id),
                                                                      hash_string(v.id)}));
            json j = {{"task_id", t->id}, {"variation", v.id}, {"plan", planning::to_json(ep.plan)}};
            plans << j.dump() << "\n";
            ++plan_count;
        }
    }
    io::write_text(root / "plans.jsonl", plans.str());

    std::vector<bench::Scene> scenes;
    std::vector<std::pair<std::string, std::string>> origin;
    for (int i = 0; i < c.object_scenes; ++i) {
        const auto* t = tasks[static_cast<std::size_t>(i) % tasks.size()];
        const auto& v = t->variations[(static_cast<std::size_t>(i) / tasks.size()) % t->variations.size()];
        const auto seed = derive_seed({c.seed, hash_string("objects"), static_cast<std::uint64_t>(i)});
        scenes.push_back(bench::generate_scene(*t, v, seed).scene);
        origin.emplace_back(t->id, v.id);
    }
    std::ostringstream lines;
    std::size_t skipped = 0, empty = 0;
    if (!scenes.empty()) {
        const auto ds = data::build_object_position_dataset(scenes, c.coarse_resolution);
        skipped = ds.skipped_objects;
        empty = ds.empty_scenes;
        for (std::size_t i = 0; i < ds.records.size(); ++i) {
            const auto& rec = ds.records[i];
            json objs = json::array();
            for (const auto& o : rec.objects) {
                objs.push_back({{"name", o.name},
                                {"position", {o.position.x(), o.position.y(), o.position.z()}},
                                {"pixels", {pixel_json(o.pixels[0]), pixel_json(o.pixels[1]), pixel_json(o.pixels[2])}}});
            }
            json j = {{"scene", i}, {"task_id", origin[i].first}, {"variation", origin[i].second}};
            j["views"] = rec.views[0].resolution > 0 ? json(io::store_views(root, rec.views)) : json(nullptr);
            j["objects"] = objs;
            lines << j.dump() << "\n";
        }
    }
    io::write_text(root / "objects.jsonl", lines.str());
    io::write_json(root / "manifest.json", {{"format", "c2f.planner_data"},
                                            {"version", 1},
                                            {"suite", suite.name},
                                            {"resolution", c.coarse_resolution},
                                            {"plans", plan_count},
                                            {"object_scenes", scenes.size()},
                                            {"skipped_objects", skipped},
                                            {"empty_scenes", empty}});
    std::cout << (root / "manifest.json").string() << "\n";
    return ok;
}

int run_guarded(const std::function<int()>& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const predictor::TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return internal;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const AlignmentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const GenerationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return data_error;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coarse-to-fine keyframe manipulation: datasets, training, evaluation and inspection."};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer("Precedence: flag > " + std::string(config::kSeedEnv) +
               " (seed only) > --config file > default.\n"
               "Exit codes: 0 success, 1 usage, 2 data error, 3 internal.");

    std::string config_file;
    app.add_option("--config", config_file, "JSON config file; keys are the field names below with underscores");

    const config::Config defaults;
    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> opts;
    for (const auto& f : config::fields()) {
        const std::string def = config::field_text(defaults, f.name);
        opts[f.name] = app.add_option("--" + dashed(f.name), raw[f.name],
                                      f.help + " [default: " + (def.empty() ? "\"\"" : def) + "]")
                           ->group("Config fields");
    }

    auto* generate = app.add_subcommand("generate", "Generate expert trajectories into <traj_dir>");
    auto* build = app.add_subcommand("build-dataset", "Sample training data from trajectories into <dataset>");
    auto* train = app.add_subcommand("train", "Train the fine-stage model on <dataset>");
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a policy on the suite into <out>/eval");
    auto* inspect = app.add_subcommand("inspect", "Render views, heatmaps, reports and checkpoints");
    std::vector<std::string> inspect_paths;
    inspect->add_option("paths", inspect_paths, "Files or directories to inspect")->required();
    auto* exporter = app.add_subcommand("export-planner-data", "Write plan corpus and object-position records");
    auto* show = app.add_subcommand("config", "Print the resolved config as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    return run_guarded([&] {
        std::map<std::string, std::string> flags;
        for (const auto& [name, opt] : opts) {
            if (opt->count() > 0) flags[name] = raw[name];
        }
        const auto cfg = config::resolve(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file),
                                         flags, std::getenv(config::kSeedEnv));
        fs::create_directories(cfg.out);
        if (generate->parsed()) return cmd_generate(cfg);
        if (build->parsed()) return cmd_build_dataset(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (evaluate->parsed()) return cmd_evaluate(cfg);
        if (inspect->parsed()) return cmd_inspect(cfg, inspect_paths);
        if (exporter->parsed()) return cmd_export_planner_data(cfg);
        if (show->parsed()) {
            std::cout << config::to_json(cfg).dump(2) << "\n";
            return static_cast<int>(ok);
        }
        return static_cast<int>(usage);
    });
}
