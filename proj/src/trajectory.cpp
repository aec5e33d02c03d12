#include "c2f/trajectory.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "c2f/scene.hpp"
#include "c2f/serialization.hpp"

namespace c2f::data {

namespace fs = std::filesystem;
using nlohmann::json;

void Trajectory::validate() const {
    if (actions.size() < 1) throw ContractError("trajectory has no steps");
    if (!observations.empty() && observations.size() != actions.size()) {
        throw ContractError("trajectory has mismatched observation and action counts");
    }
    for (std::size_t t = 0; t < observations.size(); ++t) {
        if (observations[t].timestep != static_cast<int>(t)) {
            throw ContractError("observation timesteps must equal their index");
        }
        if (!observations[t].images.empty() && observations[t].images.size() != cameras.size()) {
            throw ContractError("observation is missing camera images");
        }
    }
    if (camera_names.size() != cameras.size()) throw ContractError("camera names and models differ in count");
    check_keyframes(keyframes, static_cast<int>(actions.size()));
}

std::vector<int> extract_keyframes(std::span<const Action> actions, double dt, double vel_epsilon) {
    const int n = static_cast<int>(actions.size());
    if (n < 2) throw ContractError("keyframe extraction needs at least two steps");
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    std::vector<double> speed(n, std::numeric_limits<double>::infinity());
    for (int t = 1; t < n; ++t) speed[t] = (actions[t].position - actions[t - 1].position).norm() / dt;
    std::vector<int> out;
    for (int t = 1; t < n; ++t) {
        const bool gripper_change = actions[t].gripper != actions[t - 1].gripper;
        const bool slow_minimum = speed[t] < vel_epsilon && speed[t] < speed[t - 1] &&
                                  (t == n - 1 || speed[t] <= speed[t + 1]);
        if (gripper_change || slow_minimum || t == n - 1) out.push_back(t);
    }
    return out;
}

std::vector<int> extract_keyframes(const Trajectory& traj, double vel_epsilon) {
    return extract_keyframes(traj.actions, traj.dt, vel_epsilon);
}

void check_keyframes(std::span<const int> keyframes, int traj_len) {
    if (keyframes.empty()) throw ContractError("at least one keyframe is required");
    for (std::size_t k = 0; k < keyframes.size(); ++k) {
        if (keyframes[k] < 0 || keyframes[k] >= traj_len) throw ContractError("keyframe index out of range");
        if (k > 0 && keyframes[k] <= keyframes[k - 1]) {
            throw ContractError("keyframe indices must be strictly increasing");
        }
    }
    if (keyframes.back() != traj_len - 1) throw ContractError("the last frame must be a keyframe");
}

std::vector<Segment> segment(const Trajectory& traj, std::span<const int> keyframes) {
    check_keyframes(keyframes, static_cast<int>(traj.size()));
    std::vector<Segment> out;
    int first = 0;
    for (int k : keyframes) {
        out.push_back(Segment{first, k, k, traj.actions[static_cast<std::size_t>(k)]});
        first = k + 1;
    }
    return out;
}

std::optional<int> target_keyframe(std::span<const int> keyframes, int t) {
    const auto it = std::upper_bound(keyframes.begin(), keyframes.end(), t);
    if (it == keyframes.end()) return std::nullopt;
    return *it;
}

std::vector<SamplePair> sample_training_indices(std::span<const int> keyframes, int traj_len, int m) {
    if (m < 0) throw InvalidArgument("window size m must be nonnegative");
    check_keyframes(keyframes, traj_len);
    std::vector<SamplePair> out;
    if (keyframes[0] > 0) out.push_back({0, keyframes[0]});
    for (std::size_t k = 0; k + 1 < keyframes.size(); ++k) {
        const int stop = std::min(keyframes[k] + m, keyframes[k + 1] - 1);
        for (int t = keyframes[k]; t <= stop; ++t) out.push_back({t, keyframes[k + 1]});
    }
    return out;
}

SamplingStrategy sampling_from_string(std::string_view s) {
    if (s == "post_keyframe") return SamplingStrategy::post_keyframe;
    if (s == "every_n") return SamplingStrategy::every_n;
    if (s == "symmetric") return SamplingStrategy::symmetric;
    throw InvalidArgument("unknown sampling strategy: " + std::string(s));
}

std::string_view to_string(SamplingStrategy s) {
    switch (s) {
        case SamplingStrategy::post_keyframe: return "post_keyframe";
        case SamplingStrategy::every_n: return "every_n";
        case SamplingStrategy::symmetric: return "symmetric";
    }
    return "unknown";
}

std::vector<SamplePair> sample_indices(SamplingStrategy strategy, std::span<const int> keyframes,
                                       int traj_len, int m) {
    if (strategy == SamplingStrategy::post_keyframe) return sample_training_indices(keyframes, traj_len, m);
    if (m < 0) throw InvalidArgument("window size m must be nonnegative");
    check_keyframes(keyframes, traj_len);
    std::vector<SamplePair> out;
    if (strategy == SamplingStrategy::every_n) {
        const int stride = std::max(1, m);
        for (int t = 0; t < keyframes.back(); t += stride) out.push_back({t, *target_keyframe(keyframes, t)});
        return out;
    }
    // Symmetric window around each keyframe, labelled by the usual rule.
    std::vector<int> picked;
    for (int k : keyframes) {
        for (int t = std::max(0, k - m); t <= std::min(k + m, keyframes.back() - 1); ++t) picked.push_back(t);
    }
    picked.push_back(0);
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    for (int t : picked) out.push_back({t, *target_keyframe(keyframes, t)});
    return out;
}

std::vector<ObjectTarget> object_targets(std::span<const ObjectPose> objects, const WorkspaceBounds& bounds,
                                         int resolution, std::size_t* skipped) {
    std::vector<ObjectTarget> out;
    for (const auto& o : objects) {
        ObjectTarget t{o.name, o.position, {}};
        bool inside = true;
        for (std::size_t v = 0; v < 3; ++v) {
            const auto px = geometry::world_to_pixel(geometry::kAllViews[v], bounds, resolution, o.position);
            if (!px) {
                inside = false;
                break;
            }
            t.pixels[v] = *px;
        }
        if (inside) {
            out.push_back(std::move(t));
        } else if (skipped) {
            ++*skipped;
        }
    }
    return out;
}

std::vector<TrainingSample> build_training_samples(const Trajectory& traj, const planning::Plan& plan, int m,
                                                   const WorkspaceBounds& bounds, int resolution,
                                                   SamplingStrategy strategy) {
    plan.validate();
    const auto& kf = traj.keyframes;
    if (plan.step_count() != kf.size()) {
        std::ostringstream os;
        os << "plan has " << plan.step_count() << " steps but the trajectory has " << kf.size()
           << " keyframes";
        throw AlignmentError(os.str(), plan.step_count(), kf.size());
    }
    const auto steps = plan.steps();
    const auto pairs = sample_indices(strategy, kf, static_cast<int>(traj.size()), m);
    std::vector<TrainingSample> out;
    out.reserve(pairs.size());
    for (const auto& pr : pairs) {
        const auto k = static_cast<std::size_t>(std::lower_bound(kf.begin(), kf.end(), pr.target) - kf.begin());
        TrainingSample s;
        s.trajectory_id = traj.task;
        s.observation_index = pr.observation;
        s.target_index = pr.target;
        if (!traj.observations.empty()) s.observation = traj.observations[static_cast<std::size_t>(pr.observation)];
        s.previous_instruction = k == 0 ? planning::kInitialStateSentinel : steps[k - 1];
        s.subtask_index = plan.subtask_of_step(k);
        s.subtask_plan = plan.subtasks[s.subtask_index];
        s.target_instruction = steps[k];
        s.action = traj.actions[static_cast<std::size_t>(pr.target)];
        s.keypoint = s.action.position;
        for (std::size_t v = 0; v < 3; ++v) {
            const auto px = geometry::world_to_pixel(geometry::kAllViews[v], bounds, resolution, s.keypoint);
            if (!px) throw OutOfBoundsError("target keypoint lies outside the workspace");
            s.keypoint_pixels[v] = *px;
        }
        s.objects = object_targets(s.observation.objects, bounds, resolution);
        out.push_back(std::move(s));
    }
    return out;
}

geometry::PointCloud observation_cloud(const Observation& obs, std::span<const CameraModel> cameras,
                                       const WorkspaceBounds& bounds) {
    if (obs.images.size() != cameras.size()) {
        throw DataError("observation at t=" + std::to_string(obs.timestep) + " has no rendered images");
    }
    std::vector<geometry::PointCloud> clouds;
    for (std::size_t c = 0; c < cameras.size(); ++c) clouds.push_back(geometry::unproject(obs.images[c], cameras[c]));
    return geometry::filter_to_bounds(geometry::merge(clouds), bounds);
}

ObjectPositionDataset build_object_position_dataset(std::span<const bench::Scene> scenes, int resolution) {
    if (scenes.empty()) throw InvalidArgument("object-position dataset needs at least one scene");
    ObjectPositionDataset out;
    for (const auto& scene : scenes) {
        ObjectPositionRecord rec;
        std::vector<ObjectPose> poses;
        for (const auto& o : scene.objects) {
            poses.push_back({o.name, o.is_drawer() ? o.handle_point() : o.position});
        }
        rec.objects = object_targets(poses, scene.bounds, resolution, &out.skipped_objects);
        const auto cloud = bench::observe_cloud(scene);
        if (cloud.empty() || poses.empty()) {
            ++out.empty_scenes;
        }
        if (!cloud.empty()) rec.views = geometry::project_canonical(cloud, scene.bounds, resolution);
        out.records.push_back(std::move(rec));
    }
    return out;
}

// ---- json helpers -----------------------------------------------------------

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json pixels_json(const std::array<Pixel, 3>& px) {
    json j = json::object();
    for (std::size_t v = 0; v < 3; ++v) {
        j[std::string(geometry::to_string(geometry::kAllViews[v]))] = json::array({px[v].u, px[v].v});
    }
    return j;
}

}  // namespace

json to_json(const Action& a) {
    return {{"position", vec_json(a.position)},
            {"orientation", json::array({a.orientation.w(), a.orientation.x(), a.orientation.y(), a.orientation.z()})},
            {"gripper", std::string(to_string(a.gripper))}};
}

Action action_from_json(const json& j) {
    Action a;
    try {
        a.position = vec_from(j.at("position"));
        const auto& q = j.at("orientation");
        a.orientation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                           q.at(3).get<double>());
        a.gripper = gripper_from_string(j.at("gripper").get<std::string>());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed action: ") + e.what());
    }
    return a;
}

json to_json(const CameraModel& c) {
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back(json::array({c.rotation(r, 0), c.rotation(r, 1), c.rotation(r, 2)}));
    return {{"intrinsics", {{"fx", c.intrinsics.fx}, {"fy", c.intrinsics.fy}, {"cx", c.intrinsics.cx}, {"cy", c.intrinsics.cy}}},
            {"rotation", rot},
            {"translation", vec_json(c.translation)},
            {"width", c.width},
            {"height", c.height}};
}

CameraModel camera_from_json(const json& j) {
    CameraModel c;
    try {
        const auto& k = j.at("intrinsics");
        c.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                        k.at("cy").get<double>()};
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) c.rotation(r, col) = j.at("rotation").at(r).at(col).get<double>();
        c.translation = vec_from(j.at("translation"));
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed camera: ") + e.what());
    }
    c.validate();
    return c;
}

void save_trajectory(const fs::path& dir, const Trajectory& traj, const planning::Plan& plan) {
    traj.validate();
    json meta;
    meta["format"] = "c2f.trajectory";
    meta["version"] = kTrajectoryFormatVersion;
    meta["task"] = traj.task;
    meta["plan"] = planning::to_json(plan);
    meta["keyframes"] = traj.keyframes;
    meta["dt"] = traj.dt;
    meta["bounds"] = io::to_json(traj.bounds);
    json cams = json::array();
    for (std::size_t c = 0; c < traj.cameras.size(); ++c) {
        json cj = to_json(traj.cameras[c]);
        cj["name"] = traj.camera_names[c];
        cams.push_back(cj);
    }
    meta["cameras"] = cams;
    json steps = json::array();
    std::vector<io::Tensor> tensors;
    bool rendered = false;
    for (std::size_t t = 0; t < traj.size(); ++t) {
        json s;
        s["action"] = to_json(traj.actions[t]);
        if (!traj.observations.empty()) {
            const auto& o = traj.observations[t];
            s["gripper"] = std::string(to_string(o.gripper));
            json objs = json::array();
            for (const auto& p : o.objects) objs.push_back({{"name", p.name}, {"position", vec_json(p.position)}});
            s["objects"] = objs;
            for (std::size_t c = 0; c < o.images.size(); ++c) {
                rendered = true;
                const auto& img = o.images[c];
                const std::string prefix = "obs/" + std::to_string(t) + "/" + traj.camera_names[c];
                const auto h = static_cast<std::uint64_t>(img.height);
                const auto w = static_cast<std::uint64_t>(img.width);
                tensors.push_back({prefix + "/rgb", {h, w, 3}, img.rgb});
                tensors.push_back({prefix + "/depth", {h, w}, img.depth});
            }
        }
        steps.push_back(s);
    }
    meta["steps"] = steps;
    meta["has_observations"] = !traj.observations.empty();
    meta["rendered"] = rendered;
    fs::create_directories(dir);
    io::write_json(dir / "meta.json", meta);
    io::write_chunks(dir / "arrays.c2fb", tensors);
}

StoredTrajectory load_trajectory(const fs::path& dir) {
    if (!fs::exists(dir / "meta.json")) throw DataError("no meta.json in " + dir.string());
    const json meta = io::read_json(dir / "meta.json");
    StoredTrajectory out;
    try {
        if (meta.at("format") != "c2f.trajectory") throw DataError(dir.string() + " is not a trajectory");
        if (meta.at("version").get<int>() != kTrajectoryFormatVersion) {
            throw DataError("unsupported trajectory version in " + dir.string());
        }
        Trajectory& tr = out.trajectory;
        tr.task = meta.at("task").get<std::string>();
        out.plan = planning::plan_from_json(meta.at("plan"));
        tr.keyframes = meta.at("keyframes").get<std::vector<int>>();
        tr.dt = meta.at("dt").get<double>();
        tr.bounds = io::bounds_from_json(meta.at("bounds"));
        for (const auto& cj : meta.at("cameras")) {
            tr.cameras.push_back(camera_from_json(cj));
            tr.camera_names.push_back(cj.at("name").get<std::string>());
        }
        const bool has_obs = meta.at("has_observations").get<bool>();
        const bool rendered = meta.at("rendered").get<bool>();
        std::vector<io::Tensor> tensors;
        if (rendered) tensors = io::read_chunks(dir / "arrays.c2fb");
        const auto& steps = meta.at("steps");
        for (std::size_t t = 0; t < steps.size(); ++t) {
            const auto& s = steps[t];
            tr.actions.push_back(action_from_json(s.at("action")));
            if (!has_obs) continue;
            Observation o;
            o.timestep = static_cast<int>(t);
            o.gripper = gripper_from_string(s.at("gripper").get<std::string>());
            for (const auto& p : s.at("objects")) {
                o.objects.push_back({p.at("name").get<std::string>(), vec_from(p.at("position"))});
            }
            if (rendered) {
                for (std::size_t c = 0; c < tr.cameras.size(); ++c) {
                    const std::string prefix = "obs/" + std::to_string(t) + "/" + tr.camera_names[c];
                    RgbdImage img(tr.cameras[c].width, tr.cameras[c].height);
                    const auto& rgb = io::find_tensor(tensors, prefix + "/rgb");
                    const auto& depth = io::find_tensor(tensors, prefix + "/depth");
                    if (rgb.data.size() != img.rgb.size() || depth.data.size() != img.depth.size()) {
                        throw DataError("image arrays do not match the camera size in " + dir.string());
                    }
                    img.rgb = rgb.data;
                    img.depth = depth.data;
                    o.images.push_back(std::move(img));
                }
            }
            tr.observations.push_back(std::move(o));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed meta.json in " + dir.string() + ": " + e.what());
    }
    out.trajectory.validate();
    return out;
}

json sample_to_json(const TrainingSample& s, const std::string& views_ref) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        objs.push_back({{"name", o.name}, {"position", vec_json(o.position)}, {"pixels", pixels_json(o.pixels)}});
    }
    return {{"trajectory", s.trajectory_id},
            {"observation_index", s.observation_index},
            {"target_index", s.target_index},
            {"gripper", std::string(to_string(s.observation.gripper))},
            {"previous_instruction", s.previous_instruction},
            {"subtask_plan", s.subtask_plan},
            {"subtask_index", s.subtask_index},
            {"target_instruction", s.target_instruction},
            {"objects", objs},
            {"keypoint", vec_json(s.keypoint)},
            {"keypoint_pixels", pixels_json(s.keypoint_pixels)},
            {"action", to_json(s.action)},
            {"views", views_ref}};
}

std::vector<fs::path> list_trajectories(const fs::path& root) {
    if (!fs::is_directory(root)) throw DataError("trajectory directory not found: " + root.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {


struct TrajectoryResult {
    std::string id;
    std::string task;
    std::size_t count = 0;
    std::vector<int> keyframes;
    std::string error;
};

TrajectoryResult process_trajectory(const fs::path& dir, const fs::path& out, const DatasetOptions& opt,
                                    std::size_t worker) {
    TrajectoryResult r;
    r.id = dir.filename().string();
    const auto stored = load_trajectory(dir);
    const auto& tr = stored.trajectory;
    r.task = tr.task;
    r.keyframes = tr.keyframes;
    const WorkspaceBounds bounds = opt.bounds.value_or(tr.bounds);
    auto samples = build_training_samples(tr, stored.plan, opt.m, bounds, opt.resolution, opt.strategy);
    std::ostringstream lines;
    for (auto& s : samples) {
        s.trajectory_id = r.id;
        const auto cloud = observation_cloud(s.observation, tr.cameras, bounds);
        const auto views = geometry::project_canonical(cloud, bounds, opt.resolution);
        lines << sample_to_json(s, io::store_views(out, views, std::to_string(worker))).dump() << "\n";
    }
    io::write_text(out / "samples" / (r.id + ".jsonl"), lines.str());
    r.count = samples.size();
    return r;
}

}  // namespace

json build_dataset(const fs::path& traj_root, const fs::path& out, const DatasetOptions& opt) {
    if (opt.m < 0) throw InvalidArgument("m must be nonnegative");
    const auto dirs = list_trajectories(traj_root);
    if (dirs.empty()) throw DataError("no trajectories found under " + traj_root.string());
    fs::create_directories(out / "views");
    fs::create_directories(out / "samples");
    std::vector<TrajectoryResult> results(dirs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&](std::size_t id) {
        for (std::size_t i = next++; i < dirs.size(); i = next++) {
            try {
                results[i] = process_trajectory(dirs[i], out, opt, id);
            } catch (const std::exception& e) {
                results[i].id = dirs[i].filename().string();
                results[i].error = e.what();
            }
        }
    };
    const std::size_t jobs = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, opt.jobs)), 1, dirs.size());
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker, j);
    worker(0);
    for (auto& t : pool) t.join();

    json manifest;
    manifest["format"] = "c2f.dataset";
    manifest["version"] = 1;
    manifest["m"] = opt.m;
    manifest["resolution"] = opt.resolution;
    manifest["strategy"] = std::string(to_string(opt.strategy));
    if (opt.bounds) manifest["bounds"] = io::to_json(*opt.bounds);
    json trajs = json::array();
    std::map<std::string, std::size_t> per_task;
    std::size_t total = 0;
    for (const auto& r : results) {
        if (!r.error.empty()) throw DataError("trajectory " + r.id + ": " + r.error);
        trajs.push_back({{"id", r.id},
                         {"task", r.task},
                         {"samples", "samples/" + r.id + ".jsonl"},
                         {"count", r.count},
                         {"keyframes", r.keyframes}});
        per_task[r.task] += r.count;
        total += r.count;
    }
    manifest["trajectories"] = trajs;
    manifest["counts_per_task"] = per_task;
    manifest["total"] = total;
    io::write_json(out / "manifest.json", manifest);
    return manifest;
}

}  // namespace c2f::data
