#include <cmath>
#include <fstream>
#include <limits>

#include "c2f/errors.hpp"
#include "c2f/predictor.hpp"
#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"
#include "c2f/trajectory.hpp"

namespace c2f::predictor {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be a nonnegative number");
    if (batch <= 0) throw ConfigError("batch size must be positive");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout fraction must be in [0, 1)");
    if (!(crop_jitter >= 0.0)) throw ConfigError("crop jitter must be nonnegative");
    if (!(cube_side > 0.0)) throw ConfigError("cube side must be positive");
    if (!(crop_jitter < 0.5 * cube_side)) throw ConfigError("crop jitter must stay below half the cube side");
    if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

namespace {

geometry::PointCloud union_cloud(const ViewSet& views) {
    geometry::PointCloud cloud;
    for (const auto& v : views) {
        for (std::size_t i = 0; i < v.occupied.size(); ++i) {
            if (!v.occupied[i]) continue;
            cloud.push_back(v.xyz[i], Color(v.rgb[3 * i], v.rgb[3 * i + 1], v.rgb[3 * i + 2]));
        }
    }
    return cloud;
}

void drop_unused(ViewSet& views) {
    for (auto& v : views) {
        v.source_index.clear();
        v.source_index.shrink_to_fit();
    }
}

bool held_out(const std::string& id, const TrainConfig& c) {
    if (c.holdout <= 0.0) return false;
    const double u = static_cast<double>(derive_seed({c.seed, hash_string("holdout"), hash_string(id)}) >> 11) * 0x1.0p-53;
    return u < c.holdout;
}

class Adam {
public:
    Adam(const ParamStore& params, const TrainConfig& c) : m_(params.zeros_like()), v_(params.zeros_like()), c_(c) {}

    void step(ParamStore& params, const ParamStore& grads) {
        ++t_;
        const double b1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
        const double b2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * grads[i];
            v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * grads[i].cwiseProduct(grads[i]);
            params[i].array() -= c_.lr * (m_[i].array() / b1) / ((v_[i].array() / b2).sqrt() + c_.eps);
        }
    }

private:
    ParamStore m_, v_;
    TrainConfig c_;
    std::size_t t_ = 0;
};

std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

// Mean loss over the batch; gradients are averaged into `grads`.
double batch_step(const ActionPredictor& model, const std::vector<FineSample>& samples,
                  const std::vector<Target>& targets, const std::size_t* idx, std::size_t n, const LossWeights& w,
                  ParamStore& grads) {
    grads.set_zero();
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += model.loss_and_gradients(samples[idx[k]].input, targets[idx[k]], w, &grads).total;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= inv;
    return total * inv;
}

}  // namespace

std::vector<FineSample> load_fine_samples(const fs::path& dataset, const TrainConfig& config, int resolution,
                                          std::size_t* skipped) {
    if (skipped) *skipped = 0;
    config.validate();
    const json manifest = io::read_json(dataset / "manifest.json");
    if (manifest.value("format", "") != "c2f.dataset") throw DataError("not a dataset manifest: " + dataset.string());
    std::vector<FineSample> out;
    try {
        for (const auto& t : manifest.at("trajectories")) {
            std::ifstream in(dataset / t.at("samples").get<std::string>());
            if (!in) throw DataError("missing sample file " + t.at("samples").get<std::string>());
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const json j = json::parse(line);
                FineSample s;
                s.id = j.at("trajectory").get<std::string>() + ":" + std::to_string(j.at("observation_index").get<int>());
                s.action = data::action_from_json(j.at("action"));
                s.input.instruction = j.at("target_instruction").get<std::string>();
                s.input.gripper = gripper_from_string(j.at("gripper").get<std::string>());
                const auto views = io::load_views(dataset / j.at("views").get<std::string>());
                Rng rng(derive_seed({config.seed, hash_string("crop"), hash_string(s.id)}));
                Vec3 center = s.action.position;
                for (int a = 0; a < 3; ++a) center[a] += rng.uniform(-config.crop_jitter, config.crop_jitter);
                s.crop = WorkspaceBounds::cube(center, config.cube_side);
                try {
                    s.input.views = geometry::crop_zoom(union_cloud(views), center, config.cube_side, resolution);
                } catch (const EmptyCropError&) {
                    if (skipped) ++*skipped;
                    continue;
                }
                drop_unused(s.input.views);
                out.push_back(std::move(s));
            }
        }
    } catch (const json::exception& e) {
        throw DataError("malformed dataset " + dataset.string() + ": " + e.what());
    }
    return out;
}

json TrainReport::to_json() const {
    auto errs = [](const std::array<double, 3>& e) {
        json j = json::array();
        for (double v : e) j.push_back(std::isfinite(v) ? json(v) : json(nullptr));
        return j;
    };
    return {{"epoch_loss", epoch_loss},
            {"train_samples", train_samples},
            {"heldout_samples", heldout_samples},
            {"skipped", skipped},
            {"steps", steps},
            {"train_pixel_error", errs(train_pixel_error)},
            {"heldout_pixel_error", errs(heldout_pixel_error)}};
}

std::array<double, 3> pixel_error(const ActionPredictor& model, const std::vector<FineSample>& samples,
                                  const std::vector<std::size_t>& which, double sigma) {
    std::array<double, 3> err{};
    if (which.empty()) {
        err.fill(std::numeric_limits<double>::quiet_NaN());
        return err;
    }
    const int r = model.config().resolution;
    for (std::size_t i : which) {
        const auto& s = samples[i];
        const auto target = keypoint::render_targets(s.action.position, s.crop, r, sigma);
        const auto pred = model.predict(s.input).heatmaps();
        for (std::size_t k = 0; k < 3; ++k) {
            const auto a = pred[k].argmax(), b = target[k].argmax();
            err[k] += std::hypot(a.u - b.u, a.v - b.v);
        }
    }
    for (double& e : err) e /= static_cast<double>(which.size());
    return err;
}

std::size_t fit(ActionPredictor& model, const std::vector<FineSample>& samples, const TrainConfig& config,
                std::size_t max_steps, const std::function<bool(std::size_t)>& done) {
    config.validate();
    if (samples.empty()) throw DataError("nothing to fit");
    std::vector<Target> targets;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        targets.push_back(make_target(samples[i].action, samples[i].crop, model.config().resolution,
                                      model.config().rotation_bins, config.sigma));
        idx.push_back(i);
    }
    Adam adam(model.params(), config);
    ParamStore grads = model.params().zeros_like();
    const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(config.batch), idx.size());
    std::size_t step = 0;
    while (step < max_steps && !(done && done(step))) {
        const auto order = shuffled(idx, derive_seed({config.seed, hash_string("fit"), step}));
        for (std::size_t at = 0; at < order.size() && step < max_steps; at += bs) {
            const double l = batch_step(model, samples, targets, order.data() + at, std::min(bs, order.size() - at),
                                        config.weights, grads);
            if (!std::isfinite(l)) throw TrainingDiverged("loss became non-finite at step " + std::to_string(step));
            adam.step(model.params(), grads);
            ++step;
        }
    }
    return step;
}

TrainReport train(ActionPredictor& model, const std::vector<FineSample>& samples, const TrainConfig& config,
                  const fs::path& checkpoint) {
    config.validate();
    if (samples.empty()) throw DataError("dataset is empty");
    TrainReport report;
    std::vector<std::size_t> train_idx, held_idx;
    for (std::size_t i = 0; i < samples.size(); ++i) (held_out(samples[i].id, config) ? held_idx : train_idx).push_back(i);
    if (train_idx.empty()) std::swap(train_idx, held_idx);

    std::vector<Target> targets(samples.size());
    std::vector<std::size_t> usable;
    for (std::size_t i : train_idx) {
        try {
            targets[i] = make_target(samples[i].action, samples[i].crop, model.config().resolution,
                                     model.config().rotation_bins, config.sigma);
            usable.push_back(i);
        } catch (const OutOfBoundsError&) {
            ++report.skipped;
        }
    }
    report.train_samples = usable.size();
    report.heldout_samples = held_idx.size();
    if (usable.empty()) throw DataError("no training sample has its keypoint inside the crop");

    Adam adam(model.params(), config);
    ParamStore grads = model.params().zeros_like();
    ParamStore last_good = model.params();
    const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(config.batch), usable.size());
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = shuffled(usable, derive_seed({config.seed, hash_string("epoch"), static_cast<std::uint64_t>(epoch)}));
        double sum = 0.0;
        for (std::size_t at = 0; at < order.size(); at += bs) {
            const std::size_t n = std::min(bs, order.size() - at);
            const double l = batch_step(model, samples, targets, order.data() + at, n, config.weights, grads);
            bool finite = std::isfinite(l);
            for (std::size_t i = 0; finite && i < grads.size(); ++i) finite = grads[i].allFinite();
            if (!finite) {
                model.params() = last_good;
                if (!checkpoint.empty()) save_checkpoint(checkpoint, model, {{"diverged_at_step", report.steps}});
                throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(report.steps));
            }
            last_good = model.params();
            adam.step(model.params(), grads);
            sum += l * static_cast<double>(n);
            ++report.steps;
        }
        report.epoch_loss.push_back(sum / static_cast<double>(order.size()));
    }
    report.train_pixel_error = pixel_error(model, samples, usable, config.sigma);
    report.heldout_pixel_error = pixel_error(model, samples, held_idx, config.sigma);
    return report;
}

}  // namespace c2f::predictor
