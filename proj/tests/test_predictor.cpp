#include <cmath>
#include <filesystem>
#include <numeric>

#include "c2f/errors.hpp"
#include "c2f/predictor.hpp"
#include "c2f/rng.hpp"
#include "c2f/scene.hpp"
#include "c2f/serialization.hpp"
#include "c2f/tasks.hpp"
#include "c2f/trajectory.hpp"
#include "doctest.h"

using namespace c2f;
using namespace c2f::predictor;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.resolution = 16;
    c.patch = 4;
    c.dim = 8;
    c.mlp_hidden = 8;
    c.vocab = 16;
    c.bands = 2;
    c.rotation_bins = 8;
    return c;
}

const bench::GeneratedEpisode& episode() {
    static const auto ep = [] {
        const auto suite = bench::synthetic_suite();
        const auto& task = suite.task("stack@train");
        return bench::generate_scene(task, task.variations[0], 3);
    }();
    return ep;
}

FineSample sample(std::size_t step, int resolution, const Vec3& offset = Vec3(0.01, -0.02, 0.01)) {
    const auto& ep = episode();
    FineSample s;
    s.id = "s" + std::to_string(step);
    s.action = ep.keyframe_actions[step];
    const Vec3 center = s.action.position + offset;
    s.crop = WorkspaceBounds::cube(center, 0.2);
    s.input.views = geometry::crop_zoom(bench::observe_cloud(ep.scene), center, 0.2, resolution);
    s.input.instruction = ep.plan.steps()[step];
    return s;
}

geometry::PointCloud random_cloud(std::size_t n, std::uint64_t seed, const WorkspaceBounds& b) {
    Rng rng(seed);
    geometry::PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(b.min[a], b.max[a]);
        cloud.push_back(p, Color(static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                 static_cast<float>(rng.uniform())));
    }
    return cloud;
}

bool argmax_matches(const ActionPredictor& model, const FineSample& s) {
    const auto e = pixel_error(model, {s}, {0}, keypoint::kDefaultSigma);
    return e[0] == 0.0 && e[1] == 0.0 && e[2] == 0.0;
}

class MeanColorEncoder : public RgbTextEncoder {
public:
    MeanColorEncoder(int patch, int dim) : patch_(patch), dim_(dim) {}
    std::string name() const override { return "mean-color"; }
    int patch() const override { return patch_; }
    int dim() const override { return dim_; }
    void register_parameters(ParamStore& store, const std::string& prefix, std::uint64_t) override {
        w_ = store.add(prefix + "w", Matrix::Constant(3, dim_, 0.1));
        e_ = store.add(prefix + "e", Matrix::Constant(4, dim_, 0.2));
    }
    Matrix features(const CanonicalView& v) const {
        const int g = v.resolution / patch_;
        Matrix f = Matrix::Zero(g * g, 3);
        for (int y = 0; y < v.resolution; ++y) {
            for (int x = 0; x < v.resolution; ++x) {
                for (int c = 0; c < 3; ++c) f((y / patch_) * g + x / patch_, c) += v.rgb[3 * v.index(x, y) + c];
            }
        }
        return f / (patch_ * patch_);
    }
    Matrix encode_image(const ParamStore& p, const CanonicalView& v) const override { return features(v) * p[w_]; }
    void backward_image(const ParamStore&, const CanonicalView& v, const Matrix& g, ParamStore& grads) const override {
        grads[w_] += features(v).transpose() * g;
    }
    Matrix encode_text(const ParamStore& p, const std::vector<std::string>& words) const override {
        Matrix out(static_cast<Eigen::Index>(words.size()), dim_);
        for (std::size_t i = 0; i < words.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p[e_].row(static_cast<Eigen::Index>(words[i].size() % 4));
        return out;
    }
    void backward_text(const ParamStore&, const std::vector<std::string>& words, const Matrix& g,
                       ParamStore& grads) const override {
        for (std::size_t i = 0; i < words.size(); ++i) grads[e_].row(static_cast<Eigen::Index>(words[i].size() % 4)) += g.row(static_cast<Eigen::Index>(i));
    }

private:
    int patch_, dim_;
    std::size_t w_ = 0, e_ = 0;
};

}  // namespace

TEST_CASE("token layout") {
    const ActionPredictor model(ModelConfig{}, 0);
    const auto s = sample(0, 64);
    const auto tokens = model.encode(s.input);
    const auto words = tokenize(s.input.instruction);
    CHECK(words.front() == "the");
    CHECK(tokens.tokens_per_view == 64);
    CHECK(tokens.text_tokens == static_cast<int>(words.size()));
    CHECK(tokens.rows() == 3 * 64 + words.size() + 1);
    CHECK(tokens.tokens.cols() == 32);

    Input wrong = s.input;
    wrong.views = geometry::crop_zoom(bench::observe_cloud(episode().scene), s.crop.center(), 0.2, 32);
    CHECK_THROWS_AS(model.encode(wrong), ShapeError);
    CHECK(tokenize("Lift the RED-block, now!") == std::vector<std::string>{"lift", "the", "red", "block", "now"});
}

TEST_CASE("position embedding") {
    const PositionEmbedding3D pe(8);
    CHECK(pe.dim() == 48);
    const WorkspaceBounds b{Vec3(-0.3, -0.4, 0.0), Vec3(0.3, 0.4, 0.6)};
    CHECK(pe.pixel(Vec3(NAN, 0.0, 0.1), b).isZero(0.0));

    // An empty view has no position contribution at all.
    geometry::CanonicalView empty;
    empty.resolution = 16;
    empty.bounds = b;
    empty.rgb.assign(16 * 16 * 3, 0.0f);
    empty.depth.assign(16 * 16, 0.0);
    empty.xyz.assign(16 * 16, Vec3::Constant(NAN));
    empty.occupied.assign(16 * 16, 0);
    CHECK(pe.patches(empty, 4).isZero(0.0));

    // Translating points and bounds together leaves the embedding unchanged.
    Rng rng(4);
    const Vec3 shift(1.7, -0.35, 2.25);
    const WorkspaceBounds moved{b.min + shift, b.max + shift};
    for (int i = 0; i < 200; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(b.min[a], b.max[a]);
        CHECK((pe.pixel(p, b) - pe.pixel(p + shift, moved)).cwiseAbs().maxCoeff() < 1e-9);
    }

    // Closed form at the first and third bands.
    const auto e = pe.pixel(Vec3(0.15, 0.0, 0.3), b);
    CHECK(e[0] == doctest::Approx(std::sin(M_PI * 0.5)));
    CHECK(e[1] == doctest::Approx(std::cos(M_PI * 0.5)).epsilon(1e-12));
    CHECK(e[4] == doctest::Approx(std::sin(4.0 * M_PI * 0.5)).epsilon(1e-12));
    CHECK(e[2 * 8] == doctest::Approx(0.0));
}

TEST_CASE("tokens ignore the order of cloud points") {
    const ActionPredictor model(tiny(), 2);
    const WorkspaceBounds b{Vec3(-0.1, -0.1, 0.0), Vec3(0.1, 0.1, 0.2)};
    const auto cloud = random_cloud(3000, 9, b);
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(10);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    geometry::PointCloud shuffled;
    for (std::size_t i : perm) shuffled.push_back(cloud.points[i], cloud.colors[i]);
    Input a, c;
    a.views = geometry::project_canonical(cloud, b, 16);
    c.views = geometry::project_canonical(shuffled, b, 16);
    a.instruction = c.instruction = "The robot arm moves above the red block";
    CHECK(model.encode(a).tokens == model.encode(c).tokens);
}

TEST_CASE("prediction is deterministic in the seed") {
    const auto s = sample(1, 16);
    const ActionPredictor a(tiny(), 5), b(tiny(), 5), c(tiny(), 6);
    const auto pa = a.predict(s.input), pb = b.predict(s.input), pc = c.predict(s.input);
    for (std::size_t k = 0; k < 3; ++k) CHECK(pa.heatmap_logits[k] == pb.heatmap_logits[k]);
    CHECK(pa.rotation_logits == pb.rotation_logits);
    CHECK(pa.gripper_logit == pb.gripper_logit);
    CHECK(pa.heatmap_logits[0] != pc.heatmap_logits[0]);
    CHECK(pa.rotation_logits.rows() == 3);
    CHECK(pa.rotation_logits.cols() == 8);
    CHECK(pa.rotation_logits.allFinite());
    const auto maps = pa.heatmaps();
    for (const auto& m : maps) {
        CHECK(m.sum() == doctest::Approx(1.0));
        CHECK(*std::min_element(m.values.begin(), m.values.end()) >= 0.0);
    }
    // predict(tokens) and predict(input) agree.
    const auto pt = a.predict(a.encode(s.input));
    CHECK(pt.heatmap_logits[2] == pa.heatmap_logits[2]);
}

TEST_CASE("loss floors") {
    const int r = 64, bins = 72;
    const auto s = sample(4, r);
    const Target t = make_target(s.action, s.crop, r, bins);
    ActionPrediction p;
    p.resolution = r;
    p.rotation_logits = Eigen::MatrixXd::Zero(3, bins);
    for (int a = 0; a < 3; ++a) p.rotation_logits(a, t.rotation[static_cast<std::size_t>(a)]) = 60.0;
    p.gripper_logit = t.gripper == GripperState::closed ? 60.0 : -60.0;
    double entropy = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        p.heatmap_logits[k].resize(r * r);
        for (int i = 0; i < r * r; ++i) {
            const double v = t.heatmaps[k].values[static_cast<std::size_t>(i)];
            p.heatmap_logits[k][i] = std::log(std::max(v, 1e-300));
            if (v > 0.0) entropy -= v * std::log(v) / 3.0;
        }
    }
    const auto l = loss(p, t);
    CHECK(std::abs(l.heatmap - entropy) < 1e-6);
    CHECK(l.rotation < 1e-20);
    CHECK(std::abs(l.total - entropy) < 1e-6);

    for (auto& z : p.heatmap_logits) z.setConstant(0.3);
    CHECK(std::abs(loss(p, t).heatmap - std::log(static_cast<double>(r * r))) < 1e-6);

    LossWeights w;
    w.heatmap = 0.0;
    w.gripper = 2.0;
    p.gripper_logit = 0.0;
    CHECK(loss(p, t, w).total == doctest::Approx(2.0 * std::log(2.0)));
}

TEST_CASE("analytic gradients match finite differences") {
    SUBCASE("every scalar of a tiny model") {
        ActionPredictor model(tiny(), 3);
        const auto s = sample(3, 16);
        const auto t = make_target(s.action, s.crop, 16, 8);
        std::size_t probes = 0;
        for (const auto& e : gradient_check(model, s.input, t, 0, 1)) {
            CAPTURE(e.tensor);
            CHECK(e.max_relative_error <= 1e-4);
            probes += e.probes;
        }
        CHECK(probes == model.params().count());
    }
    SUBCASE("random probes of the default model") {
        ActionPredictor model(ModelConfig{}, 3);
        const auto s = sample(4, 64);
        const auto t = make_target(s.action, s.crop, 64, 72);
        const auto report = gradient_check(model, s.input, t, 10, 2);
        CHECK(report.size() == model.params().size());
        for (const auto& e : report) {
            CAPTURE(e.tensor);
            CHECK(e.max_relative_error <= 1e-4);
        }
    }
}

TEST_CASE("single sample overfit reaches the target pixel") {
    ActionPredictor model(ModelConfig{}, 7);
    const auto s = sample(1, 64);
    const std::size_t steps = fit(model, {s}, TrainConfig{}, 500, [&](std::size_t) { return argmax_matches(model, s); });
    CHECK(steps < 500);
    CHECK(argmax_matches(model, s));
    const auto a = decode_action(model.predict(s.input), s.crop, s.crop, 72);
    CHECK((a.position - s.action.position).norm() < 0.005);
    CHECK(rotation_bins(a.orientation, 72) == rotation_bins(s.action.orientation, 72));
    CHECK(a.gripper == s.action.gripper);
}

TEST_CASE("step instruction steers the heatmaps") {
    // Same views, different instructions and targets.
    const auto base = sample(0, 64);
    FineSample other = base;
    other.id = "other";
    other.input.instruction = episode().plan.steps()[2];
    other.action = episode().keyframe_actions[2];
    REQUIRE(base.crop.contains(other.action.position));
    REQUIRE((other.action.position - base.action.position).norm() > 0.05);
    ActionPredictor model(ModelConfig{}, 8);
    const std::vector<FineSample> both{base, other};
    fit(model, both, TrainConfig{}, 800,
        [&](std::size_t) { return argmax_matches(model, base) && argmax_matches(model, other); });
    CHECK(argmax_matches(model, base));
    CHECK(argmax_matches(model, other));
}

TEST_CASE("decoded keypoints stay inside the crop") {
    const ActionPredictor model(ModelConfig{}, 11);
    int decoded = 0;
    for (std::size_t step = 0; step < episode().plan.step_count(); ++step) {
        for (const Vec3& offset : {Vec3(0.03, 0.02, -0.04), Vec3(-0.09, 0.09, 0.09)}) {
            FineSample s;
            try {
                s = sample(step, 64, offset);
            } catch (const EmptyCropError&) {
                continue;
            }
            const auto a = decode_action(model.predict(s.input), s.crop, s.crop, 72);
            CHECK(s.crop.contains(a.position));
            ++decoded;
        }
    }
    CHECK(decoded >= 4);
}

TEST_CASE("encoders are drop-in replaceable") {
    const auto c = tiny();
    const auto s = sample(0, 16);
    const ActionPredictor toy(c, 1);
    const ActionPredictor swapped(c, std::make_unique<MeanColorEncoder>(c.patch, c.dim),
                                  make_linear_depth_encoder(c.patch, c.dim), 1);
    const auto ta = toy.encode(s.input), tb = swapped.encode(s.input);
    CHECK(ta.tokens.rows() == tb.tokens.rows());
    CHECK(ta.tokens.cols() == tb.tokens.cols());
    const auto pa = toy.predict(s.input), pb = swapped.predict(s.input);
    CHECK(pa.heatmap_logits[1].size() == pb.heatmap_logits[1].size());
    CHECK(pa.rotation_logits.rows() == pb.rotation_logits.rows());
    CHECK(pa.rotation_logits.cols() == pb.rotation_logits.cols());

    ActionPredictor grad_model(c, std::make_unique<MeanColorEncoder>(c.patch, c.dim),
                               make_linear_depth_encoder(c.patch, c.dim), 1);
    const auto t = make_target(s.action, s.crop, 16, 8);
    for (const auto& e : gradient_check(grad_model, s.input, t, 0, 1)) CHECK(e.max_relative_error <= 1e-4);

    CHECK_THROWS_AS(ActionPredictor(c, std::make_unique<MeanColorEncoder>(c.patch, c.dim + 1),
                                    make_linear_depth_encoder(c.patch, c.dim), 1),
                    ConfigError);
    CHECK_THROWS_AS(ActionPredictor(c, make_linear_rgb_text_encoder(c.patch * 2, c.dim, 8),
                                    make_linear_depth_encoder(c.patch, c.dim), 1),
                    ConfigError);
}

TEST_CASE("rotation bins") {
    Rng rng(12);
    for (int i = 0; i < 500; ++i) {
        Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        q.normalize();
        const auto bins = rotation_bins(q, 72);
        const auto back = rotation_from_bins(bins, 72);
        CHECK(rotation_bins(back, 72) == bins);
        const Vec3 a = euler_angles(q), b = euler_angles(back);
        if (std::abs(a[1]) > 1.3) continue;  // near gimbal lock roll and yaw trade off
        for (int k = 0; k < 3; ++k) {
            const double d = std::remainder(a[k] - b[k], 2.0 * M_PI);
            CHECK(std::abs(d) <= M_PI / 72.0 + 1e-9);
        }
    }
    const auto top = rotation_bins(Eigen::Quaterniond(0.0, 1.0, 0.0, 0.0), 72);
    CHECK(top == std::array<int, 3>{0, 36, 36});
    CHECK_THROWS_AS(rotation_from_bins({72, 0, 0}, 72), IndexError);
}

TEST_CASE("targets outside the crop") {
    const auto s = sample(0, 16);
    Action far = s.action;
    far.position += Vec3(0.5, 0.0, 0.0);
    CHECK_THROWS_AS(make_target(far, s.crop, 16, 8), OutOfBoundsError);

    FineSample bad = s;
    bad.action = far;
    ActionPredictor model(tiny(), 0);
    TrainConfig tc;
    tc.epochs = 1;
    tc.holdout = 0.0;
    const auto report = train(model, {s, bad}, tc);
    CHECK(report.skipped == 1);
    CHECK(report.train_samples == 1);
}

TEST_CASE("training contracts") {
    std::vector<FineSample> samples;
    for (std::size_t k : {0, 1, 3, 4}) samples.push_back(sample(k, 16));
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch = 2;
    tc.holdout = 0.0;

    SUBCASE("zero learning rate changes nothing") {
        tc.lr = 0.0;
        ActionPredictor model(tiny(), 1);
        const ParamStore before = model.params();
        const auto report = train(model, samples, tc);
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.params()[i] == before[i]);
        REQUIRE(report.epoch_loss.size() == 3);
        CHECK(report.epoch_loss[0] == doctest::Approx(report.epoch_loss[2]).epsilon(1e-12));
    }
    SUBCASE("loss decreases and checkpoints are reproducible") {
        tc.epochs = 30;
        const auto dir = fs::temp_directory_path() / "c2f_test_predictor_ckpt";
        fs::remove_all(dir);
        ActionPredictor a(tiny(), 1), b(tiny(), 1);
        const auto ra = train(a, samples, tc);
        const auto rb = train(b, samples, tc);
        CHECK(ra.epoch_loss.back() < ra.epoch_loss.front());
        CHECK(ra.to_json() == rb.to_json());
        save_checkpoint(dir / "a.ckpt", a, ra.to_json());
        save_checkpoint(dir / "b.ckpt", b, rb.to_json());
        CHECK(io::read_file(dir / "a.ckpt") == io::read_file(dir / "b.ckpt"));

        const auto loaded = load_checkpoint(dir / "a.ckpt");
        REQUIRE(loaded.params().size() == a.params().size());
        for (std::size_t i = 0; i < a.params().size(); ++i) {
            CHECK(loaded.params()[i] == a.params()[i].cast<float>().cast<double>());
        }
        CHECK(checkpoint_header(dir / "a.ckpt").at("extra").at("steps") == ra.steps);

        io::write_text(dir / "junk.ckpt", "not a checkpoint at all");
        CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), DataError);
        fs::remove_all(dir);
    }
    SUBCASE("non-finite loss aborts with the last good weights") {
        const auto dir = fs::temp_directory_path() / "c2f_test_predictor_nan";
        fs::remove_all(dir);
        samples[3].input.views[0].rgb[5] = NAN;
        tc.batch = 4;
        ActionPredictor model(tiny(), 1);
        const ParamStore before = model.params();
        CHECK_THROWS_AS(train(model, samples, tc, dir / "last.ckpt"), TrainingDiverged);
        REQUIRE(fs::exists(dir / "last.ckpt"));
        const auto saved = load_checkpoint(dir / "last.ckpt");
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(saved.params()[i] == before[i].cast<float>().cast<double>());
        fs::remove_all(dir);
    }
    SUBCASE("bad configurations") {
        ActionPredictor model(tiny(), 1);
        tc.lr = -1.0;
        CHECK_THROWS_AS(train(model, samples, tc), ConfigError);
        tc.lr = 0.001;
        tc.batch = 0;
        CHECK_THROWS_AS(train(model, samples, tc), ConfigError);
        tc.batch = 2;
        CHECK_THROWS_AS(train(model, {}, tc), DataError);
        ModelConfig c = tiny();
        c.patch = 5;
        CHECK_THROWS_AS(ActionPredictor(c, 0), ConfigError);
    }
}

TEST_CASE("regression baseline on a 50-sample dataset") {
    const auto root = fs::temp_directory_path() / "c2f_test_predictor_data";
    fs::remove_all(root);
    const auto suite = bench::bundled_suite();
    bench::GenerateOptions go;
    go.render = true;
    go.image_size = 64;
    go.render_options.width = go.render_options.height = 64;
    for (const auto& task : suite.tasks) {
        for (const auto& v : task.variations) {
            for (int e = 0; e < 2; ++e) {
                const auto ep = bench::generate_scene(task, v, static_cast<std::uint64_t>(e), go);
                data::save_trajectory(root / "traj" / (task.id + "_" + v.id + "_" + std::to_string(e)), ep.trajectory,
                                      ep.plan);
            }
        }
    }
    data::DatasetOptions dopt;
    dopt.resolution = 64;
    data::build_dataset(root / "traj", root / "data", dopt);

    TrainConfig tc;
    tc.epochs = 200;
    tc.batch = 10;
    tc.holdout = 0.0;
    std::size_t skipped = 0;
    const auto all = load_fine_samples(root / "data", tc, 64, &skipped);
    CHECK(skipped > 0);
    std::vector<FineSample> samples;
    for (std::size_t i = 0; i < all.size() && samples.size() < 50; i += 5) samples.push_back(all[i]);
    REQUIRE(samples.size() == 50);
    for (const auto& s : samples) CHECK(s.crop.contains(s.action.position));

    ActionPredictor model(ModelConfig{}, 0);
    const auto report = train(model, samples, tc);
    const double mean = (report.train_pixel_error[0] + report.train_pixel_error[1] + report.train_pixel_error[2]) / 3.0;
    MESSAGE("mean pixel error " << mean);
    CHECK(mean <= 2.0);
    fs::remove_all(root);
}
