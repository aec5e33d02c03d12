#include "c2f/predictor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "c2f/errors.hpp"
#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"

namespace c2f::predictor {

using nlohmann::json;
using RowVec = Eigen::RowVectorXd;

namespace {

Matrix gaussian(int rows, int cols, double std, Rng& rng) {
    Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j) {
        for (int i = 0; i < rows; ++i) m(i, j) = std * rng.normal();
    }
    return m;
}

double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& z) {
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
    Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
    }
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_view(const CanonicalView& view, int patch) {
    if (view.resolution <= 0 || view.resolution % patch != 0) {
        throw ShapeError("view resolution " + std::to_string(view.resolution) + " is not a multiple of patch " +
                         std::to_string(patch));
    }
}

// Row t holds the patch at (t % G, t / G); columns run over (dy, dx, channel).
Matrix rgb_patches(const CanonicalView& view, int patch) {
    check_view(view, patch);
    const int g = view.resolution / patch;
    Matrix f(g * g, 3 * patch * patch);
    for (int gv = 0; gv < g; ++gv) {
        for (int gu = 0; gu < g; ++gu) {
            const int t = gv * g + gu;
            int c = 0;
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    const std::size_t i = view.index(gu * patch + dx, gv * patch + dy);
                    for (int ch = 0; ch < 3; ++ch) f(t, c++) = view.rgb[3 * i + ch];
                }
            }
        }
    }
    return f;
}

Matrix depth_patches(const CanonicalView& view, int patch) {
    check_view(view, patch);
    const int g = view.resolution / patch;
    const double scale = 1.0 / view.bounds.max_extent();
    Matrix f(g * g, patch * patch);
    for (int gv = 0; gv < g; ++gv) {
        for (int gu = 0; gu < g; ++gu) {
            int c = 0;
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    f(gv * g + gu, c++) = view.depth[view.index(gu * patch + dx, gv * patch + dy)] * scale;
                }
            }
        }
    }
    return f;
}

class LinearRgbText : public RgbTextEncoder {
public:
    LinearRgbText(int patch, int dim, int vocab) : patch_(patch), dim_(dim), vocab_(vocab) {}
    std::string name() const override { return "linear-rgb-text"; }
    int patch() const override { return patch_; }
    int dim() const override { return dim_; }

    void register_parameters(ParamStore& store, const std::string& prefix, std::uint64_t seed) override {
        Rng rng(seed);
        const int fan_in = 3 * patch_ * patch_;
        w_ = store.add(prefix + "w_img", gaussian(fan_in, dim_, 1.0 / std::sqrt(fan_in), rng));
        b_ = store.add(prefix + "b_img", Matrix::Zero(1, dim_));
        e_ = store.add(prefix + "embed", gaussian(vocab_, dim_, 1.0 / std::sqrt(dim_), rng));
    }

    Matrix encode_image(const ParamStore& p, const CanonicalView& view) const override {
        return (rgb_patches(view, patch_) * p[w_]).rowwise() + p[b_].row(0);
    }

    void backward_image(const ParamStore&, const CanonicalView& view, const Matrix& grad,
                        ParamStore& grads) const override {
        grads[w_].noalias() += rgb_patches(view, patch_).transpose() * grad;
        grads[b_] += grad.colwise().sum();
    }

    Matrix encode_text(const ParamStore& p, const std::vector<std::string>& words) const override {
        Matrix out(static_cast<Eigen::Index>(words.size()), dim_);
        for (std::size_t i = 0; i < words.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p[e_].row(bucket(words[i]));
        return out;
    }

    void backward_text(const ParamStore&, const std::vector<std::string>& words, const Matrix& grad,
                       ParamStore& grads) const override {
        for (std::size_t i = 0; i < words.size(); ++i) grads[e_].row(bucket(words[i])) += grad.row(static_cast<Eigen::Index>(i));
    }

private:
    Eigen::Index bucket(const std::string& w) const { return static_cast<Eigen::Index>(hash_string(w) % static_cast<std::uint64_t>(vocab_)); }

    int patch_, dim_, vocab_;
    std::size_t w_ = 0, b_ = 0, e_ = 0;
};

class LinearDepth : public DepthEncoder {
public:
    LinearDepth(int patch, int dim) : patch_(patch), dim_(dim) {}
    std::string name() const override { return "linear-depth"; }
    int patch() const override { return patch_; }
    int dim() const override { return dim_; }

    void register_parameters(ParamStore& store, const std::string& prefix, std::uint64_t seed) override {
        Rng rng(seed);
        const int fan_in = patch_ * patch_;
        w_ = store.add(prefix + "w", gaussian(fan_in, dim_, 1.0 / std::sqrt(fan_in), rng));
        b_ = store.add(prefix + "b", Matrix::Zero(1, dim_));
    }

    Matrix encode(const ParamStore& p, const CanonicalView& view) const override {
        return (depth_patches(view, patch_) * p[w_]).rowwise() + p[b_].row(0);
    }

    void backward(const ParamStore&, const CanonicalView& view, const Matrix& grad, ParamStore& grads) const override {
        grads[w_].noalias() += depth_patches(view, patch_).transpose() * grad;
        grads[b_] += grad.colwise().sum();
    }

private:
    int patch_, dim_;
    std::size_t w_ = 0, b_ = 0;
};

}  // namespace

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("model ") + name + " must be positive");
    };
    positive(resolution, "resolution");
    positive(patch, "patch");
    positive(dim, "dim");
    positive(mlp_hidden, "mlp_hidden");
    positive(vocab, "vocab");
    positive(bands, "bands");
    positive(rotation_bins, "rotation_bins");
    if (layers < 0) throw ConfigError("model layers must be nonnegative");
    if (max_words < 0) throw ConfigError("model max_words must be nonnegative");
    if (resolution % patch != 0) throw ConfigError("model resolution must be a multiple of patch");
    if (!(init_scale > 0.0)) throw ConfigError("model init_scale must be positive");
}

json to_json(const ModelConfig& c) {
    return {{"resolution", c.resolution}, {"patch", c.patch},         {"dim", c.dim},
            {"layers", c.layers},         {"mlp_hidden", c.mlp_hidden}, {"vocab", c.vocab},
            {"max_words", c.max_words},   {"bands", c.bands},         {"rotation_bins", c.rotation_bins},
            {"init_scale", c.init_scale}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    try {
        c.resolution = j.at("resolution").get<int>();
        c.patch = j.at("patch").get<int>();
        c.dim = j.at("dim").get<int>();
        c.layers = j.at("layers").get<int>();
        c.mlp_hidden = j.at("mlp_hidden").get<int>();
        c.vocab = j.at("vocab").get<int>();
        c.max_words = j.at("max_words").get<int>();
        c.bands = j.at("bands").get<int>();
        c.rotation_bins = j.at("rotation_bins").get<int>();
        c.init_scale = j.at("init_scale").get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- parameters ---------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Matrix value) {
    if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
        throw ConfigError("duplicate parameter " + name);
    }
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

ParamStore ParamStore::zeros_like() const {
    ParamStore z;
    z.names_ = names_;
    for (const auto& v : values_) z.values_.push_back(Matrix::Zero(v.rows(), v.cols()));
    return z;
}

void ParamStore::set_zero() {
    for (auto& v : values_) v.setZero();
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::unique_ptr<RgbTextEncoder> make_linear_rgb_text_encoder(int patch, int dim, int vocab) {
    return std::make_unique<LinearRgbText>(patch, dim, vocab);
}

std::unique_ptr<DepthEncoder> make_linear_depth_encoder(int patch, int dim) {
    return std::make_unique<LinearDepth>(patch, dim);
}

// ---- position embedding -----------------------------------------------------------

PositionEmbedding3D::PositionEmbedding3D(int bands) : bands_(bands) {
    if (bands <= 0) throw ConfigError("position embedding needs at least one band");
}

Eigen::VectorXd PositionEmbedding3D::pixel(const Vec3& p, const WorkspaceBounds& bounds) const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(dim());
    if (!p.allFinite()) return e;
    int k = 0;
    for (int a = 0; a < 3; ++a) {
        const double c = 2.0 * (p[a] - bounds.min[a]) / (bounds.max[a] - bounds.min[a]) - 1.0;
        // Double-angle recurrence from the base band.
        double s = std::sin(M_PI * c), co = std::cos(M_PI * c);
        for (int b = 0; b < bands_; ++b) {
            e[k++] = s;
            e[k++] = co;
            const double s2 = 2.0 * s * co;
            co = co * co - s * s;
            s = s2;
        }
    }
    return e;
}

Matrix PositionEmbedding3D::patches(const CanonicalView& view, int patch) const {
    check_view(view, patch);
    const int g = view.resolution / patch;
    Matrix out = Matrix::Zero(g * g, dim());
    const double inv = 1.0 / (patch * patch);
    for (int v = 0; v < view.resolution; ++v) {
        for (int u = 0; u < view.resolution; ++u) {
            const std::size_t i = view.index(u, v);
            if (!view.occupied[i]) continue;
            out.row((v / patch) * g + u / patch) += inv * pixel(view.xyz[i], view.bounds).transpose();
        }
    }
    return out;
}

// ---- prediction ----------------------------------------------------------------

keypoint::HeatmapSet ActionPrediction::heatmaps() const {
    keypoint::HeatmapSet out;
    for (std::size_t k = 0; k < 3; ++k) {
        out[k] = keypoint::Heatmap(geometry::kAllViews[k], resolution);
        const Eigen::VectorXd p = softmax(heatmap_logits[k]);
        std::copy(p.data(), p.data() + p.size(), out[k].values.begin());
    }
    return out;
}

Vec3 euler_angles(const Eigen::Quaterniond& q) {
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    const double roll = std::atan2(r(2, 1), r(2, 2));
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    const double yaw = std::atan2(r(1, 0), r(0, 0));
    return {roll, pitch, yaw};
}

Eigen::Quaterniond from_euler(const Vec3& rpy) {
    return Eigen::Quaterniond(Eigen::AngleAxisd(rpy[2], Vec3::UnitZ()) * Eigen::AngleAxisd(rpy[1], Vec3::UnitY()) *
                              Eigen::AngleAxisd(rpy[0], Vec3::UnitX()));
}

std::array<int, 3> rotation_bins(const Eigen::Quaterniond& q, int bins) {
    const Vec3 rpy = euler_angles(q);
    const double width = 2.0 * M_PI / bins;
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const int b = static_cast<int>(std::floor((rpy[a] + M_PI) / width));
        out[a] = ((b % bins) + bins) % bins;
    }
    return out;
}

Eigen::Quaterniond rotation_from_bins(const std::array<int, 3>& bins, int bins_per_axis) {
    const double width = 2.0 * M_PI / bins_per_axis;
    Vec3 rpy;
    for (int a = 0; a < 3; ++a) {
        if (bins[a] < 0 || bins[a] >= bins_per_axis) throw IndexError("rotation bin out of range");
        rpy[a] = -M_PI + (bins[a] + 0.5) * width;
    }
    return from_euler(rpy);
}

Target make_target(const Action& action, const WorkspaceBounds& crop, int resolution, int rotation_bins_per_axis,
                   double sigma) {
    Target t;
    t.heatmaps = keypoint::render_targets(action.position, crop, resolution, sigma);
    t.rotation = rotation_bins(action.orientation, rotation_bins_per_axis);
    t.gripper = action.gripper;
    return t;
}

LossTerms loss(const ActionPrediction& pred, const Target& target, const LossWeights& w) {
    LossTerms l;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& z = pred.heatmap_logits[k];
        const auto& t = target.heatmaps[k].values;
        if (static_cast<std::size_t>(z.size()) != t.size()) throw ShapeError("heatmap target size mismatch");
        const Eigen::Map<const Eigen::VectorXd> tv(t.data(), static_cast<Eigen::Index>(t.size()));
        l.heatmap += (logsumexp(z) * tv.sum() - tv.dot(z)) / 3.0;
    }
    for (int a = 0; a < 3; ++a) {
        const Eigen::VectorXd z = pred.rotation_logits.row(a).transpose();
        l.rotation += (logsumexp(z) - z[target.rotation[a]]) / 3.0;
    }
    const double y = target.gripper == GripperState::closed ? 1.0 : 0.0;
    l.gripper = softplus(pred.gripper_logit) - y * pred.gripper_logit;
    l.total = w.heatmap * l.heatmap + w.rotation * l.rotation + w.gripper * l.gripper;
    return l;
}

// ---- model -----------------------------------------------------------------------

struct ActionPredictor::Forward {
    std::array<Matrix, 3> pe;
    std::vector<std::string> words;
    TokenSet tokens;
    struct LayerCache {
        Matrix x, q, k, v, p, h, x1, u;
    };
    std::vector<LayerCache> layers;
    Matrix out;
    RowVec pooled;
    ActionPrediction pred;
};

ActionPredictor::ActionPredictor(const ModelConfig& config, std::uint64_t seed)
    : ActionPredictor(config, make_linear_rgb_text_encoder(config.patch, config.dim, config.vocab),
                      make_linear_depth_encoder(config.patch, config.dim), seed) {}

ActionPredictor::ActionPredictor(const ModelConfig& config, std::unique_ptr<RgbTextEncoder> rgb_text,
                                 std::unique_ptr<DepthEncoder> depth, std::uint64_t seed)
    : config_(config), rgb_text_(std::move(rgb_text)), depth_(std::move(depth)), position_(config.bands) {
    config_.validate();
    if (!rgb_text_ || !depth_) throw ConfigError("predictor needs both encoders");
    if (rgb_text_->dim() != config_.dim || depth_->dim() != config_.dim) {
        throw ConfigError("encoder dimension does not match the model dimension");
    }
    if (rgb_text_->patch() != config_.patch || depth_->patch() != config_.patch) {
        throw ConfigError("encoder patch size does not match the model patch size");
    }
    init(seed);
}

void ActionPredictor::init(std::uint64_t seed) {
    const int d = config_.dim, f = config_.mlp_hidden, pp = config_.patch * config_.patch;
    const double s = config_.init_scale;
    rgb_text_->register_parameters(params_, "rgb_text.", derive_seed({seed, hash_string("rgb_text")}));
    depth_->register_parameters(params_, "depth.", derive_seed({seed, hash_string("depth")}));
    Rng rng(derive_seed({seed, hash_string("model")}));
    w_pos_ = params_.add("pos.w", gaussian(position_.dim(), d, s / std::sqrt(position_.dim()), rng));
    view_embed_ = params_.add("view_embed", gaussian(3, d, s / std::sqrt(d), rng));
    patch_embed_ = params_.add("patch_embed", gaussian(config_.tokens_per_view(), d, s / std::sqrt(d), rng));
    text_type_ = params_.add("text_type", gaussian(1, d, s / std::sqrt(d), rng));
    proprio_ = params_.add("proprio", gaussian(2, d, s / std::sqrt(d), rng));
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer L{};
        L.wq = params_.add(p + "wq", gaussian(d, d, s / std::sqrt(d), rng));
        L.wk = params_.add(p + "wk", gaussian(d, d, s / std::sqrt(d), rng));
        L.wv = params_.add(p + "wv", gaussian(d, d, s / std::sqrt(d), rng));
        L.wo = params_.add(p + "wo", gaussian(d, d, s / std::sqrt(d), rng));
        L.w1 = params_.add(p + "w1", gaussian(d, f, s / std::sqrt(d), rng));
        L.b1 = params_.add(p + "b1", Matrix::Zero(1, f));
        L.w2 = params_.add(p + "w2", gaussian(f, d, s / std::sqrt(f), rng));
        L.b2 = params_.add(p + "b2", Matrix::Zero(1, d));
        layers_.push_back(L);
    }
    w_dec_ = params_.add("head.w_dec", gaussian(d, pp, s / std::sqrt(d), rng));
    b_dec_ = params_.add("head.b_dec", Matrix::Zero(1, pp));
    w_rot_ = params_.add("head.w_rot", gaussian(d, 3 * config_.rotation_bins, s / std::sqrt(d), rng));
    b_rot_ = params_.add("head.b_rot", Matrix::Zero(1, 3 * config_.rotation_bins));
    w_grip_ = params_.add("head.w_grip", gaussian(d, 1, s / std::sqrt(d), rng));
    b_grip_ = params_.add("head.b_grip", Matrix::Zero(1, 1));
}

Matrix ActionPredictor::build_tokens(const Input& input, std::array<Matrix, 3>& pe,
                                    std::vector<std::string>& words) const {
    const int t_view = config_.tokens_per_view();
    for (const auto& v : input.views) {
        if (v.resolution != config_.resolution) {
            throw ShapeError("view resolution " + std::to_string(v.resolution) + " does not match the model (" +
                             std::to_string(config_.resolution) + ")");
        }
    }
    words = tokenize(input.instruction);
    if (static_cast<int>(words.size()) > config_.max_words) words.resize(static_cast<std::size_t>(config_.max_words));
    const int n_text = static_cast<int>(words.size());
    const int n = 3 * t_view + n_text + 1;
    Matrix x(n, config_.dim);
    for (int k = 0; k < 3; ++k) {
        const auto& view = input.views[static_cast<std::size_t>(k)];
        pe[static_cast<std::size_t>(k)] = position_.patches(view, config_.patch);
        auto block = x.middleRows(k * t_view, t_view);
        block = rgb_text_->encode_image(params_, view) + depth_->encode(params_, view) +
                pe[static_cast<std::size_t>(k)] * params_[w_pos_] + params_[patch_embed_];
        block.rowwise() += params_[view_embed_].row(k);
    }
    if (n_text > 0) {
        x.middleRows(3 * t_view, n_text) = rgb_text_->encode_text(params_, words);
        x.middleRows(3 * t_view, n_text).rowwise() += params_[text_type_].row(0);
    }
    x.row(n - 1) = params_[proprio_].row(input.gripper == GripperState::closed ? 1 : 0);
    return x;
}

void ActionPredictor::run(const TokenSet& tokens, Forward& f, bool keep) const {
    const int t_view = tokens.tokens_per_view;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
    Matrix x = tokens.tokens;
    for (const auto& L : layers_) {
        Forward::LayerCache c;
        c.q = x * params_[L.wq];
        c.k = x * params_[L.wk];
        c.v = x * params_[L.wv];
        c.p = scale * c.q * c.k.transpose();
        softmax_rows(c.p);
        c.h = c.p * c.v;
        c.x1 = x + c.h * params_[L.wo];
        c.u = ((c.x1 * params_[L.w1]).rowwise() + params_[L.b1].row(0)).array().tanh();
        Matrix next = c.x1 + c.u * params_[L.w2];
        next.rowwise() += params_[L.b2].row(0);
        c.x = std::move(x);
        x = std::move(next);
        if (keep) f.layers.push_back(std::move(c));
    }
    f.out = std::move(x);

    const int r = config_.resolution, p = config_.patch, g = config_.grid();
    auto& pred = f.pred;
    pred.resolution = r;
    const Matrix dec = (f.out.topRows(3 * t_view) * params_[w_dec_]).rowwise() + params_[b_dec_].row(0);
    for (int k = 0; k < 3; ++k) {
        auto& z = pred.heatmap_logits[static_cast<std::size_t>(k)];
        z.resize(r * r);
        for (int t = 0; t < t_view; ++t) {
            const int gu = t % g, gv = t / g;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) z[(gv * p + dy) * r + gu * p + dx] = dec(k * t_view + t, dy * p + dx);
            }
        }
    }
    f.pooled = f.out.colwise().mean();
    const RowVec rot = f.pooled * params_[w_rot_] + params_[b_rot_].row(0);
    pred.rotation_logits = Eigen::Map<const Matrix>(rot.data(), config_.rotation_bins, 3).transpose();
    pred.gripper_logit = (f.pooled * params_[w_grip_])(0) + params_[b_grip_](0, 0);
}

ActionPredictor::Forward ActionPredictor::forward(const Input& input) const {
    Forward f;
    Matrix x = build_tokens(input, f.pe, f.words);
    f.tokens = {std::move(x), config_.tokens_per_view(), static_cast<int>(f.words.size())};
    run(f.tokens, f, true);
    return f;
}

TokenSet ActionPredictor::encode(const Input& input) const {
    std::array<Matrix, 3> pe;
    std::vector<std::string> words;
    Matrix x = build_tokens(input, pe, words);
    return {std::move(x), config_.tokens_per_view(), static_cast<int>(words.size())};
}

ActionPrediction ActionPredictor::predict(const Input& input) const { return predict(encode(input)); }

ActionPrediction ActionPredictor::predict(const TokenSet& tokens) const {
    const int t_view = config_.tokens_per_view();
    if (tokens.tokens_per_view != t_view || tokens.tokens.cols() != config_.dim || tokens.text_tokens < 0 ||
        tokens.rows() != static_cast<std::size_t>(3 * t_view + tokens.text_tokens + 1)) {
        throw ShapeError("token set does not match the model");
    }
    Forward f;
    run(tokens, f, false);
    return std::move(f.pred);
}

LossTerms ActionPredictor::loss_and_gradients(const Input& input, const Target& target, const LossWeights& w,
                                              ParamStore* grads) const {
    Forward f = forward(input);
    const LossTerms terms = loss(f.pred, target, w);
    if (!grads) return terms;
    ParamStore& gr = *grads;

    const int t_view = f.tokens.tokens_per_view, n_text = f.tokens.text_tokens;
    const int n = static_cast<int>(f.out.rows());
    const int r = config_.resolution, p = config_.patch, g = config_.grid(), bins = config_.rotation_bins;

    // Heads.
    Matrix d_dec(3 * t_view, p * p);
    for (int k = 0; k < 3; ++k) {
        const auto& z = f.pred.heatmap_logits[static_cast<std::size_t>(k)];
        const auto& t = target.heatmaps[static_cast<std::size_t>(k)].values;
        const Eigen::Map<const Eigen::VectorXd> tv(t.data(), static_cast<Eigen::Index>(t.size()));
        const Eigen::VectorXd dz = (w.heatmap / 3.0) * (softmax(z) * tv.sum() - tv);
        for (int tk = 0; tk < t_view; ++tk) {
            const int gu = tk % g, gv = tk / g;
            for (int dy = 0; dy < p; ++dy) {
                for (int dx = 0; dx < p; ++dx) d_dec(k * t_view + tk, dy * p + dx) = dz[(gv * p + dy) * r + gu * p + dx];
            }
        }
    }
    Matrix dx = Matrix::Zero(n, config_.dim);
    gr[w_dec_].noalias() += f.out.topRows(3 * t_view).transpose() * d_dec;
    gr[b_dec_] += d_dec.colwise().sum();
    dx.topRows(3 * t_view).noalias() += d_dec * params_[w_dec_].transpose();

    RowVec d_rot(3 * bins);
    for (int a = 0; a < 3; ++a) {
        Eigen::VectorXd s = softmax(f.pred.rotation_logits.row(a).transpose());
        s[target.rotation[static_cast<std::size_t>(a)]] -= 1.0;
        for (int b = 0; b < bins; ++b) d_rot[a * bins + b] = (w.rotation / 3.0) * s[b];
    }
    const double y = target.gripper == GripperState::closed ? 1.0 : 0.0;
    const double d_grip = w.gripper * (sigmoid(f.pred.gripper_logit) - y);
    gr[w_rot_].noalias() += f.pooled.transpose() * d_rot;
    gr[b_rot_] += d_rot;
    gr[w_grip_] += d_grip * f.pooled.transpose();
    gr[b_grip_](0, 0) += d_grip;
    const RowVec d_pool = d_rot * params_[w_rot_].transpose() + d_grip * params_[w_grip_].transpose();
    dx.rowwise() += d_pool / static_cast<double>(n);

    // Attention stack.
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.dim));
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& L = layers_[li];
        const auto& c = f.layers[li];
        gr[L.w2].noalias() += c.u.transpose() * dx;
        gr[L.b2] += dx.colwise().sum();
        const Matrix dz = (dx * params_[L.w2].transpose()).array() * (1.0 - c.u.array().square());
        gr[L.w1].noalias() += c.x1.transpose() * dz;
        gr[L.b1] += dz.colwise().sum();
        const Matrix dx1 = dx + dz * params_[L.w1].transpose();

        gr[L.wo].noalias() += c.h.transpose() * dx1;
        const Matrix dh = dx1 * params_[L.wo].transpose();
        const Matrix dp = dh * c.v.transpose();
        const Matrix dv = c.p.transpose() * dh;
        const Eigen::VectorXd rowdot = (dp.array() * c.p.array()).rowwise().sum();
        const Matrix ds = scale * (c.p.array() * (dp.colwise() - rowdot).array()).matrix();
        const Matrix dq = ds * c.k;
        const Matrix dk = ds.transpose() * c.q;
        gr[L.wq].noalias() += c.x.transpose() * dq;
        gr[L.wk].noalias() += c.x.transpose() * dk;
        gr[L.wv].noalias() += c.x.transpose() * dv;
        dx = dx1 + dq * params_[L.wq].transpose() + dk * params_[L.wk].transpose() + dv * params_[L.wv].transpose();
    }

    // Embeddings.
    for (int k = 0; k < 3; ++k) {
        const auto& view = input.views[static_cast<std::size_t>(k)];
        const Matrix d = dx.middleRows(k * t_view, t_view);
        rgb_text_->backward_image(params_, view, d, gr);
        depth_->backward(params_, view, d, gr);
        gr[w_pos_].noalias() += f.pe[static_cast<std::size_t>(k)].transpose() * d;
        gr[patch_embed_] += d;
        gr[view_embed_].row(k) += d.colwise().sum();
    }
    if (n_text > 0) {
        const Matrix d = dx.middleRows(3 * t_view, n_text);
        rgb_text_->backward_text(params_, f.words, d, gr);
        gr[text_type_] += d.colwise().sum();
    }
    gr[proprio_].row(input.gripper == GripperState::closed ? 1 : 0) += dx.row(n - 1);
    return terms;
}

Action decode_action(const ActionPrediction& pred, const WorkspaceBounds& crop, const WorkspaceBounds& region,
                     int bins, double grid_step) {
    Action a;
    a.position = keypoint::decode_on_grid(pred.heatmaps(), crop, region, grid_step).position;
    std::array<int, 3> best{};
    for (int k = 0; k < 3; ++k) {
        Eigen::Index i = 0;
        pred.rotation_logits.row(k).maxCoeff(&i);
        best[static_cast<std::size_t>(k)] = static_cast<int>(i);
    }
    a.orientation = rotation_from_bins(best, bins);
    a.gripper = pred.gripper_logit > 0.0 ? GripperState::closed : GripperState::open;
    return a;
}

std::vector<GradCheckEntry> gradient_check(ActionPredictor& model, const Input& input, const Target& target,
                                           int probes_per_tensor, std::uint64_t seed, double h, double floor) {
    ParamStore grads = model.params().zeros_like();
    model.loss_and_gradients(input, target, {}, &grads);
    Rng rng(seed);
    std::vector<GradCheckEntry> out;
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        GradCheckEntry e;
        e.tensor = params.name(i);
        const auto size = static_cast<std::size_t>(params[i].size());
        std::vector<std::size_t> idx;
        if (probes_per_tensor <= 0 || size <= static_cast<std::size_t>(probes_per_tensor)) {
            for (std::size_t j = 0; j < size; ++j) idx.push_back(j);
        } else {
            for (int j = 0; j < probes_per_tensor; ++j) idx.push_back(rng.below(size));
        }
        for (std::size_t j : idx) {
            double& w = params[i].data()[j];
            const double saved = w;
            w = saved + h;
            const double up = model.loss_and_gradients(input, target, {}, nullptr).total;
            w = saved - h;
            const double down = model.loss_and_gradients(input, target, {}, nullptr).total;
            w = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[i].data()[j];
            const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            e.max_relative_error = std::max(e.max_relative_error, rel);
            ++e.probes;
        }
        out.push_back(e);
    }
    return out;
}

// ---- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'C', '2', 'F', 'C', 'K', 'P', 'T', '\0'};

void put_u32(io::Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const io::Bytes& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

struct RawCheckpoint {
    json header;
    std::vector<io::Tensor> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
    const io::Bytes b = io::read_file(path);
    if (b.size() < 16 || std::memcmp(b.data(), kCheckpointMagic, 8) != 0) {
        throw DataError("not a checkpoint: " + path.string());
    }
    const std::uint32_t version = get_u32(b, 8);
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
    }
    const std::uint32_t len = get_u32(b, 12);
    if (16 + static_cast<std::size_t>(len) > b.size()) throw DataError("truncated checkpoint: " + path.string());
    RawCheckpoint raw;
    try {
        raw.header = json::parse(b.begin() + 16, b.begin() + 16 + len);
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint header: " + std::string(e.what()));
    }
    raw.tensors = io::decode_chunks(std::span<const std::uint8_t>(b.data() + 16 + len, b.size() - 16 - len));
    return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ActionPredictor& model, const json& extra) {
    const auto& p = model.params();
    std::vector<io::Tensor> tensors;
    json names = json::array();
    for (std::size_t i = 0; i < p.size(); ++i) {
        io::Tensor t;
        t.name = p.name(i);
        t.dims = {static_cast<std::uint64_t>(p[i].rows()), static_cast<std::uint64_t>(p[i].cols())};
        t.data.reserve(static_cast<std::size_t>(p[i].size()));
        for (Eigen::Index r = 0; r < p[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < p[i].cols(); ++c) t.data.push_back(static_cast<float>(p[i](r, c)));
        }
        names.push_back(t.name);
        tensors.push_back(std::move(t));
    }
    json header = {{"format", "c2f.checkpoint"},
                   {"version", kCheckpointVersion},
                   {"model", to_json(model.config())},
                   {"encoders", {{"rgb_text", model.rgb_text_encoder().name()}, {"depth", model.depth_encoder().name()}}},
                   {"parameters", names},
                   {"extra", extra}};
    const std::string text = header.dump();
    io::Bytes b(kCheckpointMagic, kCheckpointMagic + 8);
    put_u32(b, kCheckpointVersion);
    put_u32(b, static_cast<std::uint32_t>(text.size()));
    b.insert(b.end(), text.begin(), text.end());
    const auto chunks = io::encode_chunks(tensors);
    b.insert(b.end(), chunks.begin(), chunks.end());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    io::write_file(path, b);
}

json checkpoint_header(const std::filesystem::path& path) { return read_raw(path).header; }

ActionPredictor load_checkpoint(const std::filesystem::path& path) {
    const auto raw = read_raw(path);
    ModelConfig config;
    try {
        config = model_config_from_json(raw.header.at("model"));
        const auto& enc = raw.header.at("encoders");
        if (enc.at("rgb_text") != "linear-rgb-text" || enc.at("depth") != "linear-depth") {
            throw DataError("checkpoint uses encoders this build cannot construct");
        }
    } catch (const json::exception& e) {
        throw DataError("bad checkpoint header: " + std::string(e.what()));
    } catch (const ConfigError& e) {
        throw DataError(std::string("bad checkpoint model config: ") + e.what());
    }
    ActionPredictor model(config, 0);
    auto& p = model.params();
    if (raw.tensors.size() != p.size()) throw DataError("checkpoint parameter count does not match the model");
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& t = io::find_tensor(raw.tensors, p.name(i));
        if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(p[i].rows()) ||
            t.dims[1] != static_cast<std::uint64_t>(p[i].cols())) {
            throw DataError("checkpoint tensor " + p.name(i) + " has the wrong shape");
        }
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < p[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < p[i].cols(); ++c) p[i](r, c) = static_cast<double>(t.data[k++]);
        }
    }
    return model;
}

}  // namespace c2f::predictor
