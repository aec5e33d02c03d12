#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "c2f/action.hpp"
#include "c2f/errors.hpp"
#include "c2f/evaluate.hpp"
#include "c2f/keypoint.hpp"

namespace c2f::predictor {

using Matrix = Eigen::MatrixXd;
using geometry::CanonicalView;
using geometry::ViewSet;
using geometry::WorkspaceBounds;

struct ModelConfig {
    int resolution = 64;
    int patch = 8;
    int dim = 32;
    int layers = 2;
    int mlp_hidden = 64;
    int vocab = 512;      ///< hashed word buckets
    int max_words = 24;
    int bands = 8;        ///< Fourier bands of the 3D position embedding
    int rotation_bins = 72;
    double init_scale = 1.0;

    /// Throws ConfigError.
    void validate() const;
    int grid() const { return resolution / patch; }
    int tokens_per_view() const { return grid() * grid(); }
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameter tensors. Gradients use a store of the same layout.
class ParamStore {
public:
    std::size_t add(std::string name, Matrix value);
    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Matrix& operator[](std::size_t i) { return values_[i]; }
    const Matrix& operator[](std::size_t i) const { return values_[i]; }
    std::size_t count() const;  ///< total scalar parameters

    /// Same names and shapes, all zeros.
    ParamStore zeros_like() const;
    void set_zero();

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

/// Lowercased alphanumeric words.
std::vector<std::string> tokenize(const std::string& text);

/// RGB patches and instruction words mapped into one token space.
class RgbTextEncoder {
public:
    virtual ~RgbTextEncoder() = default;
    virtual std::string name() const = 0;
    virtual int patch() const = 0;
    virtual int dim() const = 0;
    virtual void register_parameters(ParamStore& store, const std::string& prefix, std::uint64_t seed) = 0;
    /// (R/patch)^2 x dim, row-major over patches.
    virtual Matrix encode_image(const ParamStore& p, const CanonicalView& view) const = 0;
    virtual void backward_image(const ParamStore& p, const CanonicalView& view, const Matrix& grad,
                                ParamStore& grads) const = 0;
    /// One row per word.
    virtual Matrix encode_text(const ParamStore& p, const std::vector<std::string>& words) const = 0;
    virtual void backward_text(const ParamStore& p, const std::vector<std::string>& words, const Matrix& grad,
                               ParamStore& grads) const = 0;
};

class DepthEncoder {
public:
    virtual ~DepthEncoder() = default;
    virtual std::string name() const = 0;
    virtual int patch() const = 0;
    virtual int dim() const = 0;
    virtual void register_parameters(ParamStore& store, const std::string& prefix, std::uint64_t seed) = 0;
    virtual Matrix encode(const ParamStore& p, const CanonicalView& view) const = 0;
    virtual void backward(const ParamStore& p, const CanonicalView& view, const Matrix& grad,
                          ParamStore& grads) const = 0;
};

/// Linear patch embedding plus a hashed bag-of-words table.
std::unique_ptr<RgbTextEncoder> make_linear_rgb_text_encoder(int patch, int dim, int vocab);
std::unique_ptr<DepthEncoder> make_linear_depth_encoder(int patch, int dim);

/// Fourier features of workspace-normalized coordinates, 6 * bands per pixel.
class PositionEmbedding3D {
public:
    explicit PositionEmbedding3D(int bands);
    int bands() const { return bands_; }
    int dim() const { return 6 * bands_; }
    /// Zero vector for non-finite points.
    Eigen::VectorXd pixel(const Vec3& p, const WorkspaceBounds& bounds) const;
    /// Mean pixel embedding per patch, (R/patch)^2 x dim.
    Matrix patches(const CanonicalView& view, int patch) const;

private:
    int bands_;
};

/// Encoded observation. Rows are ordered front, left, top, text, proprio.
struct TokenSet {
    Matrix tokens;
    int tokens_per_view = 0;
    int text_tokens = 0;
    std::size_t rows() const { return static_cast<std::size_t>(tokens.rows()); }
};

struct ActionPrediction {
    std::array<Eigen::VectorXd, 3> heatmap_logits;  ///< R*R each, row-major
    Eigen::MatrixXd rotation_logits;                 ///< 3 x bins (roll, pitch, yaw)
    double gripper_logit = 0.0;
    int resolution = 0;

    /// Softmax-normalized heatmaps.
    keypoint::HeatmapSet heatmaps() const;
};

/// Per-axis Euler angles (roll, pitch, yaw) for R = Rz(yaw) Ry(pitch) Rx(roll), each in [-pi, pi].
Vec3 euler_angles(const Eigen::Quaterniond& q);
Eigen::Quaterniond from_euler(const Vec3& rpy);
std::array<int, 3> rotation_bins(const Eigen::Quaterniond& q, int bins);
Eigen::Quaterniond rotation_from_bins(const std::array<int, 3>& bins, int bins_per_axis);

struct LossWeights {
    double heatmap = 1.0;
    double rotation = 1.0;
    double gripper = 1.0;
};

struct Target {
    keypoint::HeatmapSet heatmaps;  ///< normalized
    std::array<int, 3> rotation{};
    GripperState gripper = GripperState::open;
};

/// Normalized Gaussian heatmaps over `crop`. Throws OutOfBoundsError when the keypoint is outside.
Target make_target(const Action& action, const WorkspaceBounds& crop, int resolution, int rotation_bins,
                   double sigma = keypoint::kDefaultSigma);

struct LossTerms {
    double heatmap = 0.0;   ///< mean over views
    double rotation = 0.0;  ///< mean over axes
    double gripper = 0.0;
    double total = 0.0;
};

LossTerms loss(const ActionPrediction& pred, const Target& target, const LossWeights& w = {});

struct Input {
    ViewSet views;
    std::string instruction;
    GripperState gripper = GripperState::open;
};

class ActionPredictor {
public:
    /// Uses the linear toy encoders.
    ActionPredictor(const ModelConfig& config, std::uint64_t seed);
    ActionPredictor(const ModelConfig& config, std::unique_ptr<RgbTextEncoder> rgb_text,
                    std::unique_ptr<DepthEncoder> depth, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const RgbTextEncoder& rgb_text_encoder() const { return *rgb_text_; }
    const DepthEncoder& depth_encoder() const { return *depth_; }

    /// Throws ShapeError when the views do not match the configured resolution.
    TokenSet encode(const Input& input) const;
    ActionPrediction predict(const TokenSet& tokens) const;
    ActionPrediction predict(const Input& input) const;

    /// Loss of one sample; accumulates d(loss)/d(params) into `grads` when given.
    LossTerms loss_and_gradients(const Input& input, const Target& target, const LossWeights& w,
                                 ParamStore* grads) const;

private:
    struct Forward;
    Matrix build_tokens(const Input& input, std::array<Matrix, 3>& pe, std::vector<std::string>& words) const;
    void run(const TokenSet& tokens, Forward& f, bool keep) const;
    Forward forward(const Input& input) const;
    void init(std::uint64_t seed);

    ModelConfig config_;
    std::unique_ptr<RgbTextEncoder> rgb_text_;
    std::unique_ptr<DepthEncoder> depth_;
    PositionEmbedding3D position_;
    ParamStore params_;
    std::size_t w_pos_ = 0, view_embed_ = 0, patch_embed_ = 0, text_type_ = 0, proprio_ = 0;
    struct Layer {
        std::size_t wq, wk, wv, wo, w1, b1, w2, b2;
    };
    std::vector<Layer> layers_;
    std::size_t w_dec_ = 0, b_dec_ = 0, w_rot_ = 0, b_rot_ = 0, w_grip_ = 0, b_grip_ = 0;
};

/// Keypoint from the grid decode over `region` (views span `crop`), argmax rotation bins, gripper
/// from the logit sign.
Action decode_action(const ActionPrediction& pred, const WorkspaceBounds& crop, const WorkspaceBounds& region,
                     int rotation_bins, double grid_step = 0.01);

struct GradCheckEntry {
    std::string tensor;
    std::size_t probes = 0;
    double max_relative_error = 0.0;
};

/// Central finite differences against the analytic gradient. `probes_per_tensor` <= 0 checks
/// every scalar. Relative error is |a - n| / max(|a|, |n|, floor).
std::vector<GradCheckEntry> gradient_check(ActionPredictor& model, const Input& input, const Target& target,
                                           int probes_per_tensor, std::uint64_t seed, double h = 1e-5,
                                           double floor = 1e-6);

// ---- checkpoints --------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ActionPredictor& model,
                     const nlohmann::json& extra = nlohmann::json::object());
/// Parameters are stored as f32; the loaded model reproduces them to float precision.
ActionPredictor load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_header(const std::filesystem::path& path);

// ---- training -------------------------------------------------------------------

/// One fine-stage training example: crop views around a jittered keypoint.
struct FineSample {
    std::string id;
    Input input;
    WorkspaceBounds crop;
    Action action;
};

struct TrainConfig {
    double lr = 0.0024;
    int batch = 192;
    int epochs = 5;
    std::uint64_t seed = 0;
    double holdout = 0.1;      ///< fraction of samples held out, chosen by id hash
    double crop_jitter = 0.03; ///< max per-axis offset of the crop center from the keypoint
    double cube_side = 0.2;
    double sigma = keypoint::kDefaultSigma;
    LossWeights weights;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Throws ConfigError.
    void validate() const;
};

/// Reads a dataset directory and builds crops at `resolution`. Deterministic in `config.seed`.
/// Samples whose crop holds no points are dropped and counted in `skipped`.
std::vector<FineSample> load_fine_samples(const std::filesystem::path& dataset, const TrainConfig& config,
                                          int resolution, std::size_t* skipped = nullptr);

struct TrainReport {
    std::vector<double> epoch_loss;
    std::size_t train_samples = 0;
    std::size_t heldout_samples = 0;
    std::size_t skipped = 0;
    std::size_t steps = 0;
    std::array<double, 3> train_pixel_error{};
    std::array<double, 3> heldout_pixel_error{};  ///< NaN when nothing is held out
    nlohmann::json to_json() const;
};

/// Raised when the loss goes non-finite. The last finite parameters were written to the checkpoint.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

/// Mean Euclidean distance per view between predicted argmax and target argmax pixels.
std::array<double, 3> pixel_error(const ActionPredictor& model, const std::vector<FineSample>& samples,
                                  const std::vector<std::size_t>& which, double sigma);

/// Adam over mini-batches in a seeded order. Samples whose keypoint leaves the crop are skipped.
/// `checkpoint` (optional) receives the last finite weights when training diverges.
TrainReport train(ActionPredictor& model, const std::vector<FineSample>& samples, const TrainConfig& config,
                  const std::filesystem::path& checkpoint = {});

/// Runs Adam on `samples` until `done` returns true or `max_steps` is reached. Returns the step count.
std::size_t fit(ActionPredictor& model, const std::vector<FineSample>& samples, const TrainConfig& config,
                std::size_t max_steps, const std::function<bool(std::size_t step)>& done);

/// Fine stage for evaluation: crops the observed cloud around the planner keypoint and decodes
/// the model's prediction. Falls back to the planner keypoint when the crop is empty.
std::unique_ptr<bench::Executor> make_trained_executor(std::shared_ptr<const ActionPredictor> model,
                                                       double cube_side, double grid_step = 0.01);

}  // namespace c2f::predictor
