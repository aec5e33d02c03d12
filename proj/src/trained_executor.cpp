#include "c2f/errors.hpp"
#include "c2f/predictor.hpp"

namespace c2f::predictor {

namespace {

class TrainedExecutor : public bench::Executor {
public:
    TrainedExecutor(std::shared_ptr<const ActionPredictor> model, double cube_side, double grid_step)
        : model_(std::move(model)), cube_side_(cube_side), grid_step_(grid_step) {}

    bool needs_views() const override { return true; }

    Action act(const bench::StepContext& ctx) override {
        const Vec3& center = ctx.response.keypoint.world;
        const auto crop = WorkspaceBounds::cube(center, cube_side_);
        const WorkspaceBounds region{crop.min.cwiseMax(ctx.scene.bounds.min), crop.max.cwiseMin(ctx.scene.bounds.max)};
        Input input;
        input.instruction = ctx.response.instruction;
        input.gripper = ctx.scene.gripper;
        try {
            input.views = geometry::crop_zoom(ctx.cloud, center, cube_side_, model_->config().resolution);
        } catch (const EmptyCropError&) {
            Action a;
            a.position = center.cwiseMax(ctx.scene.bounds.min).cwiseMin(ctx.scene.bounds.max);
            a.orientation = ctx.scene.gripper_orientation;
            a.gripper = ctx.scene.gripper;
            return a;
        }
        return decode_action(model_->predict(input), crop, region, model_->config().rotation_bins, grid_step_);
    }

private:
    std::shared_ptr<const ActionPredictor> model_;
    double cube_side_;
    double grid_step_;
};

}  // namespace

std::unique_ptr<bench::Executor> make_trained_executor(std::shared_ptr<const ActionPredictor> model, double cube_side,
                                                       double grid_step) {
    if (!model) throw InvalidArgument("trained executor needs a model");
    if (!(cube_side > 0.0)) throw InvalidArgument("cube side must be positive");
    return std::make_unique<TrainedExecutor>(std::move(model), cube_side, grid_step);
}

}  // namespace c2f::predictor
