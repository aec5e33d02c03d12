#pragma once

#include <array>
#include <functional>
#include <vector>

#include "c2f/geometry.hpp"

namespace c2f::keypoint {

using geometry::CanonicalView;
using geometry::PointCloud;
using geometry::ViewId;
using geometry::ViewSet;
using geometry::WorkspaceBounds;

/// Nonnegative per-pixel scores for one canonical view.
struct Heatmap {
    ViewId view = ViewId::front;
    int resolution = 0;
    std::vector<double> values;  ///< R*R, row-major

    Heatmap() = default;
    Heatmap(ViewId id, int r)
        : view(id), resolution(r), values(static_cast<std::size_t>(r) * r, 0.0) {}

    double& at(int u, int v) { return values[static_cast<std::size_t>(v) * resolution + u]; }
    double at(int u, int v) const { return values[static_cast<std::size_t>(v) * resolution + u]; }
    double sum() const;
    geometry::Pixel argmax() const;
};

using HeatmapSet = std::array<Heatmap, 3>;

struct Keypoint3D {
    Vec3 position = Vec3::Zero();
    double confidence = 0.0;
    std::size_t candidate_index = 0;
};

inline constexpr double kDefaultSigma = 1.5;
inline constexpr double kNoSignalThreshold = 1e-12;

/// Unnormalized isotropic Gaussian around the sub-pixel projection of `point`.
/// `point` may lie outside `bounds`; the tail is whatever falls on the grid.
Heatmap render_gaussian(const Vec3& point, ViewId view, const WorkspaceBounds& bounds,
                        int resolution, double sigma);

/// Normalized Gaussian training target. Throws OutOfBoundsError outside `bounds`.
Heatmap render_target(const Vec3& keypoint, ViewId view, const WorkspaceBounds& bounds,
                      int resolution, double sigma = kDefaultSigma);

HeatmapSet render_targets(const Vec3& keypoint, const WorkspaceBounds& bounds, int resolution,
                          double sigma = kDefaultSigma);

/// Bilinear lookup with pixel centers at integer coordinates, clamped at the border.
double sample_bilinear(const Heatmap& heatmap, double x, double y);

/// Per-candidate score: sum over views of the heatmap sampled at the candidate's projection.
/// Invalid or out-of-bounds candidates score zero.
std::vector<double> score_candidates(const HeatmapSet& heatmaps, const PointCloud& candidates,
                                     const WorkspaceBounds& bounds);

/// Highest-scoring candidate; ties go to the lowest index.
/// Throws NoSignalError when the best score is below kNoSignalThreshold.
Keypoint3D decode_keypoint(const HeatmapSet& heatmaps, const PointCloud& candidates,
                           const WorkspaceBounds& bounds);

/// Fine stage: refined views in, per-view heatmaps over those views out.
using FineStage = std::function<HeatmapSet(const ViewSet& refined_views)>;

struct CoarseToFineResult {
    Keypoint3D coarse;
    Keypoint3D fine;
    WorkspaceBounds crop;
};

/// Decode the coarse keypoint over `cloud`, crop a cube around it, run the fine stage on the
/// cropped views, and decode again against the cropped cloud.
/// An empty crop raises EmptyCropError whose center is the coarse keypoint.
CoarseToFineResult coarse_to_fine_keypoint(const PointCloud& cloud, const HeatmapSet& coarse,
                                           const WorkspaceBounds& workspace,
                                           const FineStage& fine_stage, double cube_side,
                                           int fine_resolution);

/// Grid candidates covering `region` at `step` spacing, inclusive of both faces.
PointCloud grid_candidates(const WorkspaceBounds& region, double step);

/// Two-level grid decode inside `region`: a coarse pass at `step`, then a pass at step / 4
/// around the winner.
Keypoint3D decode_on_grid(const HeatmapSet& heatmaps, const WorkspaceBounds& view_bounds,
                        const WorkspaceBounds& region, double step);

}  // namespace c2f::keypoint
