#include "c2f/keypoint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace c2f::keypoint {

double Heatmap::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

geometry::Pixel Heatmap::argmax() const {
    const auto it = std::max_element(values.begin(), values.end());
    const auto i = static_cast<int>(std::distance(values.begin(), it));
    return {i % resolution, i / resolution};
}

Heatmap render_gaussian(const Vec3& point, ViewId view, const WorkspaceBounds& bounds,
                        int resolution, double sigma) {
    if (!(sigma > 0.0)) {
        throw InvalidArgument("heatmap sigma must be positive");
    }
    const Eigen::Vector2d c = geometry::world_to_image(view, bounds, resolution, point);
    Heatmap h(view, resolution);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    // Separable: exp(-(du^2 + dv^2) / 2s^2) = gu * gv.
    std::vector<double> gu(resolution), gv(resolution);
    for (int i = 0; i < resolution; ++i) {
        gu[i] = std::exp(-(i - c.x()) * (i - c.x()) * inv);
        gv[i] = std::exp(-(i - c.y()) * (i - c.y()) * inv);
    }
    for (int v = 0; v < resolution; ++v) {
        for (int u = 0; u < resolution; ++u) {
            h.at(u, v) = gu[u] * gv[v];
        }
    }
    return h;
}

Heatmap render_target(const Vec3& keypoint, ViewId view, const WorkspaceBounds& bounds,
                      int resolution, double sigma) {
    if (!keypoint.allFinite() || !bounds.contains(keypoint)) {
        std::ostringstream os;
        os << "keypoint (" << keypoint.transpose() << ") lies outside the view bounds";
        throw OutOfBoundsError(os.str());
    }
    Heatmap h = render_gaussian(keypoint, view, bounds, resolution, sigma);
    const double total = h.sum();
    for (double& x : h.values) x /= total;
    return h;
}

HeatmapSet render_targets(const Vec3& keypoint, const WorkspaceBounds& bounds, int resolution,
                          double sigma) {
    return {render_target(keypoint, ViewId::front, bounds, resolution, sigma),
            render_target(keypoint, ViewId::left, bounds, resolution, sigma),
            render_target(keypoint, ViewId::top, bounds, resolution, sigma)};
}

double sample_bilinear(const Heatmap& heatmap, double x, double y) {
    const int r = heatmap.resolution;
    x = std::clamp(x, 0.0, static_cast<double>(r - 1));
    y = std::clamp(y, 0.0, static_cast<double>(r - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), r - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), r - 1);
    const int x1 = std::min(x0 + 1, r - 1);
    const int y1 = std::min(y0 + 1, r - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * heatmap.at(x0, y0) + fx * heatmap.at(x1, y0);
    const double bottom = (1.0 - fx) * heatmap.at(x0, y1) + fx * heatmap.at(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

namespace {

void check_heatmaps(const HeatmapSet& heatmaps) {
    const int r = heatmaps[0].resolution;
    for (std::size_t i = 0; i < heatmaps.size(); ++i) {
        const auto& h = heatmaps[i];
        if (h.resolution != r || h.resolution <= 0 ||
            h.values.size() != static_cast<std::size_t>(r) * r) {
            throw ShapeError("heatmaps must share one resolution");
        }
        if (h.view != geometry::kAllViews[i]) {
            throw ShapeError("heatmaps must be ordered front, left, top");
        }
    }
}

}  // namespace

std::vector<double> score_candidates(const HeatmapSet& heatmaps, const PointCloud& candidates,
                                     const WorkspaceBounds& bounds) {
    check_heatmaps(heatmaps);
    const int r = heatmaps[0].resolution;
    std::vector<double> scores(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Vec3& p = candidates.points[i];
        if (!candidates.valid[i] || !p.allFinite() || !bounds.contains(p)) continue;
        double s = 0.0;
        for (const auto& h : heatmaps) {
            const Eigen::Vector2d xy = geometry::world_to_image(h.view, bounds, r, p);
            s += sample_bilinear(h, xy.x(), xy.y());
        }
        scores[i] = s;
    }
    return scores;
}

Keypoint3D decode_keypoint(const HeatmapSet& heatmaps, const PointCloud& candidates,
                           const WorkspaceBounds& bounds) {
    if (candidates.empty()) {
        throw InvalidArgument("decode_keypoint needs at least one candidate");
    }
    const auto scores = score_candidates(heatmaps, candidates, bounds);
    // max_element returns the first maximum, which is the lowest-index tie-break.
    const auto best = std::max_element(scores.begin(), scores.end());
    if (*best < kNoSignalThreshold) {
        throw NoSignalError("all candidate scores are zero");
    }
    const auto idx = static_cast<std::size_t>(std::distance(scores.begin(), best));
    return Keypoint3D{candidates.points[idx], *best, idx};
}

CoarseToFineResult coarse_to_fine_keypoint(const PointCloud& cloud, const HeatmapSet& coarse,
                                           const WorkspaceBounds& workspace,
                                           const FineStage& fine_stage, double cube_side,
                                           int fine_resolution) {
    CoarseToFineResult result;
    result.coarse = decode_keypoint(coarse, cloud, workspace);
    const Vec3 center = result.coarse.position;
    result.crop = WorkspaceBounds::cube(center, cube_side);
    const ViewSet refined = geometry::crop_zoom(cloud, center, cube_side, fine_resolution);
    const HeatmapSet fine = fine_stage(refined);
    const PointCloud cropped = geometry::filter_to_bounds(cloud, result.crop);
    const Keypoint3D local = decode_keypoint(fine, cropped, result.crop);
    result.fine = local;
    // Report the index in the caller's cloud rather than the cropped copy.
    std::size_t seen = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.valid[i] && result.crop.contains(cloud.points[i])) {
            if (seen == local.candidate_index) {
                result.fine.candidate_index = i;
                break;
            }
            ++seen;
        }
    }
    return result;
}

PointCloud grid_candidates(const WorkspaceBounds& region, double step) {
    if (!(step > 0.0)) throw InvalidArgument("grid step must be positive");
    PointCloud cloud;
    std::array<int, 3> n{};
    for (int a = 0; a < 3; ++a) n[a] = static_cast<int>(std::floor((region.max[a] - region.min[a]) / step + 1e-9)) + 1;
    cloud.reserve(static_cast<std::size_t>(n[0]) * n[1] * n[2]);
    for (int i = 0; i < n[0]; ++i) {
        for (int j = 0; j < n[1]; ++j) {
            for (int k = 0; k < n[2]; ++k) {
                cloud.push_back(region.min + step * Vec3(i, j, k), Color::Zero());
            }
        }
    }
    return cloud;
}

Keypoint3D decode_on_grid(const HeatmapSet& heatmaps, const WorkspaceBounds& view_bounds,
                          const WorkspaceBounds& region, double step) {
    const auto coarse = decode_keypoint(heatmaps, grid_candidates(region, step), view_bounds);
    WorkspaceBounds local{(coarse.position.array() - step).max(region.min.array()).matrix(),
                                    (coarse.position.array() + step).min(region.max.array()).matrix()};
    return decode_keypoint(heatmaps, grid_candidates(local, step / 4.0), view_bounds);
}

}  // namespace c2f::keypoint
