#pragma once
// Independent reference implementations. These deliberately avoid calling the
// library's projection helpers so they can catch mistakes in them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "c2f/geometry.hpp"

namespace oracle {

using c2f::Vec3;
using c2f::geometry::PointCloud;
using c2f::geometry::ViewId;
using c2f::geometry::WorkspaceBounds;

struct PixelDepth {
    int u;
    int v;
    double depth;
};

inline int cell(double num, double den, int r) {
    int c = static_cast<int>(std::floor(num / den * r));
    if (c < 0) c = 0;
    if (c > r - 1) c = r - 1;
    return c;
}

// front: columns +x, rows -z, depth +y. left: columns -y, rows -z, depth +x.
// top: columns +x, rows -y, depth -z.
inline PixelDepth project(ViewId id, const WorkspaceBounds& b, int r, const Vec3& p) {
    const Vec3 lo = b.min;
    const Vec3 hi = b.max;
    switch (id) {
        case ViewId::front:
            return {cell(p.x() - lo.x(), hi.x() - lo.x(), r), cell(hi.z() - p.z(), hi.z() - lo.z(), r),
                    p.y() - lo.y()};
        case ViewId::left:
            return {cell(hi.y() - p.y(), hi.y() - lo.y(), r), cell(hi.z() - p.z(), hi.z() - lo.z(), r),
                    p.x() - lo.x()};
        case ViewId::top:
            return {cell(p.x() - lo.x(), hi.x() - lo.x(), r), cell(hi.y() - p.y(), hi.y() - lo.y(), r),
                    hi.z() - p.z()};
    }
    return {0, 0, 0.0};
}

inline bool inside(const WorkspaceBounds& b, const Vec3& p) {
    for (int a = 0; a < 3; ++a) {
        if (!(p[a] >= b.min[a] && p[a] <= b.max[a])) return false;
    }
    return true;
}

struct RasterView {
    std::vector<std::int64_t> winner;  // -1 when empty
    std::vector<double> depth;
};

// Loop over points, keep strictly smaller depth, so the first (lowest) index wins ties.
inline RasterView rasterize(const PointCloud& cloud, ViewId id, const WorkspaceBounds& b, int r) {
    RasterView out;
    out.winner.assign(static_cast<std::size_t>(r) * r, -1);
    out.depth.assign(static_cast<std::size_t>(r) * r, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!cloud.valid[i] || !inside(b, cloud.points[i])) continue;
        const auto px = project(id, b, r, cloud.points[i]);
        const std::size_t k = static_cast<std::size_t>(px.v) * r + px.u;
        if (px.depth < out.depth[k]) {
            out.depth[k] = px.depth;
            out.winner[k] = static_cast<std::int64_t>(i);
        }
    }
    return out;
}

inline PointCloud random_cloud(std::mt19937_64& rng, const WorkspaceBounds& b, std::size_t n,
                               bool snap = false) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PointCloud c;
    c.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) {
            double f = u01(rng);
            // Snapping creates exact depth ties and boundary points.
            if (snap) f = std::round(f * 16.0) / 16.0;
            p[a] = b.min[a] + f * (b.max[a] - b.min[a]);
        }
        c.push_back(p, c2f::Color(static_cast<float>(u01(rng)), static_cast<float>(u01(rng)),
                                  static_cast<float>(u01(rng))));
    }
    return c;
}

inline PointCloud grid_cloud(const WorkspaceBounds& b, double step) {
    PointCloud c;
    for (double x = b.min.x(); x <= b.max.x() + 1e-12; x += step)
        for (double y = b.min.y(); y <= b.max.y() + 1e-12; y += step)
            for (double z = b.min.z(); z <= b.max.z() + 1e-12; z += step)
                c.push_back(Vec3(std::min(x, b.max.x()), std::min(y, b.max.y()), std::min(z, b.max.z())),
                            c2f::Color(0.5f, 0.5f, 0.5f));
    return c;
}

// Tabletop-like surface cloud: a 1 cm table grid plus the faces of a few random boxes
// sampled at 5 mm. Returns the cloud and the index range of box-surface points.
inline PointCloud surface_scene(std::mt19937_64& rng, const WorkspaceBounds& b, int boxes = 3) {
    PointCloud c;
    for (double x = b.min.x(); x <= b.max.x(); x += 0.01)
        for (double y = b.min.y(); y <= b.max.y(); y += 0.01) c.push_back(Vec3(x, y, 0.0), c2f::Color(0.8f, 0.8f, 0.7f));
    std::uniform_real_distribution<double> pos(-0.25, 0.25);
    std::uniform_real_distribution<double> half(0.02, 0.06);
    for (int k = 0; k < boxes; ++k) {
        const Vec3 h(half(rng), half(rng), half(rng));
        const Vec3 center(pos(rng), pos(rng), h.z());
        const c2f::Color col(0.2f * k, 0.5f, 1.0f - 0.2f * k);
        for (int axis = 0; axis < 3; ++axis) {
            const int a1 = (axis + 1) % 3;
            const int a2 = (axis + 2) % 3;
            for (int side = -1; side <= 1; side += 2) {
                for (double s1 = -h[a1]; s1 <= h[a1] + 1e-9; s1 += 0.005) {
                    for (double s2 = -h[a2]; s2 <= h[a2] + 1e-9; s2 += 0.005) {
                        Vec3 p = center;
                        p[axis] += side * h[axis];
                        p[a1] += s1;
                        p[a2] += s2;
                        if (inside(b, p)) c.push_back(p, col);
                    }
                }
            }
        }
    }
    return c;
}

// Continuous image coordinates (pixel centers at integers), same axis table as project().
inline std::pair<double, double> image_coords(ViewId id, const WorkspaceBounds& b, int r, const Vec3& p) {
    const Vec3 e = b.max - b.min;
    switch (id) {
        case ViewId::front: return {(p.x() - b.min.x()) / e.x() * r - 0.5, (b.max.z() - p.z()) / e.z() * r - 0.5};
        case ViewId::left: return {(b.max.y() - p.y()) / e.y() * r - 0.5, (b.max.z() - p.z()) / e.z() * r - 0.5};
        case ViewId::top: return {(p.x() - b.min.x()) / e.x() * r - 0.5, (b.max.y() - p.y()) / e.y() * r - 0.5};
    }
    return {0.0, 0.0};
}

// Exhaustive scorer: sum over views of the Gaussian evaluated analytically at each
// candidate's sub-pixel position. No heatmap grid and no interpolation.
inline std::size_t best_candidate_analytic(const PointCloud& cands, const Vec3& g,
                                           const WorkspaceBounds& b, int r, double sigma) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        double s = 0.0;
        for (ViewId id : {ViewId::front, ViewId::left, ViewId::top}) {
            const auto [cu, cv] = image_coords(id, b, r, g);
            const auto [u, v] = image_coords(id, b, r, cands.points[i]);
            s += std::exp(-((u - cu) * (u - cu) + (v - cv) * (v - cv)) / (2.0 * sigma * sigma));
        }
        if (s > best) {
            best = s;
            arg = i;
        }
    }
    return arg;
}

// Central finite difference of a scalar function with respect to one coordinate.
template <typename F>
double central_difference(F&& f, double& x, double h) {
    const double saved = x;
    x = saved + h;
    const double fp = f();
    x = saved - h;
    const double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Keyframe windows by brute force: for each observation index, which keyframe does the
// sampling rule pair it with, if any.
inline std::vector<std::pair<int, int>> enumerate_samples(const std::vector<int>& kf, int m) {
    std::vector<std::pair<int, int>> out;
    if (kf.empty()) return out;
    if (kf[0] != 0) out.emplace_back(0, kf[0]);
    for (std::size_t k = 0; k + 1 < kf.size(); ++k) {
        for (int t = 0; t <= kf.back(); ++t) {
            if (t >= kf[k] && t <= kf[k] + m && t < kf[k + 1]) out.emplace_back(t, kf[k + 1]);
        }
    }
    return out;
}

}  // namespace oracle
