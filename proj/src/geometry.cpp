#include "c2f/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace c2f::geometry {

void CameraModel::validate() const {
    const auto& k = intrinsics;
    if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
        throw InvalidArgument("camera focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("camera image size must be positive");
    }
    if (!(k.cx > 0.0 && k.cx < width && k.cy > 0.0 && k.cy < height)) {
        throw InvalidArgument("camera principal point must lie inside the image");
    }
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if (!gram.allFinite() || (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
        throw InvalidArgument("camera rotation is not orthonormal");
    }
    if (!translation.allFinite()) {
        throw InvalidArgument("camera translation must be finite");
    }
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                                 Intrinsics intrinsics, int width, int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) {
        throw InvalidArgument("look_at: up vector is parallel to the viewing direction");
    }
    right.normalize();
    const Vec3 down = forward.cross(right);
    CameraModel cam;
    cam.intrinsics = intrinsics;
    cam.rotation.col(0) = right;
    cam.rotation.col(1) = down;
    cam.rotation.col(2) = forward;
    cam.translation = eye;
    cam.width = width;
    cam.height = height;
    return cam;
}

std::optional<Eigen::Vector2d> project_to_image(const CameraModel& camera, const Vec3& world_point) {
    const Vec3 c = camera.to_camera(world_point);
    if (c.z() <= 0.0) {
        return std::nullopt;
    }
    const auto& k = camera.intrinsics;
    return Eigen::Vector2d(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy);
}

std::size_t PointCloud::valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

void PointCloud::reserve(std::size_t n) {
    points.reserve(n);
    colors.reserve(n);
    valid.reserve(n);
}

void PointCloud::push_back(const Vec3& point, const Color& color, bool is_valid) {
    points.push_back(point);
    colors.push_back(color);
    valid.push_back(is_valid ? 1 : 0);
}

void WorkspaceBounds::validate() const {
    if (!min.allFinite() || !max.allFinite() || !(min.array() < max.array()).all()) {
        throw InvalidArgument("workspace bounds require min < max componentwise");
    }
}

bool WorkspaceBounds::contains(const Vec3& p) const noexcept {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
}

WorkspaceBounds WorkspaceBounds::cube(const Vec3& center, double side) {
    const Vec3 half = Vec3::Constant(0.5 * side);
    return WorkspaceBounds{center - half, center + half};
}

std::string_view to_string(ViewId id) {
    switch (id) {
        case ViewId::front: return "front";
        case ViewId::left: return "left";
        case ViewId::top: return "top";
    }
    return "unknown";
}

ViewId view_from_string(std::string_view name) {
    if (name == "front") return ViewId::front;
    if (name == "left") return ViewId::left;
    if (name == "top") return ViewId::top;
    throw InvalidArgument("unknown view id: " + std::string(name));
}

ViewPose view_pose(ViewId id) {
    switch (id) {
        case ViewId::front: return ViewPose{{0, +1}, {2, -1}, {1, +1}};
        case ViewId::left: return ViewPose{{1, -1}, {2, -1}, {0, +1}};
        case ViewId::top: return ViewPose{{0, +1}, {1, -1}, {2, -1}};
    }
    throw InvalidArgument("invalid view id");
}

double axis_fraction(const AxisRef& axis, const WorkspaceBounds& bounds, const Vec3& p) {
    const double lo = bounds.min[axis.index];
    const double hi = bounds.max[axis.index];
    const double c = p[axis.index];
    return axis.sign > 0 ? (c - lo) / (hi - lo) : (hi - c) / (hi - lo);
}

namespace {

int fraction_to_cell(double s, int resolution) {
    const int cell = static_cast<int>(std::floor(s * resolution));
    return std::clamp(cell, 0, resolution - 1);
}

}  // namespace

std::optional<Pixel> world_to_pixel(ViewId view, const WorkspaceBounds& bounds, int resolution,
                                    const Vec3& p) {
    if (!p.allFinite() || !bounds.contains(p)) {
        return std::nullopt;
    }
    const ViewPose pose = view_pose(view);
    return Pixel{fraction_to_cell(axis_fraction(pose.u, bounds, p), resolution),
                 fraction_to_cell(axis_fraction(pose.v, bounds, p), resolution)};
}

Eigen::Vector2d world_to_image(ViewId view, const WorkspaceBounds& bounds, int resolution,
                               const Vec3& p) {
    const ViewPose pose = view_pose(view);
    return {axis_fraction(pose.u, bounds, p) * resolution - 0.5,
            axis_fraction(pose.v, bounds, p) * resolution - 0.5};
}

double view_depth(ViewId view, const WorkspaceBounds& bounds, const Vec3& p) {
    const ViewPose pose = view_pose(view);
    const int i = pose.forward.index;
    return pose.forward.sign > 0 ? p[i] - bounds.min[i] : bounds.max[i] - p[i];
}

std::size_t CanonicalView::occupied_count() const noexcept {
    return static_cast<std::size_t>(std::count(occupied.begin(), occupied.end(), std::uint8_t{1}));
}

PointCloud unproject(const RgbdImage& rgbd, const CameraModel& camera) {
    camera.validate();
    if (rgbd.width != camera.width || rgbd.height != camera.height) {
        std::ostringstream os;
        os << "rgbd image is " << rgbd.width << "x" << rgbd.height << " but camera expects "
           << camera.width << "x" << camera.height;
        throw ShapeError(os.str());
    }
    const std::size_t n = static_cast<std::size_t>(rgbd.width) * rgbd.height;
    if (rgbd.depth.size() != n || rgbd.rgb.size() != 3 * n) {
        throw ShapeError("rgbd buffers do not match the declared image size");
    }
    const auto& k = camera.intrinsics;
    PointCloud cloud;
    cloud.reserve(n);
    for (int v = 0; v < rgbd.height; ++v) {
        for (int u = 0; u < rgbd.width; ++u) {
            const std::size_t i = static_cast<std::size_t>(v) * rgbd.width + u;
            const double d = rgbd.depth[i];
            const Color color(rgbd.rgb[3 * i], rgbd.rgb[3 * i + 1], rgbd.rgb[3 * i + 2]);
            if (!std::isfinite(d) || d <= 0.0) {
                cloud.push_back(Vec3::Zero(), color, false);
                continue;
            }
            const Vec3 cam((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d);
            cloud.push_back(camera.to_world(cam), color, true);
        }
    }
    return cloud;
}

PointCloud merge(std::span<const PointCloud> clouds) {
    PointCloud out;
    std::size_t total = 0;
    for (const auto& c : clouds) total += c.size();
    out.reserve(total);
    for (const auto& c : clouds) {
        out.points.insert(out.points.end(), c.points.begin(), c.points.end());
        out.colors.insert(out.colors.end(), c.colors.begin(), c.colors.end());
        out.valid.insert(out.valid.end(), c.valid.begin(), c.valid.end());
    }
    return out;
}

PointCloud filter_to_bounds(const PointCloud& cloud, const WorkspaceBounds& bounds) {
    PointCloud out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.valid[i] && bounds.contains(cloud.points[i])) {
            out.push_back(cloud.points[i], cloud.colors[i], true);
        }
    }
    return out;
}

namespace {

struct Fragment {
    std::uint32_t pixel;
    double depth;
    std::uint32_t point;
};

CanonicalView empty_view(ViewId id, const WorkspaceBounds& bounds, int resolution) {
    const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
    CanonicalView view;
    view.id = id;
    view.resolution = resolution;
    view.bounds = bounds;
    view.rgb.assign(3 * n, 0.0f);
    view.depth.assign(n, bounds.max_extent());
    view.xyz.assign(n, Vec3::Constant(std::numeric_limits<double>::quiet_NaN()));
    view.occupied.assign(n, 0);
    view.source_index.assign(n, -1);
    return view;
}

// Sort fragments by (pixel, depth, point index); the first fragment of each pixel wins.
CanonicalView rasterize(const PointCloud& cloud, std::span<const std::uint32_t> members, ViewId id,
                        const WorkspaceBounds& bounds, int resolution) {
    CanonicalView view = empty_view(id, bounds, resolution);
    std::vector<Fragment> fragments;
    fragments.reserve(members.size());
    for (const std::uint32_t i : members) {
        const Vec3& p = cloud.points[i];
        const auto px = world_to_pixel(id, bounds, resolution, p);
        fragments.push_back({static_cast<std::uint32_t>(view.index(px->u, px->v)),
                             view_depth(id, bounds, p), i});
    }
    std::sort(fragments.begin(), fragments.end(), [](const Fragment& a, const Fragment& b) {
        if (a.pixel != b.pixel) return a.pixel < b.pixel;
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.point < b.point;
    });
    for (std::size_t f = 0; f < fragments.size(); ++f) {
        if (f > 0 && fragments[f].pixel == fragments[f - 1].pixel) continue;
        const Fragment& w = fragments[f];
        view.occupied[w.pixel] = 1;
        view.depth[w.pixel] = w.depth;
        view.xyz[w.pixel] = cloud.points[w.point];
        view.source_index[w.pixel] = w.point;
        const Color& c = cloud.colors[w.point];
        view.rgb[3 * w.pixel] = c[0];
        view.rgb[3 * w.pixel + 1] = c[1];
        view.rgb[3 * w.pixel + 2] = c[2];
    }
    return view;
}

std::vector<std::uint32_t> members_in(const PointCloud& cloud, const WorkspaceBounds& bounds) {
    if (cloud.points.size() != cloud.colors.size() || cloud.points.size() != cloud.valid.size()) {
        throw ShapeError("point cloud buffers have mismatched lengths");
    }
    std::vector<std::uint32_t> members;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (cloud.valid[i] && cloud.points[i].allFinite() && bounds.contains(cloud.points[i])) {
            members.push_back(static_cast<std::uint32_t>(i));
        }
    }
    return members;
}

ViewSet project_members(const PointCloud& cloud, std::span<const std::uint32_t> members,
                        const WorkspaceBounds& bounds, int resolution) {
    return {rasterize(cloud, members, ViewId::front, bounds, resolution),
            rasterize(cloud, members, ViewId::left, bounds, resolution),
            rasterize(cloud, members, ViewId::top, bounds, resolution)};
}

}  // namespace

ViewSet project_canonical(const PointCloud& cloud, const WorkspaceBounds& bounds, int resolution) {
    bounds.validate();
    if (resolution < 8) {
        throw InvalidArgument("canonical view resolution must be at least 8");
    }
    const auto members = members_in(cloud, bounds);
    if (members.empty()) {
        throw EmptySceneError("no valid points inside the workspace bounds");
    }
    return project_members(cloud, members, bounds, resolution);
}

std::optional<Vec3> pixel_to_world(const CanonicalView& view, int u, int v) {
    if (u < 0 || v < 0 || u >= view.resolution || v >= view.resolution) {
        std::ostringstream os;
        os << "pixel (" << u << ", " << v << ") outside " << view.resolution << "x"
           << view.resolution << " view";
        throw IndexError(os.str());
    }
    const std::size_t i = view.index(u, v);
    if (!view.occupied[i]) {
        return std::nullopt;
    }
    return view.xyz[i];
}

ViewSet crop_zoom(const PointCloud& cloud, const Vec3& center, double cube_side, int resolution) {
    if (!(cube_side > 0.0) || !std::isfinite(cube_side)) {
        throw InvalidArgument("crop cube side must be positive");
    }
    if (!center.allFinite()) {
        throw InvalidArgument("crop center must be finite");
    }
    if (resolution < 8) {
        throw InvalidArgument("canonical view resolution must be at least 8");
    }
    const WorkspaceBounds cube = WorkspaceBounds::cube(center, cube_side);
    const auto members = members_in(cloud, cube);
    if (members.empty()) {
        std::ostringstream os;
        os << "no points inside crop cube of side " << cube_side << " at (" << center.x() << ", "
           << center.y() << ", " << center.z() << ")";
        throw EmptyCropError(os.str(), center);
    }
    return project_members(cloud, members, cube, resolution);
}

}  // namespace c2f::geometry
