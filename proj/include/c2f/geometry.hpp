#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "c2f/errors.hpp"

namespace c2f {

using Vec3 = Eigen::Vector3d;
using Color = Eigen::Vector3f;

namespace geometry {

struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

/// Pinhole camera. The extrinsics map camera coordinates (z forward) to world.
struct CameraModel {
    Intrinsics intrinsics;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 0;
    int height = 0;

    /// Throws InvalidArgument when the model violates its invariants.
    void validate() const;

    Vec3 to_world(const Vec3& camera_point) const { return rotation * camera_point + translation; }
    Vec3 to_camera(const Vec3& world_point) const {
        return rotation.transpose() * (world_point - translation);
    }

    /// Camera looking from `eye` toward `target`, image rows pointing away from `up`.
    static CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                               Intrinsics intrinsics, int width, int height);
};

/// Continuous image coordinates of a world point; none when behind the camera.
std::optional<Eigen::Vector2d> project_to_image(const CameraModel& camera, const Vec3& world_point);

struct RgbdImage {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;    ///< height * width * 3, row-major, values in [0, 1]
    std::vector<float> depth;  ///< height * width, meters along the optical axis; 0 = invalid

    RgbdImage() = default;
    RgbdImage(int w, int h)
        : width(w), height(h),
          rgb(static_cast<std::size_t>(w) * h * 3, 0.0f),
          depth(static_cast<std::size_t>(w) * h, 0.0f) {}
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Color> colors;
    std::vector<std::uint8_t> valid;

    std::size_t size() const noexcept { return points.size(); }
    bool empty() const noexcept { return points.empty(); }
    std::size_t valid_count() const noexcept;
    void reserve(std::size_t n);
    void push_back(const Vec3& point, const Color& color, bool is_valid = true);
};

/// Closed axis-aligned box.
struct WorkspaceBounds {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();

    void validate() const;
    bool contains(const Vec3& p) const noexcept;
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    double max_extent() const { return extent().maxCoeff(); }

    static WorkspaceBounds cube(const Vec3& center, double side);
};

enum class ViewId : std::uint8_t { front = 0, left = 1, top = 2 };

inline constexpr std::array<ViewId, 3> kAllViews{ViewId::front, ViewId::left, ViewId::top};

std::string_view to_string(ViewId id);
ViewId view_from_string(std::string_view name);

/// Signed world axis: component index plus direction.
struct AxisRef {
    int index = 0;
    int sign = 1;

    Vec3 direction() const {
        Vec3 d = Vec3::Zero();
        d[index] = static_cast<double>(sign);
        return d;
    }
};

/// Orthographic, axis-aligned view pose: image columns, image rows, viewing direction.
struct ViewPose {
    AxisRef u;
    AxisRef v;
    AxisRef forward;
};

/// front looks along +y, left along +x, top along -z.
ViewPose view_pose(ViewId id);

struct Pixel {
    int u = 0;  ///< column
    int v = 0;  ///< row

    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Normalized position of `c` along a signed axis of `bounds`, 0 at the near face.
double axis_fraction(const AxisRef& axis, const WorkspaceBounds& bounds, const Vec3& p);

/// Pixel containing `p` in the given view, none when `p` lies outside the bounds.
std::optional<Pixel> world_to_pixel(ViewId view, const WorkspaceBounds& bounds, int resolution,
                                    const Vec3& p);

/// Sub-pixel position of `p` with pixel centers at integer coordinates.
Eigen::Vector2d world_to_image(ViewId view, const WorkspaceBounds& bounds, int resolution,
                               const Vec3& p);

/// Distance of `p` from the near face of the bounds along the view direction.
double view_depth(ViewId view, const WorkspaceBounds& bounds, const Vec3& p);

struct CanonicalView {
    ViewId id = ViewId::front;
    int resolution = 0;
    WorkspaceBounds bounds;
    std::vector<float> rgb;                 ///< R*R*3
    std::vector<double> depth;              ///< R*R, fill = bounds.max_extent()
    std::vector<Vec3> xyz;                  ///< R*R, fill = NaN
    std::vector<std::uint8_t> occupied;     ///< R*R
    std::vector<std::int64_t> source_index; ///< winning point index, -1 when empty

    std::size_t index(int u, int v) const {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(resolution) +
               static_cast<std::size_t>(u);
    }
    std::size_t occupied_count() const noexcept;
};

using ViewSet = std::array<CanonicalView, 3>;

/// Back-projects every pixel; pixels with zero or non-finite depth are marked invalid.
PointCloud unproject(const RgbdImage& rgbd, const CameraModel& camera);

PointCloud merge(std::span<const PointCloud> clouds);

/// Valid points inside `bounds`, preserving order.
PointCloud filter_to_bounds(const PointCloud& cloud, const WorkspaceBounds& bounds);

/// Z-buffered orthographic rasterization into front, left and top views.
/// Ties in depth resolve to the lowest point index.
ViewSet project_canonical(const PointCloud& cloud, const WorkspaceBounds& bounds, int resolution);

/// World point stored at (u, v), none when the pixel is empty.
std::optional<Vec3> pixel_to_world(const CanonicalView& view, int u, int v);

/// project_canonical restricted to the closed cube of side `cube_side` around `center`.
ViewSet crop_zoom(const PointCloud& cloud, const Vec3& center, double cube_side, int resolution);

inline constexpr int kDefaultResolution = 224;
inline constexpr int kTestResolution = 64;

}  // namespace geometry
}  // namespace c2f
