#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "c2f/action.hpp"
#include "c2f/geometry.hpp"

namespace c2f::bench {

using geometry::CameraModel;
using geometry::RgbdImage;
using geometry::WorkspaceBounds;

enum class Shape : std::uint8_t { cube, cylinder, star, moon, cup, drawer };

std::string_view to_string(Shape s);
Shape shape_from_string(std::string_view s);

/// Named palette color.
Color color_rgb(std::string_view name);

/// Cabinet geometry for articulated objects.
struct DrawerGeometry {
    std::string variant;          ///< geometry id, e.g. "A"
    Vec3 body_half_extents;       ///< cabinet body
    double travel = 0.15;         ///< full-open slide distance along -y
    Vec3 handle_offset = Vec3::Zero();  ///< handle offset on the drawer face (x, -, z)
};

DrawerGeometry drawer_geometry(std::string_view variant);

struct Object {
    std::string name;
    Shape shape = Shape::cube;
    std::string color;
    Vec3 position = Vec3::Zero();  ///< center
    Vec3 half_extents = Vec3::Constant(0.02);

    // Drawer state; unused for rigid shapes.
    DrawerGeometry drawer;
    std::string slot;  ///< top | middle | bottom
    double open_fraction = 0.0;

    bool is_drawer() const { return shape == Shape::drawer; }
    bool is_container() const { return shape == Shape::cup; }
    bool movable() const { return !is_drawer(); }

    /// z range of the active drawer slot.
    std::pair<double, double> slot_z_range() const;
    double front_y() const { return position.y() - half_extents.y(); }
    /// Point to grasp when pulling or pushing the drawer.
    Vec3 handle_point() const;
    /// Interior of the pulled-out drawer, valid when open_fraction > 0.
    geometry::WorkspaceBounds drawer_interior() const;
};

struct DynamicsParams {
    double grasp_radius = 0.02;
    double place_tolerance = 0.03;
};

struct RenderOptions {
    int width = 64;
    int height = 64;
    float rgb_gain = 1.0f;   ///< approximates light-strength changes
    float rgb_bias = 0.0f;
    std::optional<Color> table_color;  ///< approximates table-color changes
};

struct Scene {
    WorkspaceBounds bounds;
    std::vector<Object> objects;
    std::vector<std::string> camera_names;
    std::vector<CameraModel> cameras;
    std::uint64_t seed = 0;
    DynamicsParams params;

    Vec3 gripper_position = Vec3(0.0, -0.25, 0.45);
    Eigen::Quaterniond gripper_orientation = Eigen::Quaterniond::Identity();
    GripperState gripper = GripperState::open;

    std::optional<std::size_t> held_object;
    Vec3 held_offset = Vec3::Zero();
    std::optional<std::size_t> held_handle;
    double handle_grasp_fraction = 0.0;
    double handle_grasp_y = 0.0;

    const Object& object(std::string_view name) const;
    Object& object(std::string_view name);
    std::optional<std::size_t> find(std::string_view name) const;
};

inline constexpr double kTableHeight = 0.0;

/// Default 0.8 m cube over the table.
WorkspaceBounds default_workspace();

/// Front, left shoulder, right shoulder and overhead cameras aimed at the table.
void install_default_cameras(Scene& scene, int width, int height);

/// Support height under (x, y) ignoring `ignore`, for dropping objects.
double support_height(const Scene& scene, const Vec3& at, std::optional<std::size_t> ignore);

/// Keyframe-granularity dynamics. An opening gripper releases before moving; a closing
/// gripper moves first and then grasps the nearest graspable point within grasp_radius.
/// Held objects follow the gripper; a held handle slides its drawer along -y.
/// Throws ContractError when the action is outside the workspace.
void apply_action(Scene& scene, const Action& action);

Scene step_episode(Scene scene, const Action& action);

RgbdImage render_rgbd(const Scene& scene, const CameraModel& camera, const RenderOptions& options = {});
std::vector<RgbdImage> render_all(const Scene& scene, const RenderOptions& options = {});

/// Fused world point cloud from every camera in the rig.
geometry::PointCloud observe_cloud(const Scene& scene, const RenderOptions& options = {});

}  // namespace c2f::bench
