#include "c2f/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace c2f {

std::string_view to_string(GripperState g) { return g == GripperState::open ? "open" : "closed"; }

GripperState gripper_from_string(std::string_view s) {
    if (s == "open") return GripperState::open;
    if (s == "closed") return GripperState::closed;
    throw InvalidArgument("unknown gripper state: " + std::string(s));
}

void Action::validate(const geometry::WorkspaceBounds& bounds) const {
    if (std::abs(orientation.norm() - 1.0) > 1e-6) {
        throw InvalidArgument("action orientation must be a unit quaternion");
    }
    if (!position.allFinite() || !bounds.contains(position)) {
        throw InvalidArgument("action position lies outside the workspace");
    }
}

}  // namespace c2f

namespace c2f::bench {

std::string_view to_string(Shape s) {
    switch (s) {
        case Shape::cube: return "cube";
        case Shape::cylinder: return "cylinder";
        case Shape::star: return "star";
        case Shape::moon: return "moon";
        case Shape::cup: return "cup";
        case Shape::drawer: return "drawer";
    }
    return "unknown";
}

Shape shape_from_string(std::string_view s) {
    for (Shape shape : {Shape::cube, Shape::cylinder, Shape::star, Shape::moon, Shape::cup, Shape::drawer}) {
        if (to_string(shape) == s) return shape;
    }
    throw InvalidArgument("unknown shape: " + std::string(s));
}

Color color_rgb(std::string_view name) {
    struct Entry {
        std::string_view name;
        Color rgb;
    };
    static const Entry kPalette[] = {
        {"red", {0.85f, 0.10f, 0.10f}},     {"green", {0.10f, 0.70f, 0.15f}},
        {"blue", {0.10f, 0.20f, 0.85f}},    {"yellow", {0.90f, 0.85f, 0.10f}},
        {"magenta", {0.85f, 0.10f, 0.75f}}, {"cyan", {0.10f, 0.80f, 0.85f}},
        {"orange", {0.95f, 0.55f, 0.05f}},  {"purple", {0.50f, 0.15f, 0.70f}},
        {"gray", {0.50f, 0.50f, 0.50f}},    {"white", {0.95f, 0.95f, 0.95f}},
        {"wood", {0.55f, 0.40f, 0.25f}},    {"black", {0.08f, 0.08f, 0.08f}},
    };
    for (const auto& e : kPalette) {
        if (e.name == name) return e.rgb;
    }
    throw InvalidArgument("unknown color: " + std::string(name));
}

DrawerGeometry drawer_geometry(std::string_view variant) {
    if (variant == "A") return {"A", Vec3(0.12, 0.10, 0.15), 0.15, Vec3::Zero()};
    if (variant == "B") return {"B", Vec3(0.16, 0.12, 0.12), 0.20, Vec3::Zero()};
    if (variant == "C") return {"C", Vec3(0.12, 0.10, 0.15), 0.15, Vec3(0.06, 0.0, -0.025)};
    throw InvalidArgument("unknown drawer variant: " + std::string(variant));
}

std::pair<double, double> Object::slot_z_range() const {
    const double bottom = position.z() - half_extents.z();
    const double h = 2.0 * half_extents.z() / 3.0;
    int k = 0;
    if (slot == "middle") k = 1;
    else if (slot == "top") k = 2;
    else if (slot != "bottom") throw InvalidArgument("unknown drawer slot: " + slot);
    return {bottom + k * h, bottom + (k + 1) * h};
}

Vec3 Object::handle_point() const {
    const auto [z0, z1] = slot_z_range();
    const double face = front_y() - open_fraction * drawer.travel;
    return Vec3(position.x() + drawer.handle_offset.x(), face - 0.015,
                0.5 * (z0 + z1) + drawer.handle_offset.z());
}

geometry::WorkspaceBounds Object::drawer_interior() const {
    const auto [z0, z1] = slot_z_range();
    const double front = front_y();
    const double pulled = open_fraction * drawer.travel;
    return {Vec3(position.x() - half_extents.x() + 0.01, front - pulled, z0),
            Vec3(position.x() + half_extents.x() - 0.01, front, z1)};
}

const Object& Scene::object(std::string_view name) const {
    const auto i = find(name);
    if (!i) throw InvalidArgument("no object named '" + std::string(name) + "'");
    return objects[*i];
}

Object& Scene::object(std::string_view name) {
    const auto i = find(name);
    if (!i) throw InvalidArgument("no object named '" + std::string(name) + "'");
    return objects[*i];
}

std::optional<std::size_t> Scene::find(std::string_view name) const {
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (objects[i].name == name) return i;
    }
    return std::nullopt;
}

WorkspaceBounds default_workspace() { return {Vec3(-0.4, -0.4, -0.05), Vec3(0.4, 0.4, 0.75)}; }

void install_default_cameras(Scene& scene, int width, int height) {
    constexpr double kFov = 60.0 * 3.14159265358979323846 / 180.0;
    const double f = 0.5 * width / std::tan(0.5 * kFov);
    const geometry::Intrinsics k{f, f, 0.5 * width, 0.5 * height};
    const Vec3 target(0.0, 0.0, 0.08);
    scene.camera_names = {"front", "left_shoulder", "right_shoulder", "overhead"};
    scene.cameras = {
        CameraModel::look_at(Vec3(0.0, -0.95, 0.60), target, Vec3::UnitZ(), k, width, height),
        CameraModel::look_at(Vec3(-0.65, -0.65, 0.70), target, Vec3::UnitZ(), k, width, height),
        CameraModel::look_at(Vec3(0.65, -0.65, 0.70), target, Vec3::UnitZ(), k, width, height),
        CameraModel::look_at(Vec3(0.0, -0.05, 1.25), target, Vec3::UnitY(), k, width, height),
    };
}

namespace {

bool inside_xy(const Vec3& lo, const Vec3& hi, const Vec3& p) {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
}

}  // namespace

double support_height(const Scene& scene, const Vec3& at, std::optional<std::size_t> ignore) {
    double best = kTableHeight;
    const bool dropping_cup = ignore && scene.objects[*ignore].is_container();
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        if (ignore && i == *ignore) continue;
        const Object& o = scene.objects[i];
        if (o.is_drawer()) {
            const Vec3 lo = o.position - o.half_extents;
            const Vec3 hi = o.position + o.half_extents;
            if (inside_xy(lo, hi, at)) best = std::max(best, hi.z());
            if (o.open_fraction > 0.0) {
                const auto interior = o.drawer_interior();
                if (inside_xy(interior.min, interior.max, at)) {
                    best = std::max(best, interior.min.z() + 0.005);
                }
            }
            continue;
        }
        const Vec3 lo = o.position - o.half_extents;
        const Vec3 hi = o.position + o.half_extents;
        if (!inside_xy(lo, hi, at)) continue;
        if (o.is_container() && !dropping_cup) {
            best = std::max(best, lo.z() + 0.005);
        } else {
            best = std::max(best, hi.z());
        }
    }
    return best;
}

namespace {

void release(Scene& scene) {
    if (scene.held_object) {
        Object& o = scene.objects[*scene.held_object];
        const std::size_t idx = *scene.held_object;
        scene.held_object.reset();
        o.position.z() = support_height(scene, o.position, idx) + o.half_extents.z();
    }
    scene.held_handle.reset();
    scene.gripper = GripperState::open;
}

void grasp(Scene& scene) {
    scene.gripper = GripperState::closed;
    double best = scene.params.grasp_radius;
    std::optional<std::size_t> object;
    bool handle = false;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const Object& o = scene.objects[i];
        const Vec3 point = o.is_drawer() ? o.handle_point() : o.position;
        const double d = (point - scene.gripper_position).norm();
        if (d <= best) {
            best = d;
            object = i;
            handle = o.is_drawer();
        }
    }
    if (!object) return;
    if (handle) {
        scene.held_handle = object;
        scene.handle_grasp_fraction = scene.objects[*object].open_fraction;
        scene.handle_grasp_y = scene.gripper_position.y();
    } else {
        scene.held_object = object;
        scene.held_offset = scene.objects[*object].position - scene.gripper_position;
    }
}

}  // namespace

void apply_action(Scene& scene, const Action& action) {
    if (!action.position.allFinite() || !scene.bounds.contains(action.position)) {
        std::ostringstream os;
        os << "action position (" << action.position.transpose() << ") outside the workspace";
        throw ContractError(os.str());
    }
    if (action.gripper == GripperState::open && scene.gripper == GripperState::closed) {
        release(scene);
    }
    scene.gripper_position = action.position;
    scene.gripper_orientation = action.orientation;
    if (scene.held_object) {
        scene.objects[*scene.held_object].position = scene.gripper_position + scene.held_offset;
    }
    if (scene.held_handle) {
        // The handle only transmits motion along the slide axis; leaving that axis slips the grip.
        const Vec3 h = scene.objects[*scene.held_handle].handle_point();
        const double off_axis = std::hypot(action.position.x() - h.x(), action.position.z() - h.z());
        if (off_axis > scene.params.grasp_radius) scene.held_handle.reset();
    }
    if (scene.held_handle) {
        Object& d = scene.objects[*scene.held_handle];
        const double pulled = scene.handle_grasp_y - scene.gripper_position.y();
        d.open_fraction = std::clamp(scene.handle_grasp_fraction + pulled / d.drawer.travel, 0.0, 1.0);
    }
    if (action.gripper == GripperState::closed && scene.gripper == GripperState::open) {
        grasp(scene);
    }
}

Scene step_episode(Scene scene, const Action& action) {
    apply_action(scene, action);
    return scene;
}

}  // namespace c2f::bench
