#include <algorithm>
#include <cmath>
#include <limits>

#include "c2f/scene.hpp"

namespace c2f::bench {

namespace {

struct Box {
    Vec3 lo;
    Vec3 hi;
    Color color;
};

constexpr double kTableHalf = 0.6;
const Color kDefaultTable(0.78f, 0.74f, 0.68f);

std::vector<Box> scene_boxes(const Scene& scene) {
    std::vector<Box> boxes;
    boxes.reserve(scene.objects.size() * 3 + 1);
    for (const Object& o : scene.objects) {
        if (!o.is_drawer()) {
            boxes.push_back({o.position - o.half_extents, o.position + o.half_extents, color_rgb(o.color)});
            continue;
        }
        const Color wood = o.color.empty() ? color_rgb("wood") : color_rgb(o.color);
        boxes.push_back({o.position - o.half_extents, o.position + o.half_extents, wood});
        const auto [z0, z1] = o.slot_z_range();
        const double front = o.front_y();
        const double pulled = o.open_fraction * o.drawer.travel;
        if (pulled > 1e-6) {
            boxes.push_back({Vec3(o.position.x() - o.half_extents.x() + 0.005, front - pulled, z0 + 0.005),
                             Vec3(o.position.x() + o.half_extents.x() - 0.005, front, z1 - 0.005),
                             wood * 1.15f});
        }
        const Vec3 h = o.handle_point();
        const Vec3 half(0.03, 0.015, 0.008);
        boxes.push_back({h - half, h + half, color_rgb("black")});
    }
    const Vec3 g(0.012, 0.012, 0.012);
    boxes.push_back({scene.gripper_position - g, scene.gripper_position + g, color_rgb("gray")});
    return boxes;
}

// Slab test; returns entry distance and the hit face axis.
bool intersect(const Box& box, const Vec3& origin, const Vec3& dir, double& t_hit, int& axis) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    int enter_axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-12) {
            if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return false;
            continue;
        }
        double ta = (box.lo[a] - origin[a]) / dir[a];
        double tb = (box.hi[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            enter_axis = a;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (enter_axis < 0) return false;  // camera inside the box
    t_hit = t0;
    axis = enter_axis;
    return true;
}

float shade(int axis) {
    static constexpr float kAxisLight[3] = {0.80f, 0.70f, 1.0f};
    return kAxisLight[axis];
}

}  // namespace

RgbdImage render_rgbd(const Scene& scene, const CameraModel& camera, const RenderOptions& options) {
    camera.validate();
    RgbdImage img(camera.width, camera.height);
    const auto boxes = scene_boxes(scene);
    const Color table = options.table_color.value_or(kDefaultTable);
    const auto& k = camera.intrinsics;
    for (int v = 0; v < camera.height; ++v) {
        for (int u = 0; u < camera.width; ++u) {
            const Vec3 ray_cam((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
            const Vec3 dir = camera.rotation * ray_cam;
            const Vec3& origin = camera.translation;
            double best = std::numeric_limits<double>::infinity();
            Color color = Color::Zero();
            for (const Box& b : boxes) {
                double t = 0.0;
                int axis = 0;
                if (intersect(b, origin, dir, t, axis) && t < best) {
                    best = t;
                    color = b.color * shade(axis);
                }
            }
            if (std::abs(dir.z()) > 1e-12) {
                const double t = (kTableHeight - origin.z()) / dir.z();
                if (t > 0.0 && t < best) {
                    const Vec3 p = origin + t * dir;
                    if (std::abs(p.x()) <= kTableHalf && std::abs(p.y()) <= kTableHalf) {
                        best = t;
                        color = table;
                    }
                }
            }
            const std::size_t i = static_cast<std::size_t>(v) * camera.width + u;
            if (!std::isfinite(best)) continue;
            img.depth[i] = static_cast<float>(best);
            for (int c = 0; c < 3; ++c) {
                img.rgb[3 * i + c] = std::clamp(color[c] * options.rgb_gain + options.rgb_bias, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

std::vector<RgbdImage> render_all(const Scene& scene, const RenderOptions& options) {
    std::vector<RgbdImage> out;
    out.reserve(scene.cameras.size());
    for (const auto& cam : scene.cameras) out.push_back(render_rgbd(scene, cam, options));
    return out;
}

geometry::PointCloud observe_cloud(const Scene& scene, const RenderOptions& options) {
    std::vector<geometry::PointCloud> clouds;
    clouds.reserve(scene.cameras.size());
    for (const auto& cam : scene.cameras) {
        clouds.push_back(geometry::unproject(render_rgbd(scene, cam, options), cam));
    }
    return geometry::filter_to_bounds(geometry::merge(clouds), scene.bounds);
}

}  // namespace c2f::bench
