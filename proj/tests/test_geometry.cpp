#include <cmath>
#include <random>
#include <set>

#include "c2f/geometry.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace c2f;
using namespace c2f::geometry;

namespace {

const WorkspaceBounds kBox{Vec3(-0.4, -0.4, -0.05), Vec3(0.4, 0.4, 0.75)};

CameraModel identity_camera(int w, int h) {
    CameraModel cam;
    cam.intrinsics = {50.0, 50.0, 0.5 * w, 0.5 * h};
    cam.width = w;
    cam.height = h;
    return cam;
}

}  // namespace

TEST_CASE("camera validation") {
    CameraModel cam = identity_camera(8, 8);
    CHECK_NOTHROW(cam.validate());
    cam.intrinsics.fx = 0.0;
    CHECK_THROWS_AS(cam.validate(), InvalidArgument);
    cam = identity_camera(8, 8);
    cam.intrinsics.cx = 8.0;
    CHECK_THROWS_AS(cam.validate(), InvalidArgument);
    cam = identity_camera(8, 8);
    cam.rotation(0, 1) = 0.1;
    CHECK_THROWS_AS(cam.validate(), InvalidArgument);
}

TEST_CASE("unproject principal point") {
    CameraModel cam = identity_camera(9, 9);
    cam.intrinsics.cx = 4.0;
    cam.intrinsics.cy = 4.0;
    RgbdImage img(9, 9);
    img.depth[4 * 9 + 4] = 1.0f;
    const PointCloud pc = unproject(img, cam);
    REQUIRE(pc.size() == 81);
    CHECK(pc.valid_count() == 1);
    CHECK(pc.valid[4 * 9 + 4] == 1);
    CHECK(pc.points[4 * 9 + 4].isApprox(Vec3(0, 0, 1.0)));
}

TEST_CASE("unproject depth plane") {
    const CameraModel cam = identity_camera(8, 8);
    RgbdImage img(8, 8);
    std::fill(img.depth.begin(), img.depth.end(), 0.5f);
    const PointCloud pc = unproject(img, cam);
    CHECK(pc.valid_count() == 64);
    for (const auto& p : pc.points) CHECK(p.z() == doctest::Approx(0.5));
}

TEST_CASE("unproject masks invalid depth and rejects shape mismatch") {
    const CameraModel cam = identity_camera(4, 4);
    RgbdImage img(4, 4);
    img.depth.assign(16, 1.0f);
    img.depth[0] = std::nanf("");
    img.depth[1] = std::numeric_limits<float>::infinity();
    img.depth[2] = 0.0f;
    CHECK(unproject(img, cam).valid_count() == 13);
    RgbdImage wrong(5, 4);
    CHECK_THROWS_AS(unproject(wrong, cam), ShapeError);
}

TEST_CASE("unproject forward-projection oracle") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> depth(0.2, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 eye(std::uniform_real_distribution<double>(-1, 1)(rng), -1.5, 0.8);
        const CameraModel cam =
            CameraModel::look_at(eye, Vec3(0, 0, 0.1), Vec3::UnitZ(), {20.0, 22.0, 7.7, 8.3}, 16, 16);
        RgbdImage img(16, 16);
        for (auto& d : img.depth) d = static_cast<float>(depth(rng));
        const PointCloud pc = unproject(img, cam);
        for (int v = 0; v < 16; ++v) {
            for (int u = 0; u < 16; ++u) {
                const Vec3 c = cam.rotation.transpose() * (pc.points[v * 16 + u] - cam.translation);
                const double pu = cam.intrinsics.fx * c.x() / c.z() + cam.intrinsics.cx;
                const double pv = cam.intrinsics.fy * c.y() / c.z() + cam.intrinsics.cy;
                CHECK(std::abs(pu - u) <= 0.5);
                CHECK(std::abs(pv - v) <= 0.5);
            }
        }
    }
}

TEST_CASE("view axes are a right-handed orthonormal triple") {
    for (ViewId id : kAllViews) {
        const ViewPose p = view_pose(id);
        const Vec3 u = p.u.direction();
        const Vec3 v = p.v.direction();
        const Vec3 f = p.forward.direction();
        CHECK(std::abs(u.dot(v)) < 1e-12);
        CHECK(std::abs(u.dot(f)) < 1e-12);
        CHECK(std::abs(v.dot(f)) < 1e-12);
        CHECK((u.cross(v) - f).norm() < 1e-12);
    }
    CHECK(view_pose(ViewId::front).forward.direction() == Vec3::UnitY());
    CHECK(view_pose(ViewId::left).forward.direction() == Vec3::UnitX());
    CHECK(view_pose(ViewId::top).forward.direction() == -Vec3::UnitZ());
}

TEST_CASE("single point at box center") {
    const WorkspaceBounds b = WorkspaceBounds::cube(Vec3::Zero(), 1.0);
    PointCloud pc;
    pc.push_back(Vec3(0.001, -0.001, 0.001), Color(1, 0, 0));
    const ViewSet views = project_canonical(pc, b, 9);
    for (const auto& view : views) {
        CHECK(view.occupied_count() == 1);
        CHECK(view.occupied[view.index(4, 4)] == 1);
        CHECK(view.xyz[view.index(4, 4)] == pc.points[0]);
    }
}

TEST_CASE("z-buffer along the front depth axis") {
    PointCloud pc;
    pc.push_back(Vec3(0.0, 0.2, 0.3), Color(1, 0, 0));
    pc.push_back(Vec3(0.0, -0.2, 0.3), Color(0, 1, 0));
    const ViewSet views = project_canonical(pc, kBox, 16);
    CHECK(views[0].occupied_count() == 1);
    CHECK(views[0].source_index[views[0].index(8, 9)] == 1);
    CHECK(views[1].occupied_count() == 2);
    CHECK(views[2].occupied_count() == 2);
}

TEST_CASE("empty-pixel fill values") {
    PointCloud pc;
    pc.push_back(Vec3(0, 0, 0.3), Color(1, 1, 1));
    const ViewSet views = project_canonical(pc, kBox, 8);
    const auto& v = views[0];
    const std::size_t i = v.index(0, 0);
    CHECK(v.occupied[i] == 0);
    CHECK(v.depth[i] == kBox.max_extent());
    CHECK(std::isnan(v.xyz[i].x()));
    CHECK(v.rgb[3 * i] == 0.0f);
    CHECK(v.source_index[i] == -1);
    CHECK_FALSE(pixel_to_world(v, 0, 0).has_value());
}

TEST_CASE("project_canonical errors") {
    PointCloud pc;
    CHECK_THROWS_AS(project_canonical(pc, kBox, 16), EmptySceneError);
    pc.push_back(Vec3(5, 5, 5), Color(1, 1, 1));
    CHECK_THROWS_AS(project_canonical(pc, kBox, 16), EmptySceneError);
    pc.push_back(Vec3(0, 0, 0.3), Color(1, 1, 1));
    CHECK_THROWS_AS(project_canonical(pc, kBox, 4), InvalidArgument);
    const ViewSet views = project_canonical(pc, kBox, 16);
    CHECK_THROWS_AS(pixel_to_world(views[0], 16, 0), IndexError);
    CHECK_THROWS_AS(pixel_to_world(views[0], 0, -1), IndexError);
}

TEST_CASE("brute-force rasterizer equivalence, roundtrip and cross-view agreement") {
    std::mt19937_64 rng(2024);
    for (int scene = 0; scene < 40; ++scene) {
        const bool snap = scene % 2 == 1;
        const PointCloud pc = oracle::random_cloud(rng, kBox, 50 + 37 * scene, snap);
        const int r = scene % 3 == 0 ? 64 : 32;
        const ViewSet views = project_canonical(pc, kBox, r);
        for (const auto& view : views) {
            const auto ref = oracle::rasterize(pc, view.id, kBox, r);
            for (std::size_t k = 0; k < ref.winner.size(); ++k) {
                REQUIRE(view.source_index[k] == ref.winner[k]);
                REQUIRE(view.occupied[k] == (ref.winner[k] >= 0 ? 1 : 0));
                if (ref.winner[k] < 0) continue;
                REQUIRE(view.xyz[k] == pc.points[static_cast<std::size_t>(ref.winner[k])]);
                REQUIRE(view.depth[k] == ref.depth[k]);
                REQUIRE(view.depth[k] >= 0.0);
            }
            for (int v = 0; v < r; ++v) {
                for (int u = 0; u < r; ++u) {
                    const auto w = pixel_to_world(view, u, v);
                    if (!w) continue;
                    const auto back = world_to_pixel(view.id, kBox, r, *w);
                    REQUIRE(back.has_value());
                    REQUIRE(*back == Pixel{u, v});
                }
            }
        }
        // A point that wins in two views reads back identically from both.
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = a + 1; b < 3; ++b) {
                for (std::size_t k = 0; k < views[a].source_index.size(); ++k) {
                    const auto src = views[a].source_index[k];
                    if (src < 0) continue;
                    const auto px = world_to_pixel(views[b].id, kBox, r, pc.points[src]);
                    const auto kb = views[b].index(px->u, px->v);
                    if (views[b].source_index[kb] == src) REQUIRE(views[b].xyz[kb] == views[a].xyz[k]);
                }
            }
        }
    }
}

TEST_CASE("permuting the cloud changes winners only through tie-breaks") {
    std::mt19937_64 rng(5);
    const PointCloud pc = oracle::random_cloud(rng, kBox, 300);
    PointCloud rev;
    for (std::size_t i = pc.size(); i-- > 0;) rev.push_back(pc.points[i], pc.colors[i]);
    const ViewSet a = project_canonical(pc, kBox, 32);
    const ViewSet b = project_canonical(rev, kBox, 32);
    for (int i = 0; i < 3; ++i) {
        CHECK(a[i].occupied == b[i].occupied);
        for (std::size_t k = 0; k < a[i].xyz.size(); ++k) {
            if (a[i].occupied[k]) CHECK(a[i].xyz[k] == b[i].xyz[k]);
        }
    }
}

TEST_CASE("crop_zoom") {
    std::mt19937_64 rng(77);
    SUBCASE("cube covering the workspace equals project_canonical") {
        const WorkspaceBounds cube = WorkspaceBounds::cube(Vec3(0, 0, 0.3), 1.2);
        const PointCloud pc = oracle::random_cloud(rng, kBox, 400);
        const ViewSet a = crop_zoom(pc, cube.center(), 1.2, 32);
        const ViewSet b = project_canonical(pc, cube, 32);
        for (int i = 0; i < 3; ++i) {
            CHECK(a[i].source_index == b[i].source_index);
            CHECK(a[i].depth == b[i].depth);
        }
    }
    SUBCASE("inside cluster only") {
        PointCloud pc;
        const Vec3 c(0.1, 0.1, 0.3);
        std::uniform_real_distribution<double> near(-0.04, 0.04);
        for (int i = 0; i < 10; ++i) pc.push_back(c + Vec3(near(rng), near(rng), near(rng)), Color(1, 0, 0));
        for (int i = 0; i < 100; ++i) {
            Vec3 p;
            do {
                p = oracle::random_cloud(rng, kBox, 1).points[0];
            } while (oracle::inside(WorkspaceBounds::cube(c, 0.1), p));
            pc.push_back(p, Color(0, 0, 1));
        }
        const ViewSet views = crop_zoom(pc, c, 0.1, 64);
        std::set<std::int64_t> seen;
        for (const auto& v : views)
            for (auto s : v.source_index)
                if (s >= 0) seen.insert(s);
        for (auto s : seen) CHECK(s < 10);
        for (std::int64_t s = 0; s < 10; ++s) CHECK(seen.count(s) == 1);
    }
    SUBCASE("boundary point is included") {
        PointCloud pc;
        pc.push_back(Vec3(0.05, 0.0, 0.3), Color(1, 1, 1));
        const ViewSet views = crop_zoom(pc, Vec3(0.0, 0.0, 0.3), 0.1, 16);
        CHECK(views[0].occupied_count() == 1);
    }
    SUBCASE("empty crop carries the center") {
        PointCloud pc;
        pc.push_back(Vec3(0.3, 0.3, 0.3), Color(1, 1, 1));
        const Vec3 c(-0.3, -0.3, 0.1);
        try {
            crop_zoom(pc, c, 0.1, 16);
            FAIL("expected EmptyCropError");
        } catch (const EmptyCropError& e) {
            CHECK(e.center() == c);
        }
        CHECK_THROWS_AS(crop_zoom(pc, c, 0.0, 16), InvalidArgument);
        CHECK_THROWS_AS(crop_zoom(pc, Vec3(NAN, 0, 0), 0.1, 16), InvalidArgument);
    }
    SUBCASE("nested cubes show nested point sets") {
        const PointCloud pc = oracle::random_cloud(rng, kBox, 2000);
        const Vec3 c(0.05, -0.02, 0.35);
        auto shown = [&](double side) {
            std::set<std::int64_t> s;
            for (const auto& v : crop_zoom(pc, c, side, 64))
                for (auto i : v.source_index)
                    if (i >= 0) s.insert(i);
            return s;
        };
        const auto small = shown(0.15);
        for (auto i : small) CHECK(oracle::inside(WorkspaceBounds::cube(c, 0.4), pc.points[i]));
        CHECK(small.size() > 0);
    }
}
