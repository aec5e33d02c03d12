#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <cstdlib>

#include "c2f/config.hpp"
#include "c2f/errors.hpp"
#include "c2f/evaluate.hpp"
#include "c2f/planner.hpp"
#include "c2f/serialization.hpp"
#include "c2f/trajectory.hpp"

namespace py = pybind11;
using namespace c2f;
using geometry::Pixel;
using geometry::ViewId;
using geometry::ViewSet;
using geometry::WorkspaceBounds;

namespace {

using Triple = std::array<double, 3>;
using BoundsTuple = std::pair<Triple, Triple>;

Vec3 vec(const Triple& t) { return Vec3(t[0], t[1], t[2]); }

WorkspaceBounds bounds_of(const BoundsTuple& b) {
    WorkspaceBounds w{vec(b.first), vec(b.second)};
    w.validate();
    return w;
}

py::tuple tup(const Vec3& v) { return py::make_tuple(v.x(), v.y(), v.z()); }

py::object tup(const std::optional<Vec3>& v) { return v ? py::object(tup(*v)) : py::object(py::none()); }

py::tuple bounds_tuple(const WorkspaceBounds& b) { return py::make_tuple(tup(b.min), tup(b.max)); }

std::size_t view_index(const std::string& name) { return static_cast<std::size_t>(geometry::view_from_string(name)); }

// Canonical views of one observation, front/left/top.
struct Views {
    ViewSet set;

    const geometry::CanonicalView& at(const std::string& name) const { return set[view_index(name)]; }

    void require_pixels(const geometry::CanonicalView& v) const {
        if (v.occupied.empty()) throw InvalidArgument("views carry no pixel data");
    }

    py::array_t<float> rgb(const std::string& name) const {
        const auto& v = at(name);
        if (v.rgb.empty()) throw InvalidArgument("views carry no rgb data");
        py::array_t<float> out({v.resolution, v.resolution, 3});
        std::copy(v.rgb.begin(), v.rgb.end(), out.mutable_data());
        return out;
    }

    py::array_t<double> depth(const std::string& name) const {
        const auto& v = at(name);
        require_pixels(v);
        py::array_t<double> out({v.resolution, v.resolution});
        std::copy(v.depth.begin(), v.depth.end(), out.mutable_data());
        return out;
    }

    py::array_t<double> xyz(const std::string& name) const {
        const auto& v = at(name);
        require_pixels(v);
        py::array_t<double> out({v.resolution, v.resolution, 3});
        double* p = out.mutable_data();
        for (const auto& w : v.xyz) {
            *p++ = w.x();
            *p++ = w.y();
            *p++ = w.z();
        }
        return out;
    }

    py::array_t<bool> occupied(const std::string& name) const {
        const auto& v = at(name);
        require_pixels(v);
        py::array_t<bool> out({v.resolution, v.resolution});
        std::copy(v.occupied.begin(), v.occupied.end(), out.mutable_data());
        return out;
    }

    py::object pixel_to_world(const std::string& name, int u, int v) const {
        const auto& view = at(name);
        require_pixels(view);
        return tup(geometry::pixel_to_world(view, u, v));
    }

    std::map<std::string, std::pair<int, int>> world_to_pixel(const Triple& p) const {
        std::map<std::string, std::pair<int, int>> out;
        for (const auto& v : set) {
            if (const auto px = geometry::world_to_pixel(v.id, v.bounds, v.resolution, vec(p))) {
                out[std::string(geometry::to_string(v.id))] = {px->u, px->v};
            }
        }
        return out;
    }

    py::object fuse(const std::map<std::string, std::pair<int, int>>& pixels) const {
        std::array<Pixel, 3> px{};
        for (const auto id : geometry::kAllViews) {
            const auto it = pixels.find(std::string(geometry::to_string(id)));
            if (it == pixels.end()) throw InvalidArgument("fuse needs a pixel for every view");
            px[static_cast<std::size_t>(id)] = {it->second.first, it->second.second};
        }
        return tup(planner::fuse_pixels(set, px));
    }
};

Views project(py::array_t<double, py::array::c_style | py::array::forcecast> points,
              std::optional<py::array_t<float, py::array::c_style | py::array::forcecast>> colors,
              const BoundsTuple& bounds, int resolution) {
    if (points.ndim() != 2 || points.shape(1) != 3) throw ShapeError("points must have shape (N, 3)");
    const auto n = static_cast<std::size_t>(points.shape(0));
    if (colors && (colors->ndim() != 2 || colors->shape(0) != points.shape(0) || colors->shape(1) != 3)) {
        throw ShapeError("colors must have shape (N, 3)");
    }
    geometry::PointCloud cloud;
    cloud.reserve(n);
    const double* p = points.data();
    const float* c = colors ? colors->data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
        const Color col = c ? Color(c[3 * i], c[3 * i + 1], c[3 * i + 2]) : Color(1, 1, 1);
        cloud.push_back(Vec3(p[3 * i], p[3 * i + 1], p[3 * i + 2]), col);
    }
    return {geometry::project_canonical(cloud, bounds_of(bounds), resolution)};
}

py::object json_value(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::string dumps(const py::object& o) {
    if (py::isinstance<py::str>(o)) return o.cast<std::string>();
    return py::module_::import("json").attr("dumps")(o).cast<std::string>();
}

config::Config config_of(const py::object& o) {
    if (o.is_none()) return {};
    return config::config_from_json(nlohmann::json::parse(dumps(o)));
}

py::object evaluate(const py::object& cfg, std::optional<py::function> transport, const std::string& transport_kind,
                    const std::filesystem::path& root) {
    const auto c = config_of(cfg);
    config::validate(c);
    const auto suite = config::load_suite(c);
    auto policy = config::policy_options(c);
    auto options = config::evaluate_options(c);
    if (transport) {
        planner::WireOptions wire;
        wire.transport = transport_kind == "inline" ? planner::ViewTransport::inline_png : planner::ViewTransport::path;
        if (transport_kind != "inline" && transport_kind != "path") throw InvalidArgument("transport is 'path' or 'inline'");
        wire.root = root;
        auto fn = std::make_shared<py::function>(*transport);
        policy.planner_factory = [fn, wire](const bench::GeneratedEpisode&) {
            return std::make_unique<planner::WirePlanner>(
                [fn](const std::string& request) {
                    py::gil_scoped_acquire gil;
                    return (*fn)(request).cast<std::string>();
                },
                wire);
        };
    }
    bench::Report report;
    {
        py::gil_scoped_release release;
        report = bench::evaluate(suite, policy, options);
    }
    return json_value(bench::to_json(report));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Coarse-to-fine manipulation core: geometry, planner protocol, datasets and evaluation.";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    static py::exception<ParseError> parse_error(m, "ParseError", error.ptr());
    static py::exception<ProtocolViolation> protocol(m, "ProtocolViolation", error.ptr());
    static py::exception<DataError> data_error(m, "DataError", error.ptr());
    static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
    static py::exception<InvalidArgument> invalid(m, "InvalidArgument", error.ptr());
    static py::exception<OutOfBoundsError> out_of_bounds(m, "OutOfBoundsError", error.ptr());
    static py::exception<UnknownProgressError> unknown(m, "UnknownProgressError", error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ParseError& e) {
            py::object exc = py::reinterpret_borrow<py::object>(parse_error.ptr())(e.what());
            exc.attr("raw") = e.raw();
            py::set_error(parse_error, exc);
        } catch (const ProtocolViolation& e) {
            py::set_error(protocol, e.what());
        } catch (const DataError& e) {
            py::set_error(data_error, e.what());
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const InvalidArgument& e) {
            py::set_error(invalid, e.what());
        } catch (const OutOfBoundsError& e) {
            py::set_error(out_of_bounds, e.what());
        } catch (const UnknownProgressError& e) {
            py::set_error(unknown, e.what());
        } catch (const Error& e) {
            py::set_error(error, e.what());
        }
    });

    m.attr("INITIAL_STATE_SENTINEL") = planning::kInitialStateSentinel;
    m.attr("WIRE_VERSION") = planner::kWireVersion;
    m.attr("KEYPOINT_PIXEL_TOLERANCE") = planner::kKeypointPixelTolerance;
    m.attr("DEFAULT_WINDOW") = data::kDefaultWindow;
    m.attr("VIEWS") = py::make_tuple("front", "left", "top");

    py::class_<Views>(m, "Views")
        .def_property_readonly("resolution", [](const Views& v) { return v.set[0].resolution; })
        .def_property_readonly("bounds", [](const Views& v) { return bounds_tuple(v.set[0].bounds); })
        .def("rgb", &Views::rgb, py::arg("view"), "RGB in [0, 1], shape (R, R, 3).")
        .def("depth", &Views::depth, py::arg("view"))
        .def("xyz", &Views::xyz, py::arg("view"), "World point per pixel, NaN where empty.")
        .def("occupied", &Views::occupied, py::arg("view"))
        .def("pixel_to_world", &Views::pixel_to_world, py::arg("view"), py::arg("u"), py::arg("v"))
        .def("world_to_pixel", &Views::world_to_pixel, py::arg("point"),
             "Pixel per view as {name: (u, v)}; views the point misses are left out.")
        .def("fuse", &Views::fuse, py::arg("pixels"),
             "Mean world point of the occupied pixels in {name: (u, v)}, or None.");

    m.def("project_canonical", &project, py::arg("points"), py::arg("colors") = py::none(), py::arg("bounds"),
          py::arg("resolution"));
    m.def(
        "world_to_pixel",
        [](const std::string& view, const BoundsTuple& b, int resolution, const Triple& p)
            -> std::optional<std::pair<int, int>> {
            const auto px = geometry::world_to_pixel(geometry::view_from_string(view), bounds_of(b), resolution, vec(p));
            if (!px) return std::nullopt;
            return std::make_pair(px->u, px->v);
        },
        py::arg("view"), py::arg("bounds"), py::arg("resolution"), py::arg("point"));
    m.def(
        "store_views", [](const std::filesystem::path& root, const Views& v) { return io::store_views(root, v.set); },
        py::arg("root"), py::arg("views"), "Content-addressed save; returns the stem relative to root.");
    m.def(
        "load_views", [](const std::filesystem::path& stem) { return Views{io::load_views(stem)}; }, py::arg("stem"));

    m.def(
        "parse_round1_query",
        [](const std::string& t) { return json_value(planner::to_wire(planner::round1_query_from_wire(t))); },
        py::arg("text"));
    m.def(
        "parse_round1_response",
        [](const std::string& t) { return json_value(planner::to_wire(planner::round1_response_from_wire(t))); },
        py::arg("text"));
    m.def(
        "parse_round2_response",
        [](const std::string& t) { return json_value(planner::to_wire(planner::round2_response_from_wire(t))); },
        py::arg("text"));
    m.def(
        "parse_round2_query",
        [](const std::string& t, const std::filesystem::path& root) {
            const auto q = planner::round2_query_from_wire(t, root);
            py::dict d;
            d["subtask"] = q.subtask;
            d["previous"] = q.previous;
            return py::make_tuple(d, Views{q.views});
        },
        py::arg("text"), py::arg("root") = std::filesystem::path(),
        "Returns ({subtask, previous}, Views). Views referenced by path are read from root.");
    m.def(
        "round2_query",
        [](const Views& v, const std::vector<std::string>& subtask, const std::string& previous,
           const std::string& transport, const std::filesystem::path& root) {
            planner::WireOptions o;
            if (transport == "inline") {
                o.transport = planner::ViewTransport::inline_png;
            } else if (transport != "path") {
                throw InvalidArgument("transport is 'path' or 'inline'");
            }
            o.root = root;
            return planner::to_wire(planner::Round2Query{v.set, subtask, previous}, o).dump();
        },
        py::arg("views"), py::arg("subtask"), py::arg("previous") = std::string(planning::kInitialStateSentinel),
        py::arg("transport") = "path", py::arg("root") = std::filesystem::path());
    m.def(
        "validate_round2_response",
        [](const std::string& response, const std::string& query, const std::filesystem::path& root, int tolerance) {
            planner::validate_response(planner::round2_response_from_wire(response),
                                       planner::round2_query_from_wire(query, root), tolerance);
        },
        py::arg("response"), py::arg("query"), py::arg("root") = std::filesystem::path(),
        py::arg("tolerance") = planner::kKeypointPixelTolerance,
        "Raises ProtocolViolation when the keypoint disagrees with its pixels.");
    m.def(
        "make_keypoint",
        [](const Views& v, const Triple& world) {
            planner::Round2Response r;
            r.keypoint = planner::make_keypoint(vec(world), v.set);
            return json_value(planner::to_wire(r)["keypoint"]);
        },
        py::arg("views"), py::arg("world"));

    m.def(
        "validate_plan",
        [](const py::object& plan) {
            const auto p = planning::plan_from_json(nlohmann::json::parse(dumps(plan)));
            p.validate();
            return json_value(planning::to_json(p));
        },
        py::arg("plan"));

    m.def(
        "resolve_config",
        [](std::optional<std::filesystem::path> file, const std::map<std::string, std::string>& flags) {
            return json_value(config::to_json(config::resolve(file, flags, std::getenv(config::kSeedEnv))));
        },
        py::arg("file") = py::none(), py::arg("flags") = std::map<std::string, std::string>{},
        "Default, then file, then the seed environment variable, then flags.");
    m.def(
        "build_dataset",
        [](const std::filesystem::path& traj, const std::filesystem::path& out, int m) {
            data::DatasetOptions o;
            o.m = m;
            nlohmann::json manifest;
            {
                py::gil_scoped_release release;
                manifest = data::build_dataset(traj, out, o);
            }
            return json_value(manifest);
        },
        py::arg("traj_dir"), py::arg("out"), py::arg("m") = data::kDefaultWindow);
    m.def("evaluate", &evaluate, py::arg("config") = py::none(), py::arg("planner") = py::none(),
          py::arg("transport") = "path", py::arg("root") = std::filesystem::path(),
          "Runs the benchmark and returns the report. `planner` maps a wire request string to a "
          "response string and replaces the scripted planner.");
}
