#include <algorithm>

#include "c2f/errors.hpp"
#include "c2f/planner.hpp"
#include "c2f/serialization.hpp"

namespace c2f::planner {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "c2f.planner";

ordered_json envelope(int round, const char* kind) {
    ordered_json j;
    j["format"] = kFormat;
    j["version"] = kWireVersion;
    j["round"] = round;
    j["kind"] = kind;
    return j;
}

json parse_envelope(const std::string& text, int round, const char* kind) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("planner message is not JSON: ") + e.what(), text);
    }
    if (!j.is_object() || j.value("format", "") != kFormat) throw ParseError("not a planner message", text);
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kWireVersion) {
        throw ParseError("unsupported planner wire version", text);
    }
    if (j.value("round", 0) != round || j.value("kind", "") != kind) {
        throw ParseError("expected a round " + std::to_string(round) + " " + kind, text);
    }
    return j;
}

ordered_json pixel_json(const Pixel& p) { return ordered_json::array({p.u, p.v}); }

Pixel pixel_from(const json& j) {
    if (!j.is_array() || j.size() != 2) throw json::type_error::create(302, "pixel must be [u, v]", &j);
    return {j[0].get<int>(), j[1].get<int>()};
}

std::string view_name(std::size_t k) { return std::string(geometry::to_string(geometry::kAllViews[k])); }

std::string views_hash(const ViewSet& views) {
    io::Bytes all;
    for (const auto& v : views) {
        const auto b = io::encode_view(v);
        all.insert(all.end(), b.begin(), b.end());
    }
    return io::content_hash(all);
}

SubTask subtask_from(const json& j) {
    SubTask s;
    for (const auto& step : j) {
        s.push_back(step.get<std::string>());
        if (s.back().empty()) throw json::type_error::create(302, "empty step instruction", &j);
    }
    return s;
}

template <typename F>
auto guarded(const std::string& text, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed planner message: ") + e.what(), text);
    } catch (const DataError& e) {
        throw ParseError(std::string("planner message references bad data: ") + e.what(), text);
    }
}

}  // namespace

ordered_json to_wire(const Round1Query& q) {
    auto j = envelope(1, "query");
    j["task"] = q.task;
    j["previous"] = q.previous;
    return j;
}

ordered_json to_wire(const Round1Response& r) {
    auto j = envelope(1, "response");
    j["subtask"] = r.subtask;
    return j;
}

ordered_json to_wire(const Round2Query& q, const WireOptions& options) {
    auto j = envelope(2, "query");
    const auto& frame = q.views[0];
    ordered_json views;
    views["resolution"] = frame.resolution;
    views["bounds"] = io::to_json(frame.bounds);
    const bool has_pixels = !frame.rgb.empty();
    if (!has_pixels) {
        views["transport"] = "none";
    } else if (options.transport == ViewTransport::inline_png) {
        views["transport"] = "inline_png";
        ordered_json images;
        for (std::size_t k = 0; k < 3; ++k) {
            const auto png = io::encode_png_rgb(q.views[k].resolution, q.views[k].resolution, io::view_rgb8(q.views[k]));
            images[view_name(k)] = io::base64_encode(png);
        }
        views["images"] = images;
    } else {
        views["transport"] = "path";
        views["ref"] = options.root.empty() ? "views/" + views_hash(q.views) : io::store_views(options.root, q.views);
    }
    j["views"] = views;
    j["subtask"] = q.subtask;
    j["previous"] = q.previous;
    return j;
}

ordered_json to_wire(const Round2Response& r) {
    auto j = envelope(2, "response");
    ordered_json objects = ordered_json::array();
    for (const auto& o : r.objects) {
        ordered_json pixels;
        for (std::size_t k = 0; k < 3; ++k) {
            pixels[view_name(k)] = o.pixels[k] ? pixel_json(*o.pixels[k]) : ordered_json(nullptr);
        }
        objects.push_back({{"name", o.name}, {"pixels", pixels}});
    }
    j["objects"] = objects;
    j["instruction"] = r.instruction;
    ordered_json pixels;
    for (std::size_t k = 0; k < 3; ++k) pixels[view_name(k)] = pixel_json(r.keypoint.pixels[k]);
    j["keypoint"] = {{"pixels", pixels},
                     {"world", {r.keypoint.world.x(), r.keypoint.world.y(), r.keypoint.world.z()}}};
    return j;
}

Round1Query round1_query_from_wire(const std::string& text) {
    const json j = parse_envelope(text, 1, "query");
    return guarded(text, [&] {
        Round1Query q{j.at("task").get<std::string>(), j.at("previous").get<std::string>()};
        if (q.task.empty()) throw ParseError("empty task description", text);
        return q;
    });
}

Round1Response round1_response_from_wire(const std::string& text) {
    const json j = parse_envelope(text, 1, "response");
    return guarded(text, [&] { return Round1Response{subtask_from(j.at("subtask"))}; });
}

Round2Query round2_query_from_wire(const std::string& text, const std::filesystem::path& root) {
    const json j = parse_envelope(text, 2, "query");
    return guarded(text, [&] {
        Round2Query q;
        const json& v = j.at("views");
        const int r = v.at("resolution").get<int>();
        const auto bounds = io::bounds_from_json(v.at("bounds"));
        const std::string transport = v.at("transport").get<std::string>();
        if (transport == "path") {
            q.views = io::load_views(root / v.at("ref").get<std::string>());
        } else if (transport == "inline_png" || transport == "none") {
            q.views = view_frame(bounds, r);
            if (transport == "inline_png") {
                for (std::size_t k = 0; k < 3; ++k) {
                    int w = 0, h = 0;
                    const auto png = io::base64_decode(v.at("images").at(view_name(k)).get<std::string>());
                    const auto rgb = io::decode_png_rgb(png, &w, &h);
                    if (w != r || h != r) throw ParseError("inline view size does not match the resolution", text);
                    q.views[k].rgb.resize(rgb.size());
                    std::transform(rgb.begin(), rgb.end(), q.views[k].rgb.begin(),
                                   [](std::uint8_t c) { return static_cast<float>(c) / 255.0f; });
                }
            }
        } else {
            throw ParseError("unknown view transport '" + transport + "'", text);
        }
        q.subtask = subtask_from(j.at("subtask"));
        q.previous = j.at("previous").get<std::string>();
        return q;
    });
}

Round2Response round2_response_from_wire(const std::string& text) {
    const json j = parse_envelope(text, 2, "response");
    return guarded(text, [&] {
        Round2Response r;
        for (const auto& o : j.at("objects")) {
            ObjectPixels op;
            op.name = o.at("name").get<std::string>();
            for (std::size_t k = 0; k < 3; ++k) {
                const json& p = o.at("pixels").at(view_name(k));
                if (!p.is_null()) op.pixels[k] = pixel_from(p);
            }
            r.objects.push_back(std::move(op));
        }
        r.instruction = j.at("instruction").get<std::string>();
        const json& kp = j.at("keypoint");
        for (std::size_t k = 0; k < 3; ++k) r.keypoint.pixels[k] = pixel_from(kp.at("pixels").at(view_name(k)));
        const json& w = kp.at("world");
        if (!w.is_array() || w.size() != 3) throw ParseError("keypoint world must be [x, y, z]", text);
        r.keypoint.world = Vec3(w[0].get<double>(), w[1].get<double>(), w[2].get<double>());
        return r;
    });
}

WirePlanner::WirePlanner(Transport transport, WireOptions options)
    : transport_(std::move(transport)), options_(std::move(options)) {
    if (!transport_) throw InvalidArgument("wire planner needs a transport");
}

Round1Response WirePlanner::round1(const Round1Query& query) {
    return round1_response_from_wire(transport_(to_wire(query).dump()));
}

Round2Response WirePlanner::round2(const Round2Query& query) {
    return round2_response_from_wire(transport_(to_wire(query, options_).dump()));
}

}  // namespace c2f::planner
