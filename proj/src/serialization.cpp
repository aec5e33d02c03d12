#include "c2f/serialization.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace c2f::io {

namespace fs = std::filesystem;
using geometry::CanonicalView;
using geometry::PointCloud;
using geometry::ViewId;
using geometry::ViewSet;
using geometry::WorkspaceBounds;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', '2', 'F', 'C', 'H', 'U', 'N', 'K'};

template <typename T>
void put_le(Bytes& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xff));
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return value;
    }

    std::string string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw DataError("chunked file truncated");
        }
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
}

Bytes encode_chunks(std::span<const Tensor> tensors) {
    Bytes out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kChunkVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.numel() != t.data.size()) {
            throw ShapeError("tensor '" + t.name + "' data does not match its dims");
        }
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put_le<std::uint64_t>(out, d);
        for (float f : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

std::vector<Tensor> decode_chunks(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    if (r.string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw DataError("not a chunked file (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kChunkVersion) {
        throw DataError("unsupported chunked file version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>();
    std::vector<Tensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t c = 0; c < count; ++c) {
        Tensor t;
        t.name = r.string(r.get<std::uint32_t>());
        const auto ndim = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < ndim; ++d) t.dims.push_back(r.get<std::uint64_t>());
        const std::size_t n = t.numel();
        r.need(4 * n);
        t.data.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(r.get<std::uint32_t>());
        tensors.push_back(std::move(t));
    }
    if (!r.done()) {
        throw DataError("trailing bytes after last chunk");
    }
    return tensors;
}

Bytes read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const fs::path& path) {
    const Bytes b = read_file(path);
    try {
        return json::parse(b.begin(), b.end());
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_chunks(const fs::path& path, std::span<const Tensor> tensors) {
    write_file(path, encode_chunks(tensors));
}

std::vector<Tensor> read_chunks(const fs::path& path) { return decode_chunks(read_file(path)); }

const Tensor& find_tensor(std::span<const Tensor> tensors, std::string_view name) {
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [&](const Tensor& t) { return t.name == name; });
    if (it == tensors.end()) {
        throw DataError("missing chunk '" + std::string(name) + "'");
    }
    return *it;
}

json to_json(const WorkspaceBounds& b) {
    return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

WorkspaceBounds bounds_from_json(const json& j) {
    WorkspaceBounds b;
    for (int i = 0; i < 3; ++i) {
        b.min[i] = j.at("min").at(i).get<double>();
        b.max[i] = j.at("max").at(i).get<double>();
    }
    b.validate();
    return b;
}

json view_pose_json(ViewId id) {
    const auto pose = geometry::view_pose(id);
    auto axis = [](const geometry::AxisRef& a) { return json{{"axis", a.index}, {"sign", a.sign}}; };
    return {{"id", std::string(geometry::to_string(id))},
            {"u", axis(pose.u)},
            {"v", axis(pose.v)},
            {"forward", axis(pose.forward)}};
}

std::vector<Tensor> cloud_tensors(const PointCloud& cloud) {
    const std::uint64_t n = cloud.size();
    Tensor pts{"points", {n, 3}, {}}, cols{"colors", {n, 3}, {}}, val{"valid", {n}, {}};
    pts.data.reserve(3 * n);
    cols.data.reserve(3 * n);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            pts.data.push_back(static_cast<float>(cloud.points[i][k]));
            cols.data.push_back(cloud.colors[i][k]);
        }
        val.data.push_back(cloud.valid[i] ? 1.0f : 0.0f);
    }
    return {pts, cols, val};
}

PointCloud cloud_from_tensors(std::span<const Tensor> tensors) {
    const auto& pts = find_tensor(tensors, "points");
    const auto& cols = find_tensor(tensors, "colors");
    const auto& val = find_tensor(tensors, "valid");
    const std::size_t n = val.data.size();
    if (pts.data.size() != 3 * n || cols.data.size() != 3 * n) {
        throw DataError("point cloud chunks have inconsistent lengths");
    }
    PointCloud cloud;
    cloud.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cloud.push_back(Vec3(pts.data[3 * i], pts.data[3 * i + 1], pts.data[3 * i + 2]),
                        Color(cols.data[3 * i], cols.data[3 * i + 1], cols.data[3 * i + 2]),
                        val.data[i] != 0.0f);
    }
    return cloud;
}

void save_cloud(const fs::path& stem, const PointCloud& cloud) {
    const auto tensors = cloud_tensors(cloud);
    write_chunks(fs::path(stem).replace_extension(".c2fb"), tensors);
}

PointCloud load_cloud(const fs::path& stem) {
    return cloud_from_tensors(read_chunks(fs::path(stem).replace_extension(".c2fb")));
}

std::vector<Tensor> view_tensors(const CanonicalView& view) {
    const std::string prefix = std::string(geometry::to_string(view.id)) + "/";
    const std::uint64_t r = static_cast<std::uint64_t>(view.resolution);
    const std::size_t n = static_cast<std::size_t>(r * r);
    Tensor rgb{prefix + "rgb", {r, r, 3}, view.rgb};
    Tensor depth{prefix + "depth", {r, r}, {}};
    Tensor xyz{prefix + "xyz", {r, r, 3}, {}};
    Tensor occ{prefix + "occupancy", {r, r}, {}};
    Tensor src{prefix + "source_index", {r, r}, {}};
    depth.data.reserve(n);
    xyz.data.reserve(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
        depth.data.push_back(static_cast<float>(view.depth[i]));
        for (int k = 0; k < 3; ++k) xyz.data.push_back(static_cast<float>(view.xyz[i][k]));
        occ.data.push_back(view.occupied[i] ? 1.0f : 0.0f);
        src.data.push_back(static_cast<float>(view.source_index[i]));
    }
    return {rgb, depth, xyz, occ, src};
}

Bytes encode_view(const CanonicalView& view) {
    const auto tensors = view_tensors(view);
    return encode_chunks(tensors);
}

namespace {

json views_sidecar(const ViewSet& views, const std::string& binary_name) {
    json j;
    j["format"] = "c2f.views";
    j["version"] = 1;
    j["binary"] = binary_name;
    j["resolution"] = views[0].resolution;
    j["bounds"] = to_json(views[0].bounds);
    j["views"] = json::array();
    for (const auto& v : views) j["views"].push_back(view_pose_json(v.id));
    return j;
}

}  // namespace

void save_views(const fs::path& stem, const ViewSet& views) {
    std::vector<Tensor> all;
    for (const auto& v : views) {
        auto t = view_tensors(v);
        all.insert(all.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
    }
    const fs::path bin = fs::path(stem).replace_extension(".c2fb");
    write_chunks(bin, all);
    write_json(fs::path(stem).replace_extension(".json"), views_sidecar(views, bin.filename().string()));
}

ViewSet load_views(const fs::path& stem) {
    const json meta = read_json(fs::path(stem).replace_extension(".json"));
    if (meta.value("format", "") != "c2f.views") {
        throw DataError(stem.string() + " is not a views sidecar");
    }
    const int r = meta.at("resolution").get<int>();
    const WorkspaceBounds bounds = bounds_from_json(meta.at("bounds"));
    const auto tensors = read_chunks(fs::path(stem).replace_extension(".c2fb"));
    ViewSet views;
    for (std::size_t k = 0; k < 3; ++k) {
        const ViewId id = geometry::kAllViews[k];
        const std::string prefix = std::string(geometry::to_string(id)) + "/";
        auto& v = views[k];
        v.id = id;
        v.resolution = r;
        v.bounds = bounds;
        const std::size_t n = static_cast<std::size_t>(r) * r;
        v.rgb = find_tensor(tensors, prefix + "rgb").data;
        const auto& depth = find_tensor(tensors, prefix + "depth").data;
        const auto& xyz = find_tensor(tensors, prefix + "xyz").data;
        const auto& occ = find_tensor(tensors, prefix + "occupancy").data;
        const auto& src = find_tensor(tensors, prefix + "source_index").data;
        if (v.rgb.size() != 3 * n || depth.size() != n || xyz.size() != 3 * n || occ.size() != n ||
            src.size() != n) {
            throw DataError("view chunks do not match the declared resolution");
        }
        v.depth.assign(depth.begin(), depth.end());
        v.xyz.resize(n);
        v.occupied.resize(n);
        v.source_index.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            v.xyz[i] = Vec3(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
            v.occupied[i] = occ[i] != 0.0f;
            v.source_index[i] = static_cast<std::int64_t>(src[i]);
        }
    }
    return views;
}

void save_heatmaps(const fs::path& stem, const keypoint::HeatmapSet& heatmaps,
                   const WorkspaceBounds& bounds) {
    std::vector<Tensor> tensors;
    const auto r = static_cast<std::uint64_t>(heatmaps[0].resolution);
    for (const auto& h : heatmaps) {
        Tensor t{"heatmap/" + std::string(geometry::to_string(h.view)), {r, r}, {}};
        t.data.assign(h.values.begin(), h.values.end());
        tensors.push_back(std::move(t));
    }
    const fs::path bin = fs::path(stem).replace_extension(".c2fb");
    write_chunks(bin, tensors);
    json j;
    j["format"] = "c2f.heatmaps";
    j["version"] = 1;
    j["binary"] = bin.filename().string();
    j["resolution"] = heatmaps[0].resolution;
    j["bounds"] = to_json(bounds);
    j["views"] = json::array();
    for (const auto& h : heatmaps) j["views"].push_back(view_pose_json(h.view));
    write_json(fs::path(stem).replace_extension(".json"), j);
}

keypoint::HeatmapSet load_heatmaps(const fs::path& stem, WorkspaceBounds* bounds) {
    const json meta = read_json(fs::path(stem).replace_extension(".json"));
    if (meta.value("format", "") != "c2f.heatmaps") {
        throw DataError(stem.string() + " is not a heatmap sidecar");
    }
    if (bounds) *bounds = bounds_from_json(meta.at("bounds"));
    const int r = meta.at("resolution").get<int>();
    const auto tensors = read_chunks(fs::path(stem).replace_extension(".c2fb"));
    keypoint::HeatmapSet out;
    for (std::size_t k = 0; k < 3; ++k) {
        const ViewId id = geometry::kAllViews[k];
        const auto& t = find_tensor(tensors, "heatmap/" + std::string(geometry::to_string(id)));
        if (t.data.size() != static_cast<std::size_t>(r) * r) {
            throw DataError("heatmap chunk does not match the declared resolution");
        }
        out[k] = keypoint::Heatmap(id, r);
        out[k].values.assign(t.data.begin(), t.data.end());
    }
    return out;
}

std::vector<std::uint8_t> view_rgb8(const CanonicalView& view) {
    std::vector<std::uint8_t> out(view.rgb.size());
    for (std::size_t i = 0; i < view.rgb.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(view.rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    return out;
}

std::vector<std::uint8_t> heatmap_overlay_rgb8(const CanonicalView* view,
                                               const keypoint::Heatmap& heatmap) {
    const int r = heatmap.resolution;
    const std::size_t n = static_cast<std::size_t>(r) * r;
    std::vector<std::uint8_t> out(3 * n, 0);
    if (view && view->resolution == r) out = view_rgb8(*view);
    const double peak = *std::max_element(heatmap.values.begin(), heatmap.values.end());
    for (std::size_t i = 0; i < n; ++i) {
        const double a = peak > 0.0 ? heatmap.values[i] / peak : 0.0;
        // Blend toward red in proportion to the normalized score.
        out[3 * i] = static_cast<std::uint8_t>(std::lround(out[3 * i] * (1.0 - a) + 255.0 * a));
        out[3 * i + 1] = static_cast<std::uint8_t>(std::lround(out[3 * i + 1] * (1.0 - a)));
        out[3 * i + 2] = static_cast<std::uint8_t>(std::lround(out[3 * i + 2] * (1.0 - a)));
    }
    const auto m = heatmap.argmax();
    for (int d = -2; d <= 2; ++d) {
        for (const auto& [u, v] : {std::pair{m.u + d, m.v}, std::pair{m.u, m.v + d}}) {
            if (u < 0 || v < 0 || u >= r || v >= r) continue;
            const std::size_t i = static_cast<std::size_t>(v) * r + u;
            out[3 * i] = 0;
            out[3 * i + 1] = 255;
            out[3 * i + 2] = 0;
        }
    }
    return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char kAlphabet[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve(4 * ((bytes.size() + 2) / 3));
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t w = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(w >> 18) & 63];
        out += kAlphabet[(w >> 12) & 63];
        out += kAlphabet[(w >> 6) & 63];
        out += kAlphabet[w & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t w = bytes[i] << 16;
        if (rest == 2) w |= bytes[i + 1] << 8;
        out += kAlphabet[(w >> 18) & 63];
        out += kAlphabet[(w >> 12) & 63];
        out += rest == 2 ? kAlphabet[(w >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

Bytes base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) {
        throw DataError("base64 input length is not a multiple of 4");
    }
    Bytes out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int q[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                q[k] = 0;
                ++pad;
                continue;
            }
            q[k] = value(c);
            if (q[k] < 0 || pad > 0) throw DataError("invalid base64 input");
        }
        const std::uint32_t w = (q[0] << 18) | (q[1] << 12) | (q[2] << 6) | q[3];
        out.push_back(static_cast<std::uint8_t>(w >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((w >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(w & 0xff));
    }
    return out;
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Concurrent writers of the same hash write identical bytes, so each writes a private temp
// name and renames into place.
std::string store_views(const fs::path& root, const ViewSet& views, const std::string& tmp_tag) {
    Bytes all;
    for (const auto& v : views) {
        const auto b = encode_view(v);
        all.insert(all.end(), b.begin(), b.end());
    }
    const std::string hash = content_hash(all);
    const fs::path stem = root / "views" / hash;
    if (!fs::exists(fs::path(stem).replace_extension(".json"))) {
        fs::create_directories(root / "views");
        const fs::path tmp = root / "views" / (".tmp" + tmp_tag + "_" + hash);
        std::vector<Tensor> all_tensors;
        for (const auto& v : views) {
            auto t = view_tensors(v);
            all_tensors.insert(all_tensors.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
        }
        write_chunks(fs::path(tmp).replace_extension(".c2fb"), all_tensors);
        // The sidecar names the final binary, not the temporary one.
        write_json(fs::path(tmp).replace_extension(".json"), views_sidecar(views, hash + ".c2fb"));
        fs::rename(fs::path(tmp).replace_extension(".c2fb"), fs::path(stem).replace_extension(".c2fb"));
        fs::rename(fs::path(tmp).replace_extension(".json"), fs::path(stem).replace_extension(".json"));
    }
    return "views/" + hash;
}

}  // namespace c2f::io
