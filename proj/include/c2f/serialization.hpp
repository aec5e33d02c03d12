#pragma once

// Shared on-disk formats.
//
// Chunked binary file (".c2fb"), all integers little-endian:
//
//   magic     8 bytes  "C2FCHUNK"
//   version   u32      1
//   count     u32      number of chunks
//   per chunk:
//     name_len u32, name (UTF-8, name_len bytes)
//     ndim     u32, dims (ndim x u64)
//     data     prod(dims) x f32, row-major
//
// Structured metadata (poses, bounds, view ids) travels in a JSON sidecar next to the
// binary file. PNG export is for inspection only.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/geometry.hpp"
#include "c2f/keypoint.hpp"

namespace c2f::io {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kChunkVersion = 1;

struct Tensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    std::size_t numel() const;
};

Bytes encode_chunks(std::span<const Tensor> tensors);
std::vector<Tensor> decode_chunks(std::span<const std::uint8_t> bytes);
void write_chunks(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> read_chunks(const std::filesystem::path& path);

/// Throws DataError when no chunk carries `name`.
const Tensor& find_tensor(std::span<const Tensor> tensors, std::string_view name);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with sorted keys, trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json to_json(const geometry::WorkspaceBounds& bounds);
geometry::WorkspaceBounds bounds_from_json(const nlohmann::json& j);
nlohmann::json view_pose_json(geometry::ViewId id);

std::vector<Tensor> cloud_tensors(const geometry::PointCloud& cloud);
geometry::PointCloud cloud_from_tensors(std::span<const Tensor> tensors);
void save_cloud(const std::filesystem::path& stem, const geometry::PointCloud& cloud);
geometry::PointCloud load_cloud(const std::filesystem::path& stem);

std::vector<Tensor> view_tensors(const geometry::CanonicalView& view);
/// Writes `<stem>.c2fb` and `<stem>.json`.
void save_views(const std::filesystem::path& stem, const geometry::ViewSet& views);
geometry::ViewSet load_views(const std::filesystem::path& stem);
Bytes encode_view(const geometry::CanonicalView& view);

/// Saves `views` under `root`/views/<content hash> unless already present and returns the
/// relative stem "views/<hash>". Safe for concurrent writers that use distinct `tmp_tag`s.
std::string store_views(const std::filesystem::path& root, const geometry::ViewSet& views,
                        const std::string& tmp_tag = "");

void save_heatmaps(const std::filesystem::path& stem, const keypoint::HeatmapSet& heatmaps,
                   const geometry::WorkspaceBounds& bounds);
keypoint::HeatmapSet load_heatmaps(const std::filesystem::path& stem,
                                   geometry::WorkspaceBounds* bounds = nullptr);

/// 8-bit RGB PNG.
Bytes encode_png_rgb(int width, int height, std::span<const std::uint8_t> rgb);
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   std::span<const std::uint8_t> rgb);
/// Width and height from the IHDR chunk; throws DataError on malformed input.
/// Any PNG decoded to 8-bit RGB.
std::vector<std::uint8_t> decode_png_rgb(std::span<const std::uint8_t> png, int* width = nullptr,
                                         int* height = nullptr);
std::pair<int, int> png_dimensions(std::span<const std::uint8_t> png);

/// RGB channel of a view as 8-bit pixels.
std::vector<std::uint8_t> view_rgb8(const geometry::CanonicalView& view);
/// Heatmap rendered over the view's RGB, with a marker at the argmax pixel.
std::vector<std::uint8_t> heatmap_overlay_rgb8(const geometry::CanonicalView* view,
                                               const keypoint::Heatmap& heatmap);

std::string base64_encode(std::span<const std::uint8_t> bytes);
Bytes base64_decode(std::string_view text);

/// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string content_hash(std::span<const std::uint8_t> bytes);

}  // namespace c2f::io
