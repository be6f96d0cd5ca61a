// File I/O helpers: atomic writes, PNG and raw float32 images.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfexplain/image.hpp"
#include "json.hpp"

namespace cfexplain::io {

/// Writes to `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// Pretty-printed with a trailing newline; key order is sorted so reruns are
/// byte-identical.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// 8- or 16-bit grayscale PNG, scaled to [0,1] by the bit depth maximum.
Image read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Image& img);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};
void write_png_rgb(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_png_rgb(const std::filesystem::path& path);

/// Sidecar path for a raw float32 file: same stem with a `.json` extension.
std::filesystem::path sidecar_path(const std::filesystem::path& raw);

/// Flat little-endian float32 pixels plus `{"height":H,"width":W, ...extra}`.
void write_raw_f32(const std::filesystem::path& path, const Image& img,
                   const nlohmann::json& extra = nlohmann::json::object());
/// Values are returned as stored; no range check.
Image read_raw_f32(const std::filesystem::path& path);

/// Dispatches on extension: `.png` or raw float32 otherwise. PNGs are scaled
/// to [0,1]; raw values are returned as stored.
Image read_image(const std::filesystem::path& path);

}  // namespace cfexplain::io
