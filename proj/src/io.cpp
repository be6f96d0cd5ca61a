#include "cfexplain/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "cfexplain/error.hpp"

namespace cfexplain::io {
namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

// Reads a PNG into rows of 8- or 16-bit samples with the given color type.
struct PngData {
  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> bytes;
  std::size_t row_bytes = 0;
};

PngData read_png(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw LoadError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  PngData out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (out.bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.row_bytes = png_get_rowbytes(png, info);
  out.bytes.resize(out.row_bytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = out.bytes.data() + r * out.row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const fs::path& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    FilePtr f = open_file(tmp, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("PNG encoding failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
      png_write_row(png, const_cast<png_bytep>(bytes.data() + r * row_bytes));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  fs::rename(tmp, path);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

Image read_png_gray(const fs::path& path) {
  PngData png = read_png(path);
  if (png.color_type != PNG_COLOR_TYPE_GRAY) {
    throw LoadError("PNG is not single-channel grayscale: " + path.string());
  }
  Image img(png.height, png.width);
  for (int r = 0; r < png.height; ++r) {
    const std::uint8_t* row = png.bytes.data() + r * png.row_bytes;
    for (int c = 0; c < png.width; ++c) {
      if (png.bit_depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, row + 2 * c, 2);
        img(r, c) = v / 65535.0;
      } else {
        img(r, c) = row[c] / 255.0;
      }
    }
  }
  return img;
}

void write_png_gray(const fs::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = to_byte(img.pixels[i]);
  write_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, bytes, img.width);
}

void write_png_rgb(const fs::path& path, const RgbImage& img) {
  write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, img.rgb,
            static_cast<std::size_t>(img.width) * 3);
}

RgbImage read_png_rgb(const fs::path& path) {
  PngData png = read_png(path);
  if (png.color_type != PNG_COLOR_TYPE_RGB || png.bit_depth != 8) {
    throw LoadError("PNG is not 8-bit RGB: " + path.string());
  }
  RgbImage img{png.height, png.width, {}};
  img.rgb.reserve(static_cast<std::size_t>(png.height) * png.width * 3);
  for (int r = 0; r < png.height; ++r) {
    const std::uint8_t* row = png.bytes.data() + r * png.row_bytes;
    img.rgb.insert(img.rgb.end(), row, row + png.width * 3);
  }
  return img;
}

fs::path sidecar_path(const fs::path& raw) {
  fs::path p = raw;
  return p.replace_extension(".json");
}

void write_raw_f32(const fs::path& path, const Image& img, const nlohmann::json& extra) {
  std::string bytes(img.size() * 4, '\0');
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float v = static_cast<float>(img.pixels[i]);
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(v));
    std::memcpy(bytes.data() + 4 * i, &bits, 4);
  }
  nlohmann::json meta = extra;
  meta["height"] = img.height;
  meta["width"] = img.width;
  write_file_atomic(path, bytes);
  write_json(sidecar_path(path), meta);
}

Image read_raw_f32(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  if (!fs::exists(side)) throw LoadError("missing sidecar " + side.string());
  const nlohmann::json meta = read_json(side);
  if (!meta.contains("height") || !meta.contains("width")) {
    throw LoadError("sidecar lacks height/width: " + side.string());
  }
  const int h = meta.at("height").get<int>();
  const int w = meta.at("width").get<int>();
  if (h <= 0 || w <= 0) throw LoadError("sidecar has nonpositive size: " + side.string());
  const std::string bytes = read_file(path);
  if (bytes.size() != static_cast<std::size_t>(h) * w * 4) {
    throw LoadError("raw image " + path.string() + " has " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(static_cast<std::size_t>(h) * w * 4));
  }
  Image img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    img.pixels[i] = std::bit_cast<float>(to_little(bits));
  }
  return img;
}

Image read_image(const fs::path& path) {
  if (!fs::exists(path)) throw LoadError("image not found: " + path.string());
  std::string ext = path.extension().string();
  for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return read_png_gray(path);
  return read_raw_f32(path);
}

}  // namespace cfexplain::io
