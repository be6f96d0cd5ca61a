// Single-channel 2-D image with double-precision pixels.
#pragma once

#include <cstddef>
#include <vector>

namespace cfexplain {

struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  double& operator()(int r, int c) {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  double operator()(int r, int c) const {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width;
  }
  bool operator==(const Image&) const = default;
};

/// Throws ArgumentError unless the image is square, nonempty, finite and
/// within [0,1]. `what` prefixes the message.
void validate_unit_image(const Image& img, const char* what);

}  // namespace cfexplain
