#include "cfexplain/image.hpp"

#include <cmath>
#include <string>

#include "cfexplain/error.hpp"

namespace cfexplain {

void validate_unit_image(const Image& img, const char* what) {
  if (img.height <= 0 || img.width <= 0 || img.size() != static_cast<std::size_t>(img.height) * img.width) {
    throw ArgumentError(std::string(what) + ": empty or malformed image");
  }
  if (img.height != img.width) {
    throw ArgumentError(std::string(what) + ": image is not square (" + std::to_string(img.height) +
                        "x" + std::to_string(img.width) + ")");
  }
  for (double v : img.pixels) {
    if (!std::isfinite(v)) throw ArgumentError(std::string(what) + ": non-finite pixel");
    if (v < 0.0 || v > 1.0) throw ArgumentError(std::string(what) + ": pixel outside [0,1]");
  }
}

}  // namespace cfexplain
