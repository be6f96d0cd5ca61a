// Dense float tensor in NCHW layout.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cfexplain {

/// Storage aligned to the widest SIMD width Eigen uses, so vectorized kernels
/// take the same code path (and rounding) regardless of where memory lands.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float* sample(int n) { return data_.data() + n * shape_.sample_size(); }
  const float* sample(int n) const {
    return data_.data() + n * shape_.sample_size();
  }

  float& at(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
                     shape_.w + w];
  }
  float at(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
                     shape_.w + w];
  }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  void fill(float v);
  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void add_(const Tensor& other);

 private:
  Shape shape_{0, 0, 0, 0};
  FloatBuffer data_;
};

}  // namespace cfexplain
