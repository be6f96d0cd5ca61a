#include "cfexplain/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "cfexplain/error.hpp"

namespace cfexplain {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << n << "," << c << "," << h << "," << w << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    throw ArgumentError("tensor data size does not match shape " + shape_.str());
  }
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ArgumentError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

void Tensor::add_(const Tensor& other) {
  if (other.size() != data_.size()) {
    throw ArgumentError("tensor add: size mismatch " + shape_.str() + " vs " +
                        other.shape().str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

}  // namespace cfexplain
