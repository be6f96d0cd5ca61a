#include "cfexplain/nn/layers.hpp"

#include <cmath>
#include <numbers>

namespace cfexplain::nn {
namespace {

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(shape);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (float& v : t.values()) v = static_cast<float>(stddev * standard_normal(rng));
  return t;
}

}  // namespace

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void ParameterSet::append(const ParameterSet& other) {
  params.insert(params.end(), other.params.begin(), other.params.end());
  buffers.insert(buffers.end(), other.buffers.begin(), other.buffers.end());
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p->value.size();
  return n;
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : params) p->requires_grad = trainable;
}

void ParameterSet::zero_grad() {
  for (auto& p : params) p->zero_grad();
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) mix(p->value);
  for (const auto* b : buffers) mix(*b);
  return h;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, bool bias,
               std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
  weight_ = parameter(he_normal(Shape{out_channels, in_channels, kernel, kernel},
                                in_channels * kernel * kernel, rng));
  if (bias) bias_ = parameter(Tensor(Shape{out_channels, 1, 1, 1}));
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, weight_, bias_, stride_, kernel_ / 2);
}

void Conv2d::collect(ParameterSet& set) const {
  set.params.push_back(weight_);
  if (bias_) set.params.push_back(bias_);
}

BatchNorm2d::BatchNorm2d(int channels) {
  gamma_ = parameter(Tensor(Shape{channels, 1, 1, 1}, 1.0f));
  beta_ = parameter(Tensor(Shape{channels, 1, 1, 1}, 0.0f));
  state_.running_mean = Tensor(Shape{channels, 1, 1, 1}, 0.0f);
  state_.running_var = Tensor(Shape{channels, 1, 1, 1}, 1.0f);
}

Var BatchNorm2d::forward(const Var& x, NormMode mode) {
  return batch_norm(x, gamma_, beta_, state_, mode);
}

void BatchNorm2d::collect(ParameterSet& set) {
  set.params.push_back(gamma_);
  set.params.push_back(beta_);
  set.buffers.push_back(&state_.running_mean);
  set.buffers.push_back(&state_.running_var);
}

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng) {
  Tensor w(Shape{out_features, in_features, 1, 1});
  const double stddev = std::sqrt(1.0 / in_features);
  for (float& v : w.values()) v = static_cast<float>(stddev * standard_normal(rng));
  weight_ = parameter(std::move(w));
  bias_ = parameter(Tensor(Shape{out_features, 1, 1, 1}));
}

Var Linear::forward(const Var& x) const { return linear(x, weight_, bias_); }

void Linear::collect(ParameterSet& set) const {
  set.params.push_back(weight_);
  set.params.push_back(bias_);
}

ConvBlock::ConvBlock(int in_channels, int out_channels, int stride, float leak,
                     std::mt19937_64& rng)
    : conv_(in_channels, out_channels, 3, stride, false, rng),
      norm_(out_channels),
      leak_(leak) {}

Var ConvBlock::forward(const Var& x, NormMode mode) {
  Var y = norm_.forward(conv_.forward(x), mode);
  return leak_ > 0.0f ? leaky_relu(y, leak_) : relu(y);
}

void ConvBlock::collect(ParameterSet& set) {
  conv_.collect(set);
  norm_.collect(set);
}

}  // namespace cfexplain::nn
