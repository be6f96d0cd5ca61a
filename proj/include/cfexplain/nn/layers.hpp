// Parameterized layers and the parameter bookkeeping shared by all networks.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfexplain/nn/ops.hpp"

namespace cfexplain::nn {

/// Everything a network persists: trainable parameters plus non-trainable
/// buffers (normalization running statistics).
struct ParameterSet {
  std::vector<Var> params;
  std::vector<Tensor*> buffers;

  void append(const ParameterSet& other);
  std::size_t parameter_count() const;
  void set_trainable(bool trainable);
  void zero_grad();
  /// FNV-1a over the raw bytes of parameters and buffers.
  std::uint64_t checksum() const;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, bool bias,
         std::mt19937_64& rng);
  Var forward(const Var& x) const;
  void collect(ParameterSet& set) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int stride() const { return stride_; }

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1;
  Var weight_, bias_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Var forward(const Var& x, NormMode mode);
  void collect(ParameterSet& set);

 private:
  Var gamma_, beta_;
  BatchNormState state_;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, std::mt19937_64& rng);
  Var forward(const Var& x) const;
  void collect(ParameterSet& set) const;

 private:
  Var weight_, bias_;
};

/// conv(3×3, same padding, no bias) → batch norm → (leaky) rectifier.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int in_channels, int out_channels, int stride, float leak,
            std::mt19937_64& rng);
  Var forward(const Var& x, NormMode mode);
  void collect(ParameterSet& set);
  int out_channels() const { return conv_.out_channels(); }

 private:
  Conv2d conv_;
  BatchNorm2d norm_;
  float leak_ = 0.0f;
};

/// Uniform real in [0,1) from the top 53 bits; stable across standard libraries.
double uniform01(std::mt19937_64& rng);
/// Standard normal via Box-Muller.
double standard_normal(std::mt19937_64& rng);

}  // namespace cfexplain::nn
