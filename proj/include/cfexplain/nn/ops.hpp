// Differentiable tensor operations used by the networks and their losses.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cfexplain/image.hpp"
#include "cfexplain/nn/graph.hpp"

namespace cfexplain::nn {

/// k×k convolution. `weight` is [out, in, k, k]; `bias` may be null.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// y = x·Wᵀ + b over the flattened sample. `weight` is [out, features, 1, 1].
Var linear(const Var& x, const Var& weight, const Var& bias);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
};

enum class NormMode {
  kTrain,       // batch statistics, running statistics updated
  kBatchStats,  // batch statistics, running statistics untouched
  kInference,   // running statistics
};

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormState& state, NormMode mode);

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);
Var sigmoid(const Var& x);

Var max_pool2(const Var& x);
Var upsample_nearest2(const Var& x);

Var concat_channels(const Var& a, const Var& b);
Var concat_batch(const Var& a, const Var& b);
Var slice_batch(const Var& x, int begin, int count);

/// Softmax across the channel axis at every (n, h, w).
Var softmax_channels(const Var& x);
Var select_channel(const Var& x, int channel);

/// Per-position pair assembly: channels [a, b], or [b, a] where swap is set.
/// `swap` holds one flag per (n, h, w).
Var pair_concat(const Var& a, const Var& b, const std::vector<std::uint8_t>& swap);
/// Exchanges channels 0 and 1 at positions where swap is set.
Var unswap_pairs(const Var& x, const std::vector<std::uint8_t>& swap);

Var add(const Var& a, const Var& b);
Var scale(const Var& x, float factor);

struct PairLossResult {
  double value = 0.0;
  std::vector<double> grad_a;
  std::vector<double> grad_b;
};
using PairLossFn = std::function<PairLossResult(const Image&, const Image&)>;

/// Mean over the batch of fn(a_n, b_n) for single-channel image batches.
Var mean_pair_loss(const Var& a, const Var& b, const PairLossFn& fn);

/// Mean of −[y·log p + (1−y)·log(1−p)] with p clamped to [eps, 1−eps].
Var mean_cross_entropy(const Var& prob, const Tensor& target, double eps = 1e-7);

/// Weighted mean of per-element cross entropy; weights are per batch sample.
Var weighted_cross_entropy(const Var& prob, const Tensor& target,
                           const std::vector<double>& sample_weight,
                           double eps = 1e-7);

/// Mean over (n, h, w) of −log softmax(logits)[label], computed stably from
/// logits so saturated predictions keep a gradient. `labels` holds one class
/// index per (n, h, w); weights, if given, are per batch sample.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels,
                          const std::vector<double>& sample_weight = {});

Image to_image(const Tensor& t, int n);
Tensor to_tensor(const std::vector<Image>& images);

}  // namespace cfexplain::nn
