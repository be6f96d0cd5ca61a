// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a node in a dynamically built graph. Operations in ops.hpp create
// new nodes whose backward closures accumulate gradients into their parents.
// Parameters are long-lived leaf nodes; everything else is released when the
// last Var referencing the graph goes away.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cfexplain/tensor.hpp"

namespace cfexplain::nn {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  /// Gradient buffer, zero-initialized on first access.
  Tensor& grad_buffer();
  void zero_grad();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds a result node. Gradient tracking is enabled iff grad mode is on and
/// any parent requires a gradient.
Var make_result(Tensor value, std::vector<Var> parents);

/// Seeds d(loss)/d(loss) = 1 and propagates through the graph. `loss` must
/// hold a single element.
void backward(const Var& loss);

bool grad_enabled();

/// Disables graph construction for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace cfexplain::nn
