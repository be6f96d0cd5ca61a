#include "cfexplain/nn/graph.hpp"

#include <stdexcept>
#include <unordered_set>

#include "cfexplain/error.hpp"

namespace cfexplain::nn {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

void Node::zero_grad() {
  if (!grad.empty()) grad.fill(0.0f);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

Var make_result(Tensor value, std::vector<Var> parents) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
    if (node->requires_grad) node->parents = std::move(parents);
  }
  return node;
}

void backward(const Var& loss) {
  if (!loss || loss->value.size() != 1) {
    throw ArgumentError("backward: loss must be a scalar");
  }
  if (!loss->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.contains(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace cfexplain::nn
