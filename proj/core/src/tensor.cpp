#include "dcu/tensor.hpp"

#include <unordered_map>

namespace dcu {

namespace {

thread_local int g_no_grad_depth = 0;

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

namespace detail {

template <typename T>
void accumulate_grad(TensorNode<T>& node, std::span<const T> g) {
  if (node.grad.empty()) {
    node.grad.assign(node.data.size(), T{0});
  }
  for (std::size_t i = 0; i < node.grad.size(); ++i) {
    node.grad[i] += g[i];
  }
}

template void accumulate_grad<float>(TensorNode<float>&, std::span<const float>);
template void accumulate_grad<double>(TensorNode<double>&, std::span<const double>);

}  // namespace detail

template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<T> data,
                         std::vector<Tensor<T>> parents,
                         std::function<void(detail::TensorNode<T>&)> backward_fn) {
  auto out = Tensor<T>::from_data(shape, std::move(data));
  bool track = grad_enabled();
  if (track) {
    bool any = false;
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        any = true;
        break;
      }
    }
    track = any;
  }
  if (track) {
    auto& node = out.node();
    node.requires_grad = true;
    node.parents = std::move(parents);
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

namespace {

// Iterative DFS producing reverse-topological order. Rejects cycles; a graph
// built through the op API cannot contain one, but the traversal must not
// hang on a hand-assembled node either.
template <typename T>
std::vector<detail::TensorNode<T>*> topo_order(detail::TensorNode<T>* root) {
  enum : unsigned char { kOpen = 1, kDone = 2 };
  std::unordered_map<detail::TensorNode<T>*, unsigned char> state;
  std::vector<detail::TensorNode<T>*> order;
  std::vector<std::pair<detail::TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  state[root] = kOpen;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next].node_ptr().get();
      ++next;
      if (parent == nullptr || !parent->requires_grad) continue;
      auto it = state.find(parent);
      if (it == state.end()) {
        state[parent] = kOpen;
        stack.emplace_back(parent, 0);
      } else if (it->second == kOpen) {
        throw Error("backward: cycle detected in the computation graph");
      }
    } else {
      state[node] = kDone;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children; iterate in reverse
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& root) {
  if (!root.defined()) {
    throw Error("backward: undefined root tensor");
  }
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     root.shape().str());
  }
  auto& root_node = root.node();
  if (!root_node.requires_grad) {
    throw Error("backward: root does not depend on any tensor that requires "
                "gradients");
  }
  if (root_node.backward_ran) {
    throw Error("backward: already run for this root; run a new forward pass");
  }
  auto order = topo_order<T>(&root_node);
  root_node.grad.assign(1, T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode<T>* node = *it;
    if (!node->backward_fn) continue;  // leaf
    if (node->grad.empty()) continue;  // unreachable from the seed
    node->backward_fn(*node);
  }
  root_node.backward_ran = true;
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_op_output<float>(
    Shape, std::vector<float>, std::vector<Tensor<float>>,
    std::function<void(detail::TensorNode<float>&)>);
template Tensor<double> make_op_output<double>(
    Shape, std::vector<double>, std::vector<Tensor<double>>,
    std::function<void(detail::TensorNode<double>&)>);

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace dcu
