#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcu/graph_spec.hpp"
#include "dcu/ops.hpp"
#include "dcu/tensor.hpp"

namespace dcu {

template <typename T>
struct NamedParam {
  std::string path;
  Tensor<T> tensor;
};

/// A GraphSpec instantiated with real parameters. One model instance is
/// owned by one training run; forwards record gradients unless wrapped in a
/// NoGradGuard or run in inference mode through predict().
template <typename T>
class Model {
 public:
  Model(GraphSpec spec, std::uint64_t seed);

  const GraphSpec& spec() const { return spec_; }

  /// Full forward pass; validates the input contract first.
  Tensor<T> forward(const Tensor<T>& input, BatchNormMode mode);

  /// Inference-mode forward without graph recording.
  Tensor<T> predict(const Tensor<T>& input);

  /// Trainable parameters in deterministic layer order.
  std::vector<NamedParam<T>>& parameters() { return params_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }

  /// Trainable element count plus batch-norm moving statistics; matches
  /// count_params under the trainable-plus-moving convention.
  std::int64_t allocated_elements() const;

  void zero_grad();

  T bn_momentum() const { return bn_momentum_; }
  void set_bn_momentum(T m) { bn_momentum_ = m; }

  void save_checkpoint(const std::filesystem::path& file) const;
  void load_checkpoint(const std::filesystem::path& file);

  /// Copies of all parameter values (snapshot/restore around risky steps).
  std::vector<std::vector<T>> snapshot() const;
  void restore(const std::vector<std::vector<T>>& snap);

 private:
  struct LayerState {
    Tensor<T> weight;
    Tensor<T> bias;
    Tensor<T> gamma;
    Tensor<T> beta;
    BatchNormState<T> bn;
  };

  GraphSpec spec_;
  std::vector<LayerState> states_;
  std::vector<NamedParam<T>> params_;
  T bn_momentum_ = T(0.99);
  T bn_eps_ = T(1e-5);
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dcu
