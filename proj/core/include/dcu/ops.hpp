#pragma once

#include <vector>

#include "dcu/tensor.hpp"

namespace dcu {

enum class BatchNormMode { train, inference };

/// Non-trainable batch-norm state: moving statistics plus the number of
/// train-mode updates applied so far. Inference before the first update is
/// an error.
template <typename T>
struct BatchNormState {
  std::vector<T> moving_mean;
  std::vector<T> moving_var;
  std::int64_t updates = 0;
};

/// 2-D cross-correlation (no kernel flip). weight is (C_out, C_in, k_h, k_w);
/// bias is a (C_out) tensor or undefined for bias-free layers. Same padding
/// requires odd kernels and pads with zeros split as (k-1)/2 before, k/2
/// after.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Padding padding, int stride = 1);

/// 2×2 stride-2 transposed convolution, the only up-sampling configuration
/// supported. weight is (C_out, C_in, 2, 2); output doubles H and W.
template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& input, const Tensor<T>& weight,
                            const Tensor<T>& bias);

/// 2×2 max pooling with stride 2; requires even H and W. The gradient routes
/// to the first (row-major) maximal element of each window.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Numerically stable logistic; output strictly inside (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

/// Per-channel batch normalization. gamma may be undefined for scale-free
/// layers (fixed unit scale); beta is required. Train mode normalizes with
/// batch statistics and updates the moving statistics (the first update
/// copies the batch statistics, later ones apply the EMA with `momentum`).
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormState<T>& state,
                    BatchNormMode mode, T momentum = T(0.99),
                    T eps = T(1e-5));

/// Channel concatenation; inputs must agree on N, H, W.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs);

/// Elementwise sum of two same-shape tensors.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

/// Pixel-summed binary cross-entropy of a single image (N must be 1).
/// Predictions must lie strictly inside (0, 1); targets must be exactly
/// 0 or 1. Log arguments are clamped at 1e-12.
template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target);

/// Batch loss: mean over the N images of the per-image pixel-summed binary
/// cross-entropy, times extra_scale (1/(H*W) for per-pixel normalization).
template <typename T>
Tensor<T> batch_bce(const Tensor<T>& pred, const Tensor<T>& target,
                    T extra_scale = T{1});

/// Arithmetic mean of scalar tensors (batch loss over a list of pairs).
template <typename T>
Tensor<T> mean_of_scalars(const std::vector<Tensor<T>>& values);

}  // namespace dcu
