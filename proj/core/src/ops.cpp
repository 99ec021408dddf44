#include "dcu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dcu {

namespace {

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

template <typename T>
void ensure_grad(detail::TensorNode<T>& node) {
  if (node.grad.empty()) node.grad.assign(node.data.size(), T{0});
}

struct ConvGeom {
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
  std::int64_t pad_top = 0;
  std::int64_t pad_left = 0;
};

ConvGeom conv_geometry(const Shape& in, std::int64_t kh, std::int64_t kw,
                       Padding padding, std::int64_t stride) {
  ConvGeom g;
  if (padding == Padding::same) {
    if (kh % 2 == 0 || kw % 2 == 0) {
      throw ValueError("conv2d: same padding requires odd kernels, got " +
                       std::to_string(kh) + "x" + std::to_string(kw));
    }
    g.out_h = (in.h + stride - 1) / stride;
    g.out_w = (in.w + stride - 1) / stride;
    const std::int64_t total_h =
        std::max<std::int64_t>(0, (g.out_h - 1) * stride + kh - in.h);
    const std::int64_t total_w =
        std::max<std::int64_t>(0, (g.out_w - 1) * stride + kw - in.w);
    g.pad_top = total_h / 2;
    g.pad_left = total_w / 2;
  } else {
    if (in.h < kh || in.w < kw) {
      throw ShapeError("conv2d: valid padding needs input at least " +
                       std::to_string(kh) + "x" + std::to_string(kw) +
                       ", got " + in.str());
    }
    g.out_h = (in.h - kh) / stride + 1;
    g.out_w = (in.w - kw) / stride + 1;
  }
  return g;
}

// Output rows oh for which ih = oh*stride + k_off - pad lands inside [0, dim).
std::pair<std::int64_t, std::int64_t> valid_out_range(std::int64_t dim,
                                                      std::int64_t out_dim,
                                                      std::int64_t k_off,
                                                      std::int64_t pad,
                                                      std::int64_t stride) {
  std::int64_t lo = 0;
  if (pad > k_off) lo = (pad - k_off + stride - 1) / stride;
  const std::int64_t num = dim - 1 + pad - k_off;
  std::int64_t hi = num < 0 ? -1 : num / stride;
  hi = std::min(hi, out_dim - 1);
  return {lo, hi};
}

template <typename T>
void conv2d_forward_kernel(const Shape& in_shape, const T* in, const T* w,
                           const T* bias, std::int64_t co_count,
                           std::int64_t kh, std::int64_t kw, const ConvGeom& g,
                           std::int64_t stride, T* out) {
  const std::int64_t ci_count = in_shape.c;
  const std::int64_t h = in_shape.h, wdt = in_shape.w;
  const std::int64_t oh = g.out_h, ow = g.out_w;
  for (std::int64_t n = 0; n < in_shape.n; ++n) {
    for (std::int64_t co = 0; co < co_count; ++co) {
      T* out_plane = out + (n * co_count + co) * oh * ow;
      const T b = bias ? bias[co] : T{0};
      std::fill(out_plane, out_plane + oh * ow, b);
      for (std::int64_t ci = 0; ci < ci_count; ++ci) {
        const T* in_plane = in + (n * ci_count + ci) * h * wdt;
        const T* wk = w + ((co * ci_count) + ci) * kh * kw;
        for (std::int64_t r = 0; r < kh; ++r) {
          auto [ohlo, ohhi] = valid_out_range(h, oh, r, g.pad_top, stride);
          for (std::int64_t q = 0; q < kw; ++q) {
            const T wv = wk[r * kw + q];
            auto [owlo, owhi] = valid_out_range(wdt, ow, q, g.pad_left, stride);
            const std::int64_t off = q - g.pad_left;
            for (std::int64_t y = ohlo; y <= ohhi; ++y) {
              const T* in_row = in_plane + (y * stride + r - g.pad_top) * wdt;
              T* out_row = out_plane + y * ow;
              if (stride == 1) {
                const T* src = in_row + off;
                for (std::int64_t x = owlo; x <= owhi; ++x) {
                  out_row[x] += wv * src[x];
                }
              } else {
                for (std::int64_t x = owlo; x <= owhi; ++x) {
                  out_row[x] += wv * in_row[x * stride + off];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Padding padding, int stride) {
  const Shape in_shape = input.shape();
  const Shape w_shape = weight.shape();
  if (stride < 1) {
    throw ValueError("conv2d: stride must be >= 1, got " +
                     std::to_string(stride));
  }
  if (in_shape.c != w_shape.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(in_shape.c) +
                     " do not match weight C_in " + std::to_string(w_shape.c) +
                     " (input " + in_shape.str() + ", weight " +
                     w_shape.str() + ")");
  }
  if (bias.defined() && bias.numel() != w_shape.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                     " does not match C_out " + std::to_string(w_shape.n));
  }
  const ConvGeom g =
      conv_geometry(in_shape, w_shape.h, w_shape.w, padding, stride);
  const Shape out_shape{in_shape.n, w_shape.n, g.out_h, g.out_w};

  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  conv2d_forward_kernel(in_shape, input.data().data(), weight.data().data(),
                        bias.defined() ? bias.data().data() : nullptr,
                        w_shape.n, w_shape.h, w_shape.w, g, stride, out.data());
  check_finite<T>(out, "conv2d");

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  const std::int64_t s = stride;
  auto backward_fn = [input, weight, bias, g, s](detail::TensorNode<T>& node) {
    const Shape in_shape = input.shape();
    const Shape w_shape = weight.shape();
    const std::int64_t kh = w_shape.h, kw = w_shape.w;
    const std::int64_t h = in_shape.h, wdt = in_shape.w;
    const std::int64_t oh = g.out_h, ow = g.out_w;
    const T* gout = node.grad.data();
    const T* in = input.data().data();
    const T* w = weight.data().data();

    if (bias.defined() && bias.requires_grad()) {
      ensure_grad(bias.node());
      T* gb = bias.node().grad.data();
      for (std::int64_t n = 0; n < in_shape.n; ++n) {
        for (std::int64_t co = 0; co < w_shape.n; ++co) {
          const T* gp = gout + (n * w_shape.n + co) * oh * ow;
          T acc{0};
          for (std::int64_t i = 0; i < oh * ow; ++i) acc += gp[i];
          gb[co] += acc;
        }
      }
    }
    const bool need_dw = weight.requires_grad();
    const bool need_dx = input.requires_grad();
    if (need_dw) ensure_grad(weight.node());
    if (need_dx) ensure_grad(input.node());
    if (!need_dw && !need_dx) return;
    T* gw = need_dw ? weight.node().grad.data() : nullptr;
    T* gx = need_dx ? input.node().grad.data() : nullptr;

    for (std::int64_t n = 0; n < in_shape.n; ++n) {
      for (std::int64_t co = 0; co < w_shape.n; ++co) {
        const T* gplane = gout + (n * w_shape.n + co) * oh * ow;
        for (std::int64_t ci = 0; ci < in_shape.c; ++ci) {
          const T* in_plane = in + (n * in_shape.c + ci) * h * wdt;
          T* gx_plane =
              need_dx ? gx + (n * in_shape.c + ci) * h * wdt : nullptr;
          const T* wk = w + ((co * in_shape.c) + ci) * kh * kw;
          T* gwk = need_dw ? gw + ((co * in_shape.c) + ci) * kh * kw : nullptr;
          for (std::int64_t r = 0; r < kh; ++r) {
            auto [ohlo, ohhi] = valid_out_range(h, oh, r, g.pad_top, s);
            for (std::int64_t q = 0; q < kw; ++q) {
              auto [owlo, owhi] = valid_out_range(wdt, ow, q, g.pad_left, s);
              const std::int64_t off = q - g.pad_left;
              T wacc{0};
              const T wv = wk[r * kw + q];
              for (std::int64_t y = ohlo; y <= ohhi; ++y) {
                const std::int64_t iy = y * s + r - g.pad_top;
                const T* grow = gplane + y * ow;
                const T* in_row = in_plane + iy * wdt;
                T* gx_row = need_dx ? gx_plane + iy * wdt : nullptr;
                for (std::int64_t x = owlo; x <= owhi; ++x) {
                  const std::int64_t ix = x * s + off;
                  const T gv = grow[x];
                  if (need_dw) wacc += gv * in_row[ix];
                  if (need_dx) gx_row[ix] += gv * wv;
                }
              }
              if (need_dw) gwk[r * kw + q] += wacc;
            }
          }
        }
      }
    }
  };
  return make_op_output<T>(out_shape, std::move(out), std::move(parents),
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> conv_transpose2x2(const Tensor<T>& input, const Tensor<T>& weight,
                            const Tensor<T>& bias) {
  const Shape in_shape = input.shape();
  const Shape w_shape = weight.shape();
  if (w_shape.h != 2 || w_shape.w != 2) {
    throw ValueError("conv_transpose2x2: only 2x2 stride-2 kernels are "
                     "supported, got " + w_shape.str());
  }
  if (in_shape.c != w_shape.c) {
    throw ShapeError("conv_transpose2x2: input channels " +
                     std::to_string(in_shape.c) + " do not match weight C_in " +
                     std::to_string(w_shape.c) + " (input " + in_shape.str() +
                     ", weight " + w_shape.str() + ")");
  }
  if (bias.defined() && bias.numel() != w_shape.n) {
    throw ShapeError("conv_transpose2x2: bias length " +
                     std::to_string(bias.numel()) + " does not match C_out " +
                     std::to_string(w_shape.n));
  }
  const Shape out_shape{in_shape.n, w_shape.n, in_shape.h * 2, in_shape.w * 2};
  const std::int64_t h = in_shape.h, wdt = in_shape.w;
  const std::int64_t ow = out_shape.w;

  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  {
    const T* in = input.data().data();
    const T* w = weight.data().data();
    const T* b = bias.defined() ? bias.data().data() : nullptr;
    for (std::int64_t n = 0; n < in_shape.n; ++n) {
      for (std::int64_t co = 0; co < w_shape.n; ++co) {
        T* out_plane = out.data() + (n * w_shape.n + co) * out_shape.h * ow;
        std::fill(out_plane, out_plane + out_shape.h * ow, b ? b[co] : T{0});
        for (std::int64_t ci = 0; ci < in_shape.c; ++ci) {
          const T* in_plane = in + (n * in_shape.c + ci) * h * wdt;
          const T* wk = w + ((co * in_shape.c) + ci) * 4;
          for (std::int64_t r = 0; r < 2; ++r) {
            for (std::int64_t q = 0; q < 2; ++q) {
              const T wv = wk[r * 2 + q];
              for (std::int64_t y = 0; y < h; ++y) {
                const T* in_row = in_plane + y * wdt;
                T* out_row = out_plane + (2 * y + r) * ow + q;
                for (std::int64_t x = 0; x < wdt; ++x) {
                  out_row[2 * x] += wv * in_row[x];
                }
              }
            }
          }
        }
      }
    }
  }
  check_finite<T>(out, "conv_transpose2x2");

  std::vector<Tensor<T>> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  auto backward_fn = [input, weight, bias](detail::TensorNode<T>& node) {
    const Shape in_shape = input.shape();
    const Shape w_shape = weight.shape();
    const std::int64_t h = in_shape.h, wdt = in_shape.w;
    const std::int64_t ow = wdt * 2;
    const T* gout = node.grad.data();
    const T* in = input.data().data();
    const T* w = weight.data().data();

    if (bias.defined() && bias.requires_grad()) {
      ensure_grad(bias.node());
      T* gb = bias.node().grad.data();
      for (std::int64_t n = 0; n < in_shape.n; ++n) {
        for (std::int64_t co = 0; co < w_shape.n; ++co) {
          const T* gp = gout + (n * w_shape.n + co) * (h * 2) * ow;
          T acc{0};
          for (std::int64_t i = 0; i < h * 2 * ow; ++i) acc += gp[i];
          gb[co] += acc;
        }
      }
    }
    const bool need_dw = weight.requires_grad();
    const bool need_dx = input.requires_grad();
    if (need_dw) ensure_grad(weight.node());
    if (need_dx) ensure_grad(input.node());
    if (!need_dw && !need_dx) return;
    T* gw = need_dw ? weight.node().grad.data() : nullptr;
    T* gx = need_dx ? input.node().grad.data() : nullptr;

    for (std::int64_t n = 0; n < in_shape.n; ++n) {
      for (std::int64_t co = 0; co < w_shape.n; ++co) {
        const T* gplane = gout + (n * w_shape.n + co) * (h * 2) * ow;
        for (std::int64_t ci = 0; ci < in_shape.c; ++ci) {
          const T* in_plane = in + (n * in_shape.c + ci) * h * wdt;
          T* gx_plane = need_dx ? gx + (n * in_shape.c + ci) * h * wdt
                                : nullptr;
          const T* wk = w + ((co * in_shape.c) + ci) * 4;
          T* gwk = need_dw ? gw + ((co * in_shape.c) + ci) * 4 : nullptr;
          for (std::int64_t r = 0; r < 2; ++r) {
            for (std::int64_t q = 0; q < 2; ++q) {
              const T wv = wk[r * 2 + q];
              T wacc{0};
              for (std::int64_t y = 0; y < h; ++y) {
                const T* grow = gplane + (2 * y + r) * ow + q;
                const T* in_row = in_plane + y * wdt;
                T* gx_row = need_dx ? gx_plane + y * wdt : nullptr;
                for (std::int64_t x = 0; x < wdt; ++x) {
                  const T gv = grow[2 * x];
                  if (need_dw) wacc += gv * in_row[x];
                  if (need_dx) gx_row[x] += gv * wv;
                }
              }
              if (need_dw) gwk[r * 2 + q] += wacc;
            }
          }
        }
      }
    }
  };
  return make_op_output<T>(out_shape, std::move(out), std::move(parents),
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& input) {
  const Shape in_shape = input.shape();
  if (in_shape.h % 2 != 0 || in_shape.w % 2 != 0) {
    throw ShapeError("maxpool2x2: H and W must be even, got " +
                     in_shape.str());
  }
  const Shape out_shape{in_shape.n, in_shape.c, in_shape.h / 2,
                        in_shape.w / 2};
  const std::int64_t planes = in_shape.n * in_shape.c;
  const std::int64_t h = in_shape.h, w = in_shape.w;
  const std::int64_t oh = out_shape.h, ow = out_shape.w;

  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
  {
    const T* in = input.data().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* in_plane = in + p * h * w;
      T* out_plane = out.data() + p * oh * ow;
      std::int32_t* am = argmax->data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t x = 0; x < ow; ++x) {
          // row-major scan; strictly-greater keeps the first maximum on ties
          std::int64_t best = (2 * y) * w + 2 * x;
          T bv = in_plane[best];
          const std::int64_t cands[3] = {(2 * y) * w + 2 * x + 1,
                                         (2 * y + 1) * w + 2 * x,
                                         (2 * y + 1) * w + 2 * x + 1};
          for (std::int64_t idx : cands) {
            if (in_plane[idx] > bv) {
              bv = in_plane[idx];
              best = idx;
            }
          }
          out_plane[y * ow + x] = bv;
          am[y * ow + x] = static_cast<std::int32_t>(best);
        }
      }
    }
  }
  auto backward_fn = [input, argmax, planes, h, w, oh,
                      ow](detail::TensorNode<T>& node) {
    if (!input.requires_grad()) return;
    ensure_grad(input.node());
    T* gx = input.node().grad.data();
    const T* gout = node.grad.data();
    const std::int32_t* am = argmax->data();
    for (std::int64_t p = 0; p < planes; ++p) {
      T* gx_plane = gx + p * h * w;
      const T* gplane = gout + p * oh * ow;
      const std::int32_t* amp = am + p * oh * ow;
      for (std::int64_t i = 0; i < oh * ow; ++i) {
        gx_plane[amp[i]] += gplane[i];
      }
    }
  };
  return make_op_output<T>(out_shape, std::move(out), {input},
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.data().begin(), input.data().end());
  for (T& v : out) v = std::max(v, T{0});
  auto backward_fn = [input](detail::TensorNode<T>& node) {
    if (!input.requires_grad()) return;
    ensure_grad(input.node());
    T* gx = input.node().grad.data();
    const T* gout = node.grad.data();
    std::span<const T> x = input.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{0}) gx[i] += gout[i];  // subgradient 0 at x == 0
    }
  };
  return make_op_output<T>(input.shape(), std::move(out), {input},
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  std::vector<T> out(input.numel());
  std::span<const T> x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  auto backward_fn = [input](detail::TensorNode<T>& node) {
    if (!input.requires_grad()) return;
    ensure_grad(input.node());
    T* gx = input.node().grad.data();
    const T* gout = node.grad.data();
    const std::vector<T>& s = node.data;  // the sigmoid output itself
    for (std::size_t i = 0; i < s.size(); ++i) {
      gx[i] += gout[i] * s[i] * (T{1} - s[i]);
    }
  };
  return make_op_output<T>(input.shape(), std::move(out), {input},
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormState<T>& state,
                    BatchNormMode mode, T momentum, T eps) {
  const Shape in_shape = input.shape();
  const std::int64_t c_count = in_shape.c;
  if (gamma.defined() && gamma.numel() != c_count) {
    throw ShapeError("batchnorm: gamma length " + std::to_string(gamma.numel()) +
                     " does not match channels " + std::to_string(c_count));
  }
  if (!beta.defined() || beta.numel() != c_count) {
    throw ShapeError("batchnorm: beta length " +
                     std::to_string(beta.defined() ? beta.numel() : 0) +
                     " does not match channels " + std::to_string(c_count));
  }
  if (state.moving_mean.empty()) {
    state.moving_mean.assign(static_cast<std::size_t>(c_count), T{0});
    state.moving_var.assign(static_cast<std::size_t>(c_count), T{1});
  }
  if (mode == BatchNormMode::inference && state.updates == 0) {
    throw Error("batchnorm: inference requested before any train-mode update "
                "populated the moving statistics");
  }

  const std::int64_t hw = in_shape.h * in_shape.w;
  const std::int64_t m = in_shape.n * hw;  // per-channel sample count
  const T* x = input.data().data();

  auto mean = std::make_shared<std::vector<T>>(c_count);
  auto invstd = std::make_shared<std::vector<T>>(c_count);
  if (mode == BatchNormMode::train) {
    for (std::int64_t c = 0; c < c_count; ++c) {
      T acc{0};
      for (std::int64_t n = 0; n < in_shape.n; ++n) {
        const T* plane = x + (n * c_count + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
      }
      const T mu = acc / static_cast<T>(m);
      T var{0};
      for (std::int64_t n = 0; n < in_shape.n; ++n) {
        const T* plane = x + (n * c_count + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const T d = plane[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      (*mean)[c] = mu;
      (*invstd)[c] = T{1} / std::sqrt(var + eps);
      if (state.updates == 0) {
        state.moving_mean[c] = mu;
        state.moving_var[c] = var;
      } else {
        state.moving_mean[c] =
            momentum * state.moving_mean[c] + (T{1} - momentum) * mu;
        state.moving_var[c] =
            momentum * state.moving_var[c] + (T{1} - momentum) * var;
      }
    }
    ++state.updates;
  } else {
    for (std::int64_t c = 0; c < c_count; ++c) {
      (*mean)[c] = state.moving_mean[c];
      (*invstd)[c] = T{1} / std::sqrt(state.moving_var[c] + eps);
    }
  }

  std::vector<T> out(static_cast<std::size_t>(in_shape.numel()));
  const T* gm = gamma.defined() ? gamma.data().data() : nullptr;
  const T* bt = beta.data().data();
  for (std::int64_t n = 0; n < in_shape.n; ++n) {
    for (std::int64_t c = 0; c < c_count; ++c) {
      const T mu = (*mean)[c];
      const T is = (*invstd)[c];
      const T scale = (gm ? gm[c] : T{1}) * is;
      const T shift = bt[c] - mu * scale;
      const T* plane = x + (n * c_count + c) * hw;
      T* out_plane = out.data() + (n * c_count + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        out_plane[i] = plane[i] * scale + shift;
      }
    }
  }
  check_finite<T>(out, "batchnorm");

  std::vector<Tensor<T>> parents{input, beta};
  if (gamma.defined()) parents.push_back(gamma);
  const bool train_mode = mode == BatchNormMode::train;
  auto backward_fn = [input, gamma, beta, mean, invstd, train_mode, c_count,
                      hw](detail::TensorNode<T>& node) {
    const Shape in_shape = input.shape();
    const std::int64_t m = in_shape.n * hw;
    const T* x = input.data().data();
    const T* gout = node.grad.data();
    const T* gm = gamma.defined() ? gamma.data().data() : nullptr;
    const bool need_dgamma = gamma.defined() && gamma.requires_grad();
    const bool need_dbeta = beta.requires_grad();
    const bool need_dx = input.requires_grad();
    if (need_dgamma) ensure_grad(gamma.node());
    if (need_dbeta) ensure_grad(beta.node());
    if (need_dx) ensure_grad(input.node());
    T* ggamma = need_dgamma ? gamma.node().grad.data() : nullptr;
    T* gbeta = need_dbeta ? beta.node().grad.data() : nullptr;
    T* gx = need_dx ? input.node().grad.data() : nullptr;

    for (std::int64_t c = 0; c < c_count; ++c) {
      const T mu = (*mean)[c];
      const T is = (*invstd)[c];
      const T gamma_c = gm ? gm[c] : T{1};
      T sum_dy{0};
      T sum_dy_xhat{0};
      for (std::int64_t n = 0; n < in_shape.n; ++n) {
        const T* xp = x + (n * c_count + c) * hw;
        const T* gp = gout + (n * c_count + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_dy += gp[i];
          sum_dy_xhat += gp[i] * (xp[i] - mu) * is;
        }
      }
      if (need_dbeta) gbeta[c] += sum_dy;
      if (need_dgamma) ggamma[c] += sum_dy_xhat;
      if (!need_dx) continue;
      if (train_mode) {
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::int64_t n = 0; n < in_shape.n; ++n) {
          const T* xp = x + (n * c_count + c) * hw;
          const T* gp = gout + (n * c_count + c) * hw;
          T* gxp = gx + (n * c_count + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const T xhat = (xp[i] - mu) * is;
            gxp[i] += gamma_c * is * inv_m *
                      (static_cast<T>(m) * gp[i] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      } else {
        const T scale = gamma_c * is;
        for (std::int64_t n = 0; n < in_shape.n; ++n) {
          const T* gp = gout + (n * c_count + c) * hw;
          T* gxp = gx + (n * c_count + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            gxp[i] += gp[i] * scale;
          }
        }
      }
    }
  };
  return make_op_output<T>(in_shape, std::move(out), std::move(parents),
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ValueError("concat: needs at least one input");
  const Shape first = inputs.front().shape();
  std::int64_t c_total = 0;
  for (const auto& t : inputs) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat: inputs must agree on N, H, W; got " +
                       first.str() + " and " + s.str());
    }
    c_total += s.c;
  }
  const Shape out_shape{first.n, c_total, first.h, first.w};
  const std::int64_t hw = first.h * first.w;

  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  for (std::int64_t n = 0; n < first.n; ++n) {
    std::int64_t c_off = 0;
    for (const auto& t : inputs) {
      const std::int64_t ci = t.shape().c;
      std::memcpy(out.data() + (n * c_total + c_off) * hw,
                  t.data().data() + n * ci * hw,
                  static_cast<std::size_t>(ci * hw) * sizeof(T));
      c_off += ci;
    }
  }
  auto backward_fn = [inputs, c_total, hw](detail::TensorNode<T>& node) {
    const std::int64_t n_count = node.shape.n;
    const T* gout = node.grad.data();
    std::int64_t c_off = 0;
    for (const auto& t : inputs) {
      const std::int64_t ci = t.shape().c;
      if (t.requires_grad()) {
        ensure_grad(t.node());
        T* gx = t.node().grad.data();
        for (std::int64_t n = 0; n < n_count; ++n) {
          const T* src = gout + (n * c_total + c_off) * hw;
          T* dst = gx + n * ci * hw;
          for (std::int64_t i = 0; i < ci * hw; ++i) dst[i] += src[i];
        }
      }
      c_off += ci;
    }
  };
  return make_op_output<T>(out_shape, std::move(out), inputs,
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add: shapes differ, " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  std::vector<T> out(a.numel());
  std::span<const T> av = a.data();
  std::span<const T> bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto backward_fn = [a, b](detail::TensorNode<T>& node) {
    const T* gout = node.grad.data();
    for (const Tensor<T>& t : {a, b}) {
      if (!t.requires_grad()) continue;
      ensure_grad(t.node());
      T* gx = t.node().grad.data();
      for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += gout[i];
    }
  };
  return make_op_output<T>(a.shape(), std::move(out), {a, b},
                           std::move(backward_fn));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  T acc{0};
  for (T v : input.data()) acc += v;
  auto backward_fn = [input](detail::TensorNode<T>& node) {
    if (!input.requires_grad()) return;
    ensure_grad(input.node());
    const T g = node.grad[0];
    for (T& v : input.node().grad) v += g;
  };
  return make_op_output<T>(Shape{1, 1, 1, 1}, {acc}, {input},
                           std::move(backward_fn));
}

namespace {

constexpr double kLogClamp = 1e-12;

template <typename T>
Tensor<T> bce_impl(const Tensor<T>& pred, const Tensor<T>& target,
                   T batch_scale) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("bce: prediction " + pred.shape().str() +
                     " and target " + target.shape().str() + " differ");
  }
  std::span<const T> p = pred.data();
  std::span<const T> y = target.data();
  const T lo = static_cast<T>(kLogClamp);
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1}) {
      throw ValueError("bce: targets must be exactly 0 or 1");
    }
    // sigmoid outputs are strictly inside (0,1) in exact arithmetic but can
    // round to the endpoints in 32-bit; both log arguments are clamped below
    // at 1e-12 (clamping p itself would be a no-op in float near 1)
    if (!(p[i] >= T{0} && p[i] <= T{1})) {
      throw ValueError("bce: predictions must lie in [0, 1]");
    }
    const T pa = std::max(p[i], lo);
    const T pb = std::max(T{1} - p[i], lo);
    acc -= y[i] * std::log(pa) + (T{1} - y[i]) * std::log(pb);
  }
  acc *= batch_scale;
  if (!std::isfinite(acc)) throw NumericError("bce produced a non-finite loss");

  auto backward_fn = [pred, target, batch_scale](detail::TensorNode<T>& node) {
    std::span<const T> p = pred.data();
    std::span<const T> y = target.data();
    const T lo = static_cast<T>(kLogClamp);
    const T g = node.grad[0] * batch_scale;
    if (pred.requires_grad()) {
      ensure_grad(pred.node());
      T* gp = pred.node().grad.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T pa = std::max(p[i], lo);
        const T pb = std::max(T{1} - p[i], lo);
        gp[i] += g * (-(y[i] / pa) + (T{1} - y[i]) / pb);
      }
    }
    if (target.requires_grad()) {
      ensure_grad(target.node());
      T* gy = target.node().grad.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T pa = std::max(p[i], lo);
        const T pb = std::max(T{1} - p[i], lo);
        gy[i] += g * (std::log(pb) - std::log(pa));
      }
    }
  };
  return make_op_output<T>(Shape{1, 1, 1, 1}, {acc}, {pred, target},
                           std::move(backward_fn));
}

}  // namespace

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape().n != 1) {
    throw ShapeError("bce: expects a single image (N = 1), got " +
                     pred.shape().str() + "; use batch_bce for batches");
  }
  return bce_impl(pred, target, T{1});
}

template <typename T>
Tensor<T> batch_bce(const Tensor<T>& pred, const Tensor<T>& target,
                    T extra_scale) {
  return bce_impl(pred, target,
                  extra_scale / static_cast<T>(pred.shape().n));
}

template <typename T>
Tensor<T> mean_of_scalars(const std::vector<Tensor<T>>& values) {
  if (values.empty()) {
    throw ValueError("mean_of_scalars: empty batch");
  }
  T acc{0};
  for (const auto& v : values) acc += v.item();
  const T inv = T{1} / static_cast<T>(values.size());
  auto backward_fn = [values, inv](detail::TensorNode<T>& node) {
    const T g = node.grad[0] * inv;
    for (const auto& v : values) {
      if (!v.requires_grad()) continue;
      ensure_grad(v.node());
      v.node().grad[0] += g;
    }
  };
  return make_op_output<T>(Shape{1, 1, 1, 1}, {acc * inv}, values,
                           std::move(backward_fn));
}

#define DCU_INSTANTIATE_OPS(T)                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,          \
                               const Tensor<T>&, Padding, int);             \
  template Tensor<T> conv_transpose2x2<T>(const Tensor<T>&, const Tensor<T>&, \
                                          const Tensor<T>&);                \
  template Tensor<T> maxpool2x2<T>(const Tensor<T>&);                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                             \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                          \
  template Tensor<T> batchnorm<T>(const Tensor<T>&, const Tensor<T>&,       \
                                  const Tensor<T>&, BatchNormState<T>&,     \
                                  BatchNormMode, T, T);                     \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&);              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> sum<T>(const Tensor<T>&);                              \
  template Tensor<T> bce<T>(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> batch_bce<T>(const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> mean_of_scalars<T>(const std::vector<Tensor<T>>&);

DCU_INSTANTIATE_OPS(float)
DCU_INSTANTIATE_OPS(double)

#undef DCU_INSTANTIATE_OPS

}  // namespace dcu
