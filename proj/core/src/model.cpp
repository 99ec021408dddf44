#include "dcu/model.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include "dcu/checkpoint.hpp"

namespace dcu {

namespace {

template <typename T>
Tensor<T> glorot_uniform(const Shape& shape, std::int64_t fan_in,
                         std::int64_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> values(static_cast<std::size_t>(shape.numel()));
  for (T& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(shape, std::move(values));
}

}  // namespace

template <typename T>
Model<T>::Model(GraphSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.layers.empty() || spec_.output < 0) {
    throw ValueError("model: graph spec has no layers or no output");
  }
  // static type-check before any allocation
  infer_shapes(spec_, 1, spec_.spatial_divisor, spec_.spatial_divisor);

  std::mt19937_64 rng(seed);
  states_.resize(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    LayerState& st = states_[i];
    if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) {
      const std::int64_t cin =
          spec_.layers[static_cast<std::size_t>(l.inputs.at(0))].out_channels;
      const Shape w_shape{l.filters, cin, l.kernel_h, l.kernel_w};
      const std::int64_t k = static_cast<std::int64_t>(l.kernel_h) * l.kernel_w;
      st.weight = glorot_uniform<T>(w_shape, cin * k, l.filters * k, rng);
      st.weight.set_requires_grad(true);
      params_.push_back({l.path + "/weight", st.weight});
      if (l.bias) {
        st.bias = Tensor<T>::zeros(Shape{1, 1, 1, l.filters});
        st.bias.set_requires_grad(true);
        params_.push_back({l.path + "/bias", st.bias});
      }
    } else if (l.kind == LayerKind::batchnorm) {
      const Shape vec{1, 1, 1, l.out_channels};
      if (l.bn_scale) {
        st.gamma = Tensor<T>::full(vec, T{1});
        st.gamma.set_requires_grad(true);
        params_.push_back({l.path + "/gamma", st.gamma});
      }
      st.beta = Tensor<T>::zeros(vec);
      st.beta.set_requires_grad(true);
      params_.push_back({l.path + "/beta", st.beta});
      st.bn.moving_mean.assign(static_cast<std::size_t>(l.out_channels), T{0});
      st.bn.moving_var.assign(static_cast<std::size_t>(l.out_channels), T{1});
    }
  }
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& input, BatchNormMode mode) {
  const Shape in_shape = input.shape();
  if (in_shape.c != spec_.in_channels) {
    throw ShapeError("model: input has " + std::to_string(in_shape.c) +
                     " channels, architecture expects " +
                     std::to_string(spec_.in_channels));
  }
  infer_shapes(spec_, in_shape.n, in_shape.h, in_shape.w);

  std::vector<Tensor<T>> outs(spec_.layers.size());
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    LayerState& st = states_[i];
    auto in = [&](std::size_t which = 0) -> const Tensor<T>& {
      return outs[static_cast<std::size_t>(l.inputs[which])];
    };
    switch (l.kind) {
      case LayerKind::input:
        outs[i] = input;
        break;
      case LayerKind::conv:
        outs[i] = conv2d(in(), st.weight, st.bias, l.padding, l.stride);
        break;
      case LayerKind::conv_transpose:
        outs[i] = conv_transpose2x2(in(), st.weight, st.bias);
        break;
      case LayerKind::maxpool:
        outs[i] = maxpool2x2(in());
        break;
      case LayerKind::relu:
        outs[i] = relu(in());
        break;
      case LayerKind::sigmoid:
        outs[i] = sigmoid(in());
        break;
      case LayerKind::batchnorm:
        outs[i] = batchnorm(in(), st.gamma, st.beta, st.bn, mode, bn_momentum_,
                            bn_eps_);
        break;
      case LayerKind::concat: {
        std::vector<Tensor<T>> xs;
        xs.reserve(l.inputs.size());
        for (std::size_t k = 0; k < l.inputs.size(); ++k) xs.push_back(in(k));
        outs[i] = concat(xs);
        break;
      }
      case LayerKind::add:
        outs[i] = add(in(0), in(1));
        break;
    }
  }
  return outs[static_cast<std::size_t>(spec_.output)];
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& input) {
  NoGradGuard guard;
  return forward(input, BatchNormMode::inference);
}

template <typename T>
std::int64_t Model<T>::allocated_elements() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  for (const auto& st : states_) {
    n += static_cast<std::int64_t>(st.bn.moving_mean.size());
    n += static_cast<std::int64_t>(st.bn.moving_var.size());
  }
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Model<T>::save_checkpoint(const std::filesystem::path& file) const {
  std::vector<CheckpointRecord> records;
  auto add = [&records](const std::string& name, std::vector<std::uint32_t> dims,
                        auto&& span) {
    CheckpointRecord r;
    r.name = name;
    r.dims = std::move(dims);
    r.values.assign(span.begin(), span.end());
    records.push_back(std::move(r));
  };
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const LayerState& st = states_[i];
    if (st.weight.defined()) {
      const Shape& s = st.weight.shape();
      add(l.path + "/weight",
          {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
           static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)},
          st.weight.data());
    }
    if (st.bias.defined()) {
      add(l.path + "/bias", {static_cast<std::uint32_t>(st.bias.numel())},
          st.bias.data());
    }
    if (st.gamma.defined()) {
      add(l.path + "/gamma", {static_cast<std::uint32_t>(st.gamma.numel())},
          st.gamma.data());
    }
    if (st.beta.defined()) {
      add(l.path + "/beta", {static_cast<std::uint32_t>(st.beta.numel())},
          st.beta.data());
    }
    if (l.kind == LayerKind::batchnorm) {
      std::vector<float> mean(st.bn.moving_mean.begin(),
                              st.bn.moving_mean.end());
      std::vector<float> var(st.bn.moving_var.begin(), st.bn.moving_var.end());
      if (mean.empty()) {  // never run: persist the init statistics
        mean.assign(static_cast<std::size_t>(l.out_channels), 0.0f);
        var.assign(static_cast<std::size_t>(l.out_channels), 1.0f);
      }
      add(l.path + "/moving_mean",
          {static_cast<std::uint32_t>(mean.size())}, std::span<const float>(mean));
      add(l.path + "/moving_var",
          {static_cast<std::uint32_t>(var.size())}, std::span<const float>(var));
    }
  }
  write_checkpoint(file, records);
}

template <typename T>
void Model<T>::load_checkpoint(const std::filesystem::path& file) {
  const std::vector<CheckpointRecord> records = read_checkpoint(file);
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;

  auto fetch = [&](const std::string& name,
                   std::int64_t expected) -> const CheckpointRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint is missing record " + name);
    }
    if (static_cast<std::int64_t>(it->second->values.size()) != expected) {
      throw DataError("checkpoint record " + name + " has " +
                      std::to_string(it->second->values.size()) +
                      " values, model expects " + std::to_string(expected));
    }
    return *it->second;
  };
  auto fill = [&](Tensor<T>& t, const std::string& name) {
    const CheckpointRecord& r = fetch(name, t.numel());
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      dst[i] = static_cast<T>(r.values[i]);
    }
  };
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    LayerState& st = states_[i];
    if (st.weight.defined()) fill(st.weight, l.path + "/weight");
    if (st.bias.defined()) fill(st.bias, l.path + "/bias");
    if (st.gamma.defined()) fill(st.gamma, l.path + "/gamma");
    if (st.beta.defined()) fill(st.beta, l.path + "/beta");
    if (l.kind == LayerKind::batchnorm) {
      const auto& mean = fetch(l.path + "/moving_mean", l.out_channels);
      const auto& var = fetch(l.path + "/moving_var", l.out_channels);
      st.bn.moving_mean.assign(mean.values.begin(), mean.values.end());
      st.bn.moving_var.assign(var.values.begin(), var.values.end());
      st.bn.updates = 1;  // loaded statistics count as populated
    }
  }
}

template <typename T>
std::vector<std::vector<T>> Model<T>::snapshot() const {
  std::vector<std::vector<T>> snap;
  snap.reserve(params_.size() + 2 * states_.size());
  for (const auto& p : params_) {
    snap.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  for (const auto& st : states_) {
    snap.push_back(st.bn.moving_mean);
    snap.push_back(st.bn.moving_var);
  }
  return snap;
}

template <typename T>
void Model<T>::restore(const std::vector<std::vector<T>>& snap) {
  std::size_t idx = 0;
  for (auto& p : params_) {
    auto dst = p.tensor.mutable_data();
    const auto& src = snap.at(idx++);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
  }
  for (auto& st : states_) {
    st.bn.moving_mean = snap.at(idx++);
    st.bn.moving_var = snap.at(idx++);
  }
}

template class Model<float>;
template class Model<double>;

}  // namespace dcu
