#include "dcu/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "dcu/metrics.hpp"

namespace dcu {

void TrainConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ValueError("train config: beta1 and beta2 must lie in (0, 1)");
  }
  if (lr < 0.0) throw ValueError("train config: learning rate must be >= 0");
  if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("train config: batch size must be >= 1");
  if (folds < 2) throw ValueError("train config: fold count must be >= 2");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValueError("train config: val fraction must lie in [0, 1)");
  }
}

std::vector<std::int32_t> FoldPlan::train_indices(std::size_t held_out) const {
  std::vector<std::int32_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f == held_out) continue;
    out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void FoldPlan::check(std::int64_t size) const {
  std::vector<char> seen(static_cast<std::size_t>(size), 0);
  std::size_t min_size = static_cast<std::size_t>(size), max_size = 0;
  for (const auto& fold : folds) {
    min_size = std::min(min_size, fold.size());
    max_size = std::max(max_size, fold.size());
    for (std::int32_t idx : fold) {
      if (idx < 0 || idx >= size || seen[static_cast<std::size_t>(idx)]) {
        throw Error("fold plan: folds are not disjoint over 0.." +
                    std::to_string(size - 1));
      }
      seen[static_cast<std::size_t>(idx)] = 1;
    }
  }
  for (char s : seen) {
    if (!s) throw Error("fold plan: folds do not cover the dataset");
  }
  if (max_size - min_size > 1) {
    throw Error("fold plan: fold sizes differ by more than 1");
  }
}

FoldPlan kfold_split(std::int64_t dataset_size, std::int32_t k,
                     std::uint64_t seed,
                     std::span<const std::string> groups) {
  if (k < 2) throw ValueError("kfold_split: k must be >= 2");
  if (dataset_size < 1) throw ValueError("kfold_split: empty dataset");
  std::mt19937_64 rng(seed);
  FoldPlan plan;
  plan.folds.resize(static_cast<std::size_t>(k));

  if (groups.empty()) {
    if (k > dataset_size) {
      throw ValueError("kfold_split: k exceeds the number of items");
    }
    std::vector<std::int32_t> order(static_cast<std::size_t>(dataset_size));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      plan.folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
    }
  } else {
    if (static_cast<std::int64_t>(groups.size()) != dataset_size) {
      throw ValueError("kfold_split: group label count does not match the "
                       "dataset size");
    }
    // distinct groups in first-appearance order, then shuffled
    std::vector<std::string> distinct;
    std::unordered_map<std::string, std::vector<std::int32_t>> members;
    for (std::int64_t i = 0; i < dataset_size; ++i) {
      const std::string& g = groups[static_cast<std::size_t>(i)];
      auto [it, inserted] = members.try_emplace(g);
      if (inserted) distinct.push_back(g);
      it->second.push_back(static_cast<std::int32_t>(i));
    }
    if (k > static_cast<std::int32_t>(distinct.size())) {
      throw ValueError("kfold_split: k=" + std::to_string(k) + " exceeds the " +
                       std::to_string(distinct.size()) + " distinct groups");
    }
    std::shuffle(distinct.begin(), distinct.end(), rng);
    // whole groups go to the currently smallest fold
    for (const std::string& g : distinct) {
      std::size_t target = 0;
      for (std::size_t f = 1; f < plan.folds.size(); ++f) {
        if (plan.folds[f].size() < plan.folds[target].size()) target = f;
      }
      const auto& idxs = members[g];
      plan.folds[target].insert(plan.folds[target].end(), idxs.begin(),
                                idxs.end());
    }
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::vector<NamedParam<T>>& params,
                                const TrainConfig& config)
    : params_(&params),
      lr_(static_cast<T>(config.lr)),
      beta1_(static_cast<T>(config.beta1)),
      beta2_(static_cast<T>(config.beta2)),
      eps_(static_cast<T>(config.eps)) {
  config.validate();
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = static_cast<std::size_t>(params[i].tensor.numel());
    m_[i].assign(n, T{0});
    v_[i].assign(n, T{0});
  }
}

template <typename T>
void AdamOptimizer<T>::step() {
  ++t_;
  const T bc1 = T{1} - std::pow(beta1_, static_cast<T>(t_));
  const T bc2 = T{1} - std::pow(beta2_, static_cast<T>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    NamedParam<T>& p = (*params_)[i];
    if (!p.tensor.has_grad()) continue;  // untouched this step
    std::span<const T> g = p.tensor.grad();
    std::span<T> w = p.tensor.mutable_data();
    std::vector<T>& m = m_[i];
    std::vector<T>& v = v_[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw NumericError("adam_step: non-finite gradient for parameter " +
                           p.path);
      }
      m[j] = beta1_ * m[j] + (T{1} - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (T{1} - beta2_) * g[j] * g[j];
      const T m_hat = m[j] / bc1;
      const T v_hat = v[j] / bc2;
      w[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

namespace {

template <typename T>
GrayImage tensor_image_to_gray(std::span<const T> plane, std::int32_t w,
                               std::int32_t h, T scale) {
  GrayImage img(w, h, 8);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = static_cast<double>(plane[i] * scale);
    img.pixels[i] = static_cast<std::uint16_t>(
        std::clamp<double>(std::llround(v), 0.0, 255.0));
  }
  return img;
}

}  // namespace

template <typename T>
double evaluate_tanimoto(Model<T>& model, const DatasetManifest& data,
                         std::span<const std::int32_t> indices) {
  if (indices.empty()) return 0.0;
  NoGradGuard guard;
  double acc = 0.0;
  for (std::int32_t idx : indices) {
    const std::int32_t one[1] = {idx};
    SampleBatch<T> sample = load_batch<T>(data, one);
    Tensor<T> pred = model.forward(sample.images, BatchNormMode::inference);
    const std::int32_t w = static_cast<std::int32_t>(pred.shape().w);
    const std::int32_t h = static_cast<std::int32_t>(pred.shape().h);
    const GrayImage pred_img =
        tensor_image_to_gray<T>(pred.data(), w, h, T{255});
    const GrayImage truth_img =
        tensor_image_to_gray<T>(sample.masks.data(), w, h, T{255});
    acc += tanimoto(pred_img, truth_img);
  }
  return acc / static_cast<double>(indices.size());
}

std::string TrainResult::log_csv() const {
  std::ostringstream os;
  os << "epoch,loss,val_tanimoto\n";
  char buf[96];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", e.epoch, e.loss,
                  e.val_tanimoto);
    os << buf;
  }
  if (aborted) os << "aborted,,\n";
  return os.str();
}

template <typename T>
TrainResult train(Model<T>& model, const DatasetManifest& data,
                  std::span<const std::int32_t> train_indices,
                  std::span<const std::int32_t> val_indices,
                  const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  if (train_indices.empty()) {
    throw ValueError("train: no training indices");
  }
  model.set_bn_momentum(static_cast<T>(config.bn_momentum));

  // preload once; batches are assembled in memory
  SampleBatch<T> all = load_batch<T>(data, train_indices);
  const std::int64_t hw = all.images.shape().h * all.images.shape().w;
  const T ppn_scale =
      config.per_pixel_norm ? T{1} / static_cast<T>(hw) : T{1};

  std::mt19937_64 rng(config.seed);
  AdamOptimizer<T> optimizer(model.parameters(), config);
  TrainResult result;
  std::vector<std::vector<T>> last_good = model.snapshot();

  // one seeded shuffle fixes the batch composition for the whole run, so a
  // zero learning rate yields a constant loss log
  std::vector<std::int64_t> order(train_indices.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  for (std::int32_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::int64_t batches = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::int64_t n = static_cast<std::int64_t>(end - start);
      std::vector<T> images(static_cast<std::size_t>(n * hw));
      std::vector<T> masks(images.size());
      for (std::int64_t b = 0; b < n; ++b) {
        const std::int64_t src = order[start + static_cast<std::size_t>(b)];
        std::copy_n(all.images.data().begin() + src * hw, hw,
                    images.begin() + b * hw);
        std::copy_n(all.masks.data().begin() + src * hw, hw,
                    masks.begin() + b * hw);
      }
      const Shape shape{n, 1, all.images.shape().h, all.images.shape().w};
      Tensor<T> x = Tensor<T>::from_data(shape, std::move(images));
      Tensor<T> y = Tensor<T>::from_data(shape, std::move(masks));
      try {
        Tensor<T> pred = model.forward(x, BatchNormMode::train);
        Tensor<T> loss = batch_bce(pred, y, ppn_scale);
        epoch_loss += static_cast<double>(loss.item());
        ++batches;
        if (config.lr > 0.0) {
          backward(loss);
          optimizer.step();
          model.zero_grad();
        }
      } catch (const NumericError& e) {
        std::fprintf(stderr, "DEBUG divergence: %s\n", e.what());  // TODO remove
        diverged = true;
        break;
      }
    }
    if (diverged) {
      model.restore(last_good);
      result.aborted = true;
      break;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    entry.val_tanimoto = evaluate_tanimoto(model, data, val_indices);
    result.log.push_back(entry);
    result.final_val_tanimoto = entry.val_tanimoto;
    last_good = model.snapshot();
  }
  if (checkpoint) {
    model.save_checkpoint(*checkpoint);
  }
  return result;
}

std::string CvReport::to_csv() const {
  std::ostringstream os;
  os << "fold,tanimoto\n";
  char buf[64];
  for (const CvFoldRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g\n", r.fold, r.tanimoto);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.9g\n", mean);
  os << buf;
  std::snprintf(buf, sizeof(buf), "stddev,%.9g\n", stddev);
  os << buf;
  std::snprintf(buf, sizeof(buf), "mean_per_image,%.9g\n", mean_per_image);
  os << buf;
  return os.str();
}

template <typename T>
CvReport cross_validate(const std::function<GraphSpec()>& spec_builder,
                        const DatasetManifest& data,
                        const TrainConfig& config) {
  config.validate();
  const std::int64_t n = static_cast<std::int64_t>(data.items.size());
  const std::vector<std::string> labels = data.group_labels();
  const bool grouped =
      std::any_of(labels.begin(), labels.end(),
                  [](const std::string& s) { return !s.empty(); });
  FoldPlan plan = kfold_split(n, config.folds, config.seed,
                              grouped ? std::span<const std::string>(labels)
                                      : std::span<const std::string>());
  CvReport report;
  double weighted = 0.0;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    TrainConfig fold_config = config;
    fold_config.seed =
        config.seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(f) + 1);
    Model<T> model(spec_builder(), fold_config.seed);
    const std::vector<std::int32_t> train_idx = plan.train_indices(f);
    TrainResult r = train(model, data, train_idx, plan.folds[f], fold_config);
    CvFoldRow row;
    row.fold = static_cast<std::int32_t>(f) + 1;
    row.tanimoto = r.final_val_tanimoto;
    report.rows.push_back(row);
    weighted += row.tanimoto * static_cast<double>(plan.folds[f].size());
  }
  const double k = static_cast<double>(report.rows.size());
  for (const CvFoldRow& r : report.rows) report.mean += r.tanimoto / k;
  for (const CvFoldRow& r : report.rows) {
    report.stddev += (r.tanimoto - report.mean) * (r.tanimoto - report.mean) / k;
  }
  report.stddev = std::sqrt(report.stddev);
  report.mean_per_image = weighted / static_cast<double>(n);
  return report;
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

template double evaluate_tanimoto<float>(Model<float>&, const DatasetManifest&,
                                         std::span<const std::int32_t>);
template double evaluate_tanimoto<double>(Model<double>&,
                                          const DatasetManifest&,
                                          std::span<const std::int32_t>);

template TrainResult train<float>(Model<float>&, const DatasetManifest&,
                                  std::span<const std::int32_t>,
                                  std::span<const std::int32_t>,
                                  const TrainConfig&,
                                  const std::optional<std::filesystem::path>&);
template TrainResult train<double>(Model<double>&, const DatasetManifest&,
                                   std::span<const std::int32_t>,
                                   std::span<const std::int32_t>,
                                   const TrainConfig&,
                                   const std::optional<std::filesystem::path>&);

template CvReport cross_validate<float>(const std::function<GraphSpec()>&,
                                        const DatasetManifest&,
                                        const TrainConfig&);
template CvReport cross_validate<double>(const std::function<GraphSpec()>&,
                                         const DatasetManifest&,
                                         const TrainConfig&);

}  // namespace dcu
