#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcu/data_io.hpp"
#include "dcu/model.hpp"

namespace dcu {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int32_t epochs = 50;
  std::int32_t batch_size = 4;
  std::int32_t folds = 5;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;   // held-out share when no explicit split given
  double bn_momentum = 0.99;
  bool per_pixel_norm = false;  // divide the loss by the pixel count too

  void validate() const;
};

/// k mutually exclusive index lists covering 0..size-1.
struct FoldPlan {
  std::vector<std::vector<std::int32_t>> folds;

  std::vector<std::int32_t> train_indices(std::size_t held_out) const;
  void check(std::int64_t size) const;  // disjoint, covering, sizes within 1
};

/// Random disjoint folds of approximately equal size. With group labels all
/// items of a group land in the same fold (by-participant splitting) and k
/// must not exceed the number of distinct groups.
FoldPlan kfold_split(std::int64_t dataset_size, std::int32_t k,
                     std::uint64_t seed,
                     std::span<const std::string> groups = {});

/// Bias-corrected Adam over a model's named parameters. Parameters whose
/// gradient is absent in a step are left untouched.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedParam<T>>& params, const TrainConfig& config);

  void step();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<NamedParam<T>>* params_;
  T lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

struct EpochLog {
  std::int32_t epoch = 0;
  double loss = 0.0;          // mean batch loss over the epoch
  double val_tanimoto = 0.0;  // held-out Tanimoto, inference mode
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool aborted = false;  // diverged; checkpoint holds the last good state
  double final_val_tanimoto = 0.0;

  std::string log_csv() const;  // "epoch,loss,val_tanimoto" lines
};

/// Mean Tanimoto of inference-mode predictions against the binary masks,
/// both mapped to 8-bit grayscale (multiplied by 255).
template <typename T>
double evaluate_tanimoto(Model<T>& model, const DatasetManifest& data,
                         std::span<const std::int32_t> indices);

/// Epochs × batches of forward / batch-BCE / backward / Adam on the train
/// indices; logs per-epoch mean loss and held-out Tanimoto. On divergence
/// the last completed epoch's parameters are restored and, when a
/// checkpoint path is given, written out.
template <typename T>
TrainResult train(Model<T>& model, const DatasetManifest& data,
                  std::span<const std::int32_t> train_indices,
                  std::span<const std::int32_t> val_indices,
                  const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint = {});

struct CvFoldRow {
  std::int32_t fold = 0;
  double tanimoto = 0.0;
};

struct CvReport {
  std::vector<CvFoldRow> rows;
  double mean = 0.0;            // mean of fold values
  double stddev = 0.0;          // population std of fold values
  double mean_per_image = 0.0;  // mean over all held-out images

  std::string to_csv() const;  // "(fold, tanimoto)" rows plus footer
};

/// Trains k models, each with one fold held out, and reports the per-fold
/// Tanimoto. Fold seeds derive deterministically from the master seed.
template <typename T>
CvReport cross_validate(const std::function<GraphSpec()>& spec_builder,
                        const DatasetManifest& data,
                        const TrainConfig& config);

extern template class AdamOptimizer<float>;
extern template class AdamOptimizer<double>;

}  // namespace dcu
