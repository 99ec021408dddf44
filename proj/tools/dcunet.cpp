// Command-line front end: architecture inspection, training,
// cross-validation, metric comparison, the robustness experiment, and
// synthetic data generation.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcu/builders.hpp"
#include "dcu/data_io.hpp"
#include "dcu/metrics.hpp"
#include "dcu/model.hpp"
#include "dcu/param_count.hpp"
#include "dcu/training.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DCUNET_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw UsageError("DCUNET_SEED is not a valid unsigned integer");
    }
  }
  return 42;
}

std::vector<std::int32_t> parse_int_list(const std::string& csv,
                                         const char* what) {
  std::vector<std::int32_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (...) {
      throw UsageError(std::string("bad ") + what + " entry: '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + " list is empty");
  return out;
}

std::vector<double> parse_double_list(const std::string& csv,
                                      const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (...) {
      throw UsageError(std::string("bad ") + what + " entry: '" + tok + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + " list is empty");
  return out;
}

dcu::GraphSpec build_arch(const std::string& arch,
                          const std::vector<std::int32_t>& filters,
                          std::int32_t in_channels) {
  if (filters.size() != 5) {
    throw UsageError("--filters needs exactly 5 comma-separated widths");
  }
  if (arch == "unet") return dcu::build_unet(filters, in_channels);
  if (arch == "multires") {
    return dcu::build_multiresunet(1.67, filters, in_channels);
  }
  if (arch == "dcunet") return dcu::build_dcunet(1.67, filters, in_channels);
  throw UsageError("unknown --arch '" + arch + "'");
}

std::vector<std::int32_t> default_filters(const std::string& arch) {
  if (arch == "unet") return dcu::kUnetStageFilters;
  if (arch == "multires") return dcu::kMultiResBaseU;
  if (arch == "dcunet") return dcu::kDcBaseU;
  throw UsageError("unknown --arch '" + arch + "'");
}

std::int64_t reference_total(const std::string& arch) {
  if (arch == "unet") return dcu::kReferenceTotalUnet;
  if (arch == "multires") return dcu::kReferenceTotalMultiRes;
  return dcu::kReferenceTotalDc;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw dcu::DataError("cannot write " + out_path);
  os << text;
}

// ---------------------------------------------------------------------------

int cmd_params(const std::string& arch, const std::string& convention,
               const std::string& filters_csv, std::int32_t in_channels,
               const std::string& out_path) {
  std::ostringstream os;
  if (convention == "sweep") {
    os << "convention,unet,multires,dcunet,best\n";
    for (const dcu::SweepRow& row : dcu::convention_sweep(in_channels)) {
      os << row.convention.label() << "," << row.unet << "," << row.multires
         << "," << row.dcunet << "," << (row.best ? "best" : "") << "\n";
    }
    emit(os.str(), out_path);
    return 0;
  }
  if (convention != "fixed") {
    throw UsageError("--convention must be 'sweep' or 'fixed'");
  }
  const std::vector<std::int32_t> filters =
      filters_csv.empty() ? default_filters(arch)
                          : parse_int_list(filters_csv, "--filters");
  const dcu::GraphSpec spec = build_arch(arch, filters, in_channels);
  const dcu::CountConvention conv = dcu::reconciled_convention();
  const dcu::ParamLedger ledger = dcu::count_params(spec, conv);
  os << "layer,params,desc\n";
  for (const dcu::ParamRow& row : ledger.rows) {
    os << row.path << "," << row.params << "," << row.desc << "\n";
  }
  os << "trainable,," << ledger.trainable << "\n";
  os << "non_trainable,," << ledger.non_trainable << "\n";
  os << "total,," << ledger.total << "\n";
  os << "convention,," << conv.label() << "\n";
  if (filters == default_filters(arch) && in_channels == 1) {
    const std::int64_t ref = reference_total(arch);
    os << "reference_total,," << ref << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f",
                  100.0 * std::abs(static_cast<double>(ledger.total - ref)) /
                      static_cast<double>(ref));
    os << "reference_error_percent,," << buf << "\n";
  }
  emit(os.str(), out_path);
  return 0;
}

int cmd_summarize(const std::string& arch, const std::string& filters_csv,
                  std::int32_t in_channels, std::int64_t h, std::int64_t w,
                  const std::string& out_path) {
  const std::vector<std::int32_t> filters =
      filters_csv.empty() ? default_filters(arch)
                          : parse_int_list(filters_csv, "--filters");
  const dcu::GraphSpec spec = build_arch(arch, filters, in_channels);
  emit(dcu::summarize(spec, h, w), out_path);
  return 0;
}

int cmd_train(const std::string& arch, const std::string& filters_csv,
              const std::string& manifest_path, const dcu::TrainConfig& config,
              const std::string& out_dir) {
  const std::vector<std::int32_t> filters =
      filters_csv.empty() ? default_filters(arch)
                          : parse_int_list(filters_csv, "--filters");
  config.validate();
  const dcu::GraphSpec spec = build_arch(arch, filters, 1);

  const dcu::DatasetManifest manifest = dcu::load_manifest(manifest_path);
  const std::int64_t n = static_cast<std::int64_t>(manifest.items.size());
  if (n < 2) throw dcu::DataError("manifest needs at least 2 items");

  // deterministic held-out split from the tail of a seeded shuffle
  std::vector<std::int32_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ 0xD1B54A32D192ED03ull);
  std::shuffle(order.begin(), order.end(), rng);
  std::int64_t n_val = static_cast<std::int64_t>(
      std::llround(config.val_fraction * static_cast<double>(n)));
  n_val = std::clamp<std::int64_t>(n_val, config.val_fraction > 0.0 ? 1 : 0,
                                   n - 1);
  std::vector<std::int32_t> train_idx(order.begin(), order.end() - n_val);
  std::vector<std::int32_t> val_idx(order.end() - n_val, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  std::filesystem::create_directories(out_dir);
  dcu::Model<float> model(spec, config.seed);
  const dcu::TrainResult result =
      dcu::train(model, manifest, train_idx, val_idx, config,
                 std::filesystem::path(out_dir) / "model.ckpt");
  {
    std::ofstream os(std::filesystem::path(out_dir) / "train_log.csv",
                     std::ios::trunc);
    if (!os) throw dcu::DataError("cannot write train log under " + out_dir);
    os << result.log_csv();
  }
  std::cout << result.log_csv();
  if (result.aborted) {
    std::cerr << "training diverged; checkpoint holds the last good epoch\n";
    return 3;
  }
  return 0;
}

int cmd_cv(const std::string& arch, const std::string& filters_csv,
           const std::string& manifest_path, const dcu::TrainConfig& config,
           const std::string& out_path) {
  const std::vector<std::int32_t> filters =
      filters_csv.empty() ? default_filters(arch)
                          : parse_int_list(filters_csv, "--filters");
  config.validate();
  const dcu::DatasetManifest manifest = dcu::load_manifest(manifest_path);
  auto builder = [&]() { return build_arch(arch, filters, 1); };
  const dcu::CvReport report =
      dcu::cross_validate<float>(builder, manifest, config);
  emit(report.to_csv(), out_path);
  return 0;
}

int cmd_eval(const std::string& arch, const std::string& filters_csv,
             const std::string& ckpt, const std::string& manifest_path,
             const std::string& out_path) {
  const std::vector<std::int32_t> filters =
      filters_csv.empty() ? default_filters(arch)
                          : parse_int_list(filters_csv, "--filters");
  const dcu::GraphSpec spec = build_arch(arch, filters, 1);
  dcu::Model<float> model(spec, 0);
  model.load_checkpoint(ckpt);
  const dcu::DatasetManifest manifest = dcu::load_manifest(manifest_path);
  if (manifest.items.empty()) throw dcu::DataError("manifest has no items");

  std::vector<dcu::PairMetrics> per_pair;
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    const std::int32_t idx[1] = {static_cast<std::int32_t>(i)};
    dcu::SampleBatch<float> sample = dcu::load_batch<float>(manifest, idx);
    dcu::Tensor<float> pred = model.predict(sample.images);
    const std::int32_t w = static_cast<std::int32_t>(pred.shape().w);
    const std::int32_t h = static_cast<std::int32_t>(pred.shape().h);
    dcu::GrayImage pred_img(w, h, 8);
    dcu::GrayImage truth_img(w, h, 8);
    for (std::int64_t p = 0; p < w * h; ++p) {
      pred_img.pixels[static_cast<std::size_t>(p)] =
          static_cast<std::uint16_t>(std::clamp(
              std::lround(pred.data()[static_cast<std::size_t>(p)] * 255.0f),
              0l, 255l));
      truth_img.pixels[static_cast<std::size_t>(p)] =
          sample.masks.data()[static_cast<std::size_t>(p)] > 0.5f ? 255 : 0;
    }
    dcu::PairMetrics m;
    m.tanimoto = dcu::tanimoto(pred_img, truth_img);
    m.mae = dcu::mae_similarity(pred_img, truth_img);
    m.ssim = dcu::ssim(pred_img, truth_img,
                       std::min<std::int32_t>(8, std::min(w, h)));
    const dcu::GrayImage pred_mask =
        dcu::binarize(pred_img, dcu::otsu_threshold(pred_img));
    m.jaccard = dcu::jaccard(pred_mask, truth_img);
    per_pair.push_back(m);
  }
  const dcu::MetricReport report = dcu::make_report(per_pair);
  std::ostringstream os;
  os << "item,jaccard,mae,tanimoto,ssim\n";
  char buf[160];
  for (std::size_t i = 0; i < per_pair.size(); ++i) {
    const dcu::PairMetrics& m = per_pair[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", i, m.jaccard,
                  m.mae, m.tanimoto, m.ssim);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.9g,%.9g,%.9g,%.9g\n",
                report.mean.jaccard, report.mean.mae, report.mean.tanimoto,
                report.mean.ssim);
  os << buf;
  std::snprintf(buf, sizeof(buf), "stddev,%.9g,%.9g,%.9g,%.9g\n",
                report.stddev.jaccard, report.stddev.mae,
                report.stddev.tanimoto, report.stddev.ssim);
  os << buf;
  emit(os.str(), out_path);
  return 0;
}

int cmd_metrics(const std::string& pred_path, const std::string& truth_path,
                const std::string& measure, bool otsu,
                const std::string& out_path) {
  const dcu::GrayImage pred = dcu::load_pgm(pred_path);
  const dcu::GrayImage truth = dcu::load_pgm(truth_path);
  std::ostringstream os;
  char buf[64];
  auto put = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g\n", name, v);
    os << buf;
  };
  const bool want_all = measure == "all";
  if (want_all || measure == "jaccard") {
    if (otsu) {
      // threshold -> binarize -> jaccard, in that order
      const double t = dcu::otsu_threshold(pred);
      const dcu::GrayImage pred_mask = dcu::binarize(pred, t);
      const dcu::GrayImage truth_mask =
          truth.is_binary() ? truth
                            : dcu::binarize(truth, truth.max_value() / 2.0);
      put("jaccard", dcu::jaccard(pred_mask, truth_mask));
    } else {
      put("jaccard", dcu::jaccard(pred, truth));  // rejects non-binary input
    }
  }
  if (want_all || measure == "mae") {
    put("mae", dcu::mae_similarity(pred, truth));
  }
  if (want_all || measure == "tanimoto") {
    put("tanimoto", dcu::tanimoto(pred, truth));
  }
  if (want_all || measure == "ssim") {
    put("ssim", dcu::ssim(pred, truth,
                          std::min<std::int32_t>(
                              8, std::min(pred.width, pred.height))));
  }
  if (os.str().empty()) {
    throw UsageError("--measure must be all|jaccard|mae|tanimoto|ssim");
  }
  emit(os.str(), out_path);
  return 0;
}

int cmd_robustness(const std::string& pairs_manifest, const std::string& sizes,
                   const std::string& ratios, const std::string& out_path) {
  const std::vector<std::int32_t> size_divisors =
      parse_int_list(sizes, "--sizes");
  const std::vector<double> ratio_list = parse_double_list(ratios, "--ratios");
  const dcu::DatasetManifest manifest = dcu::load_manifest(pairs_manifest);
  if (manifest.items.empty()) throw dcu::DataError("manifest has no items");
  std::vector<std::pair<dcu::GrayImage, dcu::GrayImage>> pairs;
  for (const dcu::ManifestItem& item : manifest.items) {
    pairs.emplace_back(dcu::load_pgm(manifest.base_dir / item.image),
                       dcu::load_pgm(manifest.base_dir / item.mask));
  }
  const dcu::RobustnessTable table =
      dcu::robustness_experiment(pairs, size_divisors, ratio_list);
  emit(table.to_csv(), out_path);
  return 0;
}

int cmd_synth(std::int32_t count, std::int32_t width, std::int32_t height,
              std::uint64_t seed, std::int32_t groups,
              const std::string& out_dir) {
  const dcu::DatasetManifest manifest =
      dcu::synth_blobs(count, width, height, seed, out_dir, groups);
  std::cout << "wrote " << manifest.items.size() << " image/mask pairs and "
            << "manifest.json under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-decoder segmentation kit: build, train and evaluate "
               "the U-Net, MultiResUNet and DC-UNet architectures"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic,
               "disable any internal parallelism (runs are single-threaded "
               "and seeded either way)");

  std::string arch = "dcunet", filters_csv, out_path, manifest_path;
  std::int32_t in_channels = 1;

  auto* params = app.add_subcommand("params", "per-layer parameter ledger");
  std::string convention = "fixed";
  params->add_option("--arch", arch, "unet|multires|dcunet");
  params->add_option("--convention", convention, "fixed|sweep");
  params->add_option("--filters", filters_csv, "5 stage widths, CSV");
  params->add_option("--in-channels", in_channels, "input channels");
  params->add_option("--out", out_path, "write report here instead of stdout");

  auto* summarize = app.add_subcommand("summarize", "layer-by-layer summary");
  std::int64_t in_h = 256, in_w = 128;
  summarize->add_option("--arch", arch, "unet|multires|dcunet");
  summarize->add_option("--filters", filters_csv, "5 stage widths, CSV");
  summarize->add_option("--in-channels", in_channels, "input channels");
  summarize->add_option("--height", in_h, "input height for shape column");
  summarize->add_option("--width", in_w, "input width for shape column");
  summarize->add_option("--out", out_path, "write report here");

  dcu::TrainConfig config;
  config.seed = 0;  // resolved after parsing so DCUNET_SEED can fill it
  bool seed_given = false;
  std::string train_out = "train_out";

  auto* train = app.add_subcommand("train", "train a model on a manifest");
  train->add_option("--arch", arch, "unet|multires|dcunet");
  train->add_option("--filters", filters_csv, "5 stage widths, CSV");
  train->add_option("--manifest", manifest_path, "dataset manifest JSON")
      ->required();
  train->add_option("--epochs", config.epochs, "training epochs");
  train->add_option("--lr", config.lr, "Adam learning rate");
  train->add_option("--batch", config.batch_size, "batch size");
  train->add_option("--val-split", config.val_fraction, "held-out fraction");
  train->add_option("--bn-momentum", config.bn_momentum,
                    "moving-statistics momentum");
  train->add_option("--seed", config.seed, "master seed")
      ->each([&seed_given](const std::string&) { seed_given = true; });
  train->add_option("--out", train_out, "output directory (checkpoint + log)");

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  cv->add_option("--arch", arch, "unet|multires|dcunet");
  cv->add_option("--filters", filters_csv, "5 stage widths, CSV");
  cv->add_option("--manifest", manifest_path, "dataset manifest JSON")
      ->required();
  cv->add_option("--k", config.folds, "fold count");
  cv->add_option("--epochs", config.epochs, "epochs per fold");
  cv->add_option("--lr", config.lr, "Adam learning rate");
  cv->add_option("--batch", config.batch_size, "batch size");
  cv->add_option("--seed", config.seed, "master seed")
      ->each([&seed_given](const std::string&) { seed_given = true; });
  cv->add_option("--out", out_path, "write the fold report here");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  eval->add_option("--arch", arch, "unet|multires|dcunet");
  eval->add_option("--filters", filters_csv, "5 stage widths, CSV");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--manifest", manifest_path, "dataset manifest JSON")
      ->required();
  eval->add_option("--out", out_path, "write the report here");

  auto* metrics = app.add_subcommand("metrics", "compare two gray images");
  std::string pred_path, truth_path, measure = "all";
  bool otsu = false;
  metrics->add_option("--pred", pred_path, "prediction PGM")->required();
  metrics->add_option("--truth", truth_path, "ground-truth PGM")->required();
  metrics->add_option("--measure", measure, "all|jaccard|mae|tanimoto|ssim");
  metrics->add_flag("--otsu", otsu,
                    "binarize the prediction with Otsu's threshold before "
                    "the jaccard comparison");
  metrics->add_option("--out", out_path, "write the report here");

  auto* robustness =
      app.add_subcommand("robustness", "size/ratio stability experiment");
  std::string sizes = "1,2,4", ratios = "1,1.25,1.5,2";
  robustness->add_option("--pairs", manifest_path, "pairs manifest JSON")
      ->required();
  robustness->add_option("--sizes", sizes, "down-sampling divisors, CSV");
  robustness->add_option("--ratios", ratios, "padding ratios, CSV");
  robustness->add_option("--out", out_path, "write the table here");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::int32_t count = 40, width = 64, height = 64, groups = 0;
  std::string synth_out = "synth_data";
  synth->add_option("--count", count, "number of samples");
  synth->add_option("--width", width, "image width (divisible by 16)");
  synth->add_option("--height", height, "image height (divisible by 16)");
  synth->add_option("--seed", config.seed, "generator seed")
      ->each([&seed_given](const std::string&) { seed_given = true; });
  synth->add_option("--groups", groups, "round-robin group label count");
  synth->add_option("--out", synth_out, "output directory");

  try {
    app.parse(argc, argv);
    if (!seed_given) config.seed = default_seed();

    if (params->parsed()) {
      return cmd_params(arch, convention, filters_csv, in_channels, out_path);
    }
    if (summarize->parsed()) {
      return cmd_summarize(arch, filters_csv, in_channels, in_h, in_w,
                           out_path);
    }
    if (train->parsed()) {
      return cmd_train(arch, filters_csv, manifest_path, config, train_out);
    }
    if (cv->parsed()) {
      return cmd_cv(arch, filters_csv, manifest_path, config, out_path);
    }
    if (eval->parsed()) {
      return cmd_eval(arch, filters_csv, ckpt_path, manifest_path, out_path);
    }
    if (metrics->parsed()) {
      return cmd_metrics(pred_path, truth_path, measure, otsu, out_path);
    }
    if (robustness->parsed()) {
      return cmd_robustness(manifest_path, sizes, ratios, out_path);
    }
    if (synth->parsed()) {
      return cmd_synth(count, width, height, config.seed, groups, synth_out);
    }
    throw UsageError("no subcommand given");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const dcu::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const dcu::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dcu::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dcu::ValueError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const dcu::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
