#pragma once

#include <string>
#include <vector>

#include "dcu/gray_image.hpp"

namespace dcu {

/// Otsu's threshold: the split of the histogram into {p < t} / {p >= t}
/// maximizing between-class variance, with ties broken toward the smaller
/// split point. Returned as the half-integer t - 0.5 so that
/// binarize(img, T) with the strict > comparison reproduces the Otsu
/// partition exactly. Rejects constant images.
double otsu_threshold(const GrayImage& img);

/// pixel > threshold -> 255, else 0. Output is an 8-bit mask.
GrayImage binarize(const GrayImage& img, double threshold);

/// |A∩B| / |A∪B| on strictly binary 8-bit masks (foreground 255). Both
/// masks empty -> 1.0.
double jaccard(const GrayImage& a, const GrayImage& b);

/// 1 - sum|a_i - b_i| / (W*L*2^depth). Dimensions and depth must match.
double mae_similarity(const GrayImage& a, const GrayImage& b);

/// sum(a_i b_i) / sum(a_i^2 + b_i^2 - a_i b_i), accumulated in wide
/// integers so that zero padding both images leaves the value bitwise
/// unchanged. Equals jaccard exactly on binary masks; both images all-zero
/// -> 1.0.
double tanimoto(const GrayImage& a, const GrayImage& b);

/// Single-scale SSIM over a dense sliding uniform window with the standard
/// stabilizers C1=(K1*L)^2, C2=(K2*L)^2, L = 2^depth - 1.
double ssim(const GrayImage& a, const GrayImage& b, std::int32_t window = 8,
            double k1 = 0.01, double k2 = 0.03);

struct PairMetrics {
  double jaccard = 0.0;
  double mae = 0.0;
  double tanimoto = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<PairMetrics> per_pair;
  PairMetrics mean;
  PairMetrics stddev;
};

MetricReport make_report(const std::vector<PairMetrics>& per_pair);

/// Symmetric zero margins growing each extent to round(extent * ratio).
GrayImage pad_to_ratio(const GrayImage& img, double ratio);

struct RobustnessRow {
  std::string measure;  // jaccard | mae | tanimoto | ssim
  std::int32_t size_divisor = 1;
  double ratio = 1.0;
  std::int32_t pair_id = 0;
  double value = 0.0;
};

struct RobustnessTable {
  std::vector<RobustnessRow> rows;
  std::string to_csv() const;  // header, rows, aggregate footer
};

/// Re-evaluates every measure for each (size divisor, ratio) distortion of
/// each (prediction, truth) pair: size change down-samples both images,
/// ratio change pads both with symmetric blank margins. Verifies that the
/// tanimoto series is exactly constant across ratios. jaccard runs the
/// threshold->binarize pipeline on the prediction at every setting.
RobustnessTable robustness_experiment(
    const std::vector<std::pair<GrayImage, GrayImage>>& pairs,
    const std::vector<std::int32_t>& size_divisors,
    const std::vector<double>& ratios);

}  // namespace dcu
