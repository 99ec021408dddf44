#include "dcu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dcu/data_io.hpp"

namespace dcu {

GrayImage::GrayImage(std::int32_t w, std::int32_t h, std::int32_t d,
                     std::vector<std::uint16_t> px)
    : width(w), height(h), depth(d), pixels(std::move(px)) {
  if (pixels.empty()) {
    pixels.assign(static_cast<std::size_t>(size()), 0);
  }
  validate();
}

void GrayImage::validate() const {
  if (width <= 0 || height <= 0) {
    throw ValueError("image extents must be positive, got " +
                     std::to_string(width) + "x" + std::to_string(height));
  }
  if (depth != 8 && depth != 16) {
    throw ValueError("image depth must be 8 or 16, got " +
                     std::to_string(depth));
  }
  if (static_cast<std::int64_t>(pixels.size()) != size()) {
    throw ValueError("pixel count " + std::to_string(pixels.size()) +
                     " does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  }
  const std::uint32_t max = max_value();
  for (std::uint16_t p : pixels) {
    if (p > max) {
      throw ValueError("pixel value " + std::to_string(p) +
                       " exceeds depth-" + std::to_string(depth) + " range");
    }
  }
}

bool GrayImage::is_binary() const {
  for (std::uint16_t p : pixels) {
    if (p != 0 && p != 255) return false;
  }
  return true;
}

namespace {

void require_same_dims(const GrayImage& a, const GrayImage& b,
                       const char* op) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(op) + ": image dimensions differ, " +
                     std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  }
}

void require_same_depth(const GrayImage& a, const GrayImage& b,
                        const char* op) {
  if (a.depth != b.depth) {
    throw ValueError(std::string(op) + ": image depths differ, " +
                     std::to_string(a.depth) + " vs " +
                     std::to_string(b.depth));
  }
}

}  // namespace

double otsu_threshold(const GrayImage& img) {
  const std::uint32_t levels = img.max_value() + 1;
  std::vector<std::int64_t> hist(levels, 0);
  for (std::uint16_t p : img.pixels) ++hist[p];

  std::uint32_t lo = 0, hi = levels - 1;
  while (lo < levels && hist[lo] == 0) ++lo;
  while (hi > 0 && hist[hi] == 0) --hi;
  if (lo >= hi) {
    throw ValueError("otsu_threshold: image is constant, no threshold exists");
  }

  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (std::uint32_t v = lo; v <= hi; ++v) {
    sum_all += static_cast<double>(v) * static_cast<double>(hist[v]);
  }
  // split point t: class0 = {p < t}, class1 = {p >= t}
  double best_sigma = -1.0;
  std::uint32_t best_t = lo + 1;
  double w0 = 0.0, sum0 = 0.0;
  for (std::uint32_t t = lo + 1; t <= hi; ++t) {
    w0 += static_cast<double>(hist[t - 1]);
    sum0 += static_cast<double>(t - 1) * static_cast<double>(hist[t - 1]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double d = mu0 - mu1;
    const double sigma = w0 * w1 * d * d;
    if (sigma > best_sigma) {  // strict: ties keep the smaller split
      best_sigma = sigma;
      best_t = t;
    }
  }
  return static_cast<double>(best_t) - 0.5;
}

GrayImage binarize(const GrayImage& img, double threshold) {
  GrayImage out(img.width, img.height, 8);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] = static_cast<double>(img.pixels[i]) > threshold ? 255 : 0;
  }
  return out;
}

double jaccard(const GrayImage& a, const GrayImage& b) {
  require_same_dims(a, b, "jaccard");
  if (!a.is_binary() || !b.is_binary()) {
    throw ValueError("jaccard: inputs must be strictly binary {0,255}; "
                     "binarize first");
  }
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool fa = a.pixels[i] == 255;
    const bool fb = b.pixels[i] == 255;
    inter += fa && fb;
    uni += fa || fb;
  }
  if (uni == 0) return 1.0;  // both empty: identical
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mae_similarity(const GrayImage& a, const GrayImage& b) {
  require_same_dims(a, b, "mae_similarity");
  require_same_depth(a, b, "mae_similarity");
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    acc += static_cast<std::uint64_t>(
        a.pixels[i] > b.pixels[i] ? a.pixels[i] - b.pixels[i]
                                  : b.pixels[i] - a.pixels[i]);
  }
  const double max_e = static_cast<double>(a.size()) *
                       static_cast<double>(std::uint64_t{1} << a.depth);
  return 1.0 - static_cast<double>(acc) / max_e;
}

double tanimoto(const GrayImage& a, const GrayImage& b) {
  require_same_dims(a, b, "tanimoto");
  std::uint64_t sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const std::uint64_t va = a.pixels[i];
    const std::uint64_t vb = b.pixels[i];
    sab += va * vb;
    saa += va * va;
    sbb += vb * vb;
  }
  const std::uint64_t den = saa + sbb - sab;  // >= 0 since a^2+b^2 >= ab
  if (den == 0) return 1.0;  // both images all-zero: identical
  return static_cast<double>(sab) / static_cast<double>(den);
}

double ssim(const GrayImage& a, const GrayImage& b, std::int32_t window,
            double k1, double k2) {
  require_same_dims(a, b, "ssim");
  require_same_depth(a, b, "ssim");
  if (window < 1 || window > std::min(a.width, a.height)) {
    throw ValueError("ssim: window " + std::to_string(window) +
                     " does not fit a " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " image");
  }
  const std::int32_t w = a.width, h = a.height;
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  // integral images; exact in 64-bit integers
  std::vector<std::uint64_t> sa(stride * (h + 1), 0), sb(sa.size(), 0),
      saa(sa.size(), 0), sbb(sa.size(), 0), sab(sa.size(), 0);
  for (std::int32_t y = 0; y < h; ++y) {
    for (std::int32_t x = 0; x < w; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) + 1) * stride + x + 1;
      const std::size_t up = i - stride;
      const std::uint64_t va = a.at(x, y), vb = b.at(x, y);
      sa[i] = sa[i - 1] + sa[up] - sa[up - 1] + va;
      sb[i] = sb[i - 1] + sb[up] - sb[up - 1] + vb;
      saa[i] = saa[i - 1] + saa[up] - saa[up - 1] + va * va;
      sbb[i] = sbb[i - 1] + sbb[up] - sbb[up - 1] + vb * vb;
      sab[i] = sab[i - 1] + sab[up] - sab[up - 1] + va * vb;
    }
  }
  auto box = [&](const std::vector<std::uint64_t>& s, std::int32_t x,
                 std::int32_t y) -> double {
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = y0 + static_cast<std::size_t>(window);
    return static_cast<double>(s[y1 * stride + x + window] -
                               s[y0 * stride + x + window] -
                               s[y1 * stride + x] + s[y0 * stride + x]);
  };
  const double l_max = static_cast<double>(a.max_value());
  const double c1 = (k1 * l_max) * (k1 * l_max);
  const double c2 = (k2 * l_max) * (k2 * l_max);
  const double n = static_cast<double>(window) * window;
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int32_t y = 0; y + window <= h; ++y) {
    for (std::int32_t x = 0; x + window <= w; ++x) {
      const double mu_a = box(sa, x, y) / n;
      const double mu_b = box(sb, x, y) / n;
      const double var_a = std::max(0.0, box(saa, x, y) / n - mu_a * mu_a);
      const double var_b = std::max(0.0, box(sbb, x, y) / n - mu_b * mu_b);
      const double cov = box(sab, x, y) / n - mu_a * mu_b;
      acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  // anti-correlated windows can push the raw mean below zero; the similarity
  // contract is [0, 1]
  return std::clamp(acc / static_cast<double>(count), 0.0, 1.0);
}

MetricReport make_report(const std::vector<PairMetrics>& per_pair) {
  MetricReport r;
  r.per_pair = per_pair;
  if (per_pair.empty()) return r;
  const double n = static_cast<double>(per_pair.size());
  for (const PairMetrics& p : per_pair) {
    r.mean.jaccard += p.jaccard / n;
    r.mean.mae += p.mae / n;
    r.mean.tanimoto += p.tanimoto / n;
    r.mean.ssim += p.ssim / n;
  }
  for (const PairMetrics& p : per_pair) {
    auto sq = [](double d) { return d * d; };
    r.stddev.jaccard += sq(p.jaccard - r.mean.jaccard) / n;
    r.stddev.mae += sq(p.mae - r.mean.mae) / n;
    r.stddev.tanimoto += sq(p.tanimoto - r.mean.tanimoto) / n;
    r.stddev.ssim += sq(p.ssim - r.mean.ssim) / n;
  }
  r.stddev.jaccard = std::sqrt(r.stddev.jaccard);
  r.stddev.mae = std::sqrt(r.stddev.mae);
  r.stddev.tanimoto = std::sqrt(r.stddev.tanimoto);
  r.stddev.ssim = std::sqrt(r.stddev.ssim);
  return r;
}

GrayImage pad_to_ratio(const GrayImage& img, double ratio) {
  if (ratio < 1.0) {
    throw ValueError("pad_to_ratio: ratio must be >= 1, got " +
                     std::to_string(ratio));
  }
  const std::int32_t out_w =
      static_cast<std::int32_t>(std::llround(img.width * ratio));
  const std::int32_t out_h =
      static_cast<std::int32_t>(std::llround(img.height * ratio));
  const std::int32_t left = (out_w - img.width) / 2;
  const std::int32_t top = (out_h - img.height) / 2;
  GrayImage out(out_w, out_h, img.depth);
  for (std::int32_t y = 0; y < img.height; ++y) {
    for (std::int32_t x = 0; x < img.width; ++x) {
      out.at(x + left, y + top) = img.at(x, y);
    }
  }
  return out;
}

namespace {

GrayImage binarize_robust(const GrayImage& img) {
  try {
    return binarize(img, otsu_threshold(img));
  } catch (const ValueError&) {  // constant image: split at mid-range
    return binarize(img, img.max_value() / 2.0);
  }
}

}  // namespace

RobustnessTable robustness_experiment(
    const std::vector<std::pair<GrayImage, GrayImage>>& pairs,
    const std::vector<std::int32_t>& size_divisors,
    const std::vector<double>& ratios) {
  RobustnessTable table;
  for (std::size_t pair_id = 0; pair_id < pairs.size(); ++pair_id) {
    const auto& [pred0, truth0] = pairs[pair_id];
    require_same_dims(pred0, truth0, "robustness_experiment");
    for (std::int32_t div : size_divisors) {
      if (div < 1 || pred0.width / div < 1 || pred0.height / div < 1) {
        throw ValueError("robustness_experiment: bad size divisor " +
                         std::to_string(div));
      }
      const GrayImage pred_s = resize(pred0, pred0.width / div,
                                      pred0.height / div, ResizeMode::bilinear);
      const GrayImage truth_s = resize(truth0, truth0.width / div,
                                       truth0.height / div,
                                       ResizeMode::bilinear);
      double tanimoto_ref = 0.0;
      bool have_ref = false;
      for (double ratio : ratios) {
        const GrayImage pred = pad_to_ratio(pred_s, ratio);
        const GrayImage truth = pad_to_ratio(truth_s, ratio);
        const GrayImage pred_mask = binarize_robust(pred);
        const GrayImage truth_mask =
            binarize(truth, truth.max_value() / 2.0);
        const std::int32_t win =
            std::min<std::int32_t>(8, std::min(pred.width, pred.height));

        const double t = tanimoto(pred, truth);
        if (!have_ref) {
          tanimoto_ref = t;
          have_ref = true;
        } else if (t != tanimoto_ref) {
          throw Error("robustness_experiment: tanimoto ratio series is not "
                      "constant (padding invariance violated)");
        }
        const std::int32_t pid = static_cast<std::int32_t>(pair_id);
        table.rows.push_back(
            {"jaccard", div, ratio, pid, jaccard(pred_mask, truth_mask)});
        table.rows.push_back(
            {"mae", div, ratio, pid, mae_similarity(pred, truth)});
        table.rows.push_back({"tanimoto", div, ratio, pid, t});
        table.rows.push_back({"ssim", div, ratio, pid, ssim(pred, truth, win)});
      }
    }
  }
  return table;
}

std::string RobustnessTable::to_csv() const {
  std::ostringstream os;
  os << "measure,size,ratio,pair,value\n";
  char buf[128];
  const char* measures[4] = {"jaccard", "mae", "tanimoto", "ssim"};
  double sums[4] = {0, 0, 0, 0};
  std::int64_t counts[4] = {0, 0, 0, 0};
  for (const RobustnessRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%d,%.9g\n", r.measure.c_str(),
                  r.size_divisor, r.ratio, r.pair_id, r.value);
    os << buf;
    for (int m = 0; m < 4; ++m) {
      if (r.measure == measures[m]) {
        sums[m] += r.value;
        ++counts[m];
      }
    }
  }
  for (int m = 0; m < 4; ++m) {
    std::snprintf(buf, sizeof(buf), "aggregate,%s,,,%.9g\n", measures[m],
                  counts[m] ? sums[m] / static_cast<double>(counts[m]) : 0.0);
    os << buf;
  }
  return os.str();
}

}  // namespace dcu
