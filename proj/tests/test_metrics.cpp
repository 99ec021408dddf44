#include <doctest.h>

#include <cmath>

#include "dcu/data_io.hpp"
#include "dcu/metrics.hpp"
#include "support/testers.hpp"

using dcu::GrayImage;
using testers::image_from;
using testers::random_image;

namespace {

// independent oracle: exhaustive between-class-variance scan over every
// split point, two-pass means over the raw pixel lists
double otsu_oracle_threshold(const GrayImage& img) {
  double best_sigma = -1.0;
  std::uint32_t best_t = 0;
  for (std::uint32_t t = 1; t <= img.max_value(); ++t) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (std::uint16_t p : img.pixels) {
      if (p < t) {
        n0 += 1;
        s0 += p;
      } else {
        n1 += 1;
        s1 += p;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double mu0 = s0 / n0, mu1 = s1 / n1;
    const double sigma = n0 * n1 * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best_sigma) {
      best_sigma = sigma;
      best_t = t;
    }
  }
  return best_t - 0.5;
}

GrayImage transpose(const GrayImage& img) {
  GrayImage out(img.height, img.width, img.depth);
  for (std::int32_t y = 0; y < img.height; ++y) {
    for (std::int32_t x = 0; x < img.width; ++x) {
      out.at(y, x) = img.at(x, y);
    }
  }
  return out;
}

GrayImage mask_from_bits(std::uint32_t bits, std::int32_t w, std::int32_t h) {
  GrayImage img(w, h, 8);
  for (std::int32_t i = 0; i < w * h; ++i) {
    img.pixels[static_cast<std::size_t>(i)] = (bits >> i) & 1 ? 255 : 0;
  }
  return img;
}

}  // namespace

TEST_CASE("otsu: bimodal 50/200 image thresholds strictly between the modes") {
  GrayImage img(4, 2, 8, {50, 50, 50, 50, 200, 200, 200, 200});
  const double t = dcu::otsu_threshold(img);
  CHECK(t > 50.0);
  CHECK(t < 200.0);
  CHECK(t == otsu_oracle_threshold(img));
  const GrayImage mask = dcu::binarize(img, t);
  for (std::int32_t i = 0; i < 4; ++i) {
    CHECK(mask.pixels[static_cast<std::size_t>(i)] == 0);
    CHECK(mask.pixels[static_cast<std::size_t>(i + 4)] == 255);
  }
}

TEST_CASE("otsu: perfectly separable mask is recovered exactly") {
  GrayImage img(2, 2, 8, {0, 255, 255, 0});
  const GrayImage mask = dcu::binarize(img, dcu::otsu_threshold(img));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(mask.pixels[i] == img.pixels[i]);
  }
}

TEST_CASE("otsu: uniform offset shifts the threshold by exactly the offset") {
  GrayImage img = random_image(12, 9, 77);
  for (auto& p : img.pixels) p = static_cast<std::uint16_t>(p % 200);
  bool constant = true;
  for (auto p : img.pixels) constant = constant && p == img.pixels[0];
  REQUIRE(!constant);
  const double t0 = dcu::otsu_threshold(img);
  GrayImage shifted = img;
  for (auto& p : shifted.pixels) p = static_cast<std::uint16_t>(p + 10);
  CHECK(dcu::otsu_threshold(shifted) == t0 + 10.0);
}

TEST_CASE("otsu: constant image is rejected") {
  CHECK_THROWS_AS(dcu::otsu_threshold(GrayImage(3, 3, 8)), dcu::ValueError);
}

TEST_CASE("otsu matches the exhaustive oracle on random images") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const GrayImage img = random_image(9, 7, 1000 + seed);
    CHECK(dcu::otsu_threshold(img) == otsu_oracle_threshold(img));
  }
}

TEST_CASE("binarize: extremes and a ramp against the per-pixel oracle") {
  GrayImage low(2, 2, 8, {0, 10, 20, 30});
  for (auto p : dcu::binarize(low, 40.0).pixels) CHECK(p == 0);
  for (auto p : dcu::binarize(low, -1.0).pixels) CHECK(p == 255);
  GrayImage ramp(4, 1, 8, {10, 60, 110, 210});
  const GrayImage mask = dcu::binarize(ramp, 100.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(mask.pixels[i] == (ramp.pixels[i] > 100 ? 255 : 0));
  }
}

TEST_CASE("jaccard: identity, disjoint, and the 2x2 half-overlap case") {
  const GrayImage a = mask_from_bits(0b0011, 2, 2);
  const GrayImage b = mask_from_bits(0b0001, 2, 2);
  CHECK(dcu::jaccard(a, a) == 1.0);
  CHECK(dcu::jaccard(mask_from_bits(0b0011, 2, 2),
                     mask_from_bits(0b1100, 2, 2)) == 0.0);
  CHECK(dcu::jaccard(a, b) == 0.5);
  CHECK(dcu::jaccard(mask_from_bits(0, 2, 2), mask_from_bits(0, 2, 2)) == 1.0);
}

TEST_CASE("jaccard: non-binary input is rejected") {
  GrayImage gray(2, 2, 8, {0, 100, 255, 255});
  CHECK_THROWS_AS(dcu::jaccard(gray, mask_from_bits(0b1111, 2, 2)),
                  dcu::ValueError);
}

TEST_CASE("mae similarity: identity, single-pixel extreme, padding growth") {
  const GrayImage a = random_image(6, 6, 5);
  CHECK(dcu::mae_similarity(a, a) == 1.0);

  GrayImage zero(1, 1, 8, {0});
  GrayImage full(1, 1, 8, {255});
  CHECK(dcu::mae_similarity(zero, full) == 1.0 - 255.0 / 256.0);
  CHECK(dcu::mae_similarity(zero, full) == 0.00390625);

  const GrayImage b = random_image(6, 6, 6);
  const double before = dcu::mae_similarity(a, b);
  REQUIRE(before < 1.0);
  const double after =
      dcu::mae_similarity(dcu::pad_to_ratio(a, 1.5), dcu::pad_to_ratio(b, 1.5));
  CHECK(after > before);  // numerator fixed, maxE grows
}

TEST_CASE("tanimoto: self-similarity is exactly 1 and empty-empty is 1") {
  const GrayImage a = random_image(5, 4, 9);
  CHECK(dcu::tanimoto(a, a) == 1.0);
  GrayImage z(3, 3, 8);
  CHECK(dcu::tanimoto(z, z) == 1.0);
}

TEST_CASE("tanimoto equals jaccard on every 2x2 binary pair") {
  for (std::uint32_t i = 0; i < 16; ++i) {
    for (std::uint32_t j = 0; j < 16; ++j) {
      const GrayImage a = mask_from_bits(i, 2, 2);
      const GrayImage b = mask_from_bits(j, 2, 2);
      CHECK(dcu::tanimoto(a, b) == dcu::jaccard(a, b));
    }
  }
}

TEST_CASE("tanimoto is bitwise invariant under simultaneous zero padding") {
  const GrayImage a = random_image(7, 5, 11);
  const GrayImage b = random_image(7, 5, 12);
  const double v = dcu::tanimoto(a, b);
  for (double ratio : {1.25, 1.5, 2.0, 3.0}) {
    CHECK(dcu::tanimoto(dcu::pad_to_ratio(a, ratio),
                        dcu::pad_to_ratio(b, ratio)) == v);
  }
}

TEST_CASE("mae and tanimoto are invariant under simultaneous transposition") {
  const GrayImage a = random_image(8, 5, 13);
  const GrayImage b = random_image(8, 5, 14);
  CHECK(dcu::tanimoto(transpose(a), transpose(b)) == dcu::tanimoto(a, b));
  CHECK(dcu::mae_similarity(transpose(a), transpose(b)) ==
        dcu::mae_similarity(a, b));
}

TEST_CASE("ssim: identity, symmetry, and window validation") {
  const GrayImage a = random_image(16, 12, 21);
  const GrayImage b = random_image(16, 12, 22);
  CHECK(dcu::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dcu::ssim(a, b) == dcu::ssim(b, a));
  CHECK_THROWS_AS(dcu::ssim(a, b, 13), dcu::ValueError);
}

TEST_CASE("ssim changes under down-sampling (size non-invariance)") {
  // fixed synthetic pair: a soft disc against its own shifted copy
  GrayImage a(32, 32, 8), b(32, 32, 8);
  for (std::int32_t y = 0; y < 32; ++y) {
    for (std::int32_t x = 0; x < 32; ++x) {
      const double r = std::hypot(x - 15.5, y - 15.5);
      a.at(x, y) = static_cast<std::uint16_t>(
          std::clamp(255.0 - 14.0 * r, 0.0, 255.0));
      const double r2 = std::hypot(x - 12.5, y - 13.5);
      b.at(x, y) = static_cast<std::uint16_t>(
          std::clamp(250.0 - 11.0 * r2, 0.0, 255.0));
    }
  }
  const double full = dcu::ssim(a, b);
  const double half = dcu::ssim(dcu::resize(a, 16, 16, dcu::ResizeMode::bilinear),
                                dcu::resize(b, 16, 16, dcu::ResizeMode::bilinear));
  CHECK(full != half);
}

TEST_CASE("all measures are symmetric and bounded on random images") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const GrayImage a = random_image(10, 10, 300 + seed);
    const GrayImage b = random_image(10, 10, 400 + seed);
    const double values[] = {
        dcu::mae_similarity(a, b), dcu::tanimoto(a, b), dcu::ssim(a, b, 8)};
    CHECK(dcu::mae_similarity(b, a) == values[0]);
    CHECK(dcu::tanimoto(b, a) == values[1]);
    CHECK(dcu::ssim(b, a, 8) == values[2]);
    for (double v : values) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("robustness experiment: tanimoto constant, mae varying, full grid") {
  // prediction = soft blob, truth = its binary mask
  GrayImage pred(32, 32, 8), truth(32, 32, 8);
  for (std::int32_t y = 0; y < 32; ++y) {
    for (std::int32_t x = 0; x < 32; ++x) {
      const double r = std::hypot(x - 16.0, y - 15.0) / 9.0;
      pred.at(x, y) = static_cast<std::uint16_t>(
          std::clamp(230.0 * std::max(0.0, 1.15 - r), 0.0, 255.0));
      truth.at(x, y) = r <= 1.0 ? 255 : 0;
    }
  }
  const std::vector<std::int32_t> sizes{1, 2};
  const std::vector<double> ratios{1.0, 1.5, 2.0};
  const auto table = dcu::robustness_experiment({{pred, truth}}, sizes, ratios);
  CHECK(table.rows.size() == 4 * sizes.size() * ratios.size() * 1);

  double tan_ref = -1.0;
  std::vector<double> mae_values;
  for (const auto& row : table.rows) {
    if (row.size_divisor != 1) continue;
    if (row.measure == "tanimoto") {
      if (tan_ref < 0) tan_ref = row.value;
      CHECK(row.value == tan_ref);
    }
    if (row.measure == "mae") mae_values.push_back(row.value);
  }
  REQUIRE(mae_values.size() == ratios.size());
  CHECK(mae_values[0] < 1.0);
  CHECK(mae_values[0] != mae_values[1]);
  CHECK(mae_values[1] != mae_values[2]);

  const std::string csv = table.to_csv();
  CHECK(csv.rfind("measure,size,ratio,pair,value\n", 0) == 0);
  CHECK(csv.find("aggregate,tanimoto") != std::string::npos);
}
