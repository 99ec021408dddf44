#include "dcu/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace dcu {

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

class PgmParser {
 public:
  PgmParser(const std::filesystem::path& file,
            const std::vector<std::uint8_t>& bytes)
      : file_(file), bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError(file_.string() + ": " + msg + " at byte offset " +
                    std::to_string(pos_));
  }

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') {
      fail("not a binary PGM (P5) file");
    }
    pos_ = 2;
  }

  // whitespace and '#' comments separate header tokens
  void skip_separators() {
    while (pos_ < bytes_.size()) {
      const std::uint8_t c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::int64_t parse_int(const char* what) {
    skip_separators();
    if (pos_ >= bytes_.size() || bytes_[pos_] < '0' || bytes_[pos_] > '9') {
      fail(std::string("expected ") + what);
    }
    std::int64_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) fail(std::string(what) + " out of range");
      ++pos_;
    }
    return v;
  }

  void consume_single_whitespace() {
    if (pos_ >= bytes_.size() || !(bytes_[pos_] == ' ' || bytes_[pos_] == '\t' ||
                                   bytes_[pos_] == '\r' ||
                                   bytes_[pos_] == '\n')) {
      fail("expected single whitespace before pixel data");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::uint8_t* payload() const { return bytes_.data() + pos_; }

 private:
  const std::filesystem::path& file_;
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage load_pgm(const std::filesystem::path& file) {
  const std::vector<std::uint8_t> bytes = read_all(file);
  PgmParser p(file, bytes);
  p.expect_magic();
  const std::int64_t w = p.parse_int("width");
  const std::int64_t h = p.parse_int("height");
  const std::int64_t maxval = p.parse_int("maxval");
  if (w < 1 || h < 1) p.fail("degenerate image dimensions");
  if (maxval != 255 && maxval != 65535) {
    p.fail("unsupported maxval " + std::to_string(maxval) +
           " (expected 255 or 65535)");
  }
  p.consume_single_whitespace();
  const std::int32_t depth = maxval == 255 ? 8 : 16;
  const std::size_t sample_size = depth == 8 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w * h) * sample_size;
  if (p.remaining() < need) {
    p.fail("truncated payload: need " + std::to_string(need) + " bytes, have " +
           std::to_string(p.remaining()));
  }
  GrayImage img(static_cast<std::int32_t>(w), static_cast<std::int32_t>(h),
                depth);
  const std::uint8_t* src = p.payload();
  if (depth == 8) {
    for (std::int64_t i = 0; i < w * h; ++i) {
      img.pixels[static_cast<std::size_t>(i)] = src[i];
    }
  } else {
    for (std::int64_t i = 0; i < w * h; ++i) {  // big-endian two-byte samples
      img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(
          (static_cast<std::uint16_t>(src[2 * i]) << 8) | src[2 * i + 1]);
    }
  }
  return img;
}

void save_pgm(const GrayImage& img, const std::filesystem::path& file) {
  img.validate();
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + file.string() + " for writing");
  os << "P5\n" << img.width << " " << img.height << "\n"
     << img.max_value() << "\n";
  if (img.depth == 8) {
    for (std::uint16_t p : img.pixels) {
      os.put(static_cast<char>(p));
    }
  } else {
    for (std::uint16_t p : img.pixels) {
      os.put(static_cast<char>(p >> 8));
      os.put(static_cast<char>(p & 0xff));
    }
  }
  if (!os) throw DataError("write failed: " + file.string());
}

GrayImage to_8bit(const GrayImage& img) {
  if (img.depth != 16) {
    throw ValueError("to_8bit: expects a 16-bit image");
  }
  auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(),
                                            img.pixels.end());
  const std::uint32_t lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    throw ValueError("to_8bit: constant image cannot be rescaled");
  }
  GrayImage out(img.width, img.height, 8);
  const std::uint64_t range = hi - lo;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint16_t>(
        static_cast<std::uint64_t>(img.pixels[i] - lo) * 255u / range);
  }
  return out;
}

GrayImage resize(const GrayImage& img, std::int32_t out_w, std::int32_t out_h,
                 ResizeMode mode) {
  if (out_w < 1 || out_h < 1) {
    throw ValueError("resize: target extents must be >= 1");
  }
  if (out_w == img.width && out_h == img.height) return img;
  GrayImage out(out_w, out_h, img.depth);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  if (mode == ResizeMode::nearest) {
    for (std::int32_t y = 0; y < out_h; ++y) {
      const std::int32_t iy = std::min<std::int32_t>(
          img.height - 1, static_cast<std::int32_t>((y + 0.5) * sy));
      for (std::int32_t x = 0; x < out_w; ++x) {
        const std::int32_t ix = std::min<std::int32_t>(
            img.width - 1, static_cast<std::int32_t>((x + 0.5) * sx));
        out.at(x, y) = img.at(ix, iy);
      }
    }
    return out;
  }
  // bilinear with half-pixel centers, clamped at the borders
  const double max_v = static_cast<double>(img.max_value());
  for (std::int32_t y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const std::int32_t y0 = static_cast<std::int32_t>(fy);
    const std::int32_t y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (std::int32_t x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const std::int32_t x0 = static_cast<std::int32_t>(fx);
      const std::int32_t x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double v = (1.0 - wy) * ((1.0 - wx) * img.at(x0, y0) +
                                     wx * img.at(x1, y0)) +
                       wy * ((1.0 - wx) * img.at(x0, y1) +
                             wx * img.at(x1, y1));
      out.at(x, y) = static_cast<std::uint16_t>(
          std::clamp(static_cast<double>(std::llround(v)), 0.0, max_v));
    }
  }
  return out;
}

std::vector<std::string> DatasetManifest::group_labels() const {
  std::vector<std::string> labels;
  labels.reserve(items.size());
  for (const ManifestItem& it : items) labels.push_back(it.group);
  return labels;
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw DataError("cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + file.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.width = j.at("width").get<std::int32_t>();
    m.height = j.at("height").get<std::int32_t>();
    m.depth = j.at("depth").get<std::int32_t>();
    for (const auto& item : j.at("items")) {
      ManifestItem mi;
      mi.image = item.at("image").get<std::string>();
      mi.mask = item.at("mask").get<std::string>();
      mi.group = item.value("group", "");
      m.items.push_back(std::move(mi));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + file.string() + ": " + e.what());
  }
  m.base_dir = file.parent_path();
  return m;
}

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& file) {
  nlohmann::json j;
  j["width"] = manifest.width;
  j["height"] = manifest.height;
  j["depth"] = manifest.depth;
  j["items"] = nlohmann::json::array();
  for (const ManifestItem& it : manifest.items) {
    j["items"].push_back(
        {{"image", it.image}, {"mask", it.mask}, {"group", it.group}});
  }
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + file.string());
  os << j.dump(2) << "\n";
}

namespace {

struct Ellipse {
  double cx, cy, ax, ay;

  double radius2(double x, double y) const {
    const double dx = (x - cx) / ax;
    const double dy = (y - cy) / ay;
    return dx * dx + dy * dy;
  }
};

}  // namespace

DatasetManifest synth_blobs(std::int32_t count, std::int32_t w, std::int32_t h,
                            std::uint64_t seed,
                            const std::filesystem::path& out_dir,
                            std::int32_t groups) {
  if (w % 16 != 0 || h % 16 != 0) {
    throw ValueError("synth_blobs: width and height must be divisible by 16");
  }
  if (count < 1) throw ValueError("synth_blobs: count must be >= 1");
  std::filesystem::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.width = w;
  manifest.height = h;
  manifest.depth = 8;
  manifest.base_dir = out_dir;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ellipse_count(1, 3);
  std::uniform_real_distribution<double> ucx(0.2 * w, 0.8 * w);
  std::uniform_real_distribution<double> ucy(0.2 * h, 0.8 * h);
  std::uniform_real_distribution<double> uax(0.12 * w, 0.32 * w);
  std::uniform_real_distribution<double> uay(0.12 * h, 0.32 * h);
  std::uniform_int_distribution<int> bg_noise(0, 22);
  std::uniform_int_distribution<int> fg_noise(-10, 10);

  const std::int64_t total = static_cast<std::int64_t>(w) * h;
  for (std::int32_t i = 0; i < count; ++i) {
    std::vector<Ellipse> ellipses;
    GrayImage mask(w, h, 8);
    for (int attempt = 0; attempt < 200; ++attempt) {
      ellipses.clear();
      const int n = ellipse_count(rng);
      for (int e = 0; e < n; ++e) {
        ellipses.push_back({ucx(rng), ucy(rng), uax(rng), uay(rng)});
      }
      std::int64_t fg = 0;
      for (std::int32_t y = 0; y < h; ++y) {
        for (std::int32_t x = 0; x < w; ++x) {
          bool inside = false;
          for (const Ellipse& el : ellipses) {
            if (el.radius2(x, y) <= 1.0) {
              inside = true;
              break;
            }
          }
          mask.at(x, y) = inside ? 255 : 0;
          fg += inside;
        }
      }
      const double frac = static_cast<double>(fg) / static_cast<double>(total);
      if (frac > 0.02 && frac < 0.6) break;
      if (attempt == 199) {
        throw Error("synth_blobs: could not reach the target foreground "
                    "fraction");
      }
    }
    GrayImage img(w, h, 8);
    for (std::int32_t y = 0; y < h; ++y) {
      for (std::int32_t x = 0; x < w; ++x) {
        double r2_min = 1e30;
        for (const Ellipse& el : ellipses) {
          r2_min = std::min(r2_min, el.radius2(x, y));
        }
        const double r = std::sqrt(r2_min);
        // soft edge centered on the mask boundary (t = 0.5 at r = 1)
        const double t = std::clamp((1.08 - r) / 0.16, 0.0, 1.0);
        const double bg = 25.0 + bg_noise(rng);
        const double v = bg + t * (205.0 - bg) + (t > 0.0 ? fg_noise(rng) : 0);
        img.at(x, y) =
            static_cast<std::uint16_t>(std::clamp(v, 0.0, 255.0));
      }
    }
    char img_name[32], mask_name[32];
    std::snprintf(img_name, sizeof(img_name), "img_%04d.pgm", i);
    std::snprintf(mask_name, sizeof(mask_name), "msk_%04d.pgm", i);
    save_pgm(img, out_dir / img_name);
    save_pgm(mask, out_dir / mask_name);
    std::string group = groups > 0 ? "g" + std::to_string(i % groups)
                                   : "s" + std::to_string(i);
    manifest.items.push_back({img_name, mask_name, std::move(group)});
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

template <typename T>
SampleBatch<T> load_batch(const DatasetManifest& manifest,
                          std::span<const std::int32_t> indices) {
  if (indices.empty()) {
    throw ValueError("load_batch: empty index list");
  }
  if (manifest.width % 16 != 0 || manifest.height % 16 != 0) {
    throw DataError("manifest resolution " + std::to_string(manifest.width) +
                    "x" + std::to_string(manifest.height) +
                    " violates the 16-divisibility input contract");
  }
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  const std::int64_t hw =
      static_cast<std::int64_t>(manifest.width) * manifest.height;
  const Shape shape{n, 1, manifest.height, manifest.width};
  std::vector<T> images(static_cast<std::size_t>(n * hw));
  std::vector<T> masks(images.size());

  for (std::int64_t b = 0; b < n; ++b) {
    const std::int32_t idx = indices[static_cast<std::size_t>(b)];
    if (idx < 0 || idx >= static_cast<std::int32_t>(manifest.items.size())) {
      throw ValueError("load_batch: index " + std::to_string(idx) +
                       " out of range");
    }
    const ManifestItem& item = manifest.items[static_cast<std::size_t>(idx)];

    GrayImage img = load_pgm(manifest.base_dir / item.image);
    if (img.depth == 16) img = to_8bit(img);
    img = resize(img, manifest.width, manifest.height, ResizeMode::bilinear);
    GrayImage mask = load_pgm(manifest.base_dir / item.mask);
    if (mask.depth == 16) mask = to_8bit(mask);
    mask = resize(mask, manifest.width, manifest.height, ResizeMode::nearest);

    T* img_dst = images.data() + b * hw;
    T* mask_dst = masks.data() + b * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      img_dst[i] = static_cast<T>(img.pixels[static_cast<std::size_t>(i)]) /
                   T{255};
      const T m = mask.pixels[static_cast<std::size_t>(i)] >= 128 ? T{1} : T{0};
      mask_dst[i] = m;
    }
  }
  for (T m : masks) {
    if (m != T{0} && m != T{1}) {
      throw DataError("load_batch: mask is not strictly binary");
    }
  }
  SampleBatch<T> batch;
  batch.images = Tensor<T>::from_data(shape, std::move(images));
  batch.masks = Tensor<T>::from_data(shape, std::move(masks));
  return batch;
}

template SampleBatch<float> load_batch<float>(const DatasetManifest&,
                                              std::span<const std::int32_t>);
template SampleBatch<double> load_batch<double>(const DatasetManifest&,
                                                std::span<const std::int32_t>);

}  // namespace dcu
