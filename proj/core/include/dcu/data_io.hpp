#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dcu/gray_image.hpp"
#include "dcu/tensor.hpp"

namespace dcu {

/// Binary PGM (P5) with maxval 255 or 65535; 16-bit samples are big-endian
/// per the format. Malformed files are rejected with the byte offset.
GrayImage load_pgm(const std::filesystem::path& file);
void save_pgm(const GrayImage& img, const std::filesystem::path& file);

/// Linear min-max rescale of a 16-bit image to 8 bits with truncation: the
/// minimum maps to 0, the maximum to 255. Constant images are rejected.
GrayImage to_8bit(const GrayImage& img);

enum class ResizeMode { bilinear, nearest };

/// Identity when the target equals the source. Bilinear for intensity
/// images, nearest for masks (preserves the value set).
GrayImage resize(const GrayImage& img, std::int32_t out_w, std::int32_t out_h,
                 ResizeMode mode);

struct ManifestItem {
  std::string image;
  std::string mask;
  std::string group;
};

/// Dataset description; image/mask paths are relative to base_dir. All
/// images share `width`×`height` after preprocessing.
struct DatasetManifest {
  std::vector<ManifestItem> items;
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::int32_t depth = 8;
  std::filesystem::path base_dir;

  std::vector<std::string> group_labels() const;
};

DatasetManifest load_manifest(const std::filesystem::path& file);
void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& file);

/// Generates `count` noisy images of 1-3 soft-edged ellipses with exact
/// interior masks, writes them as PGM pairs under out_dir plus a
/// manifest.json, and returns the manifest. Deterministic per seed;
/// foreground fraction of every sample lies in (0.02, 0.6). `groups` > 0
/// assigns round-robin group labels, otherwise each item is its own group.
DatasetManifest synth_blobs(std::int32_t count, std::int32_t w, std::int32_t h,
                            std::uint64_t seed,
                            const std::filesystem::path& out_dir,
                            std::int32_t groups = 0);

template <typename T>
struct SampleBatch {
  Tensor<T> images;  // (N,1,H,W) scaled to [0,1]
  Tensor<T> masks;   // (N,1,H,W) strictly {0,1}
};

/// Loads and preprocesses the given items: 16-bit images are min-max
/// rescaled to 8 bits, everything is resized to the manifest resolution
/// (bilinear for images, nearest for masks), intensities are scaled by
/// 1/255 per image, masks are thresholded at 128 and verified binary.
template <typename T>
SampleBatch<T> load_batch(const DatasetManifest& manifest,
                          std::span<const std::int32_t> indices);

extern template SampleBatch<float> load_batch<float>(
    const DatasetManifest&, std::span<const std::int32_t>);
extern template SampleBatch<double> load_batch<double>(
    const DatasetManifest&, std::span<const std::int32_t>);

}  // namespace dcu
