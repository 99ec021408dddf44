#pragma once

#include <cstdint>
#include <vector>

#include "dcu/common.hpp"

namespace dcu {

/// 2-D intensity map with 8-bit or 16-bit semantics, row-major. Pixel values
/// must not exceed 2^depth - 1.
struct GrayImage {
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::int32_t depth = 8;  // 8 or 16
  std::vector<std::uint16_t> pixels;

  GrayImage() = default;
  GrayImage(std::int32_t w, std::int32_t h, std::int32_t d,
            std::vector<std::uint16_t> px = {});

  std::uint32_t max_value() const {
    return depth == 8 ? 255u : 65535u;
  }
  std::int64_t size() const {
    return static_cast<std::int64_t>(width) * height;
  }
  std::uint16_t at(std::int32_t x, std::int32_t y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint16_t& at(std::int32_t x, std::int32_t y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }

  /// True when every pixel is exactly 0 or 255 (8-bit mask semantics).
  bool is_binary() const;

  void validate() const;
};

}  // namespace dcu
