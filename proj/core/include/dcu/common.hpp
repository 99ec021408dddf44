#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcu {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/image dimension mismatches and violated shape contracts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Arguments outside an operation's supported envelope.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, manifests, and other on-disk problems.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, and other numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Dense tensor extents in N (batch), C (channels), H, W order.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

enum class Padding { same, valid };

inline const char* padding_name(Padding p) {
  return p == Padding::same ? "same" : "valid";
}

}  // namespace dcu
