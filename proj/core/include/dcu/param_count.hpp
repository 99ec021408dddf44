#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dcu/builders.hpp"
#include "dcu/graph_spec.hpp"

namespace dcu {

/// How batch-norm parameters enter the totals.
enum class BnCountMode {
  none,                   // batch norm not counted at all
  trainable_only,         // beta (and gamma where present)
  trainable_plus_moving,  // plus the moving mean/variance state
};

const char* bn_count_mode_name(BnCountMode mode);

/// A structural-plus-counting convention, the unit of the reconciliation
/// sweep: whether BN-backed convs carry bias, where BN sits inside blocks,
/// and how BN parameters are counted.
struct CountConvention {
  bool block_conv_bias = false;
  BnPlacement bn_placement = BnPlacement::per_conv;
  BnCountMode bn_count = BnCountMode::trainable_plus_moving;

  std::string label() const;
};

/// The convention that reproduces all three reference totals exactly.
CountConvention reconciled_convention();

struct ParamRow {
  std::string path;
  std::string desc;
  std::int64_t params = 0;
};

struct ParamLedger {
  std::vector<ParamRow> rows;
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;  // moving statistics, when counted
  std::int64_t total = 0;          // what the convention counts
};

/// Symbolic per-layer parameter counts; no tensor is allocated. Conv layers
/// count k_h*k_w*C_in*C_out (+C_out when the layer carries bias); batch norm
/// counts per `mode`, with scale-free layers contributing beta only.
ParamLedger count_params(const GraphSpec& spec, BnCountMode mode);

inline ParamLedger count_params(const GraphSpec& spec,
                                const CountConvention& convention) {
  return count_params(spec, convention.bn_count);
}

/// Published reference totals the counts are reconciled against.
inline constexpr std::int64_t kReferenceTotalUnet = 31'031'685;
inline constexpr std::int64_t kReferenceTotalMultiRes = 29'061'741;
inline constexpr std::int64_t kReferenceTotalDc = 10'069'640;

struct SweepRow {
  CountConvention convention;
  std::int64_t unet = 0;
  std::int64_t multires = 0;
  std::int64_t dcunet = 0;
  bool best = false;
};

/// Builds every convention variant of the three reference-width models and
/// counts each; flags the convention whose totals come closest to the
/// reference numbers (summed relative error).
std::vector<SweepRow> convention_sweep(std::int32_t in_channels = 1);

/// Human-readable per-layer table: path, kind, kernel, filters, params and
/// the output shape for a (1, C, h, w) input. Row order is construction
/// order; the footer records the counting convention.
std::string summarize(const GraphSpec& spec, std::int64_t h = 256,
                      std::int64_t w = 128,
                      BnCountMode mode = BnCountMode::trainable_plus_moving);

}  // namespace dcu
