#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dcu/graph_spec.hpp"

namespace dcu {

/// Per-stage conv widths derived from the base filter count U: the stage
/// width is W = alpha * U and the three successive 3×3 convs take
/// trunc(W*0.167), trunc(W*0.333) and trunc(W*0.5) filters. The 1×1
/// residual matches their sum.
struct FilterSchedule {
  std::int32_t base_u = 0;
  double alpha = 0.0;
  double w = 0.0;
  std::int32_t f1 = 0;
  std::int32_t f2 = 0;
  std::int32_t f3 = 0;

  std::int32_t residual() const { return f1 + f2 + f3; }
};

FilterSchedule filter_schedule(std::int32_t base_u, double alpha);

enum class BnPlacement {
  per_conv,   // BN after every block conv, plus the block-join BNs
  per_block,  // a single BN at the block output
};

enum class BlockKind {
  conv_pair,
  multires,
  dual_channel,
  res_path,
  down,
  up,
  head,
};

/// Builder-level description of one block; expanded into LayerSpec runs.
struct BlockSpec {
  BlockKind kind = BlockKind::conv_pair;
  std::string path;
  FilterSchedule schedule;        // multires / dual_channel
  std::int32_t filters = 0;       // conv_pair / res_path / up width
  std::int32_t res_path_len = 0;  // in {4,3,2,1}
  bool conv_bias = true;          // bias on convs not backed by BN
  bool batch_norm = false;        // block family uses BN at all
  BnPlacement bn_placement = BnPlacement::per_conv;
};

/// Appends the block's layers to the spec; returns the output layer index.
std::int32_t append_block(GraphSpec& spec, const BlockSpec& block,
                          const std::vector<std::int32_t>& inputs);

/// Structural knobs resolved by the Table-4 reconciliation sweep. Defaults
/// are the reconciled convention; the sweep builds the variants.
struct BuildOptions {
  std::int32_t in_channels = 1;
  double alpha = 1.67;
  bool block_conv_bias = false;  // bias on convs that are followed by BN
  BnPlacement bn_placement = BnPlacement::per_conv;
};

/// Classical five-stage U-Net. stage_filters is the per-stage conv width
/// list, {64,128,256,512,1024} for the reference configuration. All convs
/// carry bias and there is no batch norm; the last decoder stage ends with
/// a 2-filter 3×3 conv before the 1×1 sigmoid head.
GraphSpec build_unet(const std::vector<std::int32_t>& stage_filters,
                     std::int32_t in_channels);

/// Nine multires blocks (encoder 1-4, bridge 5, decoder 6-9) plus four
/// res-paths of lengths {4,3,2,1}; base_u is {64,...,1024} at reference
/// width.
GraphSpec build_multiresunet(double alpha,
                             const std::vector<std::int32_t>& base_u,
                             std::int32_t in_channels);

/// Nine dual-channel blocks whose two parallel three-conv chains are summed,
/// plus res-paths; base_u is {32,...,512} at reference width.
GraphSpec build_dcunet(double alpha, const std::vector<std::int32_t>& base_u,
                       std::int32_t in_channels);

/// Variants with the structural convention knobs exposed (used by the
/// parameter-convention sweep).
GraphSpec build_unet(const std::vector<std::int32_t>& stage_filters,
                     const BuildOptions& options);
GraphSpec build_multiresunet(const std::vector<std::int32_t>& base_u,
                             const BuildOptions& options);
GraphSpec build_dcunet(const std::vector<std::int32_t>& base_u,
                       const BuildOptions& options);

/// Reference per-stage widths.
inline const std::vector<std::int32_t> kUnetStageFilters{64, 128, 256, 512,
                                                         1024};
inline const std::vector<std::int32_t> kMultiResBaseU{64, 128, 256, 512, 1024};
inline const std::vector<std::int32_t> kDcBaseU{32, 64, 128, 256, 512};

}  // namespace dcu
