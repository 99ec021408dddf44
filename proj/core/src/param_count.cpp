#include "dcu/param_count.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dcu {

const char* bn_count_mode_name(BnCountMode mode) {
  switch (mode) {
    case BnCountMode::none: return "bn-not-counted";
    case BnCountMode::trainable_only: return "bn-trainable-only";
    case BnCountMode::trainable_plus_moving: return "bn-trainable+moving";
  }
  return "?";
}

std::string CountConvention::label() const {
  std::string s = block_conv_bias ? "bias-on" : "bias-off";
  s += bn_placement == BnPlacement::per_conv ? ",bn-per-conv" : ",bn-per-block";
  s += ",";
  s += bn_count_mode_name(bn_count);
  return s;
}

CountConvention reconciled_convention() {
  return CountConvention{false, BnPlacement::per_conv,
                         BnCountMode::trainable_plus_moving};
}

ParamLedger count_params(const GraphSpec& spec, BnCountMode mode) {
  ParamLedger ledger;
  for (const LayerSpec& l : spec.layers) {
    auto in_channels = [&]() -> std::int64_t {
      return spec.layers[static_cast<std::size_t>(l.inputs.at(0))].out_channels;
    };
    ParamRow row;
    row.path = l.path;
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::conv_transpose: {
        const std::int64_t cin = in_channels();
        std::int64_t p = static_cast<std::int64_t>(l.kernel_h) * l.kernel_w *
                         cin * l.filters;
        if (l.bias) p += l.filters;
        row.params = p;
        row.desc = "conv " + std::to_string(l.kernel_h) + "x" +
                   std::to_string(l.kernel_w) + " " + std::to_string(cin) +
                   "->" + std::to_string(l.filters);
        ledger.trainable += p;
        break;
      }
      case LayerKind::batchnorm: {
        const std::int64_t c = l.out_channels;
        const std::int64_t t = (l.bn_scale ? 2 : 1) * c;
        const std::int64_t moving = 2 * c;
        row.desc = "batchnorm C=" + std::to_string(c);
        switch (mode) {
          case BnCountMode::none:
            row.params = 0;
            break;
          case BnCountMode::trainable_only:
            row.params = t;
            ledger.trainable += t;
            break;
          case BnCountMode::trainable_plus_moving:
            row.params = t + moving;
            ledger.trainable += t;
            ledger.non_trainable += moving;
            break;
        }
        break;
      }
      default:
        continue;  // parameter-free layers do not enter the ledger
    }
    ledger.rows.push_back(std::move(row));
  }
  ledger.total = ledger.trainable + ledger.non_trainable;
  return ledger;
}

std::vector<SweepRow> convention_sweep(std::int32_t in_channels) {
  std::vector<SweepRow> rows;
  const std::array<std::int64_t, 3> ref{
      kReferenceTotalUnet, kReferenceTotalMultiRes, kReferenceTotalDc};
  double best_err = -1.0;
  std::size_t best_idx = 0;
  for (bool bias : {false, true}) {
    for (BnPlacement place : {BnPlacement::per_conv, BnPlacement::per_block}) {
      for (BnCountMode mode :
           {BnCountMode::none, BnCountMode::trainable_only,
            BnCountMode::trainable_plus_moving}) {
        BuildOptions o;
        o.in_channels = in_channels;
        o.block_conv_bias = bias;
        o.bn_placement = place;
        SweepRow row;
        row.convention = CountConvention{bias, place, mode};
        row.unet = count_params(build_unet(kUnetStageFilters, o), mode).total;
        row.multires =
            count_params(build_multiresunet(kMultiResBaseU, o), mode).total;
        row.dcunet = count_params(build_dcunet(kDcBaseU, o), mode).total;
        const double err =
            std::abs(static_cast<double>(row.unet - ref[0])) / ref[0] +
            std::abs(static_cast<double>(row.multires - ref[1])) / ref[1] +
            std::abs(static_cast<double>(row.dcunet - ref[2])) / ref[2];
        if (best_err < 0.0 || err < best_err) {
          best_err = err;
          best_idx = rows.size();
        }
        rows.push_back(row);
      }
    }
  }
  rows[best_idx].best = true;
  return rows;
}

std::string summarize(const GraphSpec& spec, std::int64_t h, std::int64_t w,
                      BnCountMode mode) {
  std::ostringstream os;
  os << "arch: " << (spec.arch.empty() ? "(none)" : spec.arch)
     << "  in_channels: " << spec.in_channels << "  input: 1x"
     << spec.in_channels << "x" << h << "x" << w << "\n";
  os << "structure: "
     << (spec.convention_note.empty() ? "(unset)" : spec.convention_note)
     << "  counting: " << bn_count_mode_name(mode) << "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-36s %-14s %-7s %9s %12s  %s\n", "path",
                "kind", "kernel", "filters", "params", "output");
  os << line;
  if (spec.layers.empty()) return os.str();

  const std::vector<Shape> shapes = infer_shapes(spec, 1, h, w);
  const ParamLedger ledger = count_params(spec, mode);
  std::size_t ledger_idx = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::string kernel = "-";
    std::string filters = "-";
    std::int64_t params = 0;
    if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) {
      kernel = std::to_string(l.kernel_h) + "x" + std::to_string(l.kernel_w);
      filters = std::to_string(l.filters);
    }
    if (ledger_idx < ledger.rows.size() && ledger.rows[ledger_idx].path == l.path &&
        (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose ||
         l.kind == LayerKind::batchnorm)) {
      params = ledger.rows[ledger_idx].params;
      ++ledger_idx;
    }
    std::snprintf(line, sizeof(line), "%-36s %-14s %-7s %9s %12lld  %s\n",
                  l.path.c_str(), layer_kind_name(l.kind), kernel.c_str(),
                  filters.c_str(), static_cast<long long>(params),
                  shapes[i].str().c_str());
    os << line;
  }
  os << "trainable: " << ledger.trainable
     << "  non-trainable: " << ledger.non_trainable
     << "  total: " << ledger.total << "\n";
  return os.str();
}

}  // namespace dcu
