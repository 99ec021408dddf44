#include "dcu/builders.hpp"

#include <cmath>

namespace dcu {

FilterSchedule filter_schedule(std::int32_t base_u, double alpha) {
  if (base_u < 6) {
    throw ValueError("filter_schedule: base filter count must be >= 6, got " +
                     std::to_string(base_u));
  }
  if (!(alpha > 0.0)) {
    throw ValueError("filter_schedule: alpha must be positive");
  }
  FilterSchedule s;
  s.base_u = base_u;
  s.alpha = alpha;
  s.w = alpha * static_cast<double>(base_u);
  s.f1 = static_cast<std::int32_t>(std::trunc(s.w * 0.167));
  s.f2 = static_cast<std::int32_t>(std::trunc(s.w * 0.333));
  s.f3 = static_cast<std::int32_t>(std::trunc(s.w * 0.5));
  if (s.f1 < 1 || s.f2 < 1 || s.f3 < 1) {
    throw ValueError("filter_schedule: degenerate width, a conv would get 0 "
                     "filters (U=" + std::to_string(base_u) + ")");
  }
  return s;
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(GraphSpec& spec) : spec_(spec) {}

  std::int32_t input() {
    LayerSpec l;
    l.path = "input";
    l.kind = LayerKind::input;
    l.out_channels = spec_.in_channels;
    return push(std::move(l));
  }

  std::int32_t conv(std::int32_t in, std::string path, std::int32_t filters,
                    std::int32_t kh, std::int32_t kw, bool bias,
                    Padding pad = Padding::same, std::int32_t stride = 1) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = LayerKind::conv;
    l.inputs = {in};
    l.filters = filters;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.stride = stride;
    l.padding = pad;
    l.bias = bias;
    l.out_channels = filters;
    return push(std::move(l));
  }

  std::int32_t conv_transpose(std::int32_t in, std::string path,
                              std::int32_t filters, bool bias) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = LayerKind::conv_transpose;
    l.inputs = {in};
    l.filters = filters;
    l.kernel_h = 2;
    l.kernel_w = 2;
    l.stride = 2;
    l.bias = bias;
    l.out_channels = filters;
    return push(std::move(l));
  }

  std::int32_t bn(std::int32_t in, std::string path, bool scale) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = LayerKind::batchnorm;
    l.inputs = {in};
    l.bn_scale = scale;
    l.out_channels = ch(in);
    return push(std::move(l));
  }

  std::int32_t relu(std::int32_t in, std::string path) {
    return unary(in, std::move(path), LayerKind::relu);
  }

  std::int32_t sigmoid(std::int32_t in, std::string path) {
    return unary(in, std::move(path), LayerKind::sigmoid);
  }

  std::int32_t pool(std::int32_t in, std::string path) {
    return unary(in, std::move(path), LayerKind::maxpool);
  }

  std::int32_t cat(const std::vector<std::int32_t>& ins, std::string path) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = LayerKind::concat;
    l.inputs = ins;
    std::int32_t c = 0;
    for (std::int32_t i : ins) c += ch(i);
    l.out_channels = c;
    return push(std::move(l));
  }

  std::int32_t add2(std::int32_t a, std::int32_t b, std::string path) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = LayerKind::add;
    l.inputs = {a, b};
    l.out_channels = ch(a);
    return push(std::move(l));
  }

  std::int32_t ch(std::int32_t idx) const {
    return spec_.layers[static_cast<std::size_t>(idx)].out_channels;
  }

 private:
  std::int32_t unary(std::int32_t in, std::string path, LayerKind kind) {
    LayerSpec l;
    l.path = std::move(path);
    l.kind = kind;
    l.inputs = {in};
    l.out_channels = ch(in);
    return push(std::move(l));
  }

  std::int32_t push(LayerSpec l) {
    spec_.layers.push_back(std::move(l));
    return static_cast<std::int32_t>(spec_.layers.size()) - 1;
  }

  GraphSpec& spec_;
};

// conv + optional BN + optional relu, the basic unit of the BN-backed blocks
std::int32_t conv_unit(GraphBuilder& g, std::int32_t in, const std::string& path,
                       std::int32_t filters, std::int32_t k, bool conv_bias,
                       bool per_conv_bn, bool activation) {
  std::int32_t x = g.conv(in, path, filters, k, k, conv_bias);
  if (per_conv_bn) x = g.bn(x, path + "_bn", /*scale=*/false);
  if (activation) x = g.relu(x, path + "_relu");
  return x;
}

std::int32_t emit_multires(GraphBuilder& g, std::int32_t in,
                           const BlockSpec& b) {
  const FilterSchedule& fs = b.schedule;
  const bool pc = b.batch_norm && b.bn_placement == BnPlacement::per_conv;
  const std::string& p = b.path;
  std::int32_t c1 = conv_unit(g, in, p + "/conv1", fs.f1, 3, b.conv_bias, pc, true);
  std::int32_t c2 = conv_unit(g, c1, p + "/conv2", fs.f2, 3, b.conv_bias, pc, true);
  std::int32_t c3 = conv_unit(g, c2, p + "/conv3", fs.f3, 3, b.conv_bias, pc, true);
  std::int32_t cat = g.cat({c1, c2, c3}, p + "/concat");
  if (pc) cat = g.bn(cat, p + "/concat_bn", /*scale=*/true);
  std::int32_t sc =
      conv_unit(g, in, p + "/residual", fs.residual(), 1, b.conv_bias, pc, false);
  std::int32_t out = g.add2(sc, cat, p + "/add");
  out = g.relu(out, p + "/relu");
  if (b.batch_norm) out = g.bn(out, p + "/out_bn", /*scale=*/true);
  return out;
}

std::int32_t emit_dual_channel(GraphBuilder& g, std::int32_t in,
                               const BlockSpec& b) {
  const FilterSchedule& fs = b.schedule;
  const bool pc = b.batch_norm && b.bn_placement == BnPlacement::per_conv;
  const std::string& p = b.path;
  std::int32_t chains[2];
  const char* side[2] = {"left", "right"};
  for (int s = 0; s < 2; ++s) {
    std::string sp = p + "/" + side[s];
    std::int32_t c1 = conv_unit(g, in, sp + "1", fs.f1, 3, b.conv_bias, pc, true);
    std::int32_t c2 = conv_unit(g, c1, sp + "2", fs.f2, 3, b.conv_bias, pc, true);
    std::int32_t c3 = conv_unit(g, c2, sp + "3", fs.f3, 3, b.conv_bias, pc, true);
    std::int32_t cat = g.cat({c1, c2, c3}, sp + "_concat");
    if (pc) cat = g.bn(cat, sp + "_concat_bn", /*scale=*/true);
    chains[s] = cat;
  }
  std::int32_t out = g.add2(chains[0], chains[1], p + "/add");
  out = g.relu(out, p + "/relu");
  if (b.batch_norm) out = g.bn(out, p + "/out_bn", /*scale=*/true);
  return out;
}

std::int32_t emit_res_path(GraphBuilder& g, std::int32_t in,
                           const BlockSpec& b) {
  const bool pc = b.batch_norm && b.bn_placement == BnPlacement::per_conv;
  std::int32_t x = in;
  for (std::int32_t u = 0; u < b.res_path_len; ++u) {
    std::string up = b.path + "/unit" + std::to_string(u + 1);
    std::int32_t main =
        conv_unit(g, x, up + "/conv", b.filters, 3, b.conv_bias, pc, true);
    std::int32_t sc =
        conv_unit(g, x, up + "/residual", b.filters, 1, b.conv_bias, pc, false);
    std::int32_t out = g.add2(sc, main, up + "/add");
    out = g.relu(out, up + "/relu");
    if (b.batch_norm) out = g.bn(out, up + "/out_bn", /*scale=*/true);
    x = out;
  }
  return x;
}

std::int32_t emit_conv_pair(GraphBuilder& g, std::int32_t in,
                            const BlockSpec& b) {
  const bool pc = b.batch_norm && b.bn_placement == BnPlacement::per_conv;
  std::int32_t x =
      conv_unit(g, in, b.path + "/conv1", b.filters, 3, b.conv_bias, pc, true);
  x = conv_unit(g, x, b.path + "/conv2", b.filters, 3, b.conv_bias, pc, true);
  return x;
}

}  // namespace

std::int32_t append_block(GraphSpec& spec, const BlockSpec& block,
                          const std::vector<std::int32_t>& inputs) {
  GraphBuilder g(spec);
  if (inputs.empty()) {
    throw ValueError("append_block: a block needs at least one input");
  }
  const std::int32_t in = inputs.front();
  switch (block.kind) {
    case BlockKind::conv_pair:
      return emit_conv_pair(g, in, block);
    case BlockKind::multires:
      return emit_multires(g, in, block);
    case BlockKind::dual_channel:
      return emit_dual_channel(g, in, block);
    case BlockKind::res_path:
      return emit_res_path(g, in, block);
    case BlockKind::down:
      return g.pool(in, block.path);
    case BlockKind::up: {
      std::int32_t x = g.conv_transpose(in, block.path, block.filters,
                                        /*bias=*/block.conv_bias);
      return x;
    }
    case BlockKind::head: {
      // BN-backed head: 1×1 conv, scale-free BN, sigmoid.
      const bool pc =
          block.batch_norm && block.bn_placement == BnPlacement::per_conv;
      std::int32_t x = g.conv(in, block.path + "/conv", block.filters, 1, 1,
                              block.conv_bias);
      if (pc) x = g.bn(x, block.path + "/conv_bn", /*scale=*/false);
      return g.sigmoid(x, block.path + "/sigmoid");
    }
  }
  throw ValueError("append_block: unknown block kind");
}

namespace {

void check_stage_count(const std::vector<std::int32_t>& filters,
                       const char* what) {
  if (filters.size() != 5) {
    throw ValueError(std::string(what) +
                     ": exactly five stage widths are required, got " +
                     std::to_string(filters.size()));
  }
  for (std::int32_t f : filters) {
    if (f < 1) {
      throw ValueError(std::string(what) + ": stage widths must be positive");
    }
  }
}

std::string structure_note(const BuildOptions& o, bool bn_family) {
  if (!bn_family) {
    return "all convs biased, no batch norm";
  }
  std::string s = o.block_conv_bias ? "block convs biased" : "block convs bias-free";
  s += o.bn_placement == BnPlacement::per_conv
           ? "; batch norm per conv plus block joins"
           : "; batch norm at block outputs only";
  return s;
}

}  // namespace

GraphSpec build_unet(const std::vector<std::int32_t>& stage_filters,
                     const BuildOptions& options) {
  check_stage_count(stage_filters, "build_unet");
  GraphSpec spec;
  spec.arch = "unet";
  spec.in_channels = options.in_channels;
  spec.spatial_divisor = 16;
  spec.convention_note = structure_note(options, /*bn_family=*/false);

  GraphBuilder g(spec);
  std::int32_t x = g.input();
  std::int32_t skips[4];
  for (int i = 0; i < 4; ++i) {
    BlockSpec b;
    b.kind = BlockKind::conv_pair;
    b.path = "enc" + std::to_string(i + 1);
    b.filters = stage_filters[static_cast<std::size_t>(i)];
    b.conv_bias = true;
    skips[i] = append_block(spec, b, {x});
    x = g.pool(skips[i], "pool" + std::to_string(i + 1));
  }
  {
    BlockSpec b;
    b.kind = BlockKind::conv_pair;
    b.path = "bridge";
    b.filters = stage_filters[4];
    b.conv_bias = true;
    x = append_block(spec, b, {x});
  }
  for (int i = 3; i >= 0; --i) {
    const std::string stage = "dec" + std::to_string(i + 1);
    std::int32_t up = g.conv_transpose(
        x, stage + "/up", stage_filters[static_cast<std::size_t>(i)], true);
    up = g.relu(up, stage + "/up_relu");
    std::int32_t cat = g.cat({skips[i], up}, stage + "/concat");
    BlockSpec b;
    b.kind = BlockKind::conv_pair;
    b.path = stage;
    b.filters = stage_filters[static_cast<std::size_t>(i)];
    b.conv_bias = true;
    x = append_block(spec, b, {cat});
  }
  // final stage tail: a 2-filter 3×3 conv ahead of the 1×1 sigmoid head
  x = g.conv(x, "head/conv_pre", 2, 3, 3, true);
  x = g.relu(x, "head/relu_pre");
  x = g.conv(x, "head/conv", 1, 1, 1, true);
  x = g.sigmoid(x, "head/sigmoid");
  spec.output = x;
  return spec;
}

namespace {

GraphSpec build_bn_family(const std::string& arch, BlockKind block_kind,
                          const std::vector<std::int32_t>& base_u,
                          const BuildOptions& options) {
  check_stage_count(base_u, arch == "dcunet" ? "build_dcunet"
                                             : "build_multiresunet");
  GraphSpec spec;
  spec.arch = arch;
  spec.in_channels = options.in_channels;
  spec.spatial_divisor = 16;
  spec.convention_note = structure_note(options, /*bn_family=*/true);

  GraphBuilder g(spec);
  auto block = [&](std::int32_t in, int number) {
    BlockSpec b;
    b.kind = block_kind;
    b.path = "block" + std::to_string(number);
    const int stage = number <= 5 ? number : 10 - number;
    b.schedule = filter_schedule(base_u[static_cast<std::size_t>(stage - 1)],
                                 options.alpha);
    b.conv_bias = options.block_conv_bias;
    b.batch_norm = true;
    b.bn_placement = options.bn_placement;
    return append_block(spec, b, {in});
  };

  std::int32_t x = g.input();
  std::int32_t skips[4];
  for (int i = 1; i <= 4; ++i) {
    std::int32_t enc = block(x, i);
    BlockSpec rp;
    rp.kind = BlockKind::res_path;
    rp.path = "respath" + std::to_string(i);
    rp.filters = base_u[static_cast<std::size_t>(i - 1)];
    rp.res_path_len = 5 - i;
    rp.conv_bias = options.block_conv_bias;
    rp.batch_norm = true;
    rp.bn_placement = options.bn_placement;
    skips[i - 1] = append_block(spec, rp, {enc});
    x = g.pool(enc, "pool" + std::to_string(i));
  }
  x = block(x, 5);  // bridge; no res-path
  for (int number = 6; number <= 9; ++number) {
    const int stage = 10 - number;
    std::int32_t up = g.conv_transpose(
        x, "up" + std::to_string(number),
        base_u[static_cast<std::size_t>(stage - 1)], /*bias=*/true);
    std::int32_t cat =
        g.cat({up, skips[stage - 1]}, "concat" + std::to_string(number));
    x = block(cat, number);
  }
  BlockSpec head;
  head.kind = BlockKind::head;
  head.path = "head";
  head.filters = 1;
  head.conv_bias = options.block_conv_bias;
  head.batch_norm = true;
  head.bn_placement = options.bn_placement;
  x = append_block(spec, head, {x});
  spec.output = x;
  return spec;
}

}  // namespace

GraphSpec build_multiresunet(const std::vector<std::int32_t>& base_u,
                             const BuildOptions& options) {
  return build_bn_family("multiresunet", BlockKind::multires, base_u, options);
}

GraphSpec build_dcunet(const std::vector<std::int32_t>& base_u,
                       const BuildOptions& options) {
  return build_bn_family("dcunet", BlockKind::dual_channel, base_u, options);
}

GraphSpec build_unet(const std::vector<std::int32_t>& stage_filters,
                     std::int32_t in_channels) {
  BuildOptions o;
  o.in_channels = in_channels;
  return build_unet(stage_filters, o);
}

GraphSpec build_multiresunet(double alpha,
                             const std::vector<std::int32_t>& base_u,
                             std::int32_t in_channels) {
  BuildOptions o;
  o.in_channels = in_channels;
  o.alpha = alpha;
  return build_multiresunet(base_u, o);
}

GraphSpec build_dcunet(double alpha, const std::vector<std::int32_t>& base_u,
                       std::int32_t in_channels) {
  BuildOptions o;
  o.in_channels = in_channels;
  o.alpha = alpha;
  return build_dcunet(base_u, o);
}

}  // namespace dcu
