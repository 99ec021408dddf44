#include <doctest.h>

#include <filesystem>
#include <set>

#include "dcu/builders.hpp"
#include "dcu/model.hpp"
#include "dcu/param_count.hpp"
#include "support/testers.hpp"

using dcu::BnCountMode;
using dcu::GraphSpec;
using dcu::LayerKind;
using dcu::LayerSpec;
using dcu::Shape;

namespace {

const std::vector<std::int32_t> kReducedU{8, 16, 32, 64, 128};
const std::vector<std::int32_t> kReducedUnet{4, 8, 16, 32, 64};

std::vector<const LayerSpec*> layers_with_prefix(const GraphSpec& spec,
                                                 const std::string& prefix) {
  std::vector<const LayerSpec*> out;
  for (const LayerSpec& l : spec.layers) {
    if (l.path.rfind(prefix, 0) == 0) out.push_back(&l);
  }
  return out;
}

std::vector<std::int32_t> conv3x3_filters(const GraphSpec& spec,
                                          const std::string& prefix) {
  std::vector<std::int32_t> filters;
  for (const LayerSpec* l : layers_with_prefix(spec, prefix)) {
    if (l->kind == LayerKind::conv && l->kernel_h == 3) {
      filters.push_back(l->filters);
    }
  }
  return filters;
}

}  // namespace

TEST_CASE("filter_schedule reproduces the published stage widths") {
  struct Row {
    std::int32_t u, f1, f2, f3, residual;
  };
  // encoder-stage widths of both architectures
  const Row rows[] = {
      {64, 17, 35, 53, 105},    {128, 35, 71, 106, 212},
      {256, 71, 142, 213, 426}, {512, 142, 284, 427, 853},
      {1024, 285, 569, 855, 1709},
      {32, 8, 17, 26, 51},
  };
  for (const Row& r : rows) {
    const dcu::FilterSchedule s = dcu::filter_schedule(r.u, 1.67);
    CHECK(s.f1 == r.f1);
    CHECK(s.f2 == r.f2);
    CHECK(s.f3 == r.f3);
    CHECK(s.residual() == r.residual);
  }
}

TEST_CASE("filter_schedule rejects degenerate configurations") {
  CHECK_THROWS_AS(dcu::filter_schedule(5, 1.67), dcu::ValueError);
  CHECK_THROWS_AS(dcu::filter_schedule(64, 0.0), dcu::ValueError);
  CHECK_THROWS_AS(dcu::filter_schedule(1000, 0.005), dcu::ValueError);
  CHECK_NOTHROW(dcu::filter_schedule(6, 1.67));
}

TEST_CASE("reference parameter totals reconcile exactly") {
  const dcu::CountConvention conv = dcu::reconciled_convention();
  CHECK(dcu::count_params(dcu::build_unet(dcu::kUnetStageFilters, 1), conv)
            .total == dcu::kReferenceTotalUnet);
  CHECK(dcu::count_params(
            dcu::build_multiresunet(1.67, dcu::kMultiResBaseU, 1), conv)
            .total == dcu::kReferenceTotalMultiRes);
  CHECK(dcu::count_params(dcu::build_dcunet(1.67, dcu::kDcBaseU, 1), conv)
            .total == dcu::kReferenceTotalDc);
}

TEST_CASE("convention sweep flags the reconciled convention as best") {
  const auto rows = dcu::convention_sweep(1);
  CHECK(rows.size() == 12);
  int best_count = 0;
  for (const dcu::SweepRow& row : rows) {
    if (row.best) {
      ++best_count;
      CHECK(row.convention.block_conv_bias ==
            dcu::reconciled_convention().block_conv_bias);
      CHECK(row.convention.bn_placement ==
            dcu::reconciled_convention().bn_placement);
      CHECK(row.convention.bn_count == dcu::reconciled_convention().bn_count);
      CHECK(row.unet == dcu::kReferenceTotalUnet);
      CHECK(row.multires == dcu::kReferenceTotalMultiRes);
      CHECK(row.dcunet == dcu::kReferenceTotalDc);
    }
  }
  CHECK(best_count == 1);
}

TEST_CASE("dcunet total is strictly smallest under every convention") {
  for (const dcu::SweepRow& row : dcu::convention_sweep(1)) {
    CHECK(row.dcunet < row.multires);
    CHECK(row.dcunet < row.unet);
  }
}

TEST_CASE("hand-counted conv ledger entries") {
  // 3x3 conv, 3 -> 17 channels, bias: 3*3*3*17 + 17
  GraphSpec spec;
  spec.arch = "probe";
  spec.in_channels = 3;
  spec.spatial_divisor = 1;
  LayerSpec input;
  input.path = "input";
  input.kind = LayerKind::input;
  input.out_channels = 3;
  spec.layers.push_back(input);
  LayerSpec conv;
  conv.path = "c";
  conv.kind = LayerKind::conv;
  conv.inputs = {0};
  conv.filters = 17;
  conv.kernel_h = conv.kernel_w = 3;
  conv.bias = true;
  conv.out_channels = 17;
  spec.layers.push_back(conv);
  spec.output = 1;
  const auto ledger = dcu::count_params(spec, BnCountMode::trainable_only);
  CHECK(ledger.total == 476);

  spec.layers[1].kernel_h = spec.layers[1].kernel_w = 1;
  spec.layers[1].filters = 3;
  spec.layers[1].out_channels = 3;
  spec.layers[1].bias = false;
  CHECK(dcu::count_params(spec, BnCountMode::trainable_only).total == 9);
}

TEST_CASE("multires block 1 carries the published widths") {
  const GraphSpec spec = dcu::build_multiresunet(1.67, dcu::kMultiResBaseU, 1);
  CHECK(conv3x3_filters(spec, "block1/") ==
        std::vector<std::int32_t>{17, 35, 53});
  bool found_residual = false;
  for (const LayerSpec* l : layers_with_prefix(spec, "block1/residual")) {
    if (l->kind == LayerKind::conv) {
      CHECK(l->kernel_h == 1);
      CHECK(l->filters == 105);
      found_residual = true;
    }
  }
  CHECK(found_residual);
}

TEST_CASE("res-paths have lengths {4,3,2,1} at the stage widths") {
  const GraphSpec spec = dcu::build_multiresunet(1.67, dcu::kMultiResBaseU, 1);
  const std::int32_t widths[4] = {64, 128, 256, 512};
  for (int stage = 1; stage <= 4; ++stage) {
    const std::string prefix = "respath" + std::to_string(stage) + "/";
    int units = 0;
    for (const LayerSpec* l : layers_with_prefix(spec, prefix)) {
      if (l->kind == LayerKind::conv && l->kernel_h == 3) {
        CHECK(l->filters == widths[stage - 1]);
        ++units;
      }
    }
    CHECK(units == 5 - stage);
  }
  // the bridge has no res-path
  CHECK(layers_with_prefix(spec, "respath5").empty());
}

TEST_CASE("dual-channel block chains carry the published widths and sum") {
  const GraphSpec spec = dcu::build_dcunet(1.67, dcu::kDcBaseU, 1);
  CHECK(conv3x3_filters(spec, "block1/left") ==
        std::vector<std::int32_t>{8, 17, 26});
  CHECK(conv3x3_filters(spec, "block1/right") ==
        std::vector<std::int32_t>{8, 17, 26});
  CHECK(conv3x3_filters(spec, "block5/left") ==
        std::vector<std::int32_t>{142, 284, 427});
  // chains are added, not concatenated: block output keeps the chain width
  for (const LayerSpec* l : layers_with_prefix(spec, "block1/add")) {
    CHECK(l->kind == LayerKind::add);
    CHECK(l->out_channels == 51);
  }
  // no 1x1 residual inside a dual-channel block
  for (const LayerSpec* l : layers_with_prefix(spec, "block1/")) {
    if (l->kind == LayerKind::conv) CHECK(l->kernel_h == 3);
  }
}

TEST_CASE("encoder/decoder schedules are symmetric (block i vs 10-i)") {
  for (const auto& base : {dcu::kMultiResBaseU, dcu::kDcBaseU}) {
    const GraphSpec spec =
        base == dcu::kDcBaseU ? dcu::build_dcunet(1.67, base, 1)
                              : dcu::build_multiresunet(1.67, base, 1);
    for (int i = 1; i <= 4; ++i) {
      const auto enc =
          conv3x3_filters(spec, "block" + std::to_string(i) + "/");
      const auto dec =
          conv3x3_filters(spec, "block" + std::to_string(10 - i) + "/");
      CHECK(enc == dec);
    }
  }
}

TEST_CASE("dc-unet per-chain widths equal multires widths at half U") {
  for (std::size_t stage = 0; stage < 5; ++stage) {
    const auto dc = dcu::filter_schedule(dcu::kDcBaseU[stage], 1.67);
    const auto mres = dcu::filter_schedule(dcu::kMultiResBaseU[stage], 1.67);
    CHECK(dcu::kMultiResBaseU[stage] == 2 * dcu::kDcBaseU[stage]);
    // the half-U schedule is exactly the published per-chain width list
    CHECK(dc.base_u * 2 == mres.base_u);
  }
  const GraphSpec dc_spec = dcu::build_dcunet(1.67, dcu::kDcBaseU, 1);
  const GraphSpec mres_spec =
      dcu::build_multiresunet(1.67, dcu::kMultiResBaseU, 1);
  for (int i = 1; i <= 9; ++i) {
    const std::string blk = "block" + std::to_string(i) + "/";
    const auto chain = conv3x3_filters(dc_spec, blk + "left");
    const auto half_u_widths = [&] {
      const int stage = i <= 5 ? i : 10 - i;
      const auto s = dcu::filter_schedule(dcu::kDcBaseU[stage - 1], 1.67);
      return std::vector<std::int32_t>{s.f1, s.f2, s.f3};
    }();
    CHECK(chain == half_u_widths);
  }
  (void)mres_spec;
}

TEST_CASE("graph specs type-check before execution") {
  for (const GraphSpec& spec :
       {dcu::build_unet(kReducedUnet, 1),
        dcu::build_multiresunet(1.67, kReducedU, 1),
        dcu::build_dcunet(1.67, kReducedU, 1)}) {
    CHECK_NOTHROW(dcu::infer_shapes(spec, 1, 32, 32));
    CHECK_THROWS_AS(dcu::infer_shapes(spec, 1, 250, 130), dcu::ShapeError);
    // unique layer paths
    std::set<std::string> paths;
    for (const LayerSpec& l : spec.layers) {
      CHECK(paths.insert(l.path).second);
    }
  }
}

TEST_CASE("reduced models forward to the input shape with values in (0,1)") {
  struct Case {
    const char* name;
    GraphSpec spec;
  };
  const Case cases[] = {
      {"unet", dcu::build_unet(kReducedUnet, 1)},
      {"multires", dcu::build_multiresunet(1.67, kReducedU, 1)},
      {"dcunet", dcu::build_dcunet(1.67, kReducedU, 1)},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    dcu::Model<float> model(c.spec, 7);
    auto x = dcu::Tensor<float>::from_data(
        {1, 1, 32, 32},
        [&] {
          std::vector<float> v(32 * 32);
          for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = static_cast<float>(i % 255) / 255.0f;
          }
          return v;
        }());
    dcu::NoGradGuard guard;
    auto y = model.forward(x, dcu::BatchNormMode::train);
    CHECK(y.shape() == Shape{1, 1, 32, 32});
    for (float v : y.data()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
    CHECK_THROWS_AS(model.forward(dcu::Tensor<float>::zeros({1, 1, 40, 20}),
                                  dcu::BatchNormMode::train),
                    dcu::ShapeError);
  }
}

TEST_CASE("symbolic count equals the elements actually allocated") {
  struct Case {
    GraphSpec spec;
  };
  for (const GraphSpec& spec :
       {dcu::build_unet(kReducedUnet, 1),
        dcu::build_multiresunet(1.67, kReducedU, 1),
        dcu::build_dcunet(1.67, kReducedU, 1)}) {
    dcu::Model<float> model(spec, 1);
    const auto ledger =
        dcu::count_params(spec, BnCountMode::trainable_plus_moving);
    CHECK(ledger.total == model.allocated_elements());
  }
}

TEST_CASE("summarize lists every layer and the block-1 widths") {
  const GraphSpec spec = dcu::build_multiresunet(1.67, dcu::kMultiResBaseU, 1);
  const std::string text = dcu::summarize(spec, 256, 128);
  for (const char* token : {" 17 ", " 35 ", " 53 ", " 105 "}) {
    CHECK(text.find(token) != std::string::npos);
  }
  // one row per layer between the 3 header lines and 1 footer line
  const std::size_t lines = std::count(text.begin(), text.end(), '\n');
  CHECK(lines == spec.layers.size() + 4);
  CHECK(text.find("29061741") != std::string::npos);
}

TEST_CASE("summarize of an empty graph is header only") {
  const std::string text = dcu::summarize(GraphSpec{}, 16, 16);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("text serialization is deterministic") {
  const GraphSpec a = dcu::build_dcunet(1.67, kReducedU, 1);
  const GraphSpec b = dcu::build_dcunet(1.67, kReducedU, 1);
  CHECK(dcu::serialize_text(a) == dcu::serialize_text(b));
  CHECK(dcu::serialize_text(a).find("block1/left1") != std::string::npos);
}

TEST_CASE("checkpoint round trip reproduces predictions bitwise") {
  const GraphSpec spec = dcu::build_dcunet(1.67, kReducedU, 1);
  dcu::Model<float> model(spec, 99);
  auto x = dcu::Tensor<float>::full({1, 1, 16, 16}, 0.5f);
  {
    dcu::NoGradGuard guard;
    model.forward(x, dcu::BatchNormMode::train);  // populate moving stats
  }
  const auto tmp = std::filesystem::temp_directory_path() / "dcu_ckpt_test.bin";
  model.save_checkpoint(tmp);

  dcu::Model<float> loaded(spec, 12345);  // different init
  loaded.load_checkpoint(tmp);
  auto y1 = model.predict(x);
  auto y2 = loaded.predict(x);
  for (std::size_t i = 0; i < y1.data().size(); ++i) {
    CHECK(y1.data()[i] == y2.data()[i]);
  }
  std::filesystem::remove(tmp);
}

TEST_CASE("unet smoke configuration with unit widths still counts") {
  const GraphSpec spec = dcu::build_unet({1, 1, 1, 1, 1}, 1);
  const auto ledger =
      dcu::count_params(spec, BnCountMode::trainable_plus_moving);
  CHECK(ledger.total > 0);
  CHECK(ledger.total < 1000);
}
