#include "check.hpp"

#include "fpb/global_branch.hpp"
#include "fpb/model.hpp"
#include "oracles.hpp"

using namespace fpb;

namespace {

// Output size of a conv/pool window, written out independently of the ops.
std::int64_t window_out(std::int64_t in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

struct Hw {
  std::int64_t h, w;
};

// Stem conv, stem max-pool, then the first 3x3 of each stage carries the
// stride; returns the stage 1..4 output sizes.
std::array<Hw, 4> trace_shapes(Hw in, int last_stride) {
  Hw x{window_out(in.h, 7, 2, 3), window_out(in.w, 7, 2, 3)};
  x = {window_out(x.h, 3, 2, 1), window_out(x.w, 3, 2, 1)};
  std::array<Hw, 4> out{};
  const int strides[4] = {1, 2, 2, last_stride};
  for (int s = 0; s < 4; ++s) {
    x = {window_out(x.h, 3, strides[s], 1), window_out(x.w, 3, strides[s], 1)};
    out[s] = x;
  }
  return out;
}

// Learnable scalars of a bottleneck ResNet trunk (conv weights + BN affine).
std::int64_t trunk_formula(std::int64_t w, const std::array<int, 4>& blocks) {
  auto conv = [](std::int64_t i, std::int64_t o, int k) { return i * o * k * k + 2 * o; };
  std::int64_t total = conv(3, w, 7), in = w;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t planes = w << s;
    for (int b = 0; b < blocks[s]; ++b) {
      total += conv(in, planes, 1) + conv(planes, planes, 3) + conv(planes, 4 * planes, 1);
      if (b == 0) total += conv(in, 4 * planes, 1);
      in = 4 * planes;
    }
  }
  return total;
}

BackboneConfig small_config(int width = 4) {
  BackboneConfig cfg;
  cfg.base_width = width;
  cfg.input_height = 64;
  cfg.input_width = 32;
  return cfg;
}

}  // namespace

TEST_CASE("Backbone.FullSizeStageShapesFollowStrideArithmetic") {
  BackboneConfig cfg;
  cfg.base_width = 4;  // spatial arithmetic does not depend on width
  std::mt19937_64 rng(1);
  Backbone net(cfg, rng);
  std::mt19937_64 data(2);
  Var images(Tensor::randn({1, 3, 384, 128}, data));
  BackboneMaps maps = net.forward(images, false);
  const auto trace = trace_shapes({384, 128}, 1);
  CHECK_EQ(trace[2].h, 24);
  CHECK_EQ(trace[2].w, 8);
  CHECK_EQ(maps.stage2.shape(), (Shape{1, 32, trace[1].h, trace[1].w}));
  CHECK_EQ(maps.stage3.shape(), (Shape{1, 64, trace[2].h, trace[2].w}));
  CHECK_EQ(maps.stage4.shape(), (Shape{1, 128, trace[3].h, trace[3].w}));
  CHECK_EQ(maps.stage2.shape(), (Shape{1, 32, 48, 16}));
  CHECK_EQ(maps.stage4.shape(), (Shape{1, 128, 24, 8}));
}

TEST_CASE("Backbone.StandardWidthChannels") {
  BackboneConfig cfg;
  CHECK_EQ(cfg.stage_channels(), (std::array<std::int64_t, 4>{256, 512, 1024, 2048}));
}

TEST_CASE("Backbone.TrunkCountMatchesStructuralFormula") {
  for (auto variant : {BackboneVariant::kResNet50, BackboneVariant::kResNet101}) {
    BackboneConfig cfg;
    cfg.variant = variant;
    cfg.attention_after_stage2 = false;
    std::mt19937_64 rng(3);
    Backbone net(cfg, rng);
    ParamTable t;
    net.collect(t);
    CHECK_EQ(t.count("backbone."), trunk_formula(64, cfg.stage_blocks()));
  }
  CHECK_EQ(trunk_formula(64, {3, 4, 6, 3}), 23508032);
}

TEST_CASE("Backbone.LastStrideDoublesExtentKeepsParameters") {
  auto cfg1 = small_config(), cfg2 = small_config();
  cfg2.last_stride = 2;
  std::mt19937_64 r1(4), r2(4);
  Backbone a(cfg1, r1), b(cfg2, r2);
  ParamTable ta, tb;
  a.collect(ta);
  b.collect(tb);
  CHECK_EQ(ta.count(), tb.count());
  std::mt19937_64 data(5);
  Var images(Tensor::randn({1, 3, 64, 32}, data));
  auto ma = a.forward(images, false), mb = b.forward(images, false);
  CHECK_EQ(ma.stage4.dim(2), 2 * mb.stage4.dim(2));
  CHECK_EQ(ma.stage4.dim(3), 2 * mb.stage4.dim(3));
  BackboneConfig bad = small_config();
  bad.last_stride = 3;
  CHECK_THROWS_AS(Backbone(bad, r1), std::invalid_argument);
}

TEST_CASE("GlobalBranch.ConstantInputGlobalFeatureIsSpatialMean") {
  auto cfg = small_config();
  std::mt19937_64 rng(6);
  GlobalBranch branch(cfg, rng);
  Var images(Tensor({2, 3, 64, 32}, 0.7));
  GlobalOutputs out = branch.forward(images, false);
  const Tensor& s4 = out.maps.stage4.value();
  const auto c = s4.dim(1), hw = s4.dim(2) * s4.dim(3);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      real mean = 0;
      for (std::int64_t i = 0; i < hw; ++i) mean += s4[(n * c + ch) * hw + i];
      CHECK_NEAR(out.f_g.value()[n * c + ch], mean / hw, 1e-12);
    }
}

TEST_CASE("GlobalBranch.BnneckAtInitIsNearIdentity") {
  auto cfg = small_config();
  std::mt19937_64 rng(7);
  GlobalBranch branch(cfg, rng);
  std::mt19937_64 data(8);
  GlobalOutputs out = branch.forward(Var(Tensor::randn({2, 3, 64, 32}, data)), false);
  const real scale = 1 / std::sqrt(1 + BatchNorm::kEps);
  for (std::int64_t i = 0; i < out.f_g.numel(); ++i)
    CHECK_NEAR(out.f_b.value()[i], out.f_g.value()[i] * scale, 1e-12);
  ParamTable t;
  branch.collect(t);
  CHECK_EQ(t.count("bnneck."), cfg.stage_channels()[3]);  // scale only, no shift
}

TEST_CASE("GlobalBranch.AvgPoolIsLinear") {
  std::mt19937_64 rng(9);
  Tensor x = Tensor::randn({2, 3, 4, 2}, rng);
  Tensor ax = x;
  for (auto& v : ax.values()) v *= -2.5;
  Tensor g = ops::global_avg_pool(Var(x)).value(), ga = ops::global_avg_pool(Var(ax)).value();
  for (std::int64_t i = 0; i < g.numel(); ++i) CHECK_NEAR(ga[i], -2.5 * g[i], 1e-12);
}

TEST_CASE("GlobalBranch.InputValidation") {
  auto cfg = small_config();
  std::mt19937_64 rng(10);
  CHECK_THROWS_AS(check_input_batch(Tensor({1, 3, 64, 30}), cfg), std::invalid_argument);
  CHECK_THROWS_AS(check_input_batch(Tensor({1, 1, 64, 32}), cfg), std::invalid_argument);
  Tensor bad({1, 3, 64, 32});
  bad[5] = std::numeric_limits<real>::quiet_NaN();
  CHECK_THROWS_AS(check_input_batch(bad, cfg), std::invalid_argument);
  ModelConfig mc;
  mc.backbone = cfg;
  mc.backbone.pretrained_weights_path = "/nonexistent/weights.fpbckpt";
  mc.num_identities = 4;
  CHECK_THROWS_AS(FpbModel{mc}, std::runtime_error);
}

TEST_CASE("GlobalClassifier.LinearMapCases") {
  std::mt19937_64 rng(11);
  Linear head(6, 4, false, 1.0, rng);
  CHECK_EQ(global_classifier(Var(Tensor({2, 6})), head).value().max_abs(), 0);

  Linear pick(6, 3, false, 0.0, rng);
  pick.weight().mutable_value().fill(0);
  const int chosen[3] = {4, 0, 2};
  for (int k = 0; k < 3; ++k) pick.weight().mutable_value()[k * 6 + chosen[k]] = 1;
  Tensor f = Tensor::randn({1, 6}, rng);
  Tensor logits = global_classifier(Var(f), pick).value();
  for (int k = 0; k < 3; ++k) CHECK_EQ(logits[k], f[chosen[k]]);

  Tensor fb = Tensor::randn({3, 6}, rng);
  auto ref = oracle::matmul(oracle::to_mat(fb, 3, 6), oracle::transpose(oracle::to_mat(head.weight().value(), 4, 6)));
  Tensor out = global_classifier(Var(fb), head).value();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) CHECK_NEAR(out[i * 4 + k], ref[i][k], 1e-6);

  CHECK_THROWS_AS(global_classifier(Var(Tensor({1, 5})), head), std::invalid_argument);
  Linear single(6, 1, false, 1.0, rng);
  CHECK_THROWS_AS(global_classifier(Var(fb), single), std::invalid_argument);
}
