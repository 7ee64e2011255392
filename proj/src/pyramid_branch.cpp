#include "fpb/pyramid_branch.hpp"

#include <stdexcept>

namespace fpb {

namespace {

void require_same_map(const Var& a, const Var& b, const char* node) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string("fpb_fuse: shape mismatch at ") + node + ": " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

Var fuse_sum(const Var& a, const Var& b, const std::optional<std::array<FusionWeights, 4>>& weights, int node,
             const char* name) {
  require_same_map(a, b, name);
  if (!weights) return ops::add(a, b);
  // Fast normalized fusion: relu(w_i) / (sum relu(w) + eps).
  const auto& w = (*weights)[node];
  Var wa = ops::relu(w.a), wb = ops::relu(w.b);
  Var norm = ops::add(ops::add(wa, wb), Var::scalar(1e-4));
  return ops::add(ops::mul_scalar(a, ops::div_scalar(wa, norm)), ops::mul_scalar(b, ops::div_scalar(wb, norm)));
}

}  // namespace

Var lateral(const Var& x, ConvBn& filter, bool training) {
  if (x.value().rank() != 4 || x.dim(1) != filter.conv().in_channels())
    throw std::invalid_argument("lateral: tap " + shape_str(x.shape()) + " does not match filter input " +
                                std::to_string(filter.conv().in_channels()));
  return filter.forward(x, training);
}

Var fpb_fuse(const Var& lat2, const Var& lat3, const Var& raw2, const Var& raw3, FusionNodes& nodes, bool training) {
  const auto& w = nodes.weights;
  Var t2 = nodes.t2.forward(fuse_sum(lat2, ops::upsample_nearest(lat3, 2), w, 0, "t2"), training);
  Var o2_in = nodes.shortcut2 ? fuse_sum(t2, nodes.shortcut2->forward(raw2, training), w, 1, "o2") : t2;
  Var o2 = nodes.o2.forward(o2_in, training);
  Var t3 = nodes.t3.forward(fuse_sum(lat3, ops::max_pool2d(o2, 2, 2, 0), w, 2, "t3"), training);
  Var o3_in = nodes.shortcut3 ? fuse_sum(t3, nodes.shortcut3->forward(raw3, training), w, 3, "o3") : t3;
  return nodes.o3.forward(o3_in, training);
}

Var recover_channels(const Var& o3, ConvBn& head, bool training) { return head.forward(o3, training); }

std::vector<Var> part_pool(const Var& x, int parts) { return ops::stripe_avg_pool(x, parts); }

Var reduce_dim(const Var& f_p_n, ConvBn& head, bool training) {
  if (f_p_n.value().rank() != 2) throw std::invalid_argument("reduce_dim: expected [B,C] part features");
  const std::int64_t b = f_p_n.dim(0);
  Var y = head.forward(ops::reshape(f_p_n, {b, f_p_n.dim(1), 1, 1}), training);
  return ops::reshape(y, {b, y.dim(1)});
}

PyramidBranch::PyramidBranch(const FpbConfig& cfg, std::int64_t stage2_channels, std::int64_t stage3_channels,
                             std::mt19937_64& rng)
    : cfg_(cfg),
      stage2_channels_(stage2_channels),
      stage3_channels_(stage3_channels),
      lateral2_(stage2_channels, cfg.inner_channels, 1, 1, 0, true, rng),
      lateral3_(stage3_channels, cfg.inner_channels, 1, 1, 0, true, rng),
      fusion_{ConvBn(cfg.inner_channels, cfg.inner_channels, 3, 1, 1, true, rng),
              ConvBn(cfg.inner_channels, cfg.inner_channels, 3, 1, 1, true, rng),
              ConvBn(cfg.inner_channels, cfg.inner_channels, 3, 1, 1, true, rng),
              ConvBn(cfg.inner_channels, cfg.inner_channels, 3, 1, 1, true, rng),
              std::nullopt,
              std::nullopt,
              std::nullopt},
      recover_(cfg.inner_channels, cfg.out_channels, 1, 1, 0, true, rng) {
  if (cfg.parts < 1) throw std::invalid_argument("FPB needs at least one part");
  if (cfg.inner_channels < 1 || cfg.out_channels < 1 || cfg.reduced_dim < 1)
    throw std::invalid_argument("FPB channel widths must be positive");
  if (cfg.attention_on_shallow_lateral) lateral_attention_.emplace(cfg.inner_channels, cfg.attention_reduction, rng);
  if (cfg.shortcuts) {
    fusion_.shortcut2.emplace(stage2_channels, cfg.inner_channels, 1, 1, 0, false, rng);
    fusion_.shortcut3.emplace(stage3_channels, cfg.inner_channels, 1, 1, 0, false, rng);
  }
  if (cfg.weighted_fusion) {
    fusion_.weights.emplace();
    for (auto& node : *fusion_.weights) node = {Var::scalar(1, true), Var::scalar(1, true)};
  }
  for (int n = 0; n < cfg.parts; ++n) reduce_.emplace_back(cfg.out_channels, cfg.reduced_dim, 1, 1, 0, true, rng);
}

PyramidOutputs PyramidBranch::forward(const Var& tap2, const Var& tap3, bool training) {
  if (tap2.dim(1) != stage2_channels_ || tap3.dim(1) != stage3_channels_)
    throw std::invalid_argument("pyramid branch: taps " + shape_str(tap2.shape()) + ", " + shape_str(tap3.shape()) +
                                " do not match configured channels");
  PyramidOutputs out;
  Var lat2 = lateral(tap2, lateral2_, training);
  if (lateral_attention_) lat2 = lateral_attention_->forward(lat2);
  Var lat3 = lateral(tap3, lateral3_, training);
  out.shallow_lateral = lat2;
  out.fused = fpb_fuse(lat2, lat3, tap2, tap3, fusion_, training);
  out.recovered = recover_channels(out.fused, recover_, training);
  out.parts.f_p = part_pool(out.recovered, cfg_.parts);
  for (int n = 0; n < cfg_.parts; ++n) out.parts.f_s.push_back(reduce_dim(out.parts.f_p[n], reduce_[n], training));
  return out;
}

void PyramidBranch::collect(ParamTable& table) {
  lateral2_.collect(table, "fpb.lateral2");
  lateral3_.collect(table, "fpb.lateral3");
  if (lateral_attention_) lateral_attention_->collect(table, "fpb.attention");
  fusion_.t2.collect(table, "fpb.fusion.t2");
  fusion_.o2.collect(table, "fpb.fusion.o2");
  fusion_.t3.collect(table, "fpb.fusion.t3");
  fusion_.o3.collect(table, "fpb.fusion.o3");
  if (fusion_.shortcut2) fusion_.shortcut2->collect(table, "fpb.shortcut2");
  if (fusion_.shortcut3) fusion_.shortcut3->collect(table, "fpb.shortcut3");
  if (fusion_.weights)
    for (std::size_t i = 0; i < fusion_.weights->size(); ++i) {
      table.add_param("fpb.fusion_weights." + std::to_string(i) + ".a", (*fusion_.weights)[i].a);
      table.add_param("fpb.fusion_weights." + std::to_string(i) + ".b", (*fusion_.weights)[i].b);
    }
  recover_.collect(table, "fpb.recover");
  for (std::size_t n = 0; n < reduce_.size(); ++n) reduce_[n].collect(table, "fpb.reduce" + std::to_string(n));
}

}  // namespace fpb
