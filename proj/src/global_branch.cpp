#include "fpb/global_branch.hpp"

#include <stdexcept>

namespace fpb {

std::string to_string(BackboneVariant v) { return v == BackboneVariant::kResNet50 ? "resnet50" : "resnet101"; }

BackboneVariant parse_backbone_variant(const std::string& s) {
  if (s == "resnet50") return BackboneVariant::kResNet50;
  if (s == "resnet101") return BackboneVariant::kResNet101;
  throw std::invalid_argument("unknown backbone variant '" + s + "' (expected resnet50 or resnet101)");
}

std::array<std::int64_t, 4> BackboneConfig::stage_channels() const {
  const std::int64_t w = base_width;
  return {4 * w, 8 * w, 16 * w, 32 * w};
}

std::array<int, 4> BackboneConfig::stage_blocks() const {
  return variant == BackboneVariant::kResNet50 ? std::array<int, 4>{3, 4, 6, 3} : std::array<int, 4>{3, 4, 23, 3};
}

Bottleneck::Bottleneck(std::int64_t in, std::int64_t planes, int stride, std::mt19937_64& rng)
    : conv1_(in, planes, 1, 1, 0, true, rng),
      conv2_(planes, planes, 3, stride, 1, true, rng),
      conv3_(planes, planes * 4, 1, 1, 0, false, rng) {
  if (stride != 1 || in != planes * 4) downsample_.emplace(in, planes * 4, 1, stride, 0, false, rng);
}

Var Bottleneck::forward(const Var& x, bool training) {
  Var out = conv3_.forward(conv2_.forward(conv1_.forward(x, training), training), training);
  Var identity = downsample_ ? downsample_->forward(x, training) : x;
  return ops::relu(ops::add(out, identity));
}

void Bottleneck::collect(ParamTable& table, const std::string& prefix) {
  conv1_.collect(table, join_name(prefix, "conv1"));
  conv2_.collect(table, join_name(prefix, "conv2"));
  conv3_.collect(table, join_name(prefix, "conv3"));
  if (downsample_) downsample_->collect(table, join_name(prefix, "downsample"));
}

Backbone::Backbone(const BackboneConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg), stem_(3, cfg.base_width, 7, 2, 3, true, rng) {
  if (cfg.last_stride != 1 && cfg.last_stride != 2) throw std::invalid_argument("last_stride must be 1 or 2");
  if (cfg.base_width < 1) throw std::invalid_argument("base_width must be positive");
  const auto blocks = cfg.stage_blocks();
  const std::array<int, 4> strides{1, 2, 2, cfg.last_stride};
  std::int64_t in = cfg.base_width;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t planes = static_cast<std::int64_t>(cfg.base_width) << s;
    for (int b = 0; b < blocks[s]; ++b) {
      stages_[s].emplace_back(in, planes, b == 0 ? strides[s] : 1, rng);
      in = planes * 4;
    }
  }
  if (cfg.attention_after_stage2) stage2_attention_.emplace(cfg.stage_channels()[1], cfg.attention_reduction, rng);
}

BackboneMaps Backbone::forward(const Var& images, bool training) {
  Var x = ops::max_pool2d(stem_.forward(images, training), 3, 2, 1);
  BackboneMaps maps;
  for (int s = 0; s < 4; ++s) {
    for (auto& block : stages_[s]) x = block.forward(x, training);
    if (s == 1) {
      if (stage2_attention_) x = stage2_attention_->forward(x);
      maps.stage2 = x;
    } else if (s == 2) {
      maps.stage3 = x;
    }
  }
  maps.stage4 = x;
  return maps;
}

void Backbone::collect(ParamTable& table) {
  stem_.collect(table, "backbone.stem");
  for (int s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].collect(table, "backbone.layer" + std::to_string(s + 1) + "." + std::to_string(b));
  if (stage2_attention_) stage2_attention_->collect(table, "attention_backbone");
}

GlobalBranch::GlobalBranch(const BackboneConfig& cfg, std::mt19937_64& rng)
    : backbone_(cfg, rng), bnneck_(cfg.stage_channels()[3], /*learn_shift=*/false) {}

GlobalOutputs GlobalBranch::forward(const Var& images, bool training) {
  GlobalOutputs out;
  out.maps = backbone_.forward(images, training);
  out.f_g = ops::global_avg_pool(out.maps.stage4);
  out.f_b = bnneck_.forward(out.f_g, training);
  return out;
}

void GlobalBranch::collect(ParamTable& table) {
  backbone_.collect(table);
  bnneck_.collect(table, "bnneck");
}

void check_input_batch(const Tensor& images, const BackboneConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("expected an image batch [B,3,H,W], got " + shape_str(images.shape()));
  if (images.dim(2) != cfg.input_height || images.dim(3) != cfg.input_width)
    throw std::invalid_argument("input size " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                                " does not match configured " + std::to_string(cfg.input_height) + "x" +
                                std::to_string(cfg.input_width));
  if (!images.all_finite()) throw std::invalid_argument("image batch contains non-finite values");
}

Var global_classifier(const Var& f_b, const Linear& head) {
  const Var& w = head.weight();
  if (w.dim(0) < 2) throw std::invalid_argument("global_classifier: need at least 2 identities");
  if (f_b.value().rank() != 2 || f_b.dim(1) != w.dim(1))
    throw std::invalid_argument("global_classifier: feature " + shape_str(f_b.shape()) + " does not match head " +
                                shape_str(w.shape()));
  return head.forward(f_b);
}

}  // namespace fpb
