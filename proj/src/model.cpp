#include "fpb/model.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "fpb/checkpoint.hpp"
#include "fpb/losses.hpp"

namespace fpb {

namespace {
std::mt19937_64 make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x46504231u};
  return std::mt19937_64(seq);
}
// Classifier heads start from N(0, 0.001^2).
constexpr real kHeadInitStd = 1e-3;
}  // namespace

Var ModelOutputs::triplet_features() const {
  if (!pyramid) return global.f_g;
  return triplet_feature(global.f_g, pyramid->parts.f_p);
}

FpbModel::FpbModel(const ModelConfig& cfg)
    : cfg_(cfg), init_rng_(make_rng(cfg.init_seed)), global_(cfg.backbone, init_rng_) {
  if (cfg.num_identities < 2) throw std::invalid_argument("model needs at least 2 identities");
  auto& rng = init_rng_;
  const auto ch = cfg.backbone.stage_channels();
  if (cfg.use_fpb) pyramid_.emplace(cfg.fpb, ch[1], ch[2], rng);
  global_head_ = Linear(ch[3], cfg.num_identities, false, kHeadInitStd, rng);
  if (cfg.use_fpb)
    for (int n = 0; n < cfg.fpb.parts; ++n)
      part_heads_.emplace_back(cfg.fpb.reduced_dim, cfg.num_identities, false, kHeadInitStd, rng);
  if (!cfg.backbone.pretrained_weights_path.empty()) load_pretrained_backbone(cfg.backbone.pretrained_weights_path);
}

ModelOutputs FpbModel::forward(const Var& images, bool training) {
  check_input_batch(images.value(), cfg_.backbone);
  ModelOutputs out;
  out.global = global_.forward(images, training);
  out.global_logits = global_classifier(out.global.f_b, global_head_);
  if (pyramid_) {
    out.pyramid = pyramid_->forward(out.global.maps.stage2, out.global.maps.stage3, training);
    for (std::size_t n = 0; n < part_heads_.size(); ++n)
      out.part_logits.push_back(part_heads_[n].forward(out.pyramid->parts.f_s[n]));
  }
  return out;
}

std::int64_t FpbModel::inference_dim() const {
  const std::int64_t global_dim = cfg_.backbone.stage_channels()[3];
  return cfg_.use_fpb ? global_dim + static_cast<std::int64_t>(cfg_.fpb.parts) * cfg_.fpb.out_channels : global_dim;
}

Tensor FpbModel::inference_features(const Tensor& images) {
  NoGradGuard no_grad;
  ModelOutputs out = forward(Var(images), /*training=*/false);
  Tensor features;
  if (out.pyramid) {
    std::vector<Var> parts{out.global.f_b};
    for (const auto& p : out.pyramid->parts.f_p) parts.push_back(p);
    features = ops::concat(parts, 1).value();
  } else {
    features = out.global.f_b.value();
  }
  l2_normalize_rows(features);
  return features;
}

ParamTable FpbModel::param_table() {
  ParamTable table;
  global_.collect(table);
  if (pyramid_) pyramid_->collect(table);
  global_head_.collect(table, "heads.global");
  for (std::size_t n = 0; n < part_heads_.size(); ++n) part_heads_[n].collect(table, "heads.part" + std::to_string(n));
  return table;
}

std::vector<ParamGroup> FpbModel::param_groups() {
  ParamTable t = param_table();
  std::vector<ParamGroup> groups = {
      {"backbone", t.count("backbone.")},
      {"attention_backbone", t.count("attention_backbone.")},
      {"bnneck", t.count("bnneck.")},
      {"fpb.lateral", t.count("fpb.lateral")},
      {"fpb.attention", t.count("fpb.attention.")},
      {"fpb.fusion", t.count("fpb.fusion")},
      {"fpb.shortcut", t.count("fpb.shortcut")},
      {"fpb.recover", t.count("fpb.recover.")},
      {"fpb.reduce", t.count("fpb.reduce")},
      {"heads.global", t.count("heads.global."), false},
      {"heads.parts", t.count("heads.part"), false},
  };
  return groups;
}

std::int64_t FpbModel::backbone_param_count() { return param_table().count("backbone."); }

std::int64_t FpbModel::total_param_count() {
  ParamTable t = param_table();
  return t.count() - t.count("heads.");
}

void FpbModel::load_pretrained_backbone(const std::string& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("pretrained weights file not found: " + path);
  Checkpoint ck = load_checkpoint(path);
  ParamTable table = param_table();
  int copied = 0;
  for (const auto& p : table.params()) {
    if (p.name.rfind("backbone.", 0) != 0) continue;
    auto it = ck.params.find(p.name);
    if (it == ck.params.end()) continue;
    if (it->second.shape() != p.var->shape())
      throw std::runtime_error("pretrained weights: shape mismatch for " + p.name);
    p.var->mutable_value() = it->second;
    ++copied;
  }
  for (const auto& b : table.buffers()) {
    if (b.name.rfind("backbone.", 0) != 0) continue;
    auto it = ck.buffers.find(b.name);
    if (it != ck.buffers.end() && it->second.shape() == b.tensor->shape()) *b.tensor = it->second;
  }
  if (copied == 0) throw std::runtime_error("pretrained weights file has no backbone arrays: " + path);
}

void l2_normalize_rows(Tensor& features) {
  const std::int64_t n = features.dim(0), d = features.numel() / std::max<std::int64_t>(features.dim(0), 1);
  for (std::int64_t i = 0; i < n; ++i) {
    real s = 0;
    for (std::int64_t k = 0; k < d; ++k) s += features[i * d + k] * features[i * d + k];
    const real norm = std::sqrt(s);
    if (norm > 0)
      for (std::int64_t k = 0; k < d; ++k) features[i * d + k] /= norm;
  }
}

}  // namespace fpb
