#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fpb/attention.hpp"
#include "fpb/nn.hpp"

namespace fpb {

enum class BackboneVariant { kResNet50, kResNet101 };

std::string to_string(BackboneVariant v);
BackboneVariant parse_backbone_variant(const std::string& s);

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kResNet50;
  int last_stride = 1;
  std::string pretrained_weights_path;
  bool attention_after_stage2 = true;
  int attention_reduction = 8;
  // Width of the stem; stage outputs are 4x, 8x, 16x, 32x of it. 64 is the
  // standard ResNet; smaller values give desk-scale models.
  int base_width = 64;
  int input_height = 384;
  int input_width = 128;

  // Output channels of stages 1..4.
  std::array<std::int64_t, 4> stage_channels() const;
  std::array<int, 4> stage_blocks() const;
};

class Bottleneck {
 public:
  Bottleneck(std::int64_t in, std::int64_t planes, int stride, std::mt19937_64& rng);
  Var forward(const Var& x, bool training);
  void collect(ParamTable& table, const std::string& prefix);

 private:
  ConvBn conv1_, conv2_, conv3_;
  std::optional<ConvBn> downsample_;
};

// Maps the backbone produces for one batch.
struct BackboneMaps {
  Var stage2;  // after the stage-2 attention block when enabled
  Var stage3;
  Var stage4;
};

class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, std::mt19937_64& rng);

  BackboneMaps forward(const Var& images, bool training);
  // Trunk parameters under `backbone.`; the stage-2 attention block is
  // registered separately under `attention_backbone.`.
  void collect(ParamTable& table);

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  ConvBn stem_;
  std::array<std::vector<Bottleneck>, 4> stages_;
  std::optional<AttentionBlock> stage2_attention_;
};

struct GlobalOutputs {
  Var f_g;  // [B, C4] pre-BN global feature
  Var f_b;  // [B, C4] after the BNNeck
  BackboneMaps maps;
};

class GlobalBranch {
 public:
  GlobalBranch(const BackboneConfig& cfg, std::mt19937_64& rng);

  GlobalOutputs forward(const Var& images, bool training);
  void collect(ParamTable& table);

  Backbone& backbone() { return backbone_; }
  BatchNorm& bnneck() { return bnneck_; }

 private:
  Backbone backbone_;
  BatchNorm bnneck_;
};

// Validates a [B,3,H,W] batch against the configured input size.
void check_input_batch(const Tensor& images, const BackboneConfig& cfg);

// Logits = f_b W^T; no softmax.
Var global_classifier(const Var& f_b, const Linear& head);

}  // namespace fpb
