#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fpb/attention.hpp"
#include "fpb/nn.hpp"

namespace fpb {

struct FpbConfig {
  int inner_channels = 256;
  int out_channels = 1024;
  int parts = 3;
  int reduced_dim = 256;
  bool attention_on_shallow_lateral = true;
  int attention_reduction = 8;
  // Ablation hooks: the per-scale input->output shortcut edges and learnable
  // normalized fusion weights at the four sum nodes.
  bool shortcuts = true;
  bool weighted_fusion = false;

  // Wiring of the fusion graph; echoed into configs and checkpoints.
  static constexpr const char* kWiring =
      "t2=C3(lat2+up2(lat3)); o2=C3(t2+R2(raw2)); t3=C3(lat3+maxpool2(o2)); o3=C3(t3+R3(raw3))";
};

struct PartFeatures {
  std::vector<Var> f_p;  // N x [B, out_channels]
  std::vector<Var> f_s;  // N x [B, reduced_dim]
};

struct PyramidOutputs {
  Var shallow_lateral;  // attended shallow lateral map (f^l of the COR term)
  Var fused;            // o3
  Var recovered;        // o3 after the channel-recovery head
  PartFeatures parts;
};

// Learnable weights of one fusion node (weighted_fusion ablation only).
struct FusionWeights {
  Var a, b;
};

// 1x1 conv + BN + ReLU to the inner width.
Var lateral(const Var& x, ConvBn& filter, bool training);

struct FusionNodes {
  ConvBn t2, o2, t3, o3;
  std::optional<ConvBn> shortcut2, shortcut3;
  std::optional<std::array<FusionWeights, 4>> weights;
};

// The two-layer bidirectional fusion graph described by FpbConfig::kWiring.
// Returns o3 at the deep scale.
Var fpb_fuse(const Var& lat2, const Var& lat3, const Var& raw2, const Var& raw3, FusionNodes& nodes, bool training);

Var recover_channels(const Var& o3, ConvBn& head, bool training);

// N equal-height horizontal stripes, each average pooled.
std::vector<Var> part_pool(const Var& x, int parts);

// f_p_n [B,C] -> f_s_n [B,reduced] through a 1x1 conv + BN + ReLU head.
Var reduce_dim(const Var& f_p_n, ConvBn& head, bool training);

class PyramidBranch {
 public:
  PyramidBranch(const FpbConfig& cfg, std::int64_t stage2_channels, std::int64_t stage3_channels,
                std::mt19937_64& rng);

  PyramidOutputs forward(const Var& tap2, const Var& tap3, bool training);
  void collect(ParamTable& table);

  const FpbConfig& config() const { return cfg_; }

 private:
  FpbConfig cfg_;
  std::int64_t stage2_channels_, stage3_channels_;
  ConvBn lateral2_, lateral3_;
  std::optional<AttentionBlock> lateral_attention_;
  FusionNodes fusion_;
  ConvBn recover_;
  std::vector<ConvBn> reduce_;
};

}  // namespace fpb
