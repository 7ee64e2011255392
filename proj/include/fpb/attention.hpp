#pragma once

#include "fpb/nn.hpp"

namespace fpb {

// Position attention: 1x1 query/key projections onto C/r channels, a C->C
// value projection and a scalar residual gate (zero at init).
struct PamParams {
  PamParams() = default;
  PamParams(std::int64_t channels, int reduction, std::mt19937_64& rng);

  Conv2d query_proj;
  Conv2d key_proj;
  Conv2d value_proj;
  Var gamma;
  int reduction = 8;

  std::int64_t channels() const { return value_proj.out_channels(); }
  void collect(ParamTable& table, const std::string& prefix);
};

// Channel attention has no projections, only the residual gate.
struct CamParams {
  CamParams() : gamma(Var::scalar(0, true)) {}
  Var gamma;
  void collect(ParamTable& table, const std::string& prefix) { table.add_param(join_name(prefix, "gamma"), gamma); }
};

// x: [B,C,H,W] (or [C,H,W], treated as one sample). Output has x's shape.
//   out = x + gamma * V softmax_col(Q^T K)
// where each output position's weights over source positions sum to one.
Var pam_forward(const Var& x, const PamParams& p);

//   out = x + gamma * softmax_row(X X^T) X
Var cam_forward(const Var& x, const CamParams& c);

// PAM followed by CAM.
Var attention_block(const Var& x, const PamParams& p, const CamParams& c);

struct AttentionBlock {
  AttentionBlock() = default;
  AttentionBlock(std::int64_t channels, int reduction, std::mt19937_64& rng) : pam(channels, reduction, rng) {}

  PamParams pam;
  CamParams cam;

  Var forward(const Var& x) const { return attention_block(x, pam, cam); }
  void collect(ParamTable& table, const std::string& prefix) {
    pam.collect(table, join_name(prefix, "pam"));
    cam.collect(table, join_name(prefix, "cam"));
  }
};

}  // namespace fpb
