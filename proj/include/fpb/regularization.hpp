#pragma once

#include <cstdint>

#include "fpb/autograd.hpp"

namespace fpb {

struct SpectralPenaltyConfig {
  real beta = 1e-6;
  int power_iters = 20;
  real iter_tolerance = 1e-6;
  int pool_target_height = 24;
  int pool_target_width = 8;
  std::uint64_t start_vector_seed = 0x5eed;

  void validate() const;
};

struct EigExtremes {
  Var lambda_max;
  Var lambda_min;
  int iterations_max = 0;  // squaring steps used for each pass
  int iterations_min = 0;
};

// Largest and smallest eigenvalues of a symmetric PSD matrix [C,C].
//
// lambda_max comes from power iteration where every step squares the
// trace-normalised operator (so step k applies M^(2^k) to a fixed seeded unit
// vector) followed by a Rayleigh quotient on M. lambda_min is lambda_max minus
// the same estimate for (lambda_max I - M). Both results stay on the autograd
// tape. Iteration stops after `power_iters` steps or once the estimate moves
// by less than `iter_tolerance` (relative).
EigExtremes eig_extremes(const Var& m, const SpectralPenaltyConfig& cfg);

// beta * (lambda_max - lambda_min)^2 of X X^T for X:[C,S]. A batch [B,C,S]
// uses the batch-averaged Gram matrix.
Var or_penalty(const Var& x, const SpectralPenaltyConfig& cfg, EigExtremes* extremes = nullptr);

// Max-pools both maps ([B,C,H,W]) to the configured target scale with integer
// kernels, concatenates channels and applies or_penalty.
Var cor_penalty(const Var& f_h, const Var& f_l, const SpectralPenaltyConfig& cfg, EigExtremes* extremes = nullptr);

// The pooled, channel-concatenated [B, C_h + C_l, S] matrix fed to or_penalty.
Var cor_matrix(const Var& f_h, const Var& f_l, const SpectralPenaltyConfig& cfg);

}  // namespace fpb
