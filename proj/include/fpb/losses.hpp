#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fpb/autograd.hpp"

namespace fpb {

struct LossConfig {
  real alpha = 1.0;
  real margin = 0.3;
  real label_smoothing = 0.0;
  int num_identities = 0;

  void validate() const;
};

// Raised when a loss term is NaN/Inf; names the offending component.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& component, real value);
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

// [f_g, f_p_1, ..., f_p_N] along the feature axis.
Var triplet_feature(const Var& f_g, const std::vector<Var>& f_p);

// Batch-hard triplet loss on raw Euclidean distances: for each anchor the
// farthest positive and the closest negative, hinged at zero, mean over
// anchors. Every label must occur at least twice.
Var batch_hard_triplet(const Var& features, const std::vector<int>& labels, real margin);

// Softmax cross-entropy averaged over the batch, optional label smoothing.
Var ce_head(const Var& logits, const std::vector<int>& labels, real epsilon);

struct LossBreakdown {
  real total = 0;
  real triplet = 0;
  real ce_global = 0;
  std::vector<real> ce_parts;
  real cor = 0;
};

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

// alpha * L_triplet + L_ce(global) + sum_n L_ce(part n) + L_cor.
// `cor` may be undefined (regulariser disabled); `part_logits` may be empty.
TotalLoss total_loss(const Var& triplet_features, const Var& global_logits, const std::vector<Var>& part_logits,
                     const Var& cor, const std::vector<int>& labels, const LossConfig& cfg);

}  // namespace fpb
