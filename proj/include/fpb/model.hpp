#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpb/global_branch.hpp"
#include "fpb/pyramid_branch.hpp"

namespace fpb {

struct ModelConfig {
  BackboneConfig backbone;
  FpbConfig fpb;
  bool use_fpb = true;
  int num_identities = 751;
  std::uint64_t init_seed = 0;
};

// Everything one forward pass produces.
struct ModelOutputs {
  GlobalOutputs global;
  std::optional<PyramidOutputs> pyramid;
  Var global_logits;
  std::vector<Var> part_logits;

  // Post-attention maps entering the COR term (f^h, f^l); f_l is undefined
  // without the pyramid branch.
  Var f_h() const { return global.maps.stage2; }
  Var f_l() const { return pyramid ? pyramid->shallow_lateral : Var(); }
  // [f_g, f_p...] used by the triplet loss.
  Var triplet_features() const;
};

struct ParamGroup {
  std::string name;
  std::int64_t count = 0;
  bool counted_in_total = true;
};

class FpbModel {
 public:
  explicit FpbModel(const ModelConfig& cfg);
  FpbModel(const FpbModel&) = delete;
  FpbModel& operator=(const FpbModel&) = delete;

  ModelOutputs forward(const Var& images, bool training);

  // L2-normalised concat(f_b, f_p_1..N) for a batch, inference mode, no tape.
  Tensor inference_features(const Tensor& images);
  std::int64_t inference_dim() const;

  // Valid while the model lives; rebuild after structural changes.
  ParamTable param_table();

  // Per-module learnable-parameter table. Classifier heads are listed but not
  // counted in the total.
  std::vector<ParamGroup> param_groups();
  std::int64_t backbone_param_count();
  std::int64_t total_param_count();  // excluding classifier heads

  const ModelConfig& config() const { return cfg_; }

  // Copies matching `backbone.*` arrays from a checkpoint file.
  void load_pretrained_backbone(const std::string& path);

 private:
  ModelConfig cfg_;
  std::mt19937_64 init_rng_;
  GlobalBranch global_;
  std::optional<PyramidBranch> pyramid_;
  Linear global_head_;
  std::vector<Linear> part_heads_;
};

// L2 row normalisation of a [B,D] matrix, in place.
void l2_normalize_rows(Tensor& features);

}  // namespace fpb
