#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fpb/datasets.hpp"
#include "fpb/losses.hpp"
#include "fpb/model.hpp"
#include "fpb/regularization.hpp"

namespace fpb {

struct AugmentConfig {
  bool flip = true;
  real flip_prob = 0.5;
  bool crop = true;
  int crop_pad = 10;
  bool erase = true;
  real erase_prob = 0.5;
  real erase_area_min = 0.02;
  real erase_area_max = 0.4;
  real erase_aspect_min = 0.3;
  real erase_aspect_max = 3.3;
  bool patch = true;
  real patch_prob = 0.5;
  int patch_pool_capacity = 50000;
  int patch_min_pool = 100;  // pasting starts once the pool holds this many
  real patch_area_min = 0.01;
  real patch_area_max = 0.5;
  real patch_min_ratio = 0.1;

  void validate() const;
};

struct TrainConfig {
  int epochs = 120;
  int batch_size = 64;
  int identities_per_batch = 16;    // P
  int instances_per_identity = 4;   // K
  real base_lr = 3.5e-4;
  real warmup_start_lr = 3.5e-5;
  int warmup_epochs = 20;
  std::vector<int> decay_epochs{60, 90};
  real decay_factor = 0.1;
  real weight_decay = 0;
  real adam_beta1 = 0.9;
  real adam_beta2 = 0.999;
  real adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool use_cor = true;
  int checkpoint_every = 10;      // epochs
  int max_steps_per_epoch = 0;    // 0: full sampler epoch
  AugmentConfig augment;

  void validate() const;
};

// Per-epoch learning rate: linear warmup from warmup_start_lr (epoch 0) to
// base_lr (epoch warmup_epochs), then one decay_factor per passed decay
// epoch.
real lr_at(int epoch, const TrainConfig& cfg);

// Independent stream for (seed, epoch, stream id).
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream);

// P identities x K instances per batch. Identities with fewer than K images
// are drawn with replacement. Every identity appears at least once per
// epoch; the last batch is topped up with random other identities when
// needed.
class PKSampler {
 public:
  PKSampler(const std::vector<int>& labels, int p, int k);

  std::vector<std::vector<std::size_t>> epoch_batches(std::mt19937_64& rng) const;
  int p() const { return p_; }
  int k() const { return k_; }

 private:
  std::map<int, std::vector<std::size_t>> by_label_;
  int p_, k_;
};

// Bounded store of image patches for the random-patch augmentation.
class PatchPool {
 public:
  explicit PatchPool(std::size_t capacity = 50000) : capacity_(capacity) {}
  void add(Tensor patch);
  std::size_t size() const { return patches_.size(); }
  const Tensor& sample(std::mt19937_64& rng) const;
  void clear() { patches_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<Tensor> patches_;
};

Tensor hflip(const Tensor& chw);

// Augments a normalised [3,H,W] image: flip, pad-and-crop, random patch,
// random erasing (filled with `fill`, the dataset mean in normalised space).
// `pool` may be null when the patch step is off.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng, PatchPool* pool,
               const std::array<real, 3>& fill);

// Adam over every parameter of a table (bias-corrected moments, optional L2
// weight decay added to the gradient).
class Adam {
 public:
  Adam(ParamTable table, real beta1, real beta2, real eps, real weight_decay);
  void step(real lr);
  std::int64_t steps() const { return t_; }

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ParamTable table_;
  real beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Decoded, normalised images keyed by path with a byte budget.
class ImageStore {
 public:
  ImageStore(int height, int width, std::size_t max_cached_bytes = std::size_t(1) << 31);
  Tensor get(const std::string& path);
  int height() const { return height_; }
  int width() const { return width_; }

 private:
  int height_, width_;
  std::size_t max_bytes_, used_ = 0;
  std::unordered_map<std::string, Tensor> cache_;
};

struct TrainData {
  std::vector<std::string> paths;
  std::vector<int> labels;  // contiguous 0..num_classes-1
  int num_classes = 0;
};

// Maps raw pids of a split to contiguous labels (sorted pid order).
TrainData make_train_data(const std::vector<ImageRecord>& split);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  real lr = 0;
  LossBreakdown loss;
  real lambda_max = 0;
  real lambda_min = 0;
  real l_or = 0;  // beta * (lambda_max - lambda_min)^2, logged even when COR is off

  nlohmann::json to_json() const;
};

struct TrainPaths {
  std::string out_dir;
  std::string log_file() const { return out_dir + "/train_log.jsonl"; }
  std::string checkpoint_dir() const { return out_dir + "/checkpoints"; }
  std::string last_checkpoint() const { return checkpoint_dir() + "/last.fpbckpt"; }
  std::string final_checkpoint() const { return checkpoint_dir() + "/final.fpbckpt"; }
};

class Trainer {
 public:
  // `meta` is stored in every checkpoint (effective config, version).
  Trainer(FpbModel& model, const TrainConfig& cfg, const LossConfig& loss, const SpectralPenaltyConfig& spectral,
          TrainData data, ImageStore& images, const std::string& out_dir, nlohmann::json meta = {});

  // Continues from a checkpoint written by this trainer (epoch boundary).
  void resume(const std::string& checkpoint_path);

  // Runs the remaining epochs. A non-finite loss throws NonFiniteLoss after
  // writing a diagnostic; previously written checkpoints are kept.
  std::vector<StepRecord> run(const std::function<void(const StepRecord&)>& on_step = {});

  int next_epoch() const { return next_epoch_; }
  const TrainPaths& paths() const { return paths_; }
  const std::array<real, 3>& fill_value() const { return fill_; }

 private:
  void save(const std::string& path, int epochs_done) const;

  FpbModel& model_;
  TrainConfig cfg_;
  LossConfig loss_;
  SpectralPenaltyConfig spectral_;
  TrainData data_;
  ImageStore& images_;
  TrainPaths paths_;
  nlohmann::json meta_;
  Adam adam_;
  PKSampler sampler_;
  std::array<real, 3> fill_{};
  int next_epoch_ = 0;
  std::int64_t step_ = 0;
};

}  // namespace fpb
