#pragma once

#include <random>
#include <string>
#include <vector>

#include "fpb/ops.hpp"

namespace fpb {

// Flat, ordered view of a model's learnable parameters and non-learnable
// buffers (batch-norm running statistics), keyed by dotted names.
class ParamTable {
 public:
  void add_param(const std::string& name, Var& v) { params_.push_back({name, &v}); }
  void add_buffer(const std::string& name, Tensor& t) { buffers_.push_back({name, &t}); }

  struct ParamEntry {
    std::string name;
    Var* var;
  };
  struct BufferEntry {
    std::string name;
    Tensor* tensor;
  };

  const std::vector<ParamEntry>& params() const { return params_; }
  const std::vector<BufferEntry>& buffers() const { return buffers_; }

  // Learnable scalars whose names start with `prefix`.
  std::int64_t count(const std::string& prefix = "") const;
  void zero_grad() const;

 private:
  std::vector<ParamEntry> params_;
  std::vector<BufferEntry> buffers_;
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// He (Kaiming) normal initialisation, fan-out mode for conv weights.
Tensor he_normal(Shape shape, std::int64_t fan, std::mt19937_64& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int pad, std::mt19937_64& rng);

  Var forward(const Var& x) const { return ops::conv2d(x, weight_, stride_, pad_); }
  void collect(ParamTable& table, const std::string& prefix) { table.add_param(join_name(prefix, "weight"), weight_); }

  Var& weight() { return weight_; }
  const Var& weight() const { return weight_; }
  std::int64_t in_channels() const { return weight_.dim(1); }
  std::int64_t out_channels() const { return weight_.dim(0); }

 private:
  Var weight_;
  int stride_ = 1;
  int pad_ = 0;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  // `learn_shift == false` freezes the shift at zero (no beta parameter).
  explicit BatchNorm(std::int64_t channels, bool learn_shift = true);

  Var forward(const Var& x, bool training);
  void collect(ParamTable& table, const std::string& prefix);

  Var& gamma() { return gamma_; }
  Var& beta() { return beta_; }
  ops::RunningStats& stats() { return stats_; }

  static constexpr real kMomentum = 0.1;
  static constexpr real kEps = 1e-5;

 private:
  Var gamma_;
  Var beta_;
  ops::RunningStats stats_;
};

// conv -> BN -> optional ReLU; the building unit of laterals, fusion nodes,
// recovery and reduction heads.
class ConvBn {
 public:
  ConvBn() = default;
  ConvBn(std::int64_t in, std::int64_t out, int kernel, int stride, int pad, bool relu, std::mt19937_64& rng);

  Var forward(const Var& x, bool training);
  void collect(ParamTable& table, const std::string& prefix);

  Conv2d& conv() { return conv_; }
  BatchNorm& bn() { return bn_; }

 private:
  Conv2d conv_;
  BatchNorm bn_;
  bool relu_ = true;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, bool bias, real init_std, std::mt19937_64& rng);

  Var forward(const Var& x) const { return ops::linear(x, weight_, bias_); }
  void collect(ParamTable& table, const std::string& prefix);

  Var& weight() { return weight_; }
  const Var& weight() const { return weight_; }
  Var& bias() { return bias_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

}  // namespace fpb
