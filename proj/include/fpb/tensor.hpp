#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fpb {

using real = double;
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  // He/normal style draws; `rng` is advanced.
  static Tensor randn(Shape shape, std::mt19937_64& rng, real stddev = 1);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, real lo, real hi);

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::span<real> values() { return data_; }
  std::span<const real> values() const { return data_; }
  std::vector<real>& storage() { return data_; }
  const std::vector<real>& storage() const { return data_; }

  real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-d accessor (n, c, h, w) for NCHW maps.
  real& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
  real at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  Tensor reshaped(Shape shape) const;
  void reshape_(Shape shape);
  void fill(real v);
  void add_(const Tensor& other, real scale = 1);

  bool all_finite() const;
  real max_abs() const;

 private:
  Shape shape_;
  std::vector<real> data_;
};

real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fpb
