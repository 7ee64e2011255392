#include "fpb/regularization.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fpb/ops.hpp"

namespace fpb {

void SpectralPenaltyConfig::validate() const {
  if (!(beta > 0)) throw std::invalid_argument("spectral penalty: beta must be positive");
  if (power_iters < 1) throw std::invalid_argument("spectral penalty: power_iters must be >= 1");
  if (!(iter_tolerance >= 0)) throw std::invalid_argument("spectral penalty: iter_tolerance must be >= 0");
  if (pool_target_height < 1 || pool_target_width < 1)
    throw std::invalid_argument("spectral penalty: pool target must be positive");
}

namespace {

Tensor start_vector(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor v = Tensor::randn({n, 1}, rng);
  real norm = 0;
  for (real x : v.values()) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : v.values()) x /= norm;
  return v;
}

void check_symmetric_psd_input(const Tensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw std::invalid_argument("eig_extremes: expected a square matrix, got " + shape_str(m.shape()));
  if (!m.all_finite()) throw std::invalid_argument("eig_extremes: matrix contains NaN or Inf");
  const std::int64_t n = m.dim(0);
  const real tol = 1e-6 * std::max<real>(1, m.max_abs());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j)
      if (std::abs(m[i * n + j] - m[j * n + i]) > tol)
        throw std::invalid_argument("eig_extremes: matrix is not symmetric");
}

struct PowerResult {
  Var lambda;
  int iterations = 0;
};

// Dominant eigenvalue of a PSD matrix with positive trace.
PowerResult dominant_eigenvalue(const Var& m, const Tensor& v0_tensor, const SpectralPenaltyConfig& cfg) {
  Var v0(v0_tensor);
  Var p = ops::div_scalar(m, ops::trace(m));
  PowerResult result;
  real previous = 0;
  for (int k = 1; k <= cfg.power_iters; ++k) {
    p = ops::matmul(p, p);
    p = ops::div_scalar(p, ops::trace(p));
    Var v = ops::matmul(p, v0);
    v = ops::div_scalar(v, ops::sqrt(ops::sum(ops::square(v))));
    Var lambda = ops::reshape(ops::matmul(v, ops::matmul(m, v), true, false), {1});
    result.lambda = lambda;
    result.iterations = k;
    const real current = lambda.item();
    if (k > 1 && std::abs(current - previous) <= cfg.iter_tolerance * std::abs(current)) break;
    previous = current;
  }
  return result;
}

}  // namespace

EigExtremes eig_extremes(const Var& m, const SpectralPenaltyConfig& cfg) {
  if (cfg.power_iters < 1) throw std::invalid_argument("eig_extremes: power_iters must be >= 1");
  check_symmetric_psd_input(m.value());
  const std::int64_t n = m.dim(0);
  const Tensor v0 = start_vector(n, cfg.start_vector_seed);

  EigExtremes out;
  real tr = 0;
  for (std::int64_t i = 0; i < n; ++i) tr += m.value()[i * n + i];
  if (!(tr > 0)) {
    // Zero (PSD) matrix.
    out.lambda_max = Var::scalar(0);
    out.lambda_min = Var::scalar(0);
    return out;
  }
  PowerResult top = dominant_eigenvalue(m, v0, cfg);
  out.lambda_max = top.lambda;
  out.iterations_max = top.iterations;

  Tensor eye({n, n});
  for (std::int64_t i = 0; i < n; ++i) eye[i * n + i] = 1;
  Var shifted = ops::sub(ops::mul_scalar(Var(eye), top.lambda), m);
  const real shifted_trace = static_cast<real>(n) * top.lambda.item() - tr;
  if (shifted_trace <= 1e-12 * static_cast<real>(n) * std::abs(top.lambda.item())) {
    // Flat spectrum: lambda_max I - M vanishes.
    out.lambda_min = top.lambda;
    return out;
  }
  PowerResult spread = dominant_eigenvalue(shifted, v0, cfg);
  out.lambda_min = ops::sub(top.lambda, spread.lambda);
  out.iterations_min = spread.iterations;
  return out;
}

Var or_penalty(const Var& x, const SpectralPenaltyConfig& cfg, EigExtremes* extremes) {
  const auto rank = x.value().rank();
  if (rank != 2 && rank != 3) throw std::invalid_argument("or_penalty: expected [C,S] or [B,C,S]");
  if (x.dim(-2) < 2) throw std::invalid_argument("or_penalty: need at least 2 channels");
  Var gram = rank == 2 ? ops::matmul(x, x, false, true) : ops::mean_batch(ops::matmul(x, x, false, true));
  EigExtremes e = eig_extremes(gram, cfg);
  Var spread = ops::sub(e.lambda_max, e.lambda_min);
  Var penalty = ops::scale(ops::square(spread), cfg.beta);
  if (extremes) *extremes = e;
  return penalty;
}

Var cor_matrix(const Var& f_h, const Var& f_l, const SpectralPenaltyConfig& cfg) {
  if (f_h.value().rank() != 4 || f_l.value().rank() != 4)
    throw std::invalid_argument("cor_penalty: expected [B,C,H,W] maps");
  if (f_h.dim(0) != f_l.dim(0)) throw std::invalid_argument("cor_penalty: batch size mismatch");
  const int th = cfg.pool_target_height, tw = cfg.pool_target_width;
  auto pooled = [&](const Var& f) {
    const std::int64_t h = f.dim(2), w = f.dim(3);
    if (h % th != 0 || w % tw != 0 || h / th != w / tw)
      throw std::invalid_argument("cor_penalty: map " + shape_str(f.shape()) + " cannot be max-pooled to " +
                                  std::to_string(th) + "x" + std::to_string(tw) + " with an integer square kernel");
    const int k = static_cast<int>(h / th);
    Var p = k == 1 ? f : ops::max_pool2d(f, k, k, 0);
    return ops::reshape(p, {f.dim(0), f.dim(1), static_cast<std::int64_t>(th) * tw});
  };
  return ops::concat({pooled(f_h), pooled(f_l)}, 1);
}

Var cor_penalty(const Var& f_h, const Var& f_l, const SpectralPenaltyConfig& cfg, EigExtremes* extremes) {
  return or_penalty(cor_matrix(f_h, f_l, cfg), cfg, extremes);
}

}  // namespace fpb
