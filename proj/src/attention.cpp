#include "fpb/attention.hpp"

#include <stdexcept>

namespace fpb {

namespace {

std::int64_t reduced_channels(std::int64_t channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0 || channels / reduction < 1)
    throw std::invalid_argument("attention: reduction " + std::to_string(reduction) + " must divide " +
                                std::to_string(channels) + " channels");
  return channels / reduction;
}

// Lifts a rank-3 map to a batch of one; returns the original shape.
Var as_batched(const Var& x, Shape& original) {
  original = x.shape();
  if (x.value().rank() == 3) return ops::reshape(x, {1, original[0], original[1], original[2]});
  if (x.value().rank() == 4) return x;
  throw std::invalid_argument("attention: expected a [C,H,W] or [B,C,H,W] map, got " + shape_str(original));
}

void require_finite(const Var& x, const char* op) {
  if (!x.value().all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite input");
}

}  // namespace

PamParams::PamParams(std::int64_t channels, int reduction, std::mt19937_64& rng)
    : query_proj(channels, reduced_channels(channels, reduction), 1, 1, 0, rng),
      key_proj(channels, reduced_channels(channels, reduction), 1, 1, 0, rng),
      value_proj(channels, channels, 1, 1, 0, rng),
      gamma(Var::scalar(0, true)),
      reduction(reduction) {}

void PamParams::collect(ParamTable& table, const std::string& prefix) {
  query_proj.collect(table, join_name(prefix, "query"));
  key_proj.collect(table, join_name(prefix, "key"));
  value_proj.collect(table, join_name(prefix, "value"));
  table.add_param(join_name(prefix, "gamma"), gamma);
}

Var pam_forward(const Var& input, const PamParams& p) {
  Shape original;
  Var x = as_batched(input, original);
  require_finite(x, "pam_forward");
  const std::int64_t b = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  reduced_channels(c, p.reduction);
  if (c != p.channels())
    throw std::invalid_argument("pam_forward: map has " + std::to_string(c) + " channels, params expect " +
                                std::to_string(p.channels()));
  const std::int64_t cr = c / p.reduction;
  Var q = ops::reshape(p.query_proj.forward(x), {b, cr, s});
  Var k = ops::reshape(p.key_proj.forward(x), {b, cr, s});
  Var v = ops::reshape(p.value_proj.forward(x), {b, c, s});
  // Row j of K^T Q holds the affinities of output position j to every source
  // position, so a row softmax is the column softmax of Q^T K.
  Var weights_t = ops::softmax_rows(ops::matmul(k, q, true, false));
  Var attended = ops::matmul(v, weights_t, false, true);
  Var out = ops::add(x, ops::mul_scalar(ops::reshape(attended, x.shape()), p.gamma));
  return ops::reshape(out, original);
}

Var cam_forward(const Var& input, const CamParams& cp) {
  Shape original;
  Var x = as_batched(input, original);
  require_finite(x, "cam_forward");
  const std::int64_t b = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  Var flat = ops::reshape(x, {b, c, s});
  Var affinity = ops::softmax_rows(ops::matmul(flat, flat, false, true));
  Var attended = ops::matmul(affinity, flat);
  Var out = ops::add(x, ops::mul_scalar(ops::reshape(attended, x.shape()), cp.gamma));
  return ops::reshape(out, original);
}

Var attention_block(const Var& x, const PamParams& p, const CamParams& c) { return cam_forward(pam_forward(x, p), c); }

}  // namespace fpb
