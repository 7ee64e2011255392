#pragma once

#include <vector>

#include "fpb/autograd.hpp"

namespace fpb {

// Thin wrapper over cblas_dgemm for row-major C = alpha*op(A)*op(B) + beta*C.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, real alpha, const real* a,
          const real* b, real beta, real* c);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, real s);
// a * s where s holds a single element.
Var mul_scalar(const Var& a, const Var& s);
Var div_scalar(const Var& a, const Var& s);
Var relu(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::int64_t axis);
// Mean over the leading axis.
Var mean_batch(const Var& a);

// 2-d [M,K]x[K,N] or batched 3-d [B,M,K]x[B,K,N]; trans flags apply to the
// trailing two axes.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var softmax_rows(const Var& a);
Var trace(const Var& a);

Var conv2d(const Var& x, const Var& weight, int stride, int pad);
Var max_pool2d(const Var& x, int kernel, int stride, int pad);
Var upsample_nearest(const Var& x, int factor);
Var global_avg_pool(const Var& x);
// Splits [N,C,H,W] into `parts` equal horizontal stripes; each -> [N,C].
std::vector<Var> stripe_avg_pool(const Var& x, int parts);
// x:[N,D], weight:[K,D], bias:[K] (may be undefined) -> [N,K].
Var linear(const Var& x, const Var& weight, const Var& bias = {});

struct RunningStats {
  Tensor mean;
  Tensor var;
};

// Normalizes over every axis except 1 for [N,C] or [N,C,H,W] inputs. `beta`
// may be undefined (no shift). Training mode updates `stats` in place.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats, bool training, real momentum,
               real eps);

}  // namespace ops
}  // namespace fpb
