#pragma once

// Brute-force reference implementations used only by tests. They work on
// plain std::vector data with explicit loops and never call into fpb::ops.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "fpb/autograd.hpp"

namespace oracle {

using real = double;
using Mat = std::vector<std::vector<real>>;  // row-major rows

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<real>(c, 0)); }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

// Tensor [rows, cols] (row-major) <-> Mat.
inline Mat to_mat(const fpb::Tensor& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  Mat m = zeros(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m[i][j] = t[offset + i * cols + j];
  return m;
}

// Dense position attention for one [C,S] map.
inline Mat pam(const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv, real gamma) {
  const Mat q = matmul(wq, x), k = matmul(wk, x), v = matmul(wv, x);
  const std::size_t s = x[0].size();
  Mat a = zeros(s, s);  // A = Q^T K
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t c = 0; c < q.size(); ++c) a[i][j] += q[c][i] * k[c][j];
  Mat p = zeros(s, s);  // softmax down each column
  for (std::size_t j = 0; j < s; ++j) {
    real z = 0;
    for (std::size_t i = 0; i < s; ++i) z += std::exp(a[i][j]);
    for (std::size_t i = 0; i < s; ++i) p[i][j] = std::exp(a[i][j]) / z;
  }
  Mat att = matmul(v, p);
  Mat out = x;
  for (std::size_t c = 0; c < x.size(); ++c)
    for (std::size_t j = 0; j < s; ++j) out[c][j] += gamma * att[c][j];
  return out;
}

// Dense channel attention for one [C,S] map.
inline Mat cam(const Mat& x, real gamma) {
  const Mat g = matmul(x, transpose(x));
  Mat p = zeros(g.size(), g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    real mx = -std::numeric_limits<real>::infinity();
    for (real v : g[i]) mx = std::max(mx, v);
    real z = 0;
    for (std::size_t j = 0; j < g.size(); ++j) z += std::exp(g[i][j] - mx);
    for (std::size_t j = 0; j < g.size(); ++j) p[i][j] = std::exp(g[i][j] - mx) / z;
  }
  Mat att = matmul(p, x);
  Mat out = x;
  for (std::size_t c = 0; c < x.size(); ++c)
    for (std::size_t j = 0; j < x[0].size(); ++j) out[c][j] += gamma * att[c][j];
  return out;
}

// Direct convolution of a [N,C,H,W] tensor with [O,C,k,k] weights.
inline fpb::Tensor conv(const fpb::Tensor& x, const fpb::Tensor& w, int stride, int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), k = w.dim(2);
  const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  fpb::Tensor out({n, o, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oc = 0; oc < o; ++oc)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          real acc = 0;
          for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(b, ic, iy, ix) * w[((oc * c + ic) * k + ky) * k + kx];
              }
          out.at(b, oc, y, xx) = acc;
        }
  return out;
}

// Training-mode batch norm (biased batch variance), optional ReLU.
inline fpb::Tensor bn(const fpb::Tensor& x, const fpb::Tensor& gamma, const fpb::Tensor* beta, bool relu,
                      real eps = 1e-5) {
  const auto n = x.dim(0), c = x.dim(1), hw = x.numel() / (n * c);
  fpb::Tensor out(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    real mean = 0, var = 0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) mean += x[(b * c + ch) * hw + i];
    mean /= static_cast<real>(n * hw);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) var += std::pow(x[(b * c + ch) * hw + i] - mean, 2);
    var /= static_cast<real>(n * hw);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < hw; ++i) {
        const auto idx = (b * c + ch) * hw + i;
        real y = gamma[ch] * (x[idx] - mean) / std::sqrt(var + eps) + (beta ? (*beta)[ch] : 0);
        out[idx] = relu ? std::max<real>(0, y) : y;
      }
  }
  return out;
}

// Batch-hard triplet loss by enumerating every (anchor, positive, negative).
inline real triplet_exhaustive(const std::vector<std::vector<real>>& f, const std::vector<int>& labels, real margin) {
  auto dist = [&](std::size_t i, std::size_t j) {
    real s = 0;
    for (std::size_t k = 0; k < f[i].size(); ++k) s += (f[i][k] - f[j][k]) * (f[i][k] - f[j][k]);
    return std::sqrt(s);
  };
  real total = 0;
  for (std::size_t a = 0; a < f.size(); ++a) {
    real worst = 0;
    for (std::size_t p = 0; p < f.size(); ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < f.size(); ++n) {
        if (labels[n] == labels[a]) continue;
        worst = std::max(worst, dist(a, p) - dist(a, n) + margin);
      }
    }
    total += worst;
  }
  return total / static_cast<real>(f.size());
}

// Cross-entropy through an explicit log-softmax.
inline real cross_entropy(const std::vector<std::vector<real>>& logits, const std::vector<int>& labels, real eps) {
  real total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto k = logits[i].size();
    real mx = *std::max_element(logits[i].begin(), logits[i].end());
    real z = 0;
    for (real v : logits[i]) z += std::exp(v - mx);
    for (std::size_t c = 0; c < k; ++c) {
      const real logp = logits[i][c] - mx - std::log(z);
      const real target = (static_cast<int>(c) == labels[i] ? 1 - eps : 0) + eps / static_cast<real>(k);
      total -= target * logp;
    }
  }
  return total / static_cast<real>(logits.size());
}

// Eigenvalues (ascending) of a symmetric matrix via LAPACK dsyev.
std::vector<real> symmetric_eigenvalues(const Mat& m);

struct RetrievalOracle {
  real map = 0;
  std::vector<real> cmc;  // cmc[k-1] = CMC(k)
  int valid_queries = 0;
};

// mAP/CMC straight from the definitions: the rank of every valid gallery
// item is counted directly (ties by gallery index) with no sorting.
RetrievalOracle retrieval(const std::vector<std::vector<real>>& dist, const std::vector<int>& q_pids,
                          const std::vector<int>& q_cams, const std::vector<int>& g_pids,
                          const std::vector<int>& g_cams, int max_rank);

// Central finite differences of `loss` w.r.t. selected scalar entries.
struct GradCheckResult {
  real max_rel_error = 0;
  int checked = 0;
};

struct GradEntry {
  fpb::Var* var;
  std::int64_t index;
};

inline real relative_error(real analytic, real numeric, real floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult grad_check(const std::function<fpb::Var()>& loss, const std::vector<GradEntry>& entries, real step,
                           real floor = 1e-8);

// All entries of the given variables.
std::vector<GradEntry> all_entries(const std::vector<fpb::Var*>& vars);

}  // namespace oracle
