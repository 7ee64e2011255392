#include "fpb/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fpb {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, real alpha, const real* a,
          const real* b, real beta, real* c) {
  if (m == 0 || n == 0) return;
  const auto lda = static_cast<int>(trans_a ? m : k);
  const auto ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, lda, b, ldb, beta, c,
              static_cast<int>(n));
}

namespace ops {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

void require_scalar(const Var& s, const char* op) {
  if (s.numel() != 1) throw std::invalid_argument(std::string(op) + ": expected a scalar, got " + shape_str(s.shape()));
}

void require_rank(const Var& x, std::int64_t rank, const char* op) {
  if (x.value().rank() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(x.shape()));
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_op_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (needs_grad(self, i)) self.inputs[i]->grad_buffer().add_(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.add_(b.value(), -1);
  return make_op_result(std::move(out), {a, b}, [](Node& self) {
    if (needs_grad(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad);
    if (needs_grad(self, 1)) self.inputs[1]->grad_buffer().add_(self.grad, -1);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (needs_grad(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (needs_grad(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, real s) {
  Tensor out = map(a.value(), [s](real v) { return v * s; });
  return make_op_result(std::move(out), {a}, [s](Node& self) { self.inputs[0]->grad_buffer().add_(self.grad, s); });
}

Var mul_scalar(const Var& a, const Var& s) {
  require_scalar(s, "mul_scalar");
  const real sv = s.value()[0];
  Tensor out = map(a.value(), [sv](real v) { return v * sv; });
  return make_op_result(std::move(out), {a, s}, [](Node& self) {
    const real sv = self.inputs[1]->value[0];
    if (needs_grad(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad, sv);
    if (needs_grad(self, 1)) {
      const Tensor& av = self.inputs[0]->value;
      real acc = 0;
      for (std::int64_t i = 0; i < av.numel(); ++i) acc += self.grad[i] * av[i];
      self.inputs[1]->grad_buffer()[0] += acc;
    }
  });
}

Var div_scalar(const Var& a, const Var& s) {
  require_scalar(s, "div_scalar");
  const real sv = s.value()[0];
  Tensor out = map(a.value(), [sv](real v) { return v / sv; });
  return make_op_result(std::move(out), {a, s}, [](Node& self) {
    const real sv = self.inputs[1]->value[0];
    if (needs_grad(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad, 1 / sv);
    if (needs_grad(self, 1)) {
      const Tensor& av = self.inputs[0]->value;
      real acc = 0;
      for (std::int64_t i = 0; i < av.numel(); ++i) acc += self.grad[i] * av[i];
      self.inputs[1]->grad_buffer()[0] -= acc / (sv * sv);
    }
  });
}

Var relu(const Var& a) {
  Tensor out = map(a.value(), [](real v) { return v > 0 ? v : real(0); });
  return make_op_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (self.value[i] > 0) g[i] += self.grad[i];
  });
}

Var square(const Var& a) {
  Tensor out = map(a.value(), [](real v) { return v * v; });
  return make_op_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const Tensor& av = self.inputs[0]->value;
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += 2 * av[i] * self.grad[i];
  });
}

Var sqrt(const Var& a) {
  Tensor out = map(a.value(), [](real v) { return std::sqrt(v); });
  return make_op_result(std::move(out), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / (2 * self.value[i]);
  });
}

Var sum(const Var& a) {
  real acc = 0;
  for (real v : a.value().values()) acc += v;
  return make_op_result(Tensor({1}, acc), {a}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const real d = self.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += d;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<real>(a.numel())); }

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op_result(std::move(out), {a}, [](Node& self) { self.inputs[0]->grad_buffer().add_(self.grad); });
}

Var concat(const std::vector<Var>& parts, std::int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  const auto rank = static_cast<std::int64_t>(first.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: axis out of range");
  std::int64_t outer = 1, inner = 1, total = 0;
  for (std::int64_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= first[i];
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<std::int64_t>(s.size()) != rank) throw std::invalid_argument("concat: rank mismatch");
    for (std::int64_t i = 0; i < rank; ++i)
      if (i != axis && s[i] != first[i])
        throw std::invalid_argument("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::vector<std::int64_t> widths;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.shape()[axis] * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * w, w, out.data() + o * total * inner + offset);
    offset += w;
    widths.push_back(w);
  }
  return make_op_result(std::move(out), parts, [widths, outer, total, inner](Node& self) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::int64_t w = widths[k];
      if (needs_grad(self, k)) {
        Tensor& g = self.inputs[k]->grad_buffer();
        for (std::int64_t o = 0; o < outer; ++o) {
          const real* src = self.grad.data() + o * total * inner + offset;
          real* dst = g.data() + o * w;
          for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      offset += w;
    }
  });
}

Var mean_batch(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw std::invalid_argument("mean_batch: rank 0");
  const std::int64_t n = s[0];
  const std::int64_t inner = a.numel() / std::max<std::int64_t>(n, 1);
  Shape out_shape(s.begin() + 1, s.end());
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < inner; ++i) out[i] += a.value()[b * inner + i] / static_cast<real>(n);
  return make_op_result(std::move(out), {a}, [n, inner](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) g[b * inner + i] += self.grad[i] / static_cast<real>(n);
  });
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  const auto ra = a.value().rank();
  const auto rb = b.value().rank();
  if (ra != rb || (ra != 2 && ra != 3)) throw std::invalid_argument("matmul: operands must both be rank 2 or 3");
  const std::int64_t batch = ra == 3 ? a.dim(0) : 1;
  if (ra == 3 && b.dim(0) != batch) throw std::invalid_argument("matmul: batch mismatch");
  const std::int64_t a0 = a.dim(-2), a1 = a.dim(-1), b0 = b.dim(-2), b1 = b.dim(-1);
  const std::int64_t m = trans_a ? a1 : a0;
  const std::int64_t k = trans_a ? a0 : a1;
  const std::int64_t kb = trans_b ? b1 : b0;
  const std::int64_t n = trans_b ? b0 : b1;
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  Shape out_shape = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor out(out_shape);
  const std::int64_t sa = a0 * a1, sb = b0 * b1, sc = m * n;
  for (std::int64_t i = 0; i < batch; ++i)
    gemm(trans_a, trans_b, m, n, k, 1, a.value().data() + i * sa, b.value().data() + i * sb, 0, out.data() + i * sc);

  return make_op_result(std::move(out), {a, b}, [=](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    for (std::int64_t i = 0; i < batch; ++i) {
      const real* dc = self.grad.data() + i * sc;
      if (needs_grad(self, 0)) {
        real* da = self.inputs[0]->grad_buffer().data() + i * sa;
        if (!trans_a)
          gemm(false, !trans_b, m, k, n, 1, dc, bv.data() + i * sb, 1, da);
        else
          gemm(trans_b, true, k, m, n, 1, bv.data() + i * sb, dc, 1, da);
      }
      if (needs_grad(self, 1)) {
        real* db = self.inputs[1]->grad_buffer().data() + i * sb;
        if (!trans_b)
          gemm(!trans_a, false, k, n, m, 1, av.data() + i * sa, dc, 1, db);
        else
          gemm(true, trans_a, n, k, m, 1, dc, av.data() + i * sa, 1, db);
      }
    }
  });
}

Var softmax_rows(const Var& a) {
  const std::int64_t cols = a.dim(-1);
  const std::int64_t rows = a.numel() / std::max<std::int64_t>(cols, 1);
  Tensor out(a.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const real* x = a.value().data() + r * cols;
    real* y = out.data() + r * cols;
    real mx = -std::numeric_limits<real>::infinity();
    for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    real z = 0;
    for (std::int64_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::int64_t c = 0; c < cols; ++c) y[c] /= z;
  }
  return make_op_result(std::move(out), {a}, [rows, cols](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const real* y = self.value.data() + r * cols;
      const real* dy = self.grad.data() + r * cols;
      real dot = 0;
      for (std::int64_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      real* dx = g.data() + r * cols;
      for (std::int64_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
    }
  });
}

Var trace(const Var& a) {
  require_rank(a, 2, "trace");
  const std::int64_t n = a.dim(0);
  if (a.dim(1) != n) throw std::invalid_argument("trace: matrix is not square");
  real t = 0;
  for (std::int64_t i = 0; i < n; ++i) t += a.value()[i * n + i];
  return make_op_result(Tensor({1}, t), {a}, [n](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < n; ++i) g[i * n + i] += self.grad[0];
  });
}

namespace {

struct ConvGeometry {
  std::int64_t c, h, w, kh, kw, oh, ow;
  int stride, pad;
  std::int64_t col_rows() const { return c * kh * kw; }
  std::int64_t col_cols() const { return oh * ow; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

void im2col(const real* x, const ConvGeometry& g, real* col) {
  for (std::int64_t ci = 0; ci < g.c; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        real* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.oh * g.ow;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            row[oy * g.ow + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(ci * g.h + iy) * g.w + ix] : real(0);
          }
        }
      }
}

void col2im(const real* col, const ConvGeometry& g, real* dx) {
  for (std::int64_t ci = 0; ci < g.c; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const real* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.oh * g.ow;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dx[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, int stride, int pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  if (x.dim(1) != weight.dim(1))
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                                std::to_string(weight.dim(1)));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const std::int64_t n = x.dim(0), o = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), 0, 0, stride, pad};
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  Tensor out({n, o, g.oh, g.ow});
  std::vector<real> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  const std::int64_t in_step = g.c * g.h * g.w, out_step = o * g.oh * g.ow;
  for (std::int64_t b = 0; b < n; ++b) {
    const real* src = x.value().data() + b * in_step;
    if (!g.is_pointwise()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    gemm(false, false, o, g.col_cols(), g.col_rows(), 1, weight.value().data(), src, 0, out.data() + b * out_step);
  }
  return make_op_result(std::move(out), {x, weight}, [g, n, o, in_step, out_step](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    const bool dx_needed = needs_grad(self, 0), dw_needed = needs_grad(self, 1);
    std::vector<real> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    std::vector<real> dcol(col.size());
    for (std::int64_t b = 0; b < n; ++b) {
      const real* dout = self.grad.data() + b * out_step;
      if (dw_needed) {
        const real* src = xv.data() + b * in_step;
        if (!g.is_pointwise()) {
          im2col(src, g, col.data());
          src = col.data();
        }
        gemm(false, true, o, g.col_rows(), g.col_cols(), 1, dout, src, 1, self.inputs[1]->grad_buffer().data());
      }
      if (dx_needed) {
        real* dx = self.inputs[0]->grad_buffer().data() + b * in_step;
        if (g.is_pointwise()) {
          gemm(true, false, g.col_rows(), g.col_cols(), o, 1, wv.data(), dout, 1, dx);
        } else {
          gemm(true, false, g.col_rows(), g.col_cols(), o, 1, wv.data(), dout, 0, dcol.data());
          col2im(dcol.data(), g, dx);
        }
      }
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int pad) {
  require_rank(x, 4, "max_pool2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = (h + 2 * pad - kernel) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("max_pool2d: kernel larger than input " + shape_str(x.shape()));
  Tensor out({n, c, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  const real* xv = x.value().data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        real best = -std::numeric_limits<real>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const std::int64_t idx = (plane * h + iy) * w + ix;
            if (best_idx < 0 || xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const std::int64_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_idx;
      }
  }
  return make_op_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[static_cast<std::int64_t>(o)];
  });
}

Var upsample_nearest(const Var& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  Tensor out({n, c, oh, ow});
  for (std::int64_t plane = 0; plane < n * c; ++plane)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        out[(plane * oh + y) * ow + xx] = x.value()[(plane * h + y / factor) * w + xx / factor];
  return make_op_result(std::move(out), {x}, [=](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t plane = 0; plane < n * c; ++plane)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx)
          g[(plane * h + y / factor) * w + xx / factor] += self.grad[(plane * oh + y) * ow + xx];
  });
}

Var global_avg_pool(const Var& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  for (std::int64_t p = 0; p < n * c; ++p) {
    real acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += x.value()[p * hw + i];
    out[p] = acc / static_cast<real>(hw);
  }
  return make_op_result(std::move(out), {x}, [n, c, hw](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t p = 0; p < n * c; ++p) {
      const real d = self.grad[p] / static_cast<real>(hw);
      for (std::int64_t i = 0; i < hw; ++i) g[p * hw + i] += d;
    }
  });
}

std::vector<Var> stripe_avg_pool(const Var& x, int parts) {
  require_rank(x, 4, "stripe_avg_pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (parts < 1 || h % parts != 0)
    throw std::invalid_argument("stripe_avg_pool: " + std::to_string(parts) + " parts do not divide height " +
                                std::to_string(h));
  const std::int64_t rows = h / parts;
  const real inv = 1.0 / static_cast<real>(rows * w);
  std::vector<Var> result;
  for (int part = 0; part < parts; ++part) {
    Tensor out({n, c});
    const std::int64_t y0 = part * rows;
    for (std::int64_t p = 0; p < n * c; ++p) {
      real acc = 0;
      for (std::int64_t y = y0; y < y0 + rows; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) acc += x.value()[(p * h + y) * w + xx];
      out[p] = acc * inv;
    }
    result.push_back(make_op_result(std::move(out), {x}, [=](Node& self) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::int64_t p = 0; p < n * c; ++p) {
        const real d = self.grad[p] * inv;
        for (std::int64_t y = y0; y < y0 + rows; ++y)
          for (std::int64_t xx = 0; xx < w; ++xx) g[(p * h + y) * w + xx] += d;
      }
    }));
  }
  return result;
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  Var y = matmul(x, weight, false, true);
  if (!bias.defined()) return y;
  const std::int64_t n = y.dim(0), k = y.dim(1);
  if (bias.numel() != k) throw std::invalid_argument("linear: bias size mismatch");
  Tensor out = y.value();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j) out[i * k + j] += bias.value()[j];
  return make_op_result(std::move(out), {y, bias}, [n, k](Node& self) {
    if (needs_grad(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad);
    if (needs_grad(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < k; ++j) g[j] += self.grad[i * k + j];
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, RunningStats& stats, bool training, real momentum,
               real eps) {
  const auto rank = x.value().rank();
  if (rank != 2 && rank != 4) throw std::invalid_argument("batch_norm: expected [N,C] or [N,C,H,W]");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = rank == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || (beta.defined() && beta.numel() != c) || stats.mean.numel() != c)
    throw std::invalid_argument("batch_norm: channel mismatch, input has " + std::to_string(c));
  const std::int64_t count = n * hw;
  const real* xv = x.value().data();

  std::vector<real> mean_c(c), invstd(c);
  if (training) {
    if (count < 1) throw std::invalid_argument("batch_norm: empty batch");
    for (std::int64_t ch = 0; ch < c; ++ch) {
      real s = 0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) s += xv[(b * c + ch) * hw + i];
      const real mu = s / static_cast<real>(count);
      real ss = 0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
          const real d = xv[(b * c + ch) * hw + i] - mu;
          ss += d * d;
        }
      const real var = ss / static_cast<real>(count);
      mean_c[ch] = mu;
      invstd[ch] = 1 / std::sqrt(var + eps);
      const real unbiased = count > 1 ? ss / static_cast<real>(count - 1) : var;
      stats.mean[ch] = (1 - momentum) * stats.mean[ch] + momentum * mu;
      stats.var[ch] = (1 - momentum) * stats.var[ch] + momentum * unbiased;
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = stats.mean[ch];
      invstd[ch] = 1 / std::sqrt(stats.var[ch] + eps);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const real gm = gamma.value()[ch];
      const real bt = beta.defined() ? beta.value()[ch] : 0;
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::int64_t idx = (b * c + ch) * hw + i;
        xhat[idx] = (xv[idx] - mean_c[ch]) * invstd[ch];
        out[idx] = gm * xhat[idx] + bt;
      }
    }

  std::vector<Var> inputs{x, gamma};
  if (beta.defined()) inputs.push_back(beta);
  return make_op_result(
      std::move(out), inputs,
      [xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw, count, training](Node& self) {
        const Tensor& gv = self.inputs[1]->value;
        const real* dy = self.grad.data();
        std::vector<real> dgamma(c, 0), dbeta(c, 0);
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < hw; ++i) {
              const std::int64_t idx = (b * c + ch) * hw + i;
              dgamma[ch] += dy[idx] * xhat[idx];
              dbeta[ch] += dy[idx];
            }
        if (needs_grad(self, 1)) {
          Tensor& g = self.inputs[1]->grad_buffer();
          for (std::int64_t ch = 0; ch < c; ++ch) g[ch] += dgamma[ch];
        }
        if (self.inputs.size() > 2 && needs_grad(self, 2)) {
          Tensor& g = self.inputs[2]->grad_buffer();
          for (std::int64_t ch = 0; ch < c; ++ch) g[ch] += dbeta[ch];
        }
        if (!needs_grad(self, 0)) return;
        Tensor& dx = self.inputs[0]->grad_buffer();
        const real m = static_cast<real>(count);
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const real k = gv[ch] * invstd[ch];
            for (std::int64_t i = 0; i < hw; ++i) {
              const std::int64_t idx = (b * c + ch) * hw + i;
              if (training)
                dx[idx] += k * (dy[idx] - dbeta[ch] / m - xhat[idx] * dgamma[ch] / m);
              else
                dx[idx] += k * dy[idx];
            }
          }
      });
}

}  // namespace ops
}  // namespace fpb
