// SPDX-License-Identifier: Apache-2.0

#include "mpsl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpsl/autograd.hpp"
#include "mpsl/errors.hpp"

namespace mpsl::ops {

namespace {

using detail::BackwardFn;
using detail::GradFn;

DType common_dtype(const char* op, std::initializer_list<const Tensor*> ts) {
  DType dt = (*ts.begin())->dtype();
  for (const Tensor* t : ts) {
    if (t->dtype() != dt) {
      throw ShapeError(std::string(op) + ": dtype mismatch (" + to_string(dt) + " vs " +
                       to_string(t->dtype()) + ")");
    }
  }
  return dt;
}

Tensor make_op(const char* op, Shape shape, DType dtype, std::vector<double> out,
               std::vector<Tensor> inputs, BackwardFn fn) {
  Tensor result = Tensor::from_data(std::move(shape), std::move(out), dtype);
  const bool needs_grad = grad_enabled() &&
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs_grad) {
    auto gf = std::make_shared<GradFn>();
    gf->op = op;
    for (const auto& in : inputs) gf->inputs.push_back(in.impl());
    gf->backward = std::move(fn);
    result.impl()->requires_grad = true;
    result.impl()->grad_fn = std::move(gf);
  }
  return result;
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
      c[i * k + p] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      const double* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("matmul", {&a, &b});
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_op("matmul", {m, n}, dt, std::move(out), {a, b},
                 [a, b, m, k, n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   if (!gin[0].empty()) gemm_nt(g.data(), b.data().data(), gin[0].data(), m, k, n);
                   if (!gin[1].empty()) gemm_tn(a.data().data(), g.data(), gin[1].data(), m, k, n);
                 });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("bmm", {&a, &b});
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n, 0.0);
  for (std::size_t i = 0; i < bs; ++i) {
    gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return make_op("bmm", {bs, m, n}, dt, std::move(out), {a, b},
                 [a, b, bs, m, k, n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < bs; ++i) {
                     const double* gi = g.data() + i * m * n;
                     if (!gin[0].empty()) {
                       gemm_nt(gi, b.data().data() + i * k * n, gin[0].data() + i * m * k, m, k, n);
                     }
                     if (!gin[1].empty()) {
                       gemm_tn(a.data().data() + i * m * k, gi, gin[1].data() + i * k * n, m, k, n);
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + to_string(a.shape()));
  Shape s = a.shape();
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  const std::size_t batch = a.numel() / (r * c == 0 ? 1 : r * c);
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
    }
  }
  return make_op("transpose", s, a.dtype(), std::move(out), {a},
                 [batch, r, c](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t i = 0; i < r; ++i) {
                       for (std::size_t j = 0; j < c; ++j) {
                         gin[0][b * r * c + i * c + j] += g[b * r * c + j * r + i];
                       }
                     }
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), a.dtype(), std::move(out), {a},
                 [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("add", {&a, &b});
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op("add", a.shape(), dt, std::move(out), {a, b},
                 [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (auto& gi : gin) {
                     if (gi.empty()) continue;
                     for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("sub", {&a, &b});
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op("sub", a.shape(), dt, std::move(out), {a, b},
                 [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   if (!gin[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                   }
                   if (!gin[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("mul", {&a, &b});
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op("mul", a.shape(), dt, std::move(out), {a, b},
                 [a, b](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   if (!gin[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * b.data()[i];
                   }
                   if (!gin[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * a.data()[i];
                   }
                 });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_op("scale", a.shape(), a.dtype(), std::move(out), {a},
                 [factor](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
                 });
}

Tensor scale_by(const Tensor& a, const Tensor& factor) {
  const DType dt = common_dtype("scale_by", {&a, &factor});
  if (factor.numel() != 1) throw ShapeError("scale_by: factor must have one element, got " + to_string(factor.shape()));
  const double f = factor.data()[0];
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
  return make_op("scale_by", a.shape(), dt, std::move(out), {a, factor},
                 [a, factor](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   const double fv = factor.data()[0];
                   if (!gin[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * fv;
                   }
                   if (!gin[1].empty()) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * a.data()[i];
                     gin[1][0] += acc;
                   }
                 });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const DType dt = common_dtype("add_bias", {&a, &bias});
  if (a.rank() == 0 || bias.rank() != 1 || bias.dim(0) != a.shape().back()) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match " + to_string(a.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + bias.data()[i % n];
  return make_op("add_bias", a.shape(), dt, std::move(out), {a, bias},
                 [n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   if (!gin[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                   }
                   if (!gin[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % n] += g[i];
                   }
                 });
}

Tensor add_broadcast(const Tensor& a, const Tensor& b) {
  const DType dt = common_dtype("add_broadcast", {&a, &b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    throw ShapeError("add_broadcast: " + to_string(sb) + " is not a trailing shape of " + to_string(sa));
  }
  const std::size_t n = b.numel();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i % n];
  return make_op("add_broadcast", sa, dt, std::move(out), {a, b},
                 [n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   if (!gin[0].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                   }
                   if (!gin[1].empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % n] += g[i];
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor flat = x.rank() == 2 ? x : reshape(x, {x.numel() / k, k});
  Tensor y = matmul(flat, weight);
  if (bias.defined()) y = add_bias(y, bias);
  return x.rank() == 2 ? y : reshape(y, out_shape);
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  std::vector<double> saved = out;
  return make_op("exp", a.shape(), a.dtype(), std::move(out), {a},
                 [saved = std::move(saved)](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * saved[i];
                 });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
  }
  return make_op("gelu", a.shape(), a.dtype(), std::move(out), {a},
                 [a](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double x = a.data()[i];
                     const double t = std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x));
                     const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
                     gin[0][i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
                   }
                 });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_op("sum", {}, a.dtype(), {acc}, {a},
                 [](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (auto& v : gin[0]) v += g[0];
                 });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return make_op("mean", {}, a.dtype(), {acc / n}, {a},
                 [n](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (auto& v : gin[0]) v += g[0] / n;
                 });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), ax);
  if (sp.n == 0) throw ShapeError("softmax: empty axis");
  const auto in = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, in[base + j * sp.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(in[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= z;
    }
  }
  std::vector<double> y = out;
  return make_op("softmax", x.shape(), x.dtype(), std::move(out), {x},
                 [y = std::move(y), sp](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t o = 0; o < sp.outer; ++o) {
                     for (std::size_t i = 0; i < sp.inner; ++i) {
                       const std::size_t base = o * sp.n * sp.inner + i;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < sp.n; ++j) {
                         dot += g[base + j * sp.inner] * y[base + j * sp.inner];
                       }
                       for (std::size_t j = 0; j < sp.n; ++j) {
                         const std::size_t idx = base + j * sp.inner;
                         gin[0][idx] += y[idx] * (g[idx] - dot);
                       }
                     }
                   }
                 });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("log_softmax: empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto in = x.data();
  std::vector<double> out(x.numel());
  std::vector<double> probs(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = row[j] - lse;
      probs[r * n + j] = std::exp(row[j] - lse);
    }
  }
  return make_op("log_softmax", x.shape(), x.dtype(), std::move(out), {x},
                 [probs = std::move(probs), n, rows](std::span<const double> g,
                                                     std::vector<std::vector<double>>& gin) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     double gs = 0.0;
                     for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
                     for (std::size_t j = 0; j < n; ++j) {
                       gin[0][r * n + j] += g[r * n + j] - probs[r * n + j] * gs;
                     }
                   }
                 });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw ShapeError("pick: need 2-D input with one index per row, got " + to_string(x.shape()) + " and " +
                     std::to_string(index.size()) + " indices");
  }
  const std::size_t c = x.dim(1);
  std::vector<double> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= c) {
      throw DataError("pick: index " + std::to_string(index[r]) + " at row " + std::to_string(r) +
                      " out of range [0, " + std::to_string(c) + ")");
    }
    out[r] = x.data()[r * c + index[r]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_op("pick", {index.size()}, x.dtype(), std::move(out), {x},
                 [idx = std::move(idx), c](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t r = 0; r < idx.size(); ++r) gin[0][r * c + idx[r]] += g[r];
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const DType dt = common_dtype("layer_norm", {&x, &gain, &bias});
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("layer_norm: last dim is 0");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" + to_string(bias.shape()) +
                     " do not match last dim of " + to_string(x.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gain.data()[j] + bias.data()[j];
    }
  }
  return make_op(
      "layer_norm", x.shape(), dt, std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gain, d, rows](
          std::span<const double> g, std::vector<std::vector<double>>& gin) {
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* xr = xhat.data() + r * d;
          if (!gin[1].empty()) {
            for (std::size_t j = 0; j < d; ++j) gin[1][j] += gr[j] * xr[j];
          }
          if (!gin[2].empty()) {
            for (std::size_t j = 0; j < d; ++j) gin[2][j] += gr[j];
          }
          if (gin[0].empty()) continue;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gr[j] * gain.data()[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xr[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) gin[0][r * d + j] += inv_std[r] * (dxhat[j] - m1 - xr[j] * m2);
        }
      });
}

Tensor l2_normalize(const Tensor& x, double eps) {
  if (x.rank() == 0 || x.shape().back() == 0) throw ShapeError("l2_normalize: empty last axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel()), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x.data()[r * d + j] * x.data()[r * d + j];
    norms[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] / norms[r];
  }
  std::vector<double> y = out;
  return make_op("l2_normalize", x.shape(), x.dtype(), std::move(out), {x},
                 [y = std::move(y), norms = std::move(norms), d, rows](std::span<const double> g,
                                                                      std::vector<std::vector<double>>& gin) {
                   for (std::size_t r = 0; r < rows; ++r) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < d; ++j) dot += y[r * d + j] * g[r * d + j];
                     for (std::size_t j = 0; j < d; ++j) {
                       gin[0][r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / norms[r];
                     }
                   }
                 });
}

Tensor concat(std::span<const Tensor> tensors, int axis) {
  if (tensors.empty()) throw ShapeError("concat: empty tensor list");
  const Tensor& first = tensors[0];
  const std::size_t ax = norm_axis(axis, first.rank(), "concat");
  Shape out_shape = first.shape();
  out_shape[ax] = 0;
  std::vector<const Tensor*> ptrs;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const Tensor& cur = tensors[t];
    if (cur.dtype() != first.dtype()) {
      throw ShapeError("concat: tensor " + std::to_string(t) + " has dtype " + to_string(cur.dtype()));
    }
    bool ok = cur.rank() == first.rank();
    for (std::size_t i = 0; ok && i < cur.rank(); ++i) ok = i == ax || cur.shape()[i] == first.shape()[i];
    if (!ok) {
      throw ShapeError("concat: tensor " + std::to_string(t) + " has shape " + to_string(cur.shape()) +
                       ", incompatible with " + to_string(first.shape()) + " along axis " +
                       std::to_string(ax));
    }
    out_shape[ax] += cur.shape()[ax];
  }
  const AxisSplit total = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (const Tensor& cur : tensors) {
    const std::size_t n = cur.shape()[ax];
    extents.push_back(n);
    const auto in = cur.data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(in.data() + o * n * total.inner, n * total.inner,
                  out.data() + (o * total.n + offset) * total.inner);
    }
    offset += n;
  }
  std::vector<Tensor> inputs(tensors.begin(), tensors.end());
  return make_op("concat", out_shape, first.dtype(), std::move(out), std::move(inputs),
                 [extents, total](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   std::size_t off = 0;
                   for (std::size_t t = 0; t < extents.size(); ++t) {
                     const std::size_t n = extents[t];
                     if (!gin[t].empty()) {
                       for (std::size_t o = 0; o < total.outer; ++o) {
                         const double* src = g.data() + (o * total.n + off) * total.inner;
                         double* dst = gin[t].data() + o * n * total.inner;
                         for (std::size_t i = 0; i < n * total.inner; ++i) dst[i] += src[i];
                       }
                     }
                     off += n;
                   }
                 });
}

Tensor concat(std::initializer_list<Tensor> tensors, int axis) {
  return concat(std::span<const Tensor>(tensors.begin(), tensors.size()), axis);
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank(), "slice");
  const AxisSplit sp = split_at(x.shape(), ax);
  if (start + length > sp.n) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis of size " + std::to_string(sp.n));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.data().data() + (o * sp.n + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  return make_op("slice", out_shape, x.dtype(), std::move(out), {x},
                 [sp, start, length](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t o = 0; o < sp.outer; ++o) {
                     const double* src = g.data() + o * length * sp.inner;
                     double* dst = gin[0].data() + (o * sp.n + start) * sp.inner;
                     for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor global_average_pool(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("global_average_pool: expects [batch, seq, d], got " + to_string(x.shape()));
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  if (s == 0) throw ShapeError("global_average_pool: empty sequence");
  std::vector<double> out(b * d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += x.data()[(i * s + t) * d + j];
    }
  }
  const double inv = 1.0 / static_cast<double>(s);
  for (auto& v : out) v *= inv;
  return make_op("global_average_pool", {b, d}, x.dtype(), std::move(out), {x},
                 [b, s, d, inv](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < b; ++i) {
                     for (std::size_t t = 0; t < s; ++t) {
                       for (std::size_t j = 0; j < d; ++j) gin[0][(i * s + t) * d + j] += g[i * d + j] * inv;
                     }
                   }
                 });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + to_string(table.shape()));
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw DataError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                      " is outside the vocabulary of size " + std::to_string(v));
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return make_op("embedding", {ids.size(), d}, table.dtype(), std::move(out), {table},
                 [saved = std::move(saved), d](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < saved.size(); ++i) {
                     for (std::size_t j = 0; j < d; ++j) gin[0][saved[i] * d + j] += g[i * d + j];
                   }
                 });
}

Tensor external_scalar(const Tensor& source, double value, std::span<const double> sensitivity) {
  if (sensitivity.size() != source.numel()) {
    throw ShapeError("external_scalar: sensitivity has " + std::to_string(sensitivity.size()) +
                     " values for source " + to_string(source.shape()));
  }
  std::vector<double> sens(sensitivity.begin(), sensitivity.end());
  return make_op("external_scalar", {}, source.dtype(), {value}, {source},
                 [sens = std::move(sens)](std::span<const double> g, std::vector<std::vector<double>>& gin) {
                   for (std::size_t i = 0; i < sens.size(); ++i) gin[0][i] += g[0] * sens[i];
                 });
}

}  // namespace mpsl::ops
