#include "slqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "slqa/error.hpp"

namespace slqa {
namespace {

bool any_grad(const std::vector<Tensor>& xs) {
  for (const auto& x : xs)
    if (x.requires_grad()) return true;
  return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor finish(Tape& tape, Tensor out, std::vector<Tensor> inputs,
              std::function<void()> pull) {
  if (tape.recording() && out.requires_grad())
    tape.record(out, std::move(inputs), std::move(pull));
  return out;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: both inputs must be rank-2, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> vals(static_cast<std::size_t>(n) * m, 0.0);
  {
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* pc = vals.data();
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < k; ++t) {
        const double av = pa[static_cast<std::size_t>(i) * k + t];
        if (av == 0.0) continue;
        const double* brow = pb + static_cast<std::size_t>(t) * m;
        double* crow = pc + static_cast<std::size_t>(i) * m;
        for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
  }
  Tensor out = Tensor::from({n, m}, std::move(vals), any_grad({a, b}));
  Tensor av = a, bv = b;
  return finish(tape, out, {a, b}, [av, bv, out, n, k, m]() mutable {
    const double* gd = out.grad().data();
    if (av.requires_grad()) {
      double* da = av.grad_data().data();
      const double* pb = bv.values().data();
      // dA[i,t] += sum_j dC[i,j] * B[t,j]
      for (int i = 0; i < n; ++i) {
        const double* grow = gd + static_cast<std::size_t>(i) * m;
        for (int t = 0; t < k; ++t) {
          const double* brow = pb + static_cast<std::size_t>(t) * m;
          double acc = 0.0;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          da[static_cast<std::size_t>(i) * k + t] += acc;
        }
      }
    }
    if (bv.requires_grad()) {
      double* db = bv.grad_data().data();
      const double* pa = av.values().data();
      // dB[t,j] += sum_i A[i,t] * dC[i,j]
      for (int i = 0; i < n; ++i) {
        const double* grow = gd + static_cast<std::size_t>(i) * m;
        for (int t = 0; t < k; ++t) {
          const double aval = pa[static_cast<std::size_t>(i) * k + t];
          if (aval == 0.0) continue;
          double* brow = db + static_cast<std::size_t>(t) * m;
          for (int j = 0; j < m; ++j) brow[j] += aval * grow[j];
        }
      }
    }
  });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() != 2)
    throw DimensionError("transpose: rank-2 required, got " +
                         shape_str(x.shape()));
  const int n = x.dim(0), m = x.dim(1);
  std::vector<double> vals(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      vals[static_cast<std::size_t>(j) * n + i] = x.at(i, j);
  Tensor out = Tensor::from({m, n}, std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, n, m]() mutable {
    const double* gd = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i)
        dx[static_cast<std::size_t>(i) * m + j] +=
            gd[static_cast<std::size_t>(j) * n + i];
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_same_shape(Tape& tape, const Tensor& a, const Tensor& b,
                         const char* name, Fwd f, Bwd pull_fn) {
  check_same_shape(a, b, name);
  const int n = a.size();
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) vals[i] = f(a.at(i), b.at(i));
  Tensor out = Tensor::from(a.shape(), std::move(vals), any_grad({a, b}));
  Tensor av = a, bv = b;
  return finish(tape, out, {a, b},
                [av, bv, out, n, pull_fn]() mutable { pull_fn(av, bv, out, n); });
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](Tensor& av, Tensor& bv, Tensor& out, int n) {
        const double* g = out.grad().data();
        if (av.requires_grad()) {
          double* da = av.grad_data().data();
          for (int i = 0; i < n; ++i) da[i] += g[i];
        }
        if (bv.requires_grad()) {
          double* db = bv.grad_data().data();
          for (int i = 0; i < n; ++i) db[i] += g[i];
        }
      });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](Tensor& av, Tensor& bv, Tensor& out, int n) {
        const double* g = out.grad().data();
        if (av.requires_grad()) {
          double* da = av.grad_data().data();
          for (int i = 0; i < n; ++i) da[i] += g[i];
        }
        if (bv.requires_grad()) {
          double* db = bv.grad_data().data();
          for (int i = 0; i < n; ++i) db[i] -= g[i];
        }
      });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](Tensor& av, Tensor& bv, Tensor& out, int n) {
        const double* g = out.grad().data();
        if (av.requires_grad()) {
          double* da = av.grad_data().data();
          for (int i = 0; i < n; ++i) da[i] += g[i] * bv.at(i);
        }
        if (bv.requires_grad()) {
          double* db = bv.grad_data().data();
          for (int i = 0; i < n; ++i) db[i] += g[i] * av.at(i);
        }
      });
}

Tensor add_n(Tape& tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("add_n: no inputs");
  for (const auto& x : xs) check_same_shape(xs[0], x, "add_n");
  const int n = xs[0].size();
  std::vector<double> vals(n, 0.0);
  for (const auto& x : xs)
    for (int i = 0; i < n; ++i) vals[i] += x.at(i);
  Tensor out = Tensor::from(xs[0].shape(), std::move(vals), any_grad(xs));
  std::vector<Tensor> ins = xs;
  return finish(tape, out, ins, [ins, out, n]() mutable {
    const double* g = out.grad().data();
    for (auto& x : ins) {
      if (!x.requires_grad()) continue;
      double* dx = x.grad_data().data();
      for (int i = 0; i < n; ++i) dx[i] += g[i];
    }
  });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rows() != 1 || b.cols() != x.dim(1))
    throw DimensionError("add_bias: need Txd and 1xd, got " +
                         shape_str(x.shape()) + " and " + shape_str(b.shape()));
  const int t = x.dim(0), d = x.dim(1);
  std::vector<double> vals(x.values().begin(), x.values().end());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) vals[static_cast<std::size_t>(i) * d + j] += b.at(j);
  Tensor out = Tensor::from(x.shape(), std::move(vals), any_grad({x, b}));
  Tensor xv = x, bv = b;
  return finish(tape, out, {x, b}, [xv, bv, out, t, d]() mutable {
    const double* g = out.grad().data();
    if (xv.requires_grad()) {
      double* dx = xv.grad_data().data();
      for (int i = 0; i < t * d; ++i) dx[i] += g[i];
    }
    if (bv.requires_grad()) {
      double* db = bv.grad_data().data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) db[j] += g[static_cast<std::size_t>(i) * d + j];
    }
  });
}

Tensor scale_rows(Tape& tape, const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != 1)
    throw DimensionError("scale_rows: need Txd and Tx1, got " +
                         shape_str(x.shape()) + " and " + shape_str(s.shape()));
  const int t = x.dim(0), d = x.dim(1);
  std::vector<double> vals(static_cast<std::size_t>(t) * d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      vals[static_cast<std::size_t>(i) * d + j] = x.at(i, j) * s.at(i);
  Tensor out = Tensor::from(x.shape(), std::move(vals), any_grad({x, s}));
  Tensor xv = x, sv = s;
  return finish(tape, out, {x, s}, [xv, sv, out, t, d]() mutable {
    const double* g = out.grad().data();
    if (xv.requires_grad()) {
      double* dx = xv.grad_data().data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j)
          dx[static_cast<std::size_t>(i) * d + j] +=
              g[static_cast<std::size_t>(i) * d + j] * sv.at(i);
    }
    if (sv.requires_grad()) {
      double* ds = sv.grad_data().data();
      for (int i = 0; i < t; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j)
          acc += g[static_cast<std::size_t>(i) * d + j] * xv.at(i, j);
        ds[i] += acc;
      }
    }
  });
}

Tensor scale_cols(Tape& tape, const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.size() != x.dim(1))
    throw DimensionError("scale_cols: need Txd and d-vector, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int t = x.dim(0), d = x.dim(1);
  std::vector<double> vals(static_cast<std::size_t>(t) * d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      vals[static_cast<std::size_t>(i) * d + j] = x.at(i, j) * w.at(j);
  Tensor out = Tensor::from(x.shape(), std::move(vals), any_grad({x, w}));
  Tensor xv = x, wv = w;
  return finish(tape, out, {x, w}, [xv, wv, out, t, d]() mutable {
    const double* g = out.grad().data();
    if (xv.requires_grad()) {
      double* dx = xv.grad_data().data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j)
          dx[static_cast<std::size_t>(i) * d + j] +=
              g[static_cast<std::size_t>(i) * d + j] * wv.at(j);
    }
    if (wv.requires_grad()) {
      double* dw = wv.grad_data().data();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j)
          dw[j] += g[static_cast<std::size_t>(i) * d + j] * xv.at(i, j);
    }
  });
}

Tensor scale_all(Tape& tape, const Tensor& x, const Tensor& s) {
  if (s.size() != 1)
    throw DimensionError("scale_all: scale must be 1x1, got " +
                         shape_str(s.shape()));
  const int n = x.size();
  const double sv0 = s.at(0);
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) vals[i] = x.at(i) * sv0;
  Tensor out = Tensor::from(x.shape(), std::move(vals), any_grad({x, s}));
  Tensor xv = x, sv = s;
  return finish(tape, out, {x, s}, [xv, sv, out, n]() mutable {
    const double* g = out.grad().data();
    if (xv.requires_grad()) {
      double* dx = xv.grad_data().data();
      const double sc = sv.at(0);
      for (int i = 0; i < n; ++i) dx[i] += g[i] * sc;
    }
    if (sv.requires_grad()) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += g[i] * xv.at(i);
      sv.grad_data()[0] += acc;
    }
  });
}

Tensor scale_const(Tape& tape, const Tensor& x, double k) {
  const int n = x.size();
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) vals[i] = x.at(i) * k;
  Tensor out = Tensor::from(x.shape(), std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, n, k]() mutable {
    const double* g = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int i = 0; i < n; ++i) dx[i] += g[i] * k;
  });
}

Tensor add_outer(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.dim(1) != 1 || b.rank() != 2 || b.dim(1) != 1)
    throw DimensionError("add_outer: need nx1 and mx1, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int n = a.dim(0), m = b.dim(0);
  std::vector<double> vals(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      vals[static_cast<std::size_t>(i) * m + j] = a.at(i) + b.at(j);
  Tensor out = Tensor::from({n, m}, std::move(vals), any_grad({a, b}));
  Tensor av = a, bv = b;
  return finish(tape, out, {a, b}, [av, bv, out, n, m]() mutable {
    const double* g = out.grad().data();
    if (av.requires_grad()) {
      double* da = av.grad_data().data();
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += g[static_cast<std::size_t>(i) * m + j];
        da[i] += acc;
      }
    }
    if (bv.requires_grad()) {
      double* db = bv.grad_data().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) db[j] += g[static_cast<std::size_t>(i) * m + j];
    }
  });
}

namespace {

template <class Fwd, class Deriv>
Tensor unary_pointwise(Tape& tape, const Tensor& x, Fwd f, Deriv df) {
  const int n = x.size();
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) vals[i] = f(x.at(i));
  Tensor out = Tensor::from(x.shape(), std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, n, df]() mutable {
    const double* g = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int i = 0; i < n; ++i) dx[i] += g[i] * df(xv.at(i), out.at(i));
  });
}

}  // namespace

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary_pointwise(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_pointwise(
      tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary_pointwise(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor concat(Tape& tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat: no inputs");
  const int rank = xs[0].rank();
  for (const auto& x : xs)
    if (x.rank() != rank)
      throw DimensionError("concat: mixed ranks");
  if (rank == 1) {
    int total = 0;
    for (const auto& x : xs) total += x.size();
    std::vector<double> vals;
    vals.reserve(total);
    for (const auto& x : xs)
      vals.insert(vals.end(), x.values().begin(), x.values().end());
    Tensor out = Tensor::from({total}, std::move(vals), any_grad(xs));
    std::vector<Tensor> ins = xs;
    return finish(tape, out, ins, [ins, out]() mutable {
      const double* g = out.grad().data();
      int off = 0;
      for (auto& x : ins) {
        if (x.requires_grad()) {
          double* dx = x.grad_data().data();
          for (int i = 0; i < x.size(); ++i) dx[i] += g[off + i];
        }
        off += x.size();
      }
    });
  }
  const int t = xs[0].dim(0);
  int total = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != t)
      throw DimensionError("concat: row counts differ, " +
                           shape_str(xs[0].shape()) + " vs " +
                           shape_str(x.shape()));
    total += x.dim(1);
  }
  std::vector<double> vals(static_cast<std::size_t>(t) * total);
  int off = 0;
  for (const auto& x : xs) {
    const int d = x.dim(1);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j)
        vals[static_cast<std::size_t>(i) * total + off + j] = x.at(i, j);
    off += d;
  }
  Tensor out = Tensor::from({t, total}, std::move(vals), any_grad(xs));
  std::vector<Tensor> ins = xs;
  return finish(tape, out, ins, [ins, out, t, total]() mutable {
    const double* g = out.grad().data();
    int off = 0;
    for (auto& x : ins) {
      const int d = x.dim(1);
      if (x.requires_grad()) {
        double* dx = x.grad_data().data();
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < d; ++j)
            dx[static_cast<std::size_t>(i) * d + j] +=
                g[static_cast<std::size_t>(i) * total + off + j];
      }
      off += d;
    }
  });
}

Tensor vstack(Tape& tape, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("vstack: no inputs");
  const int d = xs[0].cols();
  int rows_total = 0;
  for (const auto& x : xs) {
    if (x.rank() != 2 || x.dim(1) != d)
      throw DimensionError("vstack: column counts differ");
    rows_total += x.dim(0);
  }
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(rows_total) * d);
  for (const auto& x : xs)
    vals.insert(vals.end(), x.values().begin(), x.values().end());
  Tensor out = Tensor::from({rows_total, d}, std::move(vals), any_grad(xs));
  std::vector<Tensor> ins = xs;
  return finish(tape, out, ins, [ins, out]() mutable {
    const double* g = out.grad().data();
    std::size_t off = 0;
    for (auto& x : ins) {
      if (x.requires_grad()) {
        double* dx = x.grad_data().data();
        for (int i = 0; i < x.size(); ++i) dx[i] += g[off + i];
      }
      off += x.size();
    }
  });
}

Tensor row(Tape& tape, const Tensor& x, int r) {
  if (x.rank() != 2 || r < 0 || r >= x.dim(0))
    throw DimensionError("row: index " + std::to_string(r) +
                         " out of range for " + shape_str(x.shape()));
  const int d = x.dim(1);
  std::vector<double> vals(d);
  for (int j = 0; j < d; ++j) vals[j] = x.at(r, j);
  Tensor out = Tensor::from({1, d}, std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, r, d]() mutable {
    const double* g = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int j = 0; j < d; ++j) dx[static_cast<std::size_t>(r) * d + j] += g[j];
  });
}

Tensor pick(Tape& tape, const Tensor& x, int r, int c) {
  if (x.rank() != 2 || r < 0 || r >= x.dim(0) || c < 0 || c >= x.dim(1))
    throw DimensionError("pick: index (" + std::to_string(r) + "," +
                         std::to_string(c) + ") out of range for " +
                         shape_str(x.shape()));
  Tensor out = Tensor::from({1, 1}, {x.at(r, c)}, x.requires_grad());
  Tensor xv = x;
  const int cols = x.dim(1);
  return finish(tape, out, {x}, [xv, out, r, c, cols]() mutable {
    xv.grad_data()[static_cast<std::size_t>(r) * cols + c] += out.grad()[0];
  });
}

Tensor softmax(Tape& tape, const Tensor& x, int axis, const Tensor* mask) {
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(x.shape()));
  if (mask && mask->shape() != x.shape())
    throw DimensionError("softmax: mask shape " + shape_str(mask->shape()) +
                         " != input shape " + shape_str(x.shape()));
  // Iterate fibers along `axis`: rank-1 has a single fiber.
  const int rows = x.rows(), cols = x.cols();
  const bool along_cols = (x.rank() == 1) || (axis == 1);
  const int fibers = along_cols ? rows : cols;
  const int flen = along_cols ? cols : rows;
  auto index = [along_cols, cols](int fiber, int k) {
    return along_cols ? static_cast<std::size_t>(fiber) * cols + k
                      : static_cast<std::size_t>(k) * cols + fiber;
  };
  std::vector<double> vals(x.size(), 0.0);
  const Tensor m = mask ? *mask : Tensor();
  for (int f = 0; f < fibers; ++f) {
    double mx = -std::numeric_limits<double>::infinity();
    int kept = 0;
    for (int k = 0; k < flen; ++k) {
      if (m.defined() && m.at(static_cast<int>(index(f, k))) == 0.0) continue;
      mx = std::max(mx, x.at(static_cast<int>(index(f, k))));
      ++kept;
    }
    if (kept == 0)
      throw DegenerateInputError("softmax: fully masked fiber " +
                                 std::to_string(f));
    double total = 0.0;
    for (int k = 0; k < flen; ++k) {
      const auto idx = index(f, k);
      if (m.defined() && m.at(static_cast<int>(idx)) == 0.0) continue;
      const double e = std::exp(x.at(static_cast<int>(idx)) - mx);
      vals[idx] = e;
      total += e;
    }
    for (int k = 0; k < flen; ++k) {
      const auto idx = index(f, k);
      if (m.defined() && m.at(static_cast<int>(idx)) == 0.0) continue;
      vals[idx] /= total;
    }
  }
  Tensor out = Tensor::from(x.shape(), std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, m, fibers, flen, index]() mutable {
    const double* g = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int f = 0; f < fibers; ++f) {
      double dot = 0.0;
      for (int k = 0; k < flen; ++k) {
        const auto idx = index(f, k);
        if (m.defined() && m.at(static_cast<int>(idx)) == 0.0) continue;
        dot += g[idx] * out.at(static_cast<int>(idx));
      }
      for (int k = 0; k < flen; ++k) {
        const auto idx = index(f, k);
        if (m.defined() && m.at(static_cast<int>(idx)) == 0.0) continue;
        dx[idx] += out.at(static_cast<int>(idx)) * (g[idx] - dot);
      }
    }
  });
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training,
               Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout: rate must be in [0,1), got " +
                        std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const int n = x.size();
  const double keep = 1.0 - rate;
  auto factors = std::make_shared<std::vector<double>>(n);
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) {
    const double f = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    (*factors)[i] = f;
    vals[i] = x.at(i) * f;
  }
  Tensor out = Tensor::from(x.shape(), std::move(vals), x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out, factors, n]() mutable {
    const double* g = out.grad().data();
    double* dx = xv.grad_data().data();
    for (int i = 0; i < n; ++i) dx[i] += g[i] * (*factors)[i];
  });
}

Tensor log_floor(Tape& tape, const Tensor& x, double floor) {
  return unary_pointwise(
      tape, x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (int i = 0; i < x.size(); ++i) total += x.at(i);
  Tensor out = Tensor::from({1, 1}, {total}, x.requires_grad());
  Tensor xv = x;
  return finish(tape, out, {x}, [xv, out]() mutable {
    const double g = out.grad()[0];
    double* dx = xv.grad_data().data();
    for (int i = 0; i < xv.size(); ++i) dx[i] += g;
  });
}

Tensor embed_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids,
                  int oov_id, bool table_trainable) {
  if (table.rank() != 2)
    throw DimensionError("embed_rows: table must be rank-2");
  const int v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DegenerateInputError("embed_rows: empty id sequence");
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= v)
      throw VocabError("embed_rows: id " + std::to_string(ids[i]) +
                       " at position " + std::to_string(i) +
                       " outside vocabulary of size " + std::to_string(v));
  const int t = static_cast<int>(ids.size());
  std::vector<double> vals(static_cast<std::size_t>(t) * d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      vals[static_cast<std::size_t>(i) * d + j] = table.at(ids[i], j);
  Tensor out = Tensor::from({t, d}, std::move(vals), table.requires_grad());
  Tensor tv = table;
  auto idv = std::make_shared<std::vector<int>>(ids);
  return finish(tape, out, {table},
                [tv, out, idv, oov_id, table_trainable, d]() mutable {
                  const double* g = out.grad().data();
                  double* dt = tv.grad_data().data();
                  for (std::size_t i = 0; i < idv->size(); ++i) {
                    const int id = (*idv)[i];
                    // The OOV row trains even when the table is frozen.
                    if (!table_trainable && id != oov_id) continue;
                    for (int j = 0; j < d; ++j)
                      dt[static_cast<std::size_t>(id) * d + j] += g[i * d + j];
                  }
                });
}

namespace {

inline double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct LstmCache {
  // All T x h, in scan order (step s, not row index).
  std::vector<double> gi, gf, gg, go, c, tanh_c, h;
};

}  // namespace

Tensor lstm_seq(Tape& tape, const Tensor& x, const LstmParams& p,
                bool reverse) {
  if (x.rank() != 2)
    throw DimensionError("lstm_seq: input must be rank-2, got " +
                         shape_str(x.shape()));
  const int t_len = x.dim(0), d = x.dim(1);
  const int h = p.hidden();
  if (p.w_x.dim(0) != 4 * h || p.w_x.dim(1) != d || p.w_h.dim(0) != 4 * h ||
      p.w_h.dim(1) != h || p.bias.size() != 4 * h)
    throw DimensionError(
        "lstm_seq: parameter shapes inconsistent with input " +
        shape_str(x.shape()) + ": w_x " + shape_str(p.w_x.shape()) + ", w_h " +
        shape_str(p.w_h.shape()) + ", bias " + shape_str(p.bias.shape()));

  auto cache = std::make_shared<LstmCache>();
  const std::size_t th = static_cast<std::size_t>(t_len) * h;
  cache->gi.resize(th);
  cache->gf.resize(th);
  cache->gg.resize(th);
  cache->go.resize(th);
  cache->c.resize(th);
  cache->tanh_c.resize(th);
  cache->h.resize(th);

  const double* px = x.values().data();
  const double* wx = p.w_x.values().data();
  const double* wh = p.w_h.values().data();
  const double* bias = p.bias.values().data();

  std::vector<double> out_vals(th, 0.0);
  std::vector<double> h_prev(h, 0.0), c_prev(h, 0.0), acts(4 * h);
  for (int s = 0; s < t_len; ++s) {
    const int idx = reverse ? t_len - 1 - s : s;
    const double* xr = px + static_cast<std::size_t>(idx) * d;
    for (int g = 0; g < 4 * h; ++g) {
      double a = bias[g];
      const double* wxr = wx + static_cast<std::size_t>(g) * d;
      for (int k = 0; k < d; ++k) a += wxr[k] * xr[k];
      const double* whr = wh + static_cast<std::size_t>(g) * h;
      for (int k = 0; k < h; ++k) a += whr[k] * h_prev[k];
      acts[g] = a;
    }
    double* gi = cache->gi.data() + static_cast<std::size_t>(s) * h;
    double* gf = cache->gf.data() + static_cast<std::size_t>(s) * h;
    double* gg = cache->gg.data() + static_cast<std::size_t>(s) * h;
    double* go = cache->go.data() + static_cast<std::size_t>(s) * h;
    double* cc = cache->c.data() + static_cast<std::size_t>(s) * h;
    double* tc = cache->tanh_c.data() + static_cast<std::size_t>(s) * h;
    double* hh = cache->h.data() + static_cast<std::size_t>(s) * h;
    for (int k = 0; k < h; ++k) {
      gi[k] = sig(acts[k]);
      gf[k] = sig(acts[h + k]);
      gg[k] = std::tanh(acts[2 * h + k]);
      go[k] = sig(acts[3 * h + k]);
      cc[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
      tc[k] = std::tanh(cc[k]);
      hh[k] = go[k] * tc[k];
      out_vals[static_cast<std::size_t>(idx) * h + k] = hh[k];
      h_prev[k] = hh[k];
      c_prev[k] = cc[k];
    }
  }

  Tensor out = Tensor::from({t_len, h}, std::move(out_vals),
                            any_grad({x, p.w_x, p.w_h, p.bias}));
  Tensor xv = x, wxv = p.w_x, whv = p.w_h, bv = p.bias;
  return finish(
      tape, out, {x, p.w_x, p.w_h, p.bias},
      [xv, wxv, whv, bv, out, cache, t_len, d, h, reverse]() mutable {
        const double* g_out = out.grad().data();
        const double* px = xv.values().data();
        const double* wx = wxv.values().data();
        const double* wh = whv.values().data();
        const bool need_x = xv.requires_grad();
        double* dx = need_x ? xv.grad_data().data() : nullptr;
        double* dwx = wxv.requires_grad() ? wxv.grad_data().data() : nullptr;
        double* dwh = whv.requires_grad() ? whv.grad_data().data() : nullptr;
        double* db = bv.requires_grad() ? bv.grad_data().data() : nullptr;

        std::vector<double> dh_carry(h, 0.0), dc_carry(h, 0.0), da(4 * h);
        for (int s = t_len - 1; s >= 0; --s) {
          const int idx = reverse ? t_len - 1 - s : s;
          const double* gi = cache->gi.data() + static_cast<std::size_t>(s) * h;
          const double* gf = cache->gf.data() + static_cast<std::size_t>(s) * h;
          const double* gg = cache->gg.data() + static_cast<std::size_t>(s) * h;
          const double* go = cache->go.data() + static_cast<std::size_t>(s) * h;
          const double* tc =
              cache->tanh_c.data() + static_cast<std::size_t>(s) * h;
          const double* c_prev =
              s > 0 ? cache->c.data() + static_cast<std::size_t>(s - 1) * h
                    : nullptr;
          const double* h_prev =
              s > 0 ? cache->h.data() + static_cast<std::size_t>(s - 1) * h
                    : nullptr;
          for (int k = 0; k < h; ++k) {
            const double dh =
                g_out[static_cast<std::size_t>(idx) * h + k] + dh_carry[k];
            const double d_o = dh * tc[k];
            const double dc = dh * go[k] * (1.0 - tc[k] * tc[k]) + dc_carry[k];
            const double d_i = dc * gg[k];
            const double d_g = dc * gi[k];
            const double d_f = dc * (c_prev ? c_prev[k] : 0.0);
            da[k] = d_i * gi[k] * (1.0 - gi[k]);
            da[h + k] = d_f * gf[k] * (1.0 - gf[k]);
            da[2 * h + k] = d_g * (1.0 - gg[k] * gg[k]);
            da[3 * h + k] = d_o * go[k] * (1.0 - go[k]);
            dc_carry[k] = dc * gf[k];
          }
          const double* xr = px + static_cast<std::size_t>(idx) * d;
          std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
          for (int g = 0; g < 4 * h; ++g) {
            const double dav = da[g];
            if (db) db[g] += dav;
            if (dav == 0.0) continue;
            if (dwx) {
              double* r = dwx + static_cast<std::size_t>(g) * d;
              for (int k = 0; k < d; ++k) r[k] += dav * xr[k];
            }
            if (dwh && h_prev) {
              double* r = dwh + static_cast<std::size_t>(g) * h;
              for (int k = 0; k < h; ++k) r[k] += dav * h_prev[k];
            }
            if (need_x) {
              const double* wxr = wx + static_cast<std::size_t>(g) * d;
              double* dxr = dx + static_cast<std::size_t>(idx) * d;
              for (int k = 0; k < d; ++k) dxr[k] += dav * wxr[k];
            }
            const double* whr = wh + static_cast<std::size_t>(g) * h;
            for (int k = 0; k < h; ++k) dh_carry[k] += dav * whr[k];
          }
        }
      });
}

Tensor bilstm(Tape& tape, const Tensor& x, const LstmParams& fwd,
              const LstmParams& bwd) {
  if (fwd.hidden() != bwd.hidden())
    throw DimensionError("bilstm: direction hidden sizes differ, " +
                         std::to_string(fwd.hidden()) + " vs " +
                         std::to_string(bwd.hidden()));
  const Tensor left = lstm_seq(tape, x, fwd, false);
  const Tensor right = lstm_seq(tape, x, bwd, true);
  return concat(tape, {left, right});
}

}  // namespace slqa
