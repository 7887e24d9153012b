#pragma once

// Differentiable tensor primitives. Every op computes its value eagerly,
// checks finiteness, and — when an active tape wants gradients for any
// input — records a backward closure. Closures capture input/output tensors
// by value (cheap shared_ptr copies) and accumulate additively into tape
// slots, so a tensor consumed by k ops receives the sum of k adjoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "caslid/kernels.hpp"
#include "caslid/tape.hpp"
#include "caslid/tensor.hpp"

namespace caslid {

namespace detail {

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename S>
void require_rank2(const char* op, const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + shape_str(a.shape()));
}

// Rows/cols view: rank-1 tensors are treated as a single row.
template <typename S>
std::pair<int64_t, int64_t> rows_cols(const Tensor<S>& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError("expected rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---- elementwise binary -----------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  // Same-shape add, or broadcast of a rank-1 b across the last axis of a.
  const bool bias_bcast = (b.rank() == 1 && a.rank() == 2 && a.dim(1) == b.dim(0));
  if (!bias_bcast) detail::require_same_shape("add", a, b);

  std::vector<S> out(a.numel());
  if (bias_bcast) {
    const int64_t rows = a.dim(0), cols = a.dim(1);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] + b[c];
  } else {
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  }
  auto y = Tensor<S>::from_vector(a.shape(), std::move(out));
  check_finite("add", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(a) || tp->wants_grad(b))) {
    size_t as = tp->ensure_slot(a), bs = tp->ensure_slot(b), ys = tp->ensure_slot(y);
    const int64_t rows = bias_bcast ? a.dim(0) : 0, cols = bias_bcast ? a.dim(1) : 0;
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      auto& gb = t.grad_buf(bs);
      if (rows > 0) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) gb[c] += gy[r * cols + c];
      } else {
        for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<S> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  auto y = Tensor<S>::from_vector(a.shape(), std::move(out));
  check_finite("sub", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(a) || tp->wants_grad(b))) {
    size_t as = tp->ensure_slot(a), bs = tp->ensure_slot(b), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      auto& gb = t.grad_buf(bs);
      for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    });
  }
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<S> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  auto y = Tensor<S>::from_vector(a.shape(), std::move(out));
  check_finite("mul", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(a) || tp->wants_grad(b))) {
    size_t as = tp->ensure_slot(a), bs = tp->ensure_slot(b), ys = tp->ensure_slot(y);
    tp->record([=, av = a, bv = b](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[static_cast<int64_t>(i)];
      auto& gb = t.grad_buf(bs);
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[static_cast<int64_t>(i)];
    });
  }
  return y;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * c;
  auto y = Tensor<S>::from_vector(a.shape(), std::move(out));
  check_finite("scale", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(a)) {
    size_t as = tp->ensure_slot(a), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
    });
  }
  return y;
}

// ---- elementwise unary -------------------------------------------------

namespace detail {

// Shared scaffolding for unary ops: fwd computes y, dfn computes dy/dx from
// (x, y) so each op states only its local derivative.
template <typename S, typename Fwd, typename Dfn>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, Fwd fwd, Dfn dfn) {
  std::vector<S> out(x.numel());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = fwd(x[i]);
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite(name, y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=, xv = x, yv = y](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (size_t i = 0; i < gy.size(); ++i) {
        const auto fi = static_cast<int64_t>(i);
        gx[i] += gy[i] * dfn(xv[fi], yv[fi]);
      }
    });
  }
  return y;
}

}  // namespace detail

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "sigmoid", x, [](S v) { return kernels::sigmoid_scalar(v); },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "tanh", x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Tensor<S> swish(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "swish", x, [](S v) { return v * kernels::sigmoid_scalar(v); },
      [](S v, S) {
        const S s = kernels::sigmoid_scalar(v);
        return s + v * s * (S(1) - s);
      });
}

// Forward is the exact square root; the backward guards the 1/(2*sqrt)
// against division by zero. At a structural zero (e.g. a single-frame
// variance) the upstream d(x)/d(params) is itself exactly zero, so the
// guarded value never reaches a parameter gradient.
template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return detail::unary_op<S>(
      "sqrt", x, [](S v) { return std::sqrt(v); },
      [](S, S y) { return S(1) / (S(2) * std::max(y, S(1e-12))); });
}

// max(x, floor); gradient passes only where x > floor.
template <typename S>
Tensor<S> clamp_min(const Tensor<S>& x, S floor_v) {
  return detail::unary_op<S>(
      "clamp_min", x, [=](S v) { return v > floor_v ? v : floor_v; },
      [=](S v, S) { return v > floor_v ? S(1) : S(0); });
}

// ---- matrix ops ---------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank2("matmul", b);
  if (a.rank() != 1 && a.rank() != 2)
    throw ShapeError("matmul: lhs must be rank 1 or 2, got " + shape_str(a.shape()));
  const int64_t m = (a.rank() == 2) ? a.dim(0) : 1;
  const int64_t k = (a.rank() == 2) ? a.dim(1) : a.dim(0);
  const int64_t n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));

  std::vector<S> out(static_cast<size_t>(m * n));
  {
    auto av = a.values();
    auto bv = b.values();
    for (int64_t i = 0; i < m; ++i)
      kernels::vec_mat<S>({av.data() + i * k, static_cast<size_t>(k)}, bv, k, n, out.data() + i * n);
  }
  Shape yshape = (a.rank() == 1) ? Shape{n} : Shape{m, n};
  auto y = Tensor<S>::from_vector(std::move(yshape), std::move(out));
  check_finite("matmul", y);

  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(a) || tp->wants_grad(b))) {
    size_t as = tp->ensure_slot(a), bs = tp->ensure_slot(b), ys = tp->ensure_slot(y);
    tp->record([=, av = a, bv = b](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      // dA = dY @ B^T
      auto& ga = t.grad_buf(as);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          S acc = S(0);
          for (int64_t j = 0; j < n; ++j) acc += gy[i * n + j] * bv[kk * n + j];
          ga[i * k + kk] += acc;
        }
      // dB = A^T @ dY
      auto& gb = t.grad_buf(bs);
      for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t i = 0; i < m; ++i) {
          const S aval = av[i * k + kk];
          for (int64_t j = 0; j < n; ++j) gb[kk * n + j] += aval * gy[i * n + j];
        }
    });
  }
  return y;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  detail::require_rank2("transpose", a);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<S> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  auto y = Tensor<S>::from_vector({n, m}, std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(a)) {
    size_t as = tp->ensure_slot(a), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
    });
  }
  return y;
}

// Concatenate along the last axis. All inputs must share the leading extent.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int64_t rank = parts[0].rank();
  int64_t rows = 1, total_cols = 0;
  for (const auto& p : parts) {
    auto [r, c] = detail::rows_cols(p);
    if (p.rank() != rank || (rank == 2 && r != parts[0].dim(0)))
      throw ShapeError("concat: incompatible inputs " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    rows = r;
    total_cols += c;
  }
  std::vector<S> out(static_cast<size_t>(rows * total_cols));
  {
    int64_t col0 = 0;
    for (const auto& p : parts) {
      auto [r, c] = detail::rows_cols(p);
      (void)r;
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < c; ++j) out[i * total_cols + col0 + j] = p[i * c + j];
      col0 += c;
    }
  }
  Shape yshape = (rank == 1) ? Shape{total_cols} : Shape{rows, total_cols};
  auto y = Tensor<S>::from_vector(std::move(yshape), std::move(out));

  auto* tp = Tape<S>::active();
  bool wants = false;
  if (tp)
    for (const auto& p : parts) wants = wants || tp->wants_grad(p);
  if (tp && wants) {
    std::vector<size_t> slots;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
      slots.push_back(tp->ensure_slot(p));
      widths.push_back(detail::rows_cols(p).second);
    }
    size_t ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      int64_t col0 = 0;
      for (size_t pi = 0; pi < slots.size(); ++pi) {
        auto& gp = t.grad_buf(slots[pi]);
        const int64_t c = widths[pi];
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < c; ++j) gp[i * c + j] += gy[i * total_cols + col0 + j];
        col0 += c;
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b) {
  return concat<S>(std::vector<Tensor<S>>{a, b});
}

// Stack rank-1 rows (or rank-2 chunks) along axis 0.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  int64_t cols = detail::rows_cols(parts[0]).second;
  int64_t rows = 0;
  for (const auto& p : parts) {
    auto [r, c] = detail::rows_cols(p);
    if (c != cols) throw ShapeError("concat_rows: column mismatch");
    rows += r;
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(rows * cols));
  for (const auto& p : parts) out.insert(out.end(), p.vec().begin(), p.vec().end());
  auto y = Tensor<S>::from_vector({rows, cols}, std::move(out));

  auto* tp = Tape<S>::active();
  bool wants = false;
  if (tp)
    for (const auto& p : parts) wants = wants || tp->wants_grad(p);
  if (tp && wants) {
    std::vector<size_t> slots;
    std::vector<int64_t> sizes;
    for (const auto& p : parts) {
      slots.push_back(tp->ensure_slot(p));
      sizes.push_back(p.numel());
    }
    size_t ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      size_t off = 0;
      for (size_t pi = 0; pi < slots.size(); ++pi) {
        auto& gp = t.grad_buf(slots[pi]);
        for (int64_t i = 0; i < sizes[pi]; ++i) gp[i] += gy[off + i];
        off += static_cast<size_t>(sizes[pi]);
      }
    });
  }
  return y;
}

namespace detail {

template <typename S>
Tensor<S> slice_impl(const char* name, const Tensor<S>& x, int64_t axis, int64_t start, int64_t len) {
  require_rank2(name, x);
  const int64_t rows = x.dim(0), cols = x.dim(1);
  const int64_t extent = (axis == 0) ? rows : cols;
  if (start < 0 || len <= 0 || start + len > extent)
    throw ShapeError(detail::strfmt("%s: range [%lld, %lld) out of bounds for extent %lld", name,
                                    static_cast<long long>(start), static_cast<long long>(start + len),
                                    static_cast<long long>(extent)));
  const int64_t orows = (axis == 0) ? len : rows;
  const int64_t ocols = (axis == 0) ? cols : len;
  std::vector<S> out(static_cast<size_t>(orows * ocols));
  for (int64_t i = 0; i < orows; ++i)
    for (int64_t j = 0; j < ocols; ++j) {
      const int64_t si = (axis == 0) ? start + i : i;
      const int64_t sj = (axis == 0) ? j : start + j;
      out[i * ocols + j] = x[si * cols + sj];
    }
  auto y = Tensor<S>::from_vector({orows, ocols}, std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t i = 0; i < orows; ++i)
        for (int64_t j = 0; j < ocols; ++j) {
          const int64_t si = (axis == 0) ? start + i : i;
          const int64_t sj = (axis == 0) ? j : start + j;
          gx[si * cols + sj] += gy[i * ocols + j];
        }
    });
  }
  return y;
}

}  // namespace detail

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int64_t start, int64_t len) {
  return detail::slice_impl("slice_rows", x, 0, start, len);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int64_t start, int64_t len) {
  return detail::slice_impl("slice_cols", x, 1, start, len);
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int64_t axis, int64_t start, int64_t len) {
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  return detail::slice_impl("slice", x, axis, start, len);
}

// Row gather: out[i] = x[idx[i]]. Rows may repeat (used for tap shifts).
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int64_t>& idx) {
  detail::require_rank2("gather_rows", x);
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(idx.size() * static_cast<size_t>(cols));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= rows)
      throw ShapeError(detail::strfmt("gather_rows: index %lld out of range [0, %lld)",
                                      static_cast<long long>(idx[i]), static_cast<long long>(rows)));
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = x[idx[i] * cols + j];
  }
  auto y = Tensor<S>::from_vector({static_cast<int64_t>(idx.size()), cols}, std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int64_t j = 0; j < cols; ++j) gx[idx[i] * cols + j] += gy[i * cols + j];
    });
  }
  return y;
}

// Per-row column pick: out[i] = x[i, idx[i]].
template <typename S>
Tensor<S> gather_last(const Tensor<S>& x, const std::vector<int64_t>& idx) {
  detail::require_rank2("gather_last", x);
  const int64_t rows = x.dim(0), cols = x.dim(1);
  if (static_cast<int64_t>(idx.size()) != rows)
    throw ShapeError("gather_last: index count must equal row count");
  std::vector<S> out(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) {
    if (idx[i] < 0 || idx[i] >= cols)
      throw ValueError(detail::strfmt("gather_last: index %lld out of range [0, %lld)",
                                      static_cast<long long>(idx[i]), static_cast<long long>(cols)));
    out[i] = x.at(i, idx[i]);
  }
  auto y = Tensor<S>::from_vector({rows}, std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t i = 0; i < rows; ++i) gx[i * cols + idx[i]] += gy[i];
    });
  }
  return y;
}

// out[(i*U + u), :] = a[i, :] + b[u, :]. Used to combine per-frame and
// per-token projections into the joint grid.
template <typename S>
Tensor<S> outer_add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank2("outer_add", a);
  detail::require_rank2("outer_add", b);
  if (a.dim(1) != b.dim(1)) throw ShapeError("outer_add: inner dims differ");
  const int64_t ta = a.dim(0), ub = b.dim(0), d = a.dim(1);
  std::vector<S> out(static_cast<size_t>(ta * ub * d));
  for (int64_t i = 0; i < ta; ++i)
    for (int64_t u = 0; u < ub; ++u)
      for (int64_t j = 0; j < d; ++j) out[(i * ub + u) * d + j] = a[i * d + j] + b[u * d + j];
  auto y = Tensor<S>::from_vector({ta * ub, d}, std::move(out));
  check_finite("outer_add", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(a) || tp->wants_grad(b))) {
    size_t as = tp->ensure_slot(a), bs = tp->ensure_slot(b), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& ga = t.grad_buf(as);
      auto& gb = t.grad_buf(bs);
      for (int64_t i = 0; i < ta; ++i)
        for (int64_t u = 0; u < ub; ++u)
          for (int64_t j = 0; j < d; ++j) {
            const S g = gy[(i * ub + u) * d + j];
            ga[i * d + j] += g;
            gb[u * d + j] += g;
          }
    });
  }
  return y;
}

// out[i, :] = x[i, :] * s[i].
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& s) {
  detail::require_rank2("scale_rows", x);
  if (s.rank() != 1 || s.dim(0) != x.dim(0))
    throw ShapeError("scale_rows: scale must be rank-1 of length rows");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(x.numel());
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = x[i * cols + j] * s[i];
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("scale_rows", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(x) || tp->wants_grad(s))) {
    size_t xs = tp->ensure_slot(x), ss = tp->ensure_slot(s), ys = tp->ensure_slot(y);
    tp->record([=, xv = x, sv = s](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      auto& gs = t.grad_buf(ss);
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) {
          gx[i * cols + j] += gy[i * cols + j] * sv[i];
          gs[i] += gy[i * cols + j] * xv[i * cols + j];
        }
    });
  }
  return y;
}

// Running prefix sums down the rows: out[t] = sum_{t' <= t} x[t'].
template <typename S>
Tensor<S> cumsum_rows(const Tensor<S>& x) {
  detail::require_rank2("cumsum_rows", x);
  const int64_t rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(x.numel());
  for (int64_t j = 0; j < cols; ++j) out[j] = x[j];
  for (int64_t i = 1; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = out[(i - 1) * cols + j] + x[i * cols + j];
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("cumsum_rows", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      std::vector<S> suffix(static_cast<size_t>(cols), S(0));
      for (int64_t i = rows - 1; i >= 0; --i)
        for (int64_t j = 0; j < cols; ++j) {
          suffix[j] += gy[i * cols + j];
          gx[i * cols + j] += suffix[j];
        }
    });
  }
  return y;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  auto y = Tensor<S>::scalar(acc);
  check_finite("sum", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      const S g = t.grad_view(ys)[0];
      auto& gx = t.grad_buf(xs);
      for (S& v : gx) v += g;
    });
  }
  return y;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

// ---- normalizing ops (last axis) ---------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  auto [rows, cols] = detail::rows_cols(x);
  std::vector<S> out(x.vec());
  for (int64_t i = 0; i < rows; ++i) kernels::softmax_row(out.data() + i * cols, cols);
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("softmax", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=, yv = y](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t i = 0; i < rows; ++i) {
        S dotv = S(0);
        for (int64_t j = 0; j < cols; ++j) dotv += gy[i * cols + j] * yv[i * cols + j];
        for (int64_t j = 0; j < cols; ++j)
          gx[i * cols + j] += yv[i * cols + j] * (gy[i * cols + j] - dotv);
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  auto [rows, cols] = detail::rows_cols(x);
  std::vector<S> out(x.numel());
  for (int64_t i = 0; i < rows; ++i) {
    const S lse = kernels::logsumexp_row(x.values().data() + i * cols, cols);
    for (int64_t j = 0; j < cols; ++j) out[i * cols + j] = x[i * cols + j] - lse;
  }
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("log_softmax", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=, yv = y](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t i = 0; i < rows; ++i) {
        S gsum = S(0);
        for (int64_t j = 0; j < cols; ++j) gsum += gy[i * cols + j];
        for (int64_t j = 0; j < cols; ++j)
          gx[i * cols + j] += gy[i * cols + j] - std::exp(yv[i * cols + j]) * gsum;
      }
    });
  }
  return y;
}

// Log-sum-exp over the last axis: [R x C] -> [R] (rank-1 input -> [1]).
template <typename S>
Tensor<S> logsumexp(const Tensor<S>& x) {
  auto [rows, cols] = detail::rows_cols(x);
  std::vector<S> out(static_cast<size_t>(rows));
  for (int64_t i = 0; i < rows; ++i) out[i] = kernels::logsumexp_row(x.values().data() + i * cols, cols);
  auto y = Tensor<S>::from_vector({rows}, std::move(out));
  check_finite("logsumexp", y);
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=, xv = x, yv = y](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
          gx[i * cols + j] += gy[i] * std::exp(xv[i * cols + j] - yv[i]);
    });
  }
  return y;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-6)) {
  auto [rows, cols] = detail::rows_cols(x);
  if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
    throw ShapeError("layer_norm: gain/bias must be rank-1 of width " + std::to_string(cols));
  std::vector<S> out(x.numel());
  for (int64_t i = 0; i < rows; ++i)
    kernels::layer_norm_row(x.values().data() + i * cols, gain.values(), bias.values(), eps, cols,
                            out.data() + i * cols);
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("layer_norm", y);

  auto* tp = Tape<S>::active();
  if (tp && (tp->wants_grad(x) || tp->wants_grad(gain) || tp->wants_grad(bias))) {
    size_t xs = tp->ensure_slot(x), gs = tp->ensure_slot(gain), bs = tp->ensure_slot(bias),
           ys = tp->ensure_slot(y);
    tp->record([=, xv = x, gv = gain](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      auto& gg = t.grad_buf(gs);
      auto& gb = t.grad_buf(bs);
      const S dn = static_cast<S>(cols);
      for (int64_t i = 0; i < rows; ++i) {
        S mean = S(0);
        for (int64_t j = 0; j < cols; ++j) mean += xv[i * cols + j];
        mean /= dn;
        S var = S(0);
        for (int64_t j = 0; j < cols; ++j) {
          const S d = xv[i * cols + j] - mean;
          var += d * d;
        }
        var /= dn;
        const S rsig = S(1) / std::sqrt(var + eps);
        // xhat_j = (x_j - mean) * rsig
        S sum_gyg = S(0), sum_gyg_xhat = S(0);
        for (int64_t j = 0; j < cols; ++j) {
          const S xhat = (xv[i * cols + j] - mean) * rsig;
          const S gyg = gy[i * cols + j] * gv[j];
          sum_gyg += gyg;
          sum_gyg_xhat += gyg * xhat;
          gg[j] += gy[i * cols + j] * xhat;
          gb[j] += gy[i * cols + j];
        }
        for (int64_t j = 0; j < cols; ++j) {
          const S xhat = (xv[i * cols + j] - mean) * rsig;
          const S gyg = gy[i * cols + j] * gv[j];
          gx[i * cols + j] += rsig * (gyg - sum_gyg / dn - xhat * sum_gyg_xhat / dn);
        }
      }
    });
  }
  return y;
}

// ---- sequence ops -------------------------------------------------------

// Causal depthwise conv along rows: out[t,c] = sum_j w[j,c] * x[t-K+1+j, c],
// left zero-padded. Frames before the sequence start are skipped so the
// streaming path (which also skips them) is bit-identical.
template <typename S>
Tensor<S> depthwise_conv1d(const Tensor<S>& x, const Tensor<S>& w) {
  detail::require_rank2("depthwise_conv1d", x);
  detail::require_rank2("depthwise_conv1d", w);
  const int64_t rows = x.dim(0), cols = x.dim(1), kk = w.dim(0);
  if (w.dim(1) != cols)
    throw ShapeError("depthwise_conv1d: weight width " + shape_str(w.shape()) + " vs input " +
                     shape_str(x.shape()));
  std::vector<S> out(x.numel());
  for (int64_t t = 0; t < rows; ++t)
    for (int64_t c = 0; c < cols; ++c) {
      S acc = S(0);
      for (int64_t j = 0; j < kk; ++j) {
        const int64_t src = t - (kk - 1) + j;
        if (src >= 0) acc += w[j * cols + c] * x[src * cols + c];
      }
      out[t * cols + c] = acc;
    }
  auto y = Tensor<S>::from_vector(x.shape(), std::move(out));
  check_finite("depthwise_conv1d", y);
  if (auto* tp = Tape<S>::active(); tp && (tp->wants_grad(x) || tp->wants_grad(w))) {
    size_t xs = tp->ensure_slot(x), ws = tp->ensure_slot(w), ys = tp->ensure_slot(y);
    tp->record([=, xv = x, wv = w](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      auto& gw = t.grad_buf(ws);
      for (int64_t tt = 0; tt < rows; ++tt)
        for (int64_t c = 0; c < cols; ++c) {
          const S g = gy[tt * cols + c];
          for (int64_t j = 0; j < kk; ++j) {
            const int64_t src = tt - (kk - 1) + j;
            if (src >= 0) {
              gx[src * cols + c] += g * wv[j * cols + c];
              gw[j * cols + c] += g * xv[src * cols + c];
            }
          }
        }
    });
  }
  return y;
}

// Rows of `table` selected by integer ids.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int64_t>& ids) {
  detail::require_rank2("embedding_lookup", table);
  const int64_t vocab = table.dim(0);
  for (int64_t id : ids)
    if (id < 0 || id >= vocab)
      throw ValueError(detail::strfmt("embedding_lookup: id %lld out of range [0, %lld)",
                                      static_cast<long long>(id), static_cast<long long>(vocab)));
  return gather_rows(table, ids);
}

// Sliding-window frame stacking: window n, hop `stride`, incomplete tail
// dropped (pad_tail=false) or zero-padded to a full window (pad_tail=true).
template <typename S>
Tensor<S> stack_frames(const Tensor<S>& x, int64_t n, int64_t stride, bool pad_tail = false) {
  detail::require_rank2("stack_frames", x);
  if (n <= 0 || stride <= 0) throw ShapeError("stack_frames: n and stride must be positive");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  int64_t windows;
  if (pad_tail) {
    windows = (rows + stride - 1) / stride;
    // every window must start inside the sequence
    while (windows > 1 && (windows - 1) * stride >= rows) --windows;
  } else {
    windows = (rows >= n) ? (rows - n) / stride + 1 : 0;
  }
  if (windows <= 0)
    throw ShapeError(detail::strfmt("stack_frames: %lld frames too few for window %lld",
                                    static_cast<long long>(rows), static_cast<long long>(n)));
  std::vector<S> out(static_cast<size_t>(windows * n * cols), S(0));
  for (int64_t wdx = 0; wdx < windows; ++wdx)
    for (int64_t j = 0; j < n; ++j) {
      const int64_t src = wdx * stride + j;
      if (src >= rows) break;  // zero tail
      for (int64_t c = 0; c < cols; ++c) out[(wdx * n + j) * cols + c] = x[src * cols + c];
    }
  auto y = Tensor<S>::from_vector({windows, n * cols}, std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (int64_t wdx = 0; wdx < windows; ++wdx)
        for (int64_t j = 0; j < n; ++j) {
          const int64_t src = wdx * stride + j;
          if (src >= rows) break;
          for (int64_t c = 0; c < cols; ++c) gx[src * cols + c] += gy[(wdx * n + j) * cols + c];
        }
    });
  }
  return y;
}

// Identity value; the reverse pass sends zero adjoint into x.
template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& x) {
  return x.clone();  // fresh identity, never recorded
}

// Same elements, new shape; the adjoint passes straight through.
template <typename S>
Tensor<S> reshape_copy(const Tensor<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  auto y = Tensor<S>::from_vector(std::move(new_shape), std::vector<S>(x.vec()));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(x)) {
    size_t xs = tp->ensure_slot(x), ys = tp->ensure_slot(y);
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gx = t.grad_buf(xs);
      for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return y;
}

// ---- argmax / one-hot ---------------------------------------------------

// Lowest index wins ties (deterministic).
template <typename S>
int64_t argmax_index(std::span<const S> row) {
  int64_t best = 0;
  for (size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = static_cast<int64_t>(i);
  return best;
}

template <typename S>
Tensor<S> one_hot(int64_t index, int64_t k) {
  if (index < 0 || index >= k) throw ValueError("one_hot: index out of range");
  auto t = Tensor<S>::zeros({k});
  t.mutable_vec()[static_cast<size_t>(index)] = S(1);
  return t;
}

// Row-wise argmax one-hot with a straight-through gradient: forward emits
// the one-hot, backward passes the adjoint to z unchanged. An optional
// many-to-one index map projects locales to clusters; the adjoint of a
// cluster column is routed back to every source column.
template <typename S>
Tensor<S> argmax_one_hot_st(const Tensor<S>& z, const std::vector<int64_t>* cluster_map = nullptr,
                            int64_t out_classes = -1) {
  auto [rows, cols] = detail::rows_cols(z);
  int64_t ocols = cols;
  if (cluster_map) {
    if (static_cast<int64_t>(cluster_map->size()) != cols)
      throw ShapeError("argmax_one_hot_st: cluster map size mismatch");
    ocols = out_classes;
    for (int64_t m : *cluster_map)
      if (m < 0 || m >= ocols) throw ValueError("argmax_one_hot_st: cluster index out of range");
  }
  std::vector<S> out(static_cast<size_t>(rows * ocols), S(0));
  for (int64_t i = 0; i < rows; ++i) {
    int64_t a = argmax_index<S>({z.values().data() + i * cols, static_cast<size_t>(cols)});
    if (cluster_map) a = (*cluster_map)[static_cast<size_t>(a)];
    out[i * ocols + a] = S(1);
  }
  Shape yshape = (z.rank() == 1) ? Shape{ocols} : Shape{rows, ocols};
  auto y = Tensor<S>::from_vector(std::move(yshape), std::move(out));
  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(z)) {
    size_t zs = tp->ensure_slot(z), ys = tp->ensure_slot(y);
    auto map = cluster_map ? *cluster_map : std::vector<int64_t>{};
    tp->record([=](Tape<S>& t) {
      if (!t.has_grad(ys)) return;
      auto gy = t.grad_view(ys);
      auto& gz = t.grad_buf(zs);
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) {
          const int64_t oj = map.empty() ? j : map[static_cast<size_t>(j)];
          gz[i * cols + j] += gy[i * ocols + oj];
        }
    });
  }
  return y;
}

}  // namespace caslid
