#pragma once

// Raw row-level kernels shared by the batch ops and the streaming paths.
// Both call exactly these routines so a streamed utterance reproduces the
// offline activations bit for bit: every accumulation runs in the same
// order (k ascending, zero-init, bias added as a separate pass).

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace caslid::kernels {

// out[j] = sum_k x[k] * w[k*n + j]; out is zero-initialized here.
template <typename S>
void vec_mat(std::span<const S> x, std::span<const S> w, int64_t k_dim, int64_t n_dim, S* out) {
  for (int64_t j = 0; j < n_dim; ++j) out[j] = S(0);
  for (int64_t k = 0; k < k_dim; ++k) {
    const S xv = x[static_cast<size_t>(k)];
    const S* wrow = w.data() + k * n_dim;
    for (int64_t j = 0; j < n_dim; ++j) out[j] += xv * wrow[j];
  }
}

template <typename S>
void add_inplace(S* out, std::span<const S> b, int64_t n) {
  for (int64_t j = 0; j < n; ++j) out[j] += b[static_cast<size_t>(j)];
}

template <typename S>
S dot(const S* a, const S* b, int64_t n) {
  S acc = S(0);
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// In-place softmax over a contiguous row.
template <typename S>
void softmax_row(S* x, int64_t n) {
  S m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  S sum = S(0);
  for (int64_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    sum += x[i];
  }
  for (int64_t i = 0; i < n; ++i) x[i] /= sum;
}

template <typename S>
S logsumexp_row(const S* x, int64_t n) {
  S m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  S sum = S(0);
  for (int64_t i = 0; i < n; ++i) sum += std::exp(x[i] - m);
  return m + std::log(sum);
}

// y = (x - mean) / sqrt(var + eps) * gain + bias, population variance.
template <typename S>
void layer_norm_row(const S* x, std::span<const S> gain, std::span<const S> bias, S eps, int64_t n,
                    S* y) {
  S mean = S(0);
  for (int64_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<S>(n);
  S var = S(0);
  for (int64_t i = 0; i < n; ++i) {
    const S d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<S>(n);
  const S rsig = S(1) / std::sqrt(var + eps);
  for (int64_t i = 0; i < n; ++i)
    y[i] = (x[i] - mean) * rsig * gain[static_cast<size_t>(i)] + bias[static_cast<size_t>(i)];
}

template <typename S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace caslid::kernels
