#pragma once

// Frame-synchronous language identification. Statistics pooling keeps
// running sums theta(h) and theta(h^2); mean and standard deviation at any
// prefix come straight from those sums:
//
//   mu_t      = theta(h_{1:t}) / t
//   sigma^2_t = (theta(h^2_{1:t}) - 2 mu_t theta(h_{1:t}) + t mu_t^2) / t
//
// The sum-of-squares form is implemented exactly as written (clamped at
// zero); its cancellation behaviour is covered by the equivalence tests
// against a two-pass oracle.
//
// Two execution paths share the head parameters: a differentiable one over
// whole sequences (prefix sums on the tape) for training, and a row path
// for streaming/evaluation that consumes a PoolState one frame at a time.

#include <cstdint>
#include <string>
#include <vector>

#include "caslid/config.hpp"
#include "caslid/nn.hpp"
#include "caslid/ops.hpp"

namespace caslid {

// Accumulators are double regardless of the compute type: the sum-of-squares
// variance cancels catastrophically at small prefixes (two near-equal frames
// already cost ~eps * h^2 / sigma in fp32), and wide sums keep the streamed
// stats within 1e-5 of a two-pass reference without changing the formula.
template <typename S>
struct PoolState {
  std::vector<double> sum;     // theta(h)
  std::vector<double> sq_sum;  // theta(h^2)
  int64_t count = 0;

  explicit PoolState(int64_t dim = 0) : sum(static_cast<size_t>(dim), 0.0),
                                        sq_sum(static_cast<size_t>(dim), 0.0) {}
  int64_t dim() const { return static_cast<int64_t>(sum.size()); }
};

template <typename S>
void pool_update(PoolState<S>& state, std::span<const S> h) {
  if (static_cast<int64_t>(h.size()) != state.dim())
    throw ShapeError(detail::strfmt("pool_update: frame dim %zu does not match state dim %lld",
                                    h.size(), static_cast<long long>(state.dim())));
  for (size_t i = 0; i < h.size(); ++i) {
    const double x = static_cast<double>(h[i]);
    state.sum[i] += x;
    state.sq_sum[i] += x * x;
  }
  state.count += 1;
}

// [mu_t ; sigma_t], the vector fed to the FC stack.
template <typename S>
std::vector<S> pool_stats(const PoolState<S>& state) {
  if (state.count == 0) throw ValueError("pool_stats: no frames pooled yet");
  const double t = static_cast<double>(state.count);
  const int64_t d = state.dim();
  std::vector<S> out(static_cast<size_t>(2 * d));
  for (int64_t i = 0; i < d; ++i) {
    const double mu = state.sum[i] / t;
    const double var = (state.sq_sum[i] - 2.0 * mu * state.sum[i] + t * mu * mu) / t;
    out[static_cast<size_t>(i)] = static_cast<S>(mu);
    out[static_cast<size_t>(d + i)] = static_cast<S>(std::sqrt(var > 0.0 ? var : 0.0));
  }
  return out;
}

// Raw (pre-clamp) variance, exposed so tests can assert the clamp only ever
// absorbs floating-point noise.
template <typename S>
std::vector<double> pool_variance_raw(const PoolState<S>& state) {
  if (state.count == 0) throw ValueError("pool_variance_raw: no frames pooled yet");
  const double t = static_cast<double>(state.count);
  std::vector<double> out(static_cast<size_t>(state.dim()));
  for (int64_t i = 0; i < state.dim(); ++i) {
    const double mu = state.sum[i] / t;
    out[static_cast<size_t>(i)] = (state.sq_sum[i] - 2.0 * mu * state.sum[i] + t * mu * mu) / t;
  }
  return out;
}

// Differentiable prefix-pooling over a whole sequence: row t of the result
// is [mu_t ; sigma_t] of rows 0..t.
template <typename S>
Tensor<S> pooled_stats_rows(const Tensor<S>& h) {
  const int64_t frames = h.dim(0);
  auto theta = cumsum_rows(h);
  auto theta2 = cumsum_rows(mul(h, h));
  std::vector<S> inv_t(static_cast<size_t>(frames)), t_vec(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) {
    t_vec[static_cast<size_t>(t)] = static_cast<S>(t + 1);
    inv_t[static_cast<size_t>(t)] = S(1) / static_cast<S>(t + 1);
  }
  auto inv = Tensor<S>::from_vector({frames}, inv_t);
  auto tt = Tensor<S>::from_vector({frames}, t_vec);
  auto mu = scale_rows(theta, inv);
  // sigma^2 = (theta2 - 2 mu theta + t mu^2) / t
  auto var = scale_rows(add(sub(theta2, scale(mul(mu, theta), S(2))), scale_rows(mul(mu, mu), tt)),
                        inv);
  auto sigma = caslid::sqrt(clamp_min(var, S(0)));
  return concat(mu, sigma);
}

// Two FC layers and a softmax output layer over the pooled statistics
// (or the raw frame when pooling is disabled).
template <typename S>
class LidHead {
 public:
  LidHead() = default;
  LidHead(ParamStore<S>& ps, const std::string& name, int64_t input_dim, int64_t hidden,
          int64_t num_locales, bool pooling)
      : pooling_(pooling),
        fc1_(ps, name + ".fc1", pooling ? 2 * input_dim : input_dim, hidden),
        fc2_(ps, name + ".fc2", hidden, hidden),
        out_(ps, name + ".out", hidden, num_locales) {}

  bool pooling() const { return pooling_; }
  int64_t num_locales() const { return out_.out_dim; }

  // Training path: logits for every prefix, differentiable end to end.
  Tensor<S> logits_rows(const Tensor<S>& lid_input) const {
    auto stats = pooling_ ? pooled_stats_rows(lid_input) : lid_input;
    return out_(swish(fc2_(swish(fc1_(stats)))));
  }

  // Streaming/eval path: update the pool with frame t and produce z_t.
  std::vector<S> z_row(PoolState<S>& pool, std::span<const S> h_t) const {
    std::vector<S> stats;
    if (pooling_) {
      pool_update(pool, h_t);
      stats = pool_stats(pool);
    } else {
      stats.assign(h_t.begin(), h_t.end());
    }
    std::vector<S> a(static_cast<size_t>(fc1_.out_dim));
    fc1_.forward_row({stats.data(), stats.size()}, a.data());
    for (auto& x : a) x = x * kernels::sigmoid_scalar(x);
    std::vector<S> b(static_cast<size_t>(fc2_.out_dim));
    fc2_.forward_row({a.data(), a.size()}, b.data());
    for (auto& x : b) x = x * kernels::sigmoid_scalar(x);
    std::vector<S> z(static_cast<size_t>(out_.out_dim));
    out_.forward_row({b.data(), b.size()}, z.data());
    kernels::softmax_row(z.data(), out_.out_dim);
    return z;
  }

 private:
  bool pooling_ = true;
  Linear<S> fc1_, fc2_, out_;
};

// z_t -> the feature the rest of the model consumes, per Table-3 mode.
//  Distribution: z itself (gradient flows);
//  Argmax:       one-hot with a straight-through gradient;
//  StopGrad:     one-hot, zero gradient into the predictor;
//  Cluster:      cluster-space one-hot, straight-through through the map.
template <typename S>
Tensor<S> lid_feature(const Tensor<S>& z, LidMode mode, const std::vector<int64_t>& cluster_map,
                      int64_t num_clusters) {
  switch (mode) {
    case LidMode::Distribution:
      return z;
    case LidMode::Argmax:
      return argmax_one_hot_st(z);
    case LidMode::StopGrad:
      return argmax_one_hot_st(stop_gradient(z));
    case LidMode::Cluster:
      return argmax_one_hot_st(z, &cluster_map, num_clusters);
  }
  throw ValueError("lid_feature: unknown mode");
}

// Row variant for the streaming/eval path.
template <typename S>
std::vector<S> lid_feature_row(const std::vector<S>& z, LidMode mode,
                               const std::vector<int64_t>& cluster_map, int64_t num_clusters) {
  if (mode == LidMode::Distribution) return z;
  const int64_t a = argmax_index<S>({z.data(), z.size()});
  if (mode == LidMode::Cluster) {
    std::vector<S> out(static_cast<size_t>(num_clusters), S(0));
    out[static_cast<size_t>(cluster_map[static_cast<size_t>(a)])] = S(1);
    return out;
  }
  std::vector<S> out(z.size(), S(0));
  out[static_cast<size_t>(a)] = S(1);
  return out;
}

// Per-frame cross-entropy against a one-hot label: -ln z[label].
template <typename S>
S lid_loss(std::span<const S> z, int64_t label) {
  if (label < 0 || label >= static_cast<int64_t>(z.size()))
    throw ValueError("lid_loss: label index out of range");
  return -std::log(z[static_cast<size_t>(label)]);
}

// Frame-averaged cross-entropy from raw logits (numerically stable form of
// the same quantity), differentiable.
template <typename S>
Tensor<S> lid_loss_mean_from_logits(const Tensor<S>& logits, int64_t label) {
  if (label < 0 || label >= logits.dim(1)) throw ValueError("lid_loss: label index out of range");
  const std::vector<int64_t> idx(static_cast<size_t>(logits.dim(0)), label);
  return scale(mean(gather_last(log_softmax(logits), idx)), S(-1));
}

}  // namespace caslid
