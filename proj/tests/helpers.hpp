#pragma once

// Test-only utilities: finite differences (the gradient oracle) and random
// input generators.

#include <cmath>
#include <functional>
#include <vector>

#include "caslid/rng.hpp"
#include "caslid/tape.hpp"
#include "caslid/tensor.hpp"

namespace test_util {

using caslid::Rng;
using caslid::Shape;
using caslid::Tensor;

// Central finite difference d f / d x[i] for a scalar-valued f.
template <typename S>
std::vector<S> finite_diff(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x,
                           S step) {
  std::vector<S> g(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) {
    auto xp = x.clone();
    xp.mutable_vec()[static_cast<size_t>(i)] += step;
    auto xm = x.clone();
    xm.mutable_vec()[static_cast<size_t>(i)] -= step;
    g[static_cast<size_t>(i)] = (f(xp) - f(xm)) / (S(2) * step);
  }
  return g;
}

// Relative error with an absolute floor so near-zero pairs compare sanely.
template <typename S>
S rel_error(S got, S want, S floor_v = S(1e-6)) {
  const S denom = std::max({std::abs(got), std::abs(want), floor_v});
  return std::abs(got - want) / denom;
}

// Max relative error between an analytic gradient and finite differences.
template <typename S>
S max_grad_rel_error(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x,
                     const std::vector<S>& analytic, S step = S(1e-5)) {
  auto fd = finite_diff(f, x, step);
  S worst = S(0);
  for (size_t i = 0; i < fd.size(); ++i)
    worst = std::max(worst, rel_error(analytic[i], fd[i], S(1e-4)));
  return worst;
}

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.mutable_vec()) v = static_cast<S>(rng.normal() * scale);
  return t;
}

// Random tensor whose entries stay away from zero (for relu-like kinks).
template <typename S>
Tensor<S> random_tensor_off_kink(Shape shape, Rng& rng, double margin = 0.05) {
  auto t = random_tensor<S>(std::move(shape), rng);
  for (auto& v : t.mutable_vec()) {
    if (std::abs(v) < margin) v = v < 0 ? static_cast<S>(-margin) : static_cast<S>(margin);
  }
  return t;
}

}  // namespace test_util
