#pragma once

// Bias-corrected Adam. Moment buffers live beside the parameters they
// track and must match their shapes exactly.

#include <cmath>
#include <cstdint>
#include <vector>

#include "caslid/tensor.hpp"

namespace caslid {

template <typename S>
struct AdamConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <typename S>
struct AdamState {
  int64_t step = 0;
  std::vector<Tensor<S>> m;  // first moments, one per parameter
  std::vector<Tensor<S>> v;  // second moments

  static AdamState fresh(const std::vector<Shape>& shapes) {
    AdamState st;
    st.m.reserve(shapes.size());
    st.v.reserve(shapes.size());
    for (const auto& sh : shapes) {
      st.m.push_back(Tensor<S>::zeros(sh));
      st.v.push_back(Tensor<S>::zeros(sh));
    }
    return st;
  }
};

// One update over an aligned set of parameters. Returns the new parameter
// values; state is advanced in place (fresh moment tensors, incremented
// step counter).
template <typename S>
std::vector<Tensor<S>> adam_step(const std::vector<Tensor<S>>& params,
                                 const std::vector<Tensor<S>>& grads, AdamState<S>& state,
                                 const AdamConfig<S>& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: params/grads/state size mismatch");
  state.step += 1;
  const S bc1 = S(1) - std::pow(cfg.beta1, static_cast<S>(state.step));
  const S bc2 = S(1) - std::pow(cfg.beta2, static_cast<S>(state.step));

  std::vector<Tensor<S>> updated;
  updated.reserve(params.size());
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    const auto& g = grads[pi];
    if (p.shape() != g.shape() || p.shape() != state.m[pi].shape())
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(pi) + ", " +
                       shape_str(p.shape()) + " vs grad " + shape_str(g.shape()));
    std::vector<S> nm(p.numel()), nv(p.numel()), np(p.numel());
    for (int64_t i = 0; i < p.numel(); ++i) {
      nm[i] = cfg.beta1 * state.m[pi][i] + (S(1) - cfg.beta1) * g[i];
      nv[i] = cfg.beta2 * state.v[pi][i] + (S(1) - cfg.beta2) * g[i] * g[i];
      const S mhat = nm[i] / bc1;
      const S vhat = nv[i] / bc2;
      np[i] = p[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    state.m[pi] = Tensor<S>::from_vector(p.shape(), std::move(nm));
    state.v[pi] = Tensor<S>::from_vector(p.shape(), std::move(nv));
    auto newp = Tensor<S>::from_vector(p.shape(), std::move(np));
    check_finite("adam_step", newp);
    newp.set_requires_grad(p.requires_grad());
    updated.push_back(std::move(newp));
  }
  return updated;
}

}  // namespace caslid
