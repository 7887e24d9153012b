#pragma once

// Small parameterized building blocks shared by the encoders, decoders and
// the LID head. Each registers its parameters with a ParamStore and, in
// shape-only mode, skips allocation entirely.

#include <string>

#include "caslid/ops.hpp"
#include "caslid/params.hpp"

namespace caslid {

template <typename S>
struct Linear {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;
  int64_t in_dim = 0, out_dim = 0;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int64_t in, int64_t out, bool bias = true)
      : in_dim(in), out_dim(out) {
    w = ps.create(name + ".w", {in, out}, Init::ScaledUniform);
    if (bias) b = ps.create(name + ".b", {out}, Init::Zeros);
  }

  Tensor<S> operator()(const Tensor<S>& x) const {
    auto y = matmul(x, w->value);
    return b ? add(y, b->value) : y;
  }

  // Row kernel used by the streaming paths: identical operation order to
  // matmul-then-add, so streamed activations equal the batch ones bitwise.
  void forward_row(std::span<const S> x, S* out) const {
    kernels::vec_mat<S>(x, w->value.values(), in_dim, out_dim, out);
    if (b) kernels::add_inplace<S>(out, b->value.values(), out_dim);
  }
};

template <typename S>
struct LayerNormModule {
  Param<S>* gain = nullptr;
  Param<S>* bias = nullptr;
  int64_t dim = 0;
  S eps = S(1e-6);

  LayerNormModule() = default;
  LayerNormModule(ParamStore<S>& ps, const std::string& name, int64_t d) : dim(d) {
    gain = ps.create(name + ".gain", {d}, Init::Ones);
    bias = ps.create(name + ".bias", {d}, Init::Zeros);
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gain->value, bias->value, eps); }

  void forward_row(const S* x, S* out) const {
    kernels::layer_norm_row<S>(x, gain->value.values(), bias->value.values(), eps, dim, out);
  }
};

}  // namespace caslid
