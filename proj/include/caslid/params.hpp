#pragma once

// Named parameter registry. Modules create their parameters through a
// ParamStore, which records (name, shape) in creation order — the canonical
// order for checkpoints and optimizer state. In shape-only mode nothing is
// allocated, which lets us count parameters of very large presets without
// materializing them.

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "caslid/rng.hpp"
#include "caslid/tensor.hpp"

namespace caslid {

enum class Init { Zeros, Ones, ScaledUniform, Normal };

template <typename S>
struct Param {
  std::string name;
  Shape shape;
  Tensor<S> value;  // undefined in shape-only mode
};

template <typename S>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed, bool shape_only = false)
      : rng_(seed), shape_only_(shape_only) {}

  // Registers a parameter and returns a stable pointer to it. Pointers stay
  // valid for the store's lifetime (deque storage).
  Param<S>* create(const std::string& name, Shape shape, Init init, double gain = 1.0) {
    for (const auto& p : params_)
      if (p.name == name) throw ValueError("duplicate parameter name: " + name);
    params_.push_back(Param<S>{name, shape, Tensor<S>()});
    Param<S>* p = &params_.back();
    if (!shape_only_) {
      p->value = materialize(shape, init, gain);
      p->value.set_requires_grad(true);
    }
    return p;
  }

  std::deque<Param<S>>& params() { return params_; }
  const std::deque<Param<S>>& params() const { return params_; }
  size_t size() const { return params_.size(); }
  bool shape_only() const { return shape_only_; }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& p : params_) n += shape_numel(p.shape);
    return n;
  }

  int64_t total_scalars_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (starts_with(p.name, prefix)) n += shape_numel(p.shape);
    return n;
  }

  std::vector<Shape> shapes() const {
    std::vector<Shape> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.shape);
    return out;
  }

  std::vector<Tensor<S>> values() const {
    std::vector<Tensor<S>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void assign_values(const std::vector<Tensor<S>>& vals) {
    if (vals.size() != params_.size()) throw ShapeError("assign_values: parameter count mismatch");
    size_t i = 0;
    for (auto& p : params_) {
      if (vals[i].shape() != p.shape)
        throw ShapeError("assign_values: shape mismatch for " + p.name);
      p.value = vals[i];
      p.value.set_requires_grad(true);
      ++i;
    }
  }

  Param<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

 private:
  Tensor<S> materialize(const Shape& shape, Init init, double gain) {
    switch (init) {
      case Init::Zeros:
        return Tensor<S>::zeros(shape);
      case Init::Ones:
        return Tensor<S>::full(shape, S(1));
      case Init::Normal: {
        auto t = Tensor<S>::zeros(shape);
        for (auto& x : t.mutable_vec()) x = static_cast<S>(rng_.normal() * gain);
        return t;
      }
      case Init::ScaledUniform: {
        // uniform(-a, a) with a = gain / sqrt(fan_in); fan_in is the
        // second-to-last extent for matrices, the width for vectors.
        const int64_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape.back();
        const double a = gain / std::sqrt(static_cast<double>(fan_in));
        auto t = Tensor<S>::zeros(shape);
        for (auto& x : t.mutable_vec()) x = static_cast<S>(rng_.uniform(-a, a));
        return t;
      }
    }
    throw ValueError("unknown init kind");
  }

  std::deque<Param<S>> params_;
  Rng rng_;
  bool shape_only_;
};

}  // namespace caslid
