#pragma once

// Dense row-major tensor of float or double. Tensors are immutable values
// once built: every op allocates a fresh buffer, which is what makes tape
// replay and the streaming/offline equivalence checks trustworthy.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "caslid/common.hpp"
#include "caslid/rng.hpp"

namespace caslid {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
struct TensorData {
  Shape shape;
  std::vector<S> v;
};

// Element-wise finite checks are on by default; any op producing NaN/Inf
// throws instead of letting the value poison a training run.
inline bool& finite_checks_enabled() {
  static bool enabled = true;
  return enabled;
}

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    int64_t n = shape_numel(shape);
    validate_shape(shape);
    t.data_ = std::make_shared<TensorData<S>>(TensorData<S>{std::move(shape), std::vector<S>(n, S(0))});
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    for (S& x : t.data_->v) x = value;
    return t;
  }

  static Tensor from_vector(Shape shape, std::vector<S> values) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError(detail::strfmt("from_vector: shape %s does not match %zu values",
                                      shape_str(shape).c_str(), values.size()));
    Tensor t;
    t.data_ = std::make_shared<TensorData<S>>(TensorData<S>{std::move(shape), std::move(values)});
    return t;
  }

  static Tensor scalar(S value) { return from_vector({1}, {value}); }

  static Tensor randn(Shape shape, Rng& rng, S scale = S(1)) {
    Tensor t = zeros(std::move(shape));
    for (S& x : t.data_->v) x = static_cast<S>(rng.normal()) * scale;
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int64_t rank() const { return static_cast<int64_t>(data_->shape.size()); }
  int64_t dim(int64_t i) const { return data_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_->v.size()); }

  std::span<const S> values() const { return {data_->v.data(), data_->v.size()}; }
  const std::vector<S>& vec() const { return data_->v; }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return data_->v[0];
  }

  S operator[](int64_t flat) const { return data_->v[static_cast<size_t>(flat)]; }
  S at(int64_t r, int64_t c) const { return data_->v[static_cast<size_t>(r * dim(1) + c)]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  // Identity for tape bookkeeping: two Tensors are the same value iff they
  // share the same TensorData.
  const void* id() const { return data_.get(); }

  // Deep copy with fresh identity (used by stop_gradient and the optimizer).
  Tensor clone() const {
    Tensor t;
    t.data_ = std::make_shared<TensorData<S>>(*data_);
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_->v.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(data_->v[i]);
    return Tensor<T>::from_vector(data_->shape, std::move(out));
  }

  bool all_finite() const {
    for (S x : data_->v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string to_string(int64_t max_elems = 16) const {
    std::ostringstream os;
    os << "Tensor" << shape_str(shape()) << " {";
    for (int64_t i = 0; i < numel() && i < max_elems; ++i) os << (i ? ", " : "") << (*this)[i];
    if (numel() > max_elems) os << ", ...";
    os << "}";
    return os.str();
  }

  // Mutable access for builders; never mutate a tensor after it has entered
  // an op (ops capture inputs by value on the tape).
  std::vector<S>& mutable_vec() { return data_->v; }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int64_t d : shape)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }

  std::shared_ptr<TensorData<S>> data_;
  bool requires_grad_ = false;
};

template <typename S>
void check_finite(const char* op, const Tensor<S>& t) {
  if (!finite_checks_enabled()) return;
  if (!t.all_finite())
    throw NonFiniteError(detail::strfmt("%s produced a non-finite value (shape %s)", op,
                                        shape_str(t.shape()).c_str()));
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  S m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace caslid
