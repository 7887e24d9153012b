#pragma once

// Reverse-mode autodiff tape. Ops append a backward closure as they execute;
// backward() replays the closures in exact reverse execution order and sums
// adjoints into per-tensor slots. A tape is single-owner: one thread builds
// it, the same thread consumes it. Independent tapes may run on independent
// threads (that is how batch-parallel training works).

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "caslid/tensor.hpp"

namespace caslid {

template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // The active tape is thread-local; ops record onto it implicitly.
  static Tape*& active() {
    static thread_local Tape* current = nullptr;
    return current;
  }

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  bool tracks(const Tensor<S>& t) const { return slots_.count(t.id()) != 0; }

  // True if an op consuming `t` must be recorded.
  bool wants_grad(const Tensor<S>& t) const { return t.requires_grad() || tracks(t); }

  // Slot for a tensor, created on first use. The tensor is retained so its
  // identity stays unique for the lifetime of the tape.
  size_t ensure_slot(const Tensor<S>& t) {
    auto it = slots_.find(t.id());
    if (it != slots_.end()) return it->second;
    size_t slot = retained_.size();
    slots_.emplace(t.id(), slot);
    retained_.push_back(t);
    grads_.emplace_back();  // lazily materialized
    return slot;
  }

  void record(std::function<void(Tape&)> backward) { ops_.push_back(std::move(backward)); }

  size_t num_ops() const { return ops_.size(); }

  bool has_grad(size_t slot) const { return !grads_[slot].empty(); }

  // Accumulation buffer for a slot, zero-initialized on first touch.
  std::vector<S>& grad_buf(size_t slot) {
    auto& g = grads_[slot];
    if (g.empty()) g.assign(static_cast<size_t>(retained_[slot].numel()), S(0));
    return g;
  }

  // Read-only adjoint of a slot; empty span if the slot was never touched.
  std::span<const S> grad_view(size_t slot) const {
    return {grads_[slot].data(), grads_[slot].size()};
  }

  // Seeds d(loss)/d(loss) = 1 and replays all recorded ops in reverse.
  // `loss` must be scalar. A loss that never touched the tape (e.g. fully
  // behind stop_gradient) yields all-zero gradients.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (ran_backward_) throw ValueError("backward: tape already consumed");
    ran_backward_ = true;
    if (tracks(loss)) {
      grad_buf(slots_.at(loss.id()))[0] = S(1);
      for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    }
  }

  // Gradient of any tensor seen by this tape; zeros if unreachable from the
  // loss (or never recorded at all, for requires_grad leaves).
  Tensor<S> grad(const Tensor<S>& t) const {
    auto it = slots_.find(t.id());
    if (it == slots_.end() || grads_[it->second].empty()) return Tensor<S>::zeros(t.shape());
    return Tensor<S>::from_vector(t.shape(), grads_[it->second]);
  }

 private:
  std::unordered_map<const void*, size_t> slots_;
  std::vector<Tensor<S>> retained_;
  std::vector<std::vector<S>> grads_;
  std::vector<std::function<void(Tape&)>> ops_;
  bool ran_backward_ = false;
};

}  // namespace caslid
