#pragma once

// Frame-synchronous transducer decoding. The stepper concept abstracts the
// model so tests can drive the search with hand-built distributions:
//
//   struct Stepper {
//     using State = <copyable>;
//     State initial() const;
//     std::vector<S> logits(int64_t frame, const State&) const;  // V+1, blank=0
//     State advance(const State&, int64_t token) const;          // non-blank
//     int64_t vocab_total() const;
//   };
//
// Greedy consumes one frame at a time through greedy_consume_frame, which is
// exactly what the streaming session calls — streamed and offline decodes
// are the same code running in the same order.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "caslid/kernels.hpp"
#include "caslid/tensor.hpp"

namespace caslid {

template <typename S>
struct DecodeResult {
  std::vector<int64_t> tokens;
  std::vector<int64_t> frame_of_token;  // frame index at which each token was emitted
  double log_prob = 0.0;
  int64_t blanks = 0;
};

template <typename Stepper, typename S = typename Stepper::Scalar>
struct GreedyState {
  typename Stepper::State pred;
  DecodeResult<S> result;
};

template <typename Stepper>
GreedyState<Stepper> greedy_begin(const Stepper& stepper) {
  return GreedyState<Stepper>{stepper.initial(), {}};
}

// Emits greedily on one frame until blank wins or the per-frame symbol cap
// forces a blank advance; exactly one blank consumes the frame either way.
template <typename Stepper>
void greedy_consume_frame(const Stepper& stepper, int64_t frame, int64_t max_symbols_per_frame,
                          GreedyState<Stepper>& gs) {
  using S = typename Stepper::Scalar;
  int64_t emitted = 0;
  for (;;) {
    std::vector<S> lg = stepper.logits(frame, gs.pred);
    const S lse = kernels::logsumexp_row(lg.data(), static_cast<int64_t>(lg.size()));
    int64_t best = 0;
    for (size_t v = 1; v < lg.size(); ++v)
      if (lg[v] > lg[best]) best = static_cast<int64_t>(v);
    if (best == 0 || emitted >= max_symbols_per_frame) {
      // blank (chosen or forced) consumes the frame
      gs.result.log_prob += static_cast<double>(lg[0] - lse);
      gs.result.blanks += 1;
      return;
    }
    gs.result.log_prob += static_cast<double>(lg[static_cast<size_t>(best)] - lse);
    gs.result.tokens.push_back(best);
    gs.result.frame_of_token.push_back(frame);
    gs.pred = stepper.advance(gs.pred, best);
    ++emitted;
  }
}

template <typename Stepper>
DecodeResult<typename Stepper::Scalar> greedy_decode(const Stepper& stepper, int64_t num_frames,
                                                     int64_t max_symbols_per_frame = 4) {
  auto gs = greedy_begin(stepper);
  for (int64_t t = 0; t < num_frames; ++t)
    greedy_consume_frame(stepper, t, max_symbols_per_frame, gs);
  return gs.result;
}

// ---- beam search ----------------------------------------------------------

namespace detail {

template <typename Stepper>
struct BeamHyp {
  typename Stepper::State pred;
  std::vector<int64_t> tokens;
  double log_prob = 0.0;
  int64_t emitted_this_frame = 0;
  bool frame_done = false;  // took blank on the current frame
  std::vector<int64_t> frame_of_token;

  // Deterministic ordering: higher score first, then fewer tokens, then
  // lexicographically smaller token sequence (keeps width-1 equal to greedy,
  // whose argmax breaks ties toward the lowest index — blank is index 0).
  bool better_than(const BeamHyp& o) const {
    if (log_prob != o.log_prob) return log_prob > o.log_prob;
    if (tokens.size() != o.tokens.size()) return tokens.size() < o.tokens.size();
    return tokens < o.tokens;
  }
};

}  // namespace detail

// Width-pruned frame-synchronous beam. Within a frame, open hypotheses
// expand over blank (closing the frame) and every token; the pool keeps the
// best `beam_width` of open and closed together, so width 1 reproduces the
// greedy argmax walk move for move. The best final hypothesis is returned;
// greedy serves as a floor so the result never scores below it.
template <typename Stepper>
DecodeResult<typename Stepper::Scalar> beam_decode(const Stepper& stepper, int64_t num_frames,
                                                   int64_t beam_width,
                                                   int64_t max_symbols_per_frame = 4) {
  using S = typename Stepper::Scalar;
  using Hyp = detail::BeamHyp<Stepper>;
  if (beam_width < 1) throw ValueError("beam_decode: beam width must be >= 1");

  std::vector<Hyp> beam{Hyp{stepper.initial(), {}, 0.0, 0, false, {}}};
  for (int64_t t = 0; t < num_frames; ++t) {
    for (auto& h : beam) {
      h.emitted_this_frame = 0;
      h.frame_done = false;
    }
    for (int64_t round = 0; round <= max_symbols_per_frame; ++round) {
      bool any_open = false;
      std::vector<Hyp> pool;
      for (auto& h : beam) {
        if (h.frame_done) {
          pool.push_back(std::move(h));
          continue;
        }
        any_open = true;
        std::vector<S> lg = stepper.logits(t, h.pred);
        const S lse = kernels::logsumexp_row(lg.data(), static_cast<int64_t>(lg.size()));
        // blank closes the frame
        Hyp closed = h;
        closed.log_prob += static_cast<double>(lg[0] - lse);
        closed.frame_done = true;
        pool.push_back(std::move(closed));
        if (round < max_symbols_per_frame) {
          for (size_t v = 1; v < lg.size(); ++v) {
            Hyp ext = h;
            ext.log_prob += static_cast<double>(lg[v] - lse);
            ext.tokens.push_back(static_cast<int64_t>(v));
            ext.frame_of_token.push_back(t);
            ext.pred = stepper.advance(h.pred, static_cast<int64_t>(v));
            ext.emitted_this_frame += 1;
            pool.push_back(std::move(ext));
          }
        }
      }
      std::sort(pool.begin(), pool.end(), [](const Hyp& a, const Hyp& b) { return a.better_than(b); });
      if (static_cast<int64_t>(pool.size()) > beam_width) pool.resize(static_cast<size_t>(beam_width));
      beam = std::move(pool);
      if (!any_open) break;  // every survivor already blanked this frame
    }
  }

  const Hyp* best = &beam.front();
  for (const auto& h : beam)
    if (h.better_than(*best)) best = &h;

  DecodeResult<S> out{best->tokens, best->frame_of_token, best->log_prob, num_frames};
  auto greedy = greedy_decode(stepper, num_frames, max_symbols_per_frame);
  return greedy.log_prob > out.log_prob ? greedy : out;
}

}  // namespace caslid
