#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "caslid/decode.hpp"
#include "caslid/rng.hpp"

using namespace caslid;

namespace {

// Hand-driven stepper: logits depend on (frame, #tokens emitted) through a
// user function. State is just the emitted count.
struct TableStepper {
  using Scalar = double;
  using State = int64_t;
  int64_t vocab = 4;  // V+1 including blank
  std::function<std::vector<double>(int64_t frame, int64_t emitted)> fn;

  State initial() const { return 0; }
  std::vector<double> logits(int64_t frame, const State& st) const { return fn(frame, st); }
  State advance(const State& st, int64_t) const { return st + 1; }
  int64_t vocab_total() const { return vocab; }
};

// Best hypothesis by exhaustive search over all emission sequences.
struct Exhaustive {
  const TableStepper& stepper;
  int64_t num_frames, cap;
  double best_logp = -1e300;
  std::vector<int64_t> best_tokens;
  int64_t hyp_count = 0;

  void walk(int64_t frame, TableStepper::State st, int64_t emitted, double logp,
            std::vector<int64_t>& tokens) {
    if (frame == num_frames) {
      ++hyp_count;
      if (logp > best_logp ||
          (logp == best_logp && (tokens.size() < best_tokens.size() ||
                                 (tokens.size() == best_tokens.size() && tokens < best_tokens)))) {
        best_logp = logp;
        best_tokens = tokens;
      }
      return;
    }
    auto lg = stepper.logits(frame, st);
    const double lse = kernels::logsumexp_row(lg.data(), static_cast<int64_t>(lg.size()));
    // blank: consume the frame
    walk(frame + 1, st, 0, logp + lg[0] - lse, tokens);
    if (emitted < cap) {
      for (size_t v = 1; v < lg.size(); ++v) {
        tokens.push_back(static_cast<int64_t>(v));
        walk(frame, stepper.advance(st, static_cast<int64_t>(v)), emitted + 1,
             logp + lg[v] - lse, tokens);
        tokens.pop_back();
      }
    }
  }

  void run() {
    std::vector<int64_t> tokens;
    walk(0, stepper.initial(), 0, 0.0, tokens);
  }
};

TableStepper random_stepper(uint64_t seed, int64_t vocab = 4) {
  Rng rng(seed);
  // Pre-draw a deterministic table keyed by (frame, emitted)
  auto table = std::make_shared<std::vector<std::vector<double>>>();
  for (int i = 0; i < 64; ++i) {
    std::vector<double> row(static_cast<size_t>(vocab));
    for (auto& v : row) v = rng.normal() * 1.5;
    table->push_back(row);
  }
  TableStepper st;
  st.vocab = vocab;
  st.fn = [table, vocab](int64_t frame, int64_t emitted) {
    return (*table)[static_cast<size_t>((frame * 7 + emitted) % 64)];
  };
  return st;
}

}  // namespace

TEST_CASE("blank-dominant model decodes to the empty sequence") {
  TableStepper st;
  st.fn = [](int64_t, int64_t) {
    return std::vector<double>{5.0, 0.0, 0.0, 0.0};
  };
  auto res = greedy_decode(st, 10, 4);
  REQUIRE(res.tokens.empty());
  REQUIRE(res.blanks == 10);
}

TEST_CASE("frame synchrony: one blank per frame consumed") {
  auto st = random_stepper(3);
  auto res = greedy_decode(st, 17, 4);
  REQUIRE(res.blanks == 17);
}

TEST_CASE("symbol cap forces a blank advance and bounds the decode") {
  // tokens always dominate blank: without a cap this would never terminate
  TableStepper st;
  st.fn = [](int64_t, int64_t) {
    return std::vector<double>{0.0, 5.0, 1.0, 1.0};
  };
  const int64_t T = 6, cap = 4;
  auto res = greedy_decode(st, T, cap);
  REQUIRE(res.tokens.size() == static_cast<size_t>(T * cap));
  REQUIRE(res.blanks == T);  // <= T*(cap+1) total steps, all forced blanks counted
}

TEST_CASE("beam width 1 equals greedy exactly") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto st = random_stepper(seed);
    for (int64_t T : {1, 3, 8}) {
      auto g = greedy_decode(st, T, 4);
      auto b = beam_decode(st, T, 1, 4);
      REQUIRE(b.tokens == g.tokens);
      REQUIRE(b.log_prob == Catch::Approx(g.log_prob).margin(1e-12));
    }
  }
}

TEST_CASE("beam finds the exhaustive optimum when wide enough") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    auto st = random_stepper(seed, 4);
    const int64_t T = 3, cap = 2;
    Exhaustive ex{st, T, cap, -1e300, {}, 0};
    ex.run();
    auto b = beam_decode(st, T, ex.hyp_count, cap);
    REQUIRE(b.log_prob == Catch::Approx(ex.best_logp).margin(1e-10));
    REQUIRE(b.tokens == ex.best_tokens);
  }
}

TEST_CASE("beam score is monotone in width and never below greedy") {
  for (uint64_t seed : {21u, 22u, 23u, 24u}) {
    auto st = random_stepper(seed, 4);
    const int64_t T = 3, cap = 2;
    const double greedy_score = greedy_decode(st, T, cap).log_prob;
    double prev = -1e300;
    for (int64_t w : {1, 2, 4, 8, 16, 64}) {
      auto b = beam_decode(st, T, w, cap);
      REQUIRE(b.log_prob >= greedy_score - 1e-12);
      REQUIRE(b.log_prob >= prev - 1e-12);
      prev = b.log_prob;
    }
  }
}

TEST_CASE("streamed greedy (frame at a time) equals batch greedy") {
  auto st = random_stepper(31);
  const int64_t T = 12, cap = 4;
  auto offline = greedy_decode(st, T, cap);

  auto gs = greedy_begin(st);
  for (int64_t t = 0; t < T; ++t) greedy_consume_frame(st, t, cap, gs);
  REQUIRE(gs.result.tokens == offline.tokens);
  REQUIRE(gs.result.log_prob == offline.log_prob);
}
