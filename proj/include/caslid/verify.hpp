#pragma once

// Self-contained verification suites behind the `verify` subcommand: oracle
// equivalences, gradient checks, causality probes, streaming/offline
// equivalence, gradient-path semantics, and the WER oracle. Each suite
// returns pass/fail plus a one-line detail; the CLI exits non-zero if any
// fails. The acceptance harness reuses these directly.

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "caslid/cascade.hpp"
#include "caslid/eval.hpp"
#include "caslid/metrics.hpp"
#include "caslid/streaming.hpp"

namespace caslid {

struct VerifyResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace verify_detail {

inline double rel_err(double got, double want, double floor_v = 1e-4) {
  const double denom = std::max({std::abs(got), std::abs(want), floor_v});
  return std::abs(got - want) / denom;
}

// Central finite differences of a scalar function of one tensor.
template <typename F>
double fd_max_rel_error(F f, Tensor<double> x, const std::vector<double>& analytic,
                        double step = 1e-5) {
  double worst = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x.mutable_vec()[static_cast<size_t>(i)] = orig + step;
    const double up = f(x);
    x.mutable_vec()[static_cast<size_t>(i)] = orig - step;
    const double down = f(x);
    x.mutable_vec()[static_cast<size_t>(i)] = orig;
    worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], (up - down) / (2 * step)));
  }
  return worst;
}

template <typename S>
Tensor<S> rand_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = Tensor<S>::zeros(std::move(shape));
  for (auto& v : t.mutable_vec()) v = static_cast<S>(rng.normal() * scale);
  return t;
}

// The smallest complete cascade; used by the full-model gradient check.
inline CascadeConfig micro_config() {
  CascadeConfig c;
  c.d_feat = 2;
  c.stack_n = 2;
  c.stack_stride = 2;
  c.max_positions = 32;
  c.causal.num_blocks = 1;
  c.causal.d_model = 4;
  c.causal.num_heads = 1;
  c.causal.conv_kernel = 2;
  c.causal.per_layer_right_context = {0};
  c.causal.time_reduction_after = -1;
  c.causal.ffn_mult = 1;
  c.right.num_blocks = 1;
  c.right.d_model = 4;
  c.right.num_heads = 1;
  c.right.conv_kernel = 2;
  c.right.per_layer_right_context = {1};
  c.right.ffn_mult = 1;
  c.e_enc1_tap_block = 0;
  c.decoder.embed_dim = 2;
  c.decoder.rnn_dim = 3;
  c.decoder.rnn_layers = 1;
  c.decoder.proj_dim = 2;
  c.decoder.joint_dim = 3;
  c.vocab_size = 3;
  c.lid.hidden = 3;
  c.mode = InjectionMode::Fig1a;
  c.lid_mode = LidMode::Distribution;
  c.locales = {"aa", "bb"};
  c.validate();
  return c;
}

// Small cascade used by the streaming / gradient-path suites.
inline CascadeConfig probe_config(InjectionMode mode, LidMode lid_mode) {
  CascadeConfig c;
  c.d_feat = 6;
  c.stack_n = 2;
  c.stack_stride = 2;
  c.max_positions = 128;
  c.causal.num_blocks = 2;
  c.causal.d_model = 16;
  c.causal.num_heads = 2;
  c.causal.conv_kernel = 3;
  c.causal.per_layer_right_context = {0, 0};
  c.causal.time_reduction_after = 0;
  c.causal.ffn_mult = 2;
  c.right.num_blocks = 2;
  c.right.d_model = 16;
  c.right.num_heads = 2;
  c.right.conv_kernel = 3;
  c.right.per_layer_right_context = {2, 2};
  c.right.ffn_mult = 2;
  c.decoder.embed_dim = 8;
  c.decoder.rnn_dim = 12;
  c.decoder.rnn_layers = 1;
  c.decoder.proj_dim = 8;
  c.decoder.joint_dim = 12;
  c.vocab_size = 6;
  c.lid.hidden = 8;
  c.mode = mode;
  c.lid_mode = lid_mode;
  c.locales = default_locales();
  c.cluster_of = default_clusters();
  c.validate();
  return c;
}

template <typename S>
Utterance<S> rand_utterance(const CascadeConfig& cfg, Rng& rng, int64_t frames, int64_t tokens) {
  Utterance<S> u;
  u.features = rand_tensor<S>({frames, cfg.d_feat}, rng);
  for (int64_t i = 0; i < tokens; ++i)
    u.tokens.push_back(1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.vocab_size))));
  u.label = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.locales.size())));
  return u;
}

template <typename F>
VerifyResult timed(const std::string& name, F body) {
  VerifyResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.detail = body(r.passed);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace verify_detail

// Suite 1: lattice DP vs alignment enumeration (64-bit).
inline VerifyResult verify_rnnt_oracle() {
  using namespace verify_detail;
  return timed("rnnt-oracle-equivalence", [](bool& passed) {
    Rng rng(1001);
    Vocab vocab{6};
    double worst = 0;
    for (int64_t T = 1; T <= 4; ++T)
      for (int64_t U = 0; U <= 3; ++U)
        for (int rep = 0; rep < 20; ++rep) {
          auto grid = rand_tensor<double>({T * (U + 1), vocab.total()}, rng, 1.5);
          std::vector<int64_t> y;
          for (int64_t i = 0; i < U; ++i) y.push_back(1 + static_cast<int64_t>(rng.below(6)));
          const double dp = rnnt_loss_from_logits(grid, vocab, y, T).item();
          const double bf = rnnt_loss_bruteforce_from_logits(grid, vocab, y, T);
          worst = std::max(worst, std::abs(dp - bf));
        }
    passed = worst <= 1e-6;
    return detail::strfmt("max |dp - bruteforce| = %.3g over 320 instances (tol 1e-6)", worst);
  });
}

// Suite 2: gradient correctness (64-bit): rnnt logits gradient, every
// primitive, and the full model on the micro config.
inline VerifyResult verify_gradients() {
  using namespace verify_detail;
  return timed("gradient-correctness", [](bool& passed) {
    Rng rng(1002);
    double worst = 0;
    int probes = 0;

    // rnnt loss wrt logits
    {
      Vocab vocab{4};
      for (int rep = 0; rep < 3; ++rep) {
        const int64_t T = 3, U = 2;
        auto grid = rand_tensor<double>({T * (U + 1), vocab.total()}, rng, 1.5);
        std::vector<int64_t> y = {1 + static_cast<int64_t>(rng.below(4)),
                                  1 + static_cast<int64_t>(rng.below(4))};
        Tape<double> tape;
        std::vector<double> analytic;
        {
          Tape<double>::Scope scope(tape);
          auto gi = grid.clone();
          gi.set_requires_grad(true);
          tape.backward(rnnt_loss_from_logits(gi, vocab, y, T));
          analytic = std::vector<double>(tape.grad(gi).vec());
        }
        worst = std::max(worst, fd_max_rel_error(
                                    [&](const Tensor<double>& g) {
                                      return rnnt_loss_from_logits(g, vocab, y, T).item();
                                    },
                                    grid, analytic));
        probes += static_cast<int>(grid.numel());
      }
    }

    // primitives
    auto check_primitive = [&](auto op, Tensor<double> x) {
      Tape<double> tape;
      std::vector<double> analytic;
      {
        Tape<double>::Scope scope(tape);
        auto xi = x.clone();
        xi.set_requires_grad(true);
        tape.backward(op(xi));
        analytic = std::vector<double>(tape.grad(xi).vec());
      }
      worst = std::max(worst,
                       fd_max_rel_error([&](const Tensor<double>& v) { return op(v).item(); }, x,
                                        analytic));
      probes += static_cast<int>(x.numel());
    };
    for (int rep = 0; rep < 2; ++rep) {
      auto off_kink = rand_tensor<double>({3, 5}, rng);
      for (auto& v : off_kink.mutable_vec())
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
      check_primitive([](const auto& v) { return sum(relu(v)); }, off_kink);
      check_primitive([](const auto& v) { return sum(swish(v)); }, rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(sigmoid(v)); }, rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(caslid::tanh(v)); },
                      rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(softmax(v)); }, rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(log_softmax(v)); },
                      rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(logsumexp(v)); },
                      rand_tensor<double>({3, 5}, rng));
      check_primitive([](const auto& v) { return sum(cumsum_rows(v)); },
                      rand_tensor<double>({4, 3}, rng));
      check_primitive([](const auto& v) { return sum(stack_frames(v, 3, 3)); },
                      rand_tensor<double>({9, 2}, rng));
      auto w = rand_tensor<double>({3, 4}, rng);
      check_primitive([&](const auto& v) { return sum(depthwise_conv1d(v, w)); },
                      rand_tensor<double>({8, 4}, rng));
      auto b = rand_tensor<double>({5, 3}, rng);
      check_primitive([&](const auto& v) { return sum(matmul(v, b)); },
                      rand_tensor<double>({4, 5}, rng));
      auto gain = rand_tensor<double>({5}, rng);
      auto bias = rand_tensor<double>({5}, rng);
      check_primitive([&](const auto& v) { return sum(layer_norm(v, gain, bias)); },
                      rand_tensor<double>({3, 5}, rng, 2.0));
      check_primitive([](const auto& v) { return sum(mul(v, stop_gradient(v))); },
                      rand_tensor<double>({6}, rng));
      check_primitive([](const auto& v) { return mean(pooled_stats_rows(v)); },
                      rand_tensor<double>({5, 3}, rng));
    }

    // full model on the micro config: every scalar parameter
    {
      auto cfg = micro_config();
      CascadeModel<double> m(cfg, 1003);
      Utterance<double> utt;
      utt.features = rand_tensor<double>({8, 2}, rng);
      utt.tokens = {1, 3};
      utt.label = 1;
      Tape<double> tape;
      std::vector<Tensor<double>> analytic;
      {
        Tape<double>::Scope scope(tape);
        tape.backward(m.loss_parts(utt).total);
        for (auto& p : m.store().params()) analytic.push_back(tape.grad(p.value));
      }
      size_t pi = 0;
      for (auto& p : m.store().params()) {
        for (int64_t i = 0; i < p.value.numel(); ++i) {
          const double orig = p.value[i];
          const double step = 1e-5;
          p.value.mutable_vec()[static_cast<size_t>(i)] = orig + step;
          const double up = m.loss_parts(utt).total.item();
          p.value.mutable_vec()[static_cast<size_t>(i)] = orig - step;
          const double down = m.loss_parts(utt).total.item();
          p.value.mutable_vec()[static_cast<size_t>(i)] = orig;
          worst = std::max(worst, rel_err(analytic[pi][i], (up - down) / (2 * step)));
          ++probes;
        }
        ++pi;
      }
    }

    passed = worst <= 1e-4 && probes >= 100;
    return detail::strfmt("max rel err %.3g over %d probes (tol 1e-4)", worst, probes);
  });
}

// Suite 3: streaming statistics pooling vs a two-pass oracle, fp32 and fp64.
inline VerifyResult verify_pooling() {
  using namespace verify_detail;
  return timed("pooling-equivalence", [](bool& passed) {
    Rng rng(1004);
    auto run = [&rng](auto scalar_tag, double tol) {
      using S = decltype(scalar_tag);
      double worst = 0;
      for (int rep = 0; rep < 50; ++rep) {
        const int64_t T = 20 + static_cast<int64_t>(rng.below(181));  // <= 200
        const int64_t d = 4 + static_cast<int64_t>(rng.below(29));    // <= 32
        std::vector<std::vector<S>> rows;
        for (int64_t t = 0; t < T; ++t) {
          std::vector<S> r(static_cast<size_t>(d));
          for (auto& v : r) v = static_cast<S>(rng.normal());
          rows.push_back(std::move(r));
        }
        PoolState<S> st(d);
        for (int64_t t = 0; t < T; ++t) {
          pool_update<S>(st, rows[static_cast<size_t>(t)]);
          auto got = pool_stats(st);
          for (int64_t i = 0; i < d; ++i) {
            double mean = 0;
            for (int64_t u = 0; u <= t; ++u) mean += rows[static_cast<size_t>(u)][static_cast<size_t>(i)];
            mean /= (t + 1);
            double var = 0;
            for (int64_t u = 0; u <= t; ++u) {
              const double x = rows[static_cast<size_t>(u)][static_cast<size_t>(i)] - mean;
              var += x * x;
            }
            var /= (t + 1);
            worst = std::max(worst, std::abs(static_cast<double>(got[static_cast<size_t>(i)]) - mean));
            worst = std::max(worst, std::abs(static_cast<double>(got[static_cast<size_t>(d + i)]) -
                                             std::sqrt(var)));
          }
        }
      }
      return std::pair<double, bool>{worst, worst <= tol};
    };
    auto [w32, ok32] = run(float{}, 1e-5);
    auto [w64, ok64] = run(double{}, 1e-10);
    passed = ok32 && ok64;
    return detail::strfmt("max abs diff fp32 %.3g (tol 1e-5), fp64 %.3g (tol 1e-10)", w32, w64);
  });
}

// Suite 4: causality and lookahead contracts (exact, plus sensitivity).
inline VerifyResult verify_causality() {
  using namespace verify_detail;
  return timed("causality-lookahead", [](bool& passed) {
    Rng rng(1005);
    auto cfg = probe_config(InjectionMode::None, LidMode::Argmax);
    ParamStore<float> ps(1006);
    EncoderStack<float> causal(ps, "c", cfg.causal, 8, 128, true);
    ParamStore<float> ps2(1007);
    EncoderStack<float> rc(ps2, "r", cfg.right, 16, 128, false);
    const int64_t R = rc.r_total();

    int violations = 0;
    for (int probe = 0; probe < 20; ++probe) {
      // causal: outputs up to the horizon are bit-identical
      auto x = rand_tensor<float>({16, 8}, rng);
      auto base = causal.forward(x).out;
      const int64_t s = 1 + static_cast<int64_t>(rng.below(15));
      auto x2 = x.clone();
      for (int64_t c = 0; c < 8; ++c) x2.mutable_vec()[s * 8 + c] += 2.0f + probe;
      auto pert = causal.forward(x2).out;
      for (int64_t t = 0; t < base.dim(0); ++t)
        if (causal.input_horizon(t) < s)
          for (int64_t c = 0; c < base.dim(1); ++c)
            if (base.at(t, c) != pert.at(t, c)) ++violations;

      // right-context: invariant beyond t + R
      auto h = rand_tensor<float>({14, 16}, rng);
      auto rbase = rc.forward(h).out;
      const int64_t rs = static_cast<int64_t>(rng.below(14));
      auto h2 = h.clone();
      for (int64_t c = 0; c < 16; ++c) h2.mutable_vec()[rs * 16 + c] += 2.0f;
      auto rpert = rc.forward(h2).out;
      for (int64_t t = 0; t < rbase.dim(0); ++t)
        if (t + R < rs)
          for (int64_t c = 0; c < 16; ++c)
            if (rbase.at(t, c) != rpert.at(t, c)) ++violations;
    }

    // sensitivity: the deepest in-budget future frame matters
    bool sensitive = false;
    {
      auto h = rand_tensor<float>({14, 16}, rng);
      auto base = rc.forward(h).out;
      const int64_t t_check = 4;
      auto h2 = h.clone();
      for (int64_t c = 0; c < 16; ++c) h2.mutable_vec()[(t_check + R) * 16 + c] += 2.0f;
      auto pert = rc.forward(h2).out;
      for (int64_t c = 0; c < 16; ++c)
        if (base.at(t_check, c) != pert.at(t_check, c)) sensitive = true;
    }

    passed = violations == 0 && sensitive;
    return detail::strfmt("%d violations over 40 probes; in-budget sensitivity %s", violations,
                          sensitive ? "confirmed" : "MISSING");
  });
}

// Suite 5: streamed vs offline encoders, decodes and z traces.
inline VerifyResult verify_stream_offline() {
  using namespace verify_detail;
  return timed("streaming-offline-equivalence", [](bool& passed) {
    Rng rng(1008);
    auto cfg = probe_config(InjectionMode::Fig1a, LidMode::Argmax);
    CascadeModel<float> m(cfg, 1009);

    // encoder-level check
    float worst_enc = 0;
    {
      ParamStore<float> ps(1010);
      EncoderStack<float> enc(ps, "e", cfg.right, 16, 256, false);
      for (int rep = 0; rep < 5; ++rep) {
        auto x = rand_tensor<float>({50, 16}, rng);
        auto offline = enc.forward(x).out;
        EncoderStackStream<float> stream(enc, -1);
        std::vector<Row<float>> outs;
        for (int64_t t = 0; t < 50; ++t) {
          Row<float> fr(x.vec().begin() + t * 16, x.vec().begin() + (t + 1) * 16);
          for (auto& e : stream.push(fr)) outs.push_back(e.out);
        }
        for (auto& e : stream.flush()) outs.push_back(e.out);
        for (size_t t = 0; t < outs.size(); ++t)
          for (int64_t c = 0; c < 16; ++c)
            worst_enc = std::max(worst_enc, std::abs(outs[t][c] - offline.at(static_cast<int64_t>(t), c)));
      }
    }

    // session-level check: token sequences exact, z within 1e-5
    int token_mismatches = 0;
    float worst_z = 0;
    for (int rep = 0; rep < 20; ++rep) {
      auto utt = rand_utterance<float>(cfg, rng, 18 + static_cast<int64_t>(rng.below(20)), 3);
      auto offline = m.forward_two_pass(utt);
      StreamSession<float> session(m, utt.label);
      for (int64_t t = 0; t < utt.features.dim(0); ++t)
        session.push(std::span<const float>(utt.features.vec().data() + t * cfg.d_feat,
                                            static_cast<size_t>(cfg.d_feat)));
      session.flush();
      auto streamed = session.output();
      if (streamed.first_tokens != offline.first_tokens) ++token_mismatches;
      if (streamed.second_tokens != offline.second_tokens) ++token_mismatches;
      for (size_t t = 0; t < streamed.z_trace.size(); ++t)
        for (size_t k = 0; k < streamed.z_trace[t].size(); ++k)
          worst_z = std::max(worst_z, std::abs(streamed.z_trace[t][k] - offline.z_trace[t][k]));
    }

    passed = worst_enc <= 1e-5f && token_mismatches == 0 && worst_z <= 1e-5f;
    return detail::strfmt("encoder max diff %.3g, token mismatches %d, z max diff %.3g",
                          static_cast<double>(worst_enc), token_mismatches,
                          static_cast<double>(worst_z));
  });
}

// Suite 6: Table-3 gradient-path semantics.
inline VerifyResult verify_gradient_paths() {
  using namespace verify_detail;
  return timed("gradient-path-modes", [](bool& passed) {
    Rng rng(1011);
    auto grad_into_lid_input = [&rng](LidMode mode) {
      auto cfg = probe_config(InjectionMode::Fig1a, mode);
      CascadeModel<double> m(cfg, 1012);
      auto utt = rand_utterance<double>(cfg, rng, 20, 3);
      Tape<double> tape;
      Tape<double>::Scope scope(tape);
      auto parts = m.loss_parts(utt);
      tape.backward(parts.second);
      auto g = tape.grad(parts.lid_input);
      double norm = 0;
      for (int64_t i = 0; i < g.numel(); ++i) norm += std::abs(g[i]);
      return norm;
    };
    const double sg_norm = grad_into_lid_input(LidMode::StopGrad);
    const double st_norm = grad_into_lid_input(LidMode::Argmax);

    // lambda = 1: right-context encoder gets exactly zero from the cascade loss
    double rc_norm = -1;
    {
      auto cfg = probe_config(InjectionMode::None, LidMode::Argmax);
      cfg.lambda_weight = 1.0;
      CascadeModel<double> m(cfg, 1013);
      auto utt = rand_utterance<double>(cfg, rng, 20, 3);
      Tape<double> tape;
      Tape<double>::Scope scope(tape);
      tape.backward(m.loss_parts(utt).cascade);
      rc_norm = 0;
      for (const auto& p : m.store().params())
        if (starts_with(p.name, "enc2.")) {
          auto g = tape.grad(p.value);
          for (int64_t i = 0; i < g.numel(); ++i) rc_norm += std::abs(g[i]);
        }
    }

    passed = sg_norm == 0.0 && st_norm > 0.0 && rc_norm == 0.0;
    return detail::strfmt("sg-path grad %.3g (want 0), straight-through grad %.3g (want >0), "
                          "lambda=1 rc-encoder grad %.3g (want 0)",
                          sg_norm, st_norm, rc_norm);
  });
}

// Suite 7: WER DP vs the exhaustive recursive definition.
inline VerifyResult verify_wer_oracle() {
  using namespace verify_detail;
  return timed("wer-oracle", [](bool& passed) {
    std::vector<std::vector<int64_t>> all;
    all.push_back({});
    size_t begin = 0;
    for (int len = 1; len <= 6; ++len) {
      const size_t end = all.size();
      for (size_t i = begin; i < end; ++i)
        for (int64_t s = 1; s <= 3; ++s) {
          auto next = all[i];
          next.push_back(s);
          all.push_back(std::move(next));
        }
      begin = end;
    }
    std::function<int64_t(const std::vector<int64_t>&, const std::vector<int64_t>&, size_t, size_t,
                          std::map<std::pair<size_t, size_t>, int64_t>&)>
        oracle = [&](const std::vector<int64_t>& a, const std::vector<int64_t>& b, size_t i,
                     size_t j, std::map<std::pair<size_t, size_t>, int64_t>& memo) -> int64_t {
      if (i == a.size()) return static_cast<int64_t>(b.size() - j);
      if (j == b.size()) return static_cast<int64_t>(a.size() - i);
      auto key = std::make_pair(i, j);
      auto it = memo.find(key);
      if (it != memo.end()) return it->second;
      int64_t best = oracle(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
      best = std::min(best, oracle(a, b, i + 1, j, memo) + 1);
      best = std::min(best, oracle(a, b, i, j + 1, memo) + 1);
      memo[key] = best;
      return best;
    };
    int64_t mismatches = 0, pairs = 0;
    for (const auto& ref : all)
      for (const auto& hyp : all) {
        std::map<std::pair<size_t, size_t>, int64_t> memo;
        if (wer_counts(ref, hyp).errors() != oracle(ref, hyp, 0, 0, memo)) ++mismatches;
        ++pairs;
      }
    passed = mismatches == 0;
    return detail::strfmt("%lld mismatches over %lld pairs", static_cast<long long>(mismatches),
                          static_cast<long long>(pairs));
  });
}

inline std::vector<VerifyResult> run_verification_suites() {
  return {verify_rnnt_oracle(), verify_gradients(),      verify_pooling(),
          verify_causality(),   verify_stream_offline(), verify_gradient_paths(),
          verify_wer_oracle()};
}

}  // namespace caslid
