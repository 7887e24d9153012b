#include <catch2/catch_amalgamated.hpp>

#include "caslid/encoder.hpp"
#include "caslid/streaming.hpp"
#include "helpers.hpp"

using namespace caslid;
using test_util::random_tensor;

namespace {

EncoderConfig causal_cfg() {
  EncoderConfig c;
  c.num_blocks = 4;
  c.d_model = 16;
  c.num_heads = 2;
  c.conv_kernel = 3;
  c.per_layer_right_context.assign(4, 0);
  c.time_reduction_after = 1;
  c.ffn_mult = 2;
  return c;
}

EncoderConfig rc_cfg() {
  EncoderConfig c;
  c.num_blocks = 2;
  c.d_model = 16;
  c.num_heads = 2;
  c.conv_kernel = 3;
  c.per_layer_right_context = {2, 2};
  c.ffn_mult = 2;
  return c;
}

}  // namespace

TEST_CASE("causal encoder: outputs are exactly invariant to future frames") {
  ParamStore<float> ps(11);
  auto cfg = causal_cfg();
  EncoderStack<float> enc(ps, "enc", cfg, 8, 64, /*with_positions=*/true);
  Rng rng(100);

  for (int probe = 0; probe < 20; ++probe) {
    auto x = random_tensor<float>({12, 8}, rng);
    auto base = enc.forward(x).out;
    // perturb a random input frame s; outputs t with horizon(t) < s unchanged
    const int64_t s = 1 + static_cast<int64_t>(rng.below(11));
    auto x2 = x.clone();
    for (int64_t c = 0; c < 8; ++c) x2.mutable_vec()[s * 8 + c] += 1.0f + probe;
    auto pert = enc.forward(x2).out;
    for (int64_t t = 0; t < base.dim(0); ++t) {
      if (enc.input_horizon(t) < s) {
        for (int64_t c = 0; c < base.dim(1); ++c) {
          INFO("probe " << probe << " t=" << t << " s=" << s);
          REQUIRE(base.at(t, c) == pert.at(t, c));  // bit-exact
        }
      }
    }
  }
}

TEST_CASE("causal encoder horizons: reduction maps output t to inputs <= 2t+1") {
  ParamStore<float> ps(12);
  auto cfg = causal_cfg();
  EncoderStack<float> enc(ps, "enc", cfg, 8, 64, true);
  REQUIRE(enc.input_horizon(0) == 1);
  REQUIRE(enc.input_horizon(3) == 7);

  EncoderConfig flat = causal_cfg();
  flat.time_reduction_after = -1;
  ParamStore<float> ps2(12);
  EncoderStack<float> enc2(ps2, "enc", flat, 8, 64, true);
  REQUIRE(enc2.input_horizon(5) == 5);
}

TEST_CASE("time reduction halves the frame count; T=1 works without it") {
  ParamStore<float> ps(13);
  EncoderStack<float> enc(ps, "enc", causal_cfg(), 8, 64, true);
  Rng rng(101);
  REQUIRE(enc.forward(random_tensor<float>({6, 8}, rng)).out.dim(0) == 3);
  REQUIRE(enc.forward(random_tensor<float>({7, 8}, rng)).out.dim(0) == 4);  // padded tail

  EncoderConfig flat = causal_cfg();
  flat.time_reduction_after = -1;
  ParamStore<float> ps2(14);
  EncoderStack<float> enc2(ps2, "enc", flat, 8, 64, true);
  REQUIRE(enc2.forward(random_tensor<float>({1, 8}, rng)).out.dim(0) == 1);
}

TEST_CASE("right-context encoder: bounded lookahead, demonstrable sensitivity") {
  ParamStore<float> ps(15);
  auto cfg = rc_cfg();
  EncoderStack<float> enc(ps, "enc", cfg, 16, 64, false);
  const int64_t R = enc.r_total();
  REQUIRE(R == 4);
  Rng rng(102);

  for (int probe = 0; probe < 20; ++probe) {
    auto x = random_tensor<float>({14, 16}, rng);
    auto base = enc.forward(x).out;
    const int64_t s = static_cast<int64_t>(rng.below(14));
    auto x2 = x.clone();
    for (int64_t c = 0; c < 16; ++c) x2.mutable_vec()[s * 16 + c] += 2.0f;
    auto pert = enc.forward(x2).out;
    for (int64_t t = 0; t < base.dim(0); ++t) {
      if (t + R < s) {
        for (int64_t c = 0; c < 16; ++c) REQUIRE(base.at(t, c) == pert.at(t, c));
      }
    }
  }

  // sensitivity: some frame strictly ahead of t (within the budget) matters
  auto x = random_tensor<float>({14, 16}, rng);
  auto base = enc.forward(x).out;
  const int64_t t_check = 4, s = t_check + R;  // deepest reachable future frame
  auto x2 = x.clone();
  for (int64_t c = 0; c < 16; ++c) x2.mutable_vec()[s * 16 + c] += 2.0f;
  auto pert = enc.forward(x2).out;
  bool changed = false;
  for (int64_t c = 0; c < 16; ++c) changed = changed || base.at(t_check, c) != pert.at(t_check, c);
  REQUIRE(changed);
}

TEST_CASE("zero right-context config makes the second stack causal too") {
  EncoderConfig cfg = rc_cfg();
  cfg.per_layer_right_context = {0, 0};
  ParamStore<float> ps(16);
  EncoderStack<float> enc(ps, "enc", cfg, 16, 64, false);
  Rng rng(103);
  auto x = random_tensor<float>({10, 16}, rng);
  auto base = enc.forward(x).out;
  auto x2 = x.clone();
  for (int64_t c = 0; c < 16; ++c) x2.mutable_vec()[6 * 16 + c] += 1.0f;
  auto pert = enc.forward(x2).out;
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t c = 0; c < 16; ++c) REQUIRE(base.at(t, c) == pert.at(t, c));
}

TEST_CASE("streaming equals offline for the causal stack (bitwise here)") {
  ParamStore<float> ps(17);
  auto cfg = causal_cfg();
  EncoderStack<float> enc(ps, "enc", cfg, 8, 128, true);
  Rng rng(104);

  for (int64_t T : {1, 2, 9, 50}) {
    auto x = random_tensor<float>({T, 8}, rng);
    auto offline = enc.forward(x, /*tap_block=*/2);

    EncoderStackStream<float> stream(enc, 2);
    std::vector<Row<float>> outs, taps;
    for (int64_t t = 0; t < T; ++t) {
      Row<float> frame(x.vec().begin() + t * 8, x.vec().begin() + (t + 1) * 8);
      for (auto& e : stream.push(frame)) {
        outs.push_back(e.out);
        taps.push_back(e.tap);
      }
    }
    for (auto& e : stream.flush()) {
      outs.push_back(e.out);
      taps.push_back(e.tap);
    }
    REQUIRE(static_cast<int64_t>(outs.size()) == offline.out.dim(0));
    float worst = 0;
    for (size_t t = 0; t < outs.size(); ++t)
      for (int64_t c = 0; c < 16; ++c) {
        worst = std::max(worst, std::abs(outs[t][c] - offline.out.at(t, c)));
        worst = std::max(worst, std::abs(taps[t][c] - offline.tap.at(t, c)));
      }
    INFO("T=" << T);
    REQUIRE(worst <= 1e-5f);
    REQUIRE(worst == 0.0f);  // same kernels, same order
  }
}

TEST_CASE("streaming equals offline for the lookahead stack; emission timing is exact") {
  ParamStore<float> ps(18);
  auto cfg = rc_cfg();
  EncoderStack<float> enc(ps, "enc", cfg, 16, 128, false);
  const int64_t R = enc.r_total();
  Rng rng(105);

  auto x = random_tensor<float>({20, 16}, rng);
  auto offline = enc.forward(x);

  EncoderStackStream<float> stream(enc, -1);
  std::vector<Row<float>> outs;
  for (int64_t t = 0; t < 20; ++t) {
    Row<float> frame(x.vec().begin() + t * 16, x.vec().begin() + (t + 1) * 16);
    auto emitted = stream.push(frame);
    for (auto& e : emitted) outs.push_back(e.out);
    // frame t of the output finalizes exactly when input t+R arrives
    REQUIRE(static_cast<int64_t>(outs.size()) == std::max<int64_t>(0, t - R + 1));
  }
  for (auto& e : stream.flush()) outs.push_back(e.out);
  REQUIRE(outs.size() == 20);
  for (size_t t = 0; t < outs.size(); ++t)
    for (int64_t c = 0; c < 16; ++c) REQUIRE(outs[t][c] == offline.out.at(t, c));
}

TEST_CASE("flush on an empty stream emits nothing; stepping after flush fails") {
  ParamStore<float> ps(19);
  EncoderStack<float> enc(ps, "enc", rc_cfg(), 16, 64, false);
  EncoderStackStream<float> stream(enc, -1);
  REQUIRE(stream.flush().empty());
  REQUIRE_THROWS_AS(stream.push(Row<float>(16, 0.0f)), ValueError);
  // a second flush is also a step after flush
  EncoderStackStream<float> s2(enc, -1);
  (void)s2.flush();
  REQUIRE_THROWS_AS(s2.flush(), ValueError);
}

TEST_CASE("encoder rejects inputs beyond the positional table") {
  ParamStore<float> ps(20);
  EncoderStack<float> enc(ps, "enc", causal_cfg(), 8, 8, true);
  Rng rng(106);
  REQUIRE_THROWS_AS(enc.forward(random_tensor<float>({9, 8}, rng)), ValueError);
}

TEST_CASE("config validation catches bad encoder setups") {
  EncoderConfig bad = causal_cfg();
  bad.per_layer_right_context = {0, 0};  // wrong length
  REQUIRE_THROWS_AS(bad.validate("x"), ValueError);

  EncoderConfig odd = causal_cfg();
  odd.d_model = 15;  // not divisible by heads
  REQUIRE_THROWS_AS(odd.validate("x"), ValueError);

  REQUIRE_THROWS_AS(EncoderConfig::even_right_context(5, 2), ValueError);
  REQUIRE(EncoderConfig::even_right_context(15, 5) == std::vector<int64_t>(5, 3));
}
