#include <catch2/catch_amalgamated.hpp>

#include "caslid/transducer.hpp"
#include "helpers.hpp"

using namespace caslid;
using test_util::random_tensor;

namespace {

// Random raw logits grid for T frames, U targets, vocab size V (+ blank).
Tensor<double> random_grid(int64_t T, int64_t U, int64_t V, Rng& rng) {
  return random_tensor<double>({T * (U + 1), V + 1}, rng, 1.5);
}

std::vector<int64_t> random_targets(int64_t U, int64_t V, Rng& rng) {
  std::vector<int64_t> y(static_cast<size_t>(U));
  for (auto& t : y) t = 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(V)));
  return y;
}

int64_t binomial(int64_t n, int64_t k) {
  int64_t r = 1;
  for (int64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

TEST_CASE("single alignment: T=1, U=0 gives -log p(blank)") {
  Rng rng(42);
  Vocab vocab{4};
  auto grid = random_grid(1, 0, 4, rng);
  auto loss = rnnt_loss_from_logits(grid, vocab, {}, 1);

  // direct: -log softmax(row 0)[blank]
  std::vector<double> row(grid.vec());
  const double lse = kernels::logsumexp_row(row.data(), 5);
  REQUIRE(loss.item() == Catch::Approx(-(row[0] - lse)).margin(1e-12));
}

TEST_CASE("U=0 is the product of the T blank probabilities") {
  Rng rng(43);
  Vocab vocab{3};
  const int64_t T = 4;
  auto grid = random_grid(T, 0, 3, rng);
  auto loss = rnnt_loss_from_logits(grid, vocab, {}, T);
  double want = 0;
  for (int64_t t = 0; t < T; ++t) {
    const double* row = grid.vec().data() + t * 4;
    want -= row[0] - kernels::logsumexp_row(row, 4);
  }
  REQUIRE(loss.item() == Catch::Approx(want).margin(1e-10));
}

TEST_CASE("T=2, U=1 matches a hand enumeration of both alignments") {
  Rng rng(44);
  Vocab vocab{3};
  auto grid = random_grid(2, 1, 3, rng);
  const std::vector<int64_t> y = {2};

  // log-softmax by hand
  auto lp = [&](int64_t t, int64_t u, int64_t v) {
    const double* row = grid.vec().data() + (t * 2 + u) * 4;
    return row[v] - kernels::logsumexp_row(row, 4);
  };
  // alignments of length T+U=3 ending in blank:
  //   y1 at (0,0), blank at (0->1), blank at (1->2):  y1 b b
  //   blank, y1 at (1,0), blank:                      b y1 b
  // (b b y1 is invalid: no frame left to emit on)
  const double path1 = lp(0, 0, 2) + lp(0, 1, 0) + lp(1, 1, 0);
  const double path2 = lp(0, 0, 0) + lp(1, 0, 2) + lp(1, 1, 0);
  const double want = -detail::lse2(path1, path2);

  auto loss = rnnt_loss_from_logits(grid, vocab, y, 2);
  REQUIRE(loss.item() == Catch::Approx(want).margin(1e-10));
  REQUIRE(rnnt_loss_bruteforce_from_logits(grid, vocab, y, 2) ==
          Catch::Approx(want).margin(1e-10));
}

TEST_CASE("uniform emission distributions give the counting closed form") {
  Vocab vocab{5};
  for (int64_t T = 1; T <= 4; ++T)
    for (int64_t U = 0; U <= 3; ++U) {
      auto grid = Tensor<double>::zeros({T * (U + 1), vocab.total()});
      std::vector<int64_t> y(static_cast<size_t>(U), 1);
      auto loss = rnnt_loss_from_logits(grid, vocab, y, T);
      // #valid alignments = C(T+U-1, U); each has prob (1/(V+1))^(T+U)
      const double want = -(std::log(static_cast<double>(binomial(T + U - 1, U))) -
                            static_cast<double>(T + U) * std::log(6.0));
      INFO("T=" << T << " U=" << U);
      REQUIRE(loss.item() == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("lattice DP equals brute-force enumeration for all small shapes") {
  Rng rng(45);
  Vocab vocab{6};
  for (int64_t T = 1; T <= 4; ++T)
    for (int64_t U = 0; U <= 3; ++U)
      for (int rep = 0; rep < 20; ++rep) {
        auto grid = random_grid(T, U, 6, rng);
        auto y = random_targets(U, 6, rng);
        const double dp = rnnt_loss_from_logits(grid, vocab, y, T).item();
        const double bf = rnnt_loss_bruteforce_from_logits(grid, vocab, y, T);
        INFO("T=" << T << " U=" << U << " rep=" << rep);
        REQUIRE(std::abs(dp - bf) <= 1e-6);
      }
}

TEST_CASE("alpha and beta agree on the total log-probability") {
  Rng rng(46);
  const int64_t T = 4, U = 3;
  auto grid = random_grid(T, U, 4, rng);
  auto y = random_targets(U, 4, rng);
  auto ls = detail::grid_log_softmax(grid);
  auto lat = rnnt_lattice<double>(ls, T, U, y);
  REQUIRE(lat.alpha[T * (U + 1) + U] == Catch::Approx(lat.beta[0]).margin(1e-10));
}

TEST_CASE("loss gradient w.r.t. logits matches finite differences") {
  Rng rng(47);
  Vocab vocab{4};
  for (int rep = 0; rep < 4; ++rep) {
    const int64_t T = 3, U = 2;
    auto grid = random_grid(T, U, 4, rng);
    auto y = random_targets(U, 4, rng);

    Tape<double> tape;
    std::vector<double> analytic;
    {
      Tape<double>::Scope scope(tape);
      auto gi = grid.clone();
      gi.set_requires_grad(true);
      tape.backward(rnnt_loss_from_logits(gi, vocab, y, T));
      analytic = std::vector<double>(tape.grad(gi).vec());
    }
    std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& g) {
      return rnnt_loss_from_logits(g, vocab, y, T).item();
    };
    REQUIRE(test_util::max_grad_rel_error<double>(f, grid, analytic) < 1e-4);
  }
}

TEST_CASE("loss is invariant under vocabulary relabeling") {
  Rng rng(48);
  Vocab vocab{5};
  const int64_t T = 3, U = 2;
  auto grid = random_grid(T, U, 5, rng);
  const std::vector<int64_t> y = {2, 4};
  const double base = rnnt_loss_from_logits(grid, vocab, y, T).item();

  // permute token ids 1..5 (blank fixed): v -> perm[v]
  const std::vector<int64_t> perm = {0, 3, 5, 1, 2, 4};
  auto permuted = Tensor<double>::zeros(grid.shape());
  for (int64_t r = 0; r < grid.dim(0); ++r)
    for (int64_t v = 0; v < 6; ++v)
      permuted.mutable_vec()[r * 6 + perm[v]] = grid.at(r, v);
  std::vector<int64_t> y2;
  for (int64_t tok : y) y2.push_back(perm[tok]);

  REQUIRE(rnnt_loss_from_logits(permuted, vocab, y2, T).item() ==
          Catch::Approx(base).margin(1e-9));
}

TEST_CASE("error paths: bad tokens, oversized oracle instances, bad grids") {
  Rng rng(49);
  Vocab vocab{4};
  auto grid = random_grid(2, 1, 4, rng);
  REQUIRE_THROWS_AS(rnnt_loss_from_logits(grid, vocab, {9}, 2), ValueError);   // out of vocab
  REQUIRE_THROWS_AS(rnnt_loss_from_logits(grid, vocab, {0}, 2), ValueError);   // blank in y
  REQUIRE_THROWS_AS(rnnt_loss_from_logits(grid, vocab, {1, 2}, 2), ShapeError);  // grid mismatch

  auto big = random_grid(8, 4, 4, rng);
  REQUIRE_THROWS_AS(
      rnnt_loss_bruteforce_from_logits(big, vocab, random_targets(4, 4, rng), 8), ValueError);
}

TEST_CASE("decoder-level loss agrees with its own brute force on random models") {
  Rng rng(50);
  ParamStore<double> ps(1234);
  Vocab vocab{5};
  TransducerDecoder<double> dec(ps, "dec", vocab, /*acoustic=*/6, /*embed=*/4, /*rnn=*/8,
                                /*layers=*/2, /*proj=*/5, /*joint=*/7);
  for (int rep = 0; rep < 5; ++rep) {
    auto h = random_tensor<double>({3, 6}, rng);
    auto y = random_targets(2, 5, rng);
    REQUIRE(dec.rnnt_loss(h, y).item() ==
            Catch::Approx(dec.rnnt_loss_bruteforce(h, y)).margin(1e-8));
  }
}

TEST_CASE("joint logits softmax to a distribution; zero inputs hit the output bias") {
  ParamStore<double> ps(7);
  JointNet<double> joint(ps, "j", 6, 5, 8, 10);
  // randomize the output bias so the check is non-trivial
  Rng rng(51);
  auto* bias = ps.find("j.out.b");
  for (auto& v : bias->value.mutable_vec()) v = rng.normal();

  auto h = random_tensor<double>({6}, rng);
  auto g = random_tensor<double>({5}, rng);
  auto z = softmax(joint.logits(h, g));
  double s = 0;
  for (int64_t i = 0; i < z.numel(); ++i) s += z[i];
  REQUIRE(s == Catch::Approx(1.0).margin(1e-6));

  auto lg = joint.logits(Tensor<double>::zeros({6}), Tensor<double>::zeros({5}));
  REQUIRE(max_abs_diff(lg, bias->value) == 0.0);
}

TEST_CASE("permuting output-projection rows permutes joint logits identically") {
  ParamStore<double> ps(8);
  Rng rng(52);
  JointNet<double> joint(ps, "j", 4, 3, 6, 5);
  auto h = random_tensor<double>({4}, rng);
  auto g = random_tensor<double>({3}, rng);
  auto base = joint.logits(h, g);

  const std::vector<int64_t> perm = {2, 0, 4, 1, 3};
  auto* w = ps.find("j.out.w");
  auto* b = ps.find("j.out.b");
  auto worig = w->value.clone();
  auto borig = b->value.clone();
  for (int64_t col = 0; col < 5; ++col) {
    for (int64_t row = 0; row < 6; ++row)
      w->value.mutable_vec()[row * 5 + perm[col]] = worig.at(row, col);
    b->value.mutable_vec()[perm[col]] = borig[col];
  }
  auto permuted = joint.logits(h, g);
  for (int64_t v = 0; v < 5; ++v)
    REQUIRE(permuted[perm[v]] == Catch::Approx(base[v]).margin(1e-12));
}

TEST_CASE("prediction net is pure: same tokens always give the same rows") {
  ParamStore<double> ps(9);
  Vocab vocab{6};
  PredictionNet<double> pn(ps, "pn", vocab, 4, 8, 2, 5);
  auto a = pn.output_rows({1, 3, 2});
  auto b = pn.output_rows({1, 3, 2});
  REQUIRE(max_abs_diff(a, b) == 0.0);

  // feeding blank is a begin-of-sequence device only; decode never advances
  // on blank, so the text representation after tokens {1,3} is independent
  // of how many blanks the frame loop consumed.
  auto st = pn.initial();
  st = pn.advance(st, 1);
  st = pn.advance(st, 3);
  auto direct = pn.output_rows({1, 3});
  REQUIRE(max_abs_diff(slice_rows(direct, 2, 1),
                       reshape_copy(st.out, {1, st.out.numel()})) == 0.0);
}
