#include <catch2/catch_amalgamated.hpp>

#include "caslid/lid.hpp"
#include "helpers.hpp"

using namespace caslid;
using test_util::random_tensor;

namespace {

// Independent oracle: two-pass batch mean / population std over a prefix.
template <typename S>
std::vector<S> two_pass_stats(const std::vector<std::vector<S>>& rows, int64_t upto) {
  const int64_t d = static_cast<int64_t>(rows[0].size());
  std::vector<S> out(static_cast<size_t>(2 * d));
  for (int64_t i = 0; i < d; ++i) {
    double m = 0;
    for (int64_t t = 0; t <= upto; ++t) m += rows[t][i];
    m /= (upto + 1);
    double v = 0;
    for (int64_t t = 0; t <= upto; ++t) v += (rows[t][i] - m) * (rows[t][i] - m);
    v /= (upto + 1);
    out[static_cast<size_t>(i)] = static_cast<S>(m);
    out[static_cast<size_t>(d + i)] = static_cast<S>(std::sqrt(v));
  }
  return out;
}

}  // namespace

TEST_CASE("pool_update: zeros leave sums unchanged, count advances") {
  PoolState<double> st(3);
  pool_update<double>(st, std::vector<double>{1.0, 2.0, 3.0});
  pool_update<double>(st, std::vector<double>{0.0, 0.0, 0.0});
  REQUIRE(st.count == 2);
  REQUIRE(st.sum == std::vector<double>{1.0, 2.0, 3.0});
  REQUIRE(st.sq_sum == std::vector<double>{1.0, 4.0, 9.0});
}

TEST_CASE("constant frames give mu = c, sigma = 0") {
  PoolState<double> st(2);
  for (int t = 0; t < 7; ++t) pool_update<double>(st, std::vector<double>{2.5, -1.0});
  auto s = pool_stats(st);
  REQUIRE(s[0] == Catch::Approx(2.5).margin(1e-12));
  REQUIRE(s[1] == Catch::Approx(-1.0).margin(1e-12));
  REQUIRE(s[2] == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(s[3] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("single frame: mu = h1, sigma = 0; empty pool is an error") {
  PoolState<double> st(2);
  REQUIRE_THROWS_AS(pool_stats(st), ValueError);
  REQUIRE_THROWS_AS(pool_variance_raw(st), ValueError);
  pool_update<double>(st, std::vector<double>{4.0, -3.0});
  auto s = pool_stats(st);
  REQUIRE(s == std::vector<double>{4.0, -3.0, 0.0, 0.0});
  REQUIRE_THROWS_AS(pool_update<double>(st, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("frames [0] and [2] give mu=1, sigma=1 (hand-checked sum-of-squares form)") {
  PoolState<double> st(1);
  pool_update<double>(st, std::vector<double>{0.0});
  pool_update<double>(st, std::vector<double>{2.0});
  auto s = pool_stats(st);
  // (4 - 2*1*2 + 2*1) / 2 = 1
  REQUIRE(s[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(s[1] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("affine shift moves mu and leaves sigma unchanged") {
  Rng rng(60);
  PoolState<float> a(4), b(4);
  const float c = 2.75f;
  for (int t = 0; t < 20; ++t) {
    std::vector<float> row(4);
    for (auto& v : row) v = static_cast<float>(rng.normal());
    auto shifted = row;
    for (auto& v : shifted) v += c;
    pool_update<float>(a, row);
    pool_update<float>(b, shifted);
  }
  auto sa = pool_stats(a), sb = pool_stats(b);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(sb[i] == Catch::Approx(sa[i] + c).margin(1e-4));
    REQUIRE(sb[4 + i] == Catch::Approx(sa[4 + i]).margin(1e-4));
  }
}

TEST_CASE("streaming pooling equals the two-pass batch oracle at every prefix") {
  Rng rng(61);
  // 32-bit
  {
    float worst = 0, worst_raw_var = 0;
    for (int rep = 0; rep < 10; ++rep) {
      const int64_t T = 100, d = 16;
      std::vector<std::vector<float>> rows;
      for (int64_t t = 0; t < T; ++t) {
        std::vector<float> r(d);
        for (auto& v : r) v = static_cast<float>(rng.normal());
        rows.push_back(r);
      }
      PoolState<float> st(d);
      for (int64_t t = 0; t < T; ++t) {
        pool_update<float>(st, rows[static_cast<size_t>(t)]);
        auto got = pool_stats(st);
        auto want = two_pass_stats<float>(rows, t);
        for (size_t i = 0; i < got.size(); ++i)
          worst = std::max(worst, std::abs(got[i] - want[i]));
        for (double rv : pool_variance_raw(st))
          worst_raw_var = std::min(worst_raw_var, static_cast<float>(rv));
      }
    }
    REQUIRE(worst <= 1e-5f);
    // the clamp only absorbs fp noise on these inputs
    REQUIRE(worst_raw_var >= -1e-4f);
  }
  // 64-bit
  {
    double worst = 0;
    for (int rep = 0; rep < 10; ++rep) {
      const int64_t T = 150, d = 8;
      std::vector<std::vector<double>> rows;
      for (int64_t t = 0; t < T; ++t) {
        std::vector<double> r(d);
        for (auto& v : r) v = rng.normal();
        rows.push_back(r);
      }
      PoolState<double> st(d);
      for (int64_t t = 0; t < T; ++t) {
        pool_update<double>(st, rows[static_cast<size_t>(t)]);
        auto got = pool_stats(st);
        auto want = two_pass_stats<double>(rows, t);
        for (size_t i = 0; i < got.size(); ++i)
          worst = std::max(worst, std::abs(got[i] - want[i]));
      }
    }
    REQUIRE(worst <= 1e-10);
  }
}

TEST_CASE("differentiable prefix pooling matches the streaming state machine") {
  Rng rng(62);
  auto h = random_tensor<double>({40, 6}, rng);
  auto rows_tensor = pooled_stats_rows(h);

  PoolState<double> st(6);
  for (int64_t t = 0; t < 40; ++t) {
    std::vector<double> row(h.vec().begin() + t * 6, h.vec().begin() + (t + 1) * 6);
    pool_update<double>(st, row);
    auto want = pool_stats(st);
    for (int64_t i = 0; i < 12; ++i)
      REQUIRE(rows_tensor.at(t, i) == Catch::Approx(want[static_cast<size_t>(i)]).margin(1e-10));
  }
}

TEST_CASE("prefix pooling is differentiable (finite differences, incl. t=1 sigma=0)") {
  Rng rng(63);
  auto h = random_tensor<double>({5, 3}, rng);
  Tape<double> tape;
  std::vector<double> analytic;
  {
    Tape<double>::Scope scope(tape);
    auto hi = h.clone();
    hi.set_requires_grad(true);
    tape.backward(mean(pooled_stats_rows(hi)));
    analytic = std::vector<double>(tape.grad(hi).vec());
  }
  std::function<double(const Tensor<double>&)> f = [](const Tensor<double>& hv) {
    return mean(pooled_stats_rows(hv)).item();
  };
  REQUIRE(test_util::max_grad_rel_error<double>(f, h, analytic) < 1e-4);
}

TEST_CASE("lid head emits a distribution; zero weights give uniform") {
  ParamStore<float> ps(64);
  LidHead<float> head(ps, "lid", 8, 16, 9, true);
  Rng rng(65);
  PoolState<float> pool(8);
  std::vector<float> frame(8);
  for (auto& v : frame) v = static_cast<float>(rng.normal());
  auto z = head.z_row(pool, frame);
  float s = 0;
  for (float v : z) {
    REQUIRE(v >= 0.0f);
    s += v;
  }
  REQUIRE(s == Catch::Approx(1.0f).margin(1e-6));

  // zero all head parameters -> uniform output
  ParamStore<float> ps0(66);
  LidHead<float> zero_head(ps0, "lid", 8, 16, 9, true);
  for (auto& p : ps0.params())
    for (auto& v : p.value.mutable_vec()) v = 0.0f;
  PoolState<float> pool0(8);
  auto z0 = zero_head.z_row(pool0, frame);
  for (float v : z0) REQUIRE(v == Catch::Approx(1.0f / 9.0f).margin(1e-7));
}

TEST_CASE("temperature scaling changes z but not its argmax") {
  auto logits = Tensor<double>::from_vector({4}, {0.1, 1.4, -0.3, 0.9});
  auto z1 = softmax(logits);
  auto z2 = softmax(scale(logits, 3.0));
  REQUIRE(max_abs_diff(z1, z2) > 1e-3);
  REQUIRE(argmax_index<double>(z1.values()) == argmax_index<double>(z2.values()));
}

TEST_CASE("lid_feature modes: shapes, one-hotness, gradient flow") {
  const std::vector<int64_t> cmap = {0, 1, 1, 2, 2, 3, 4, 5, 6};  // 9 -> 7
  auto z_vals = Tensor<double>::from_vector({1, 9}, {.05, .1, .3, .05, .1, .1, .1, .1, .1});

  SECTION("argmax mode is a one-hot at the max") {
    auto f = lid_feature(z_vals, LidMode::Argmax, cmap, 7);
    REQUIRE(f.shape() == Shape{1, 9});
    REQUIRE(f.at(0, 2) == 1.0);
  }
  SECTION("cluster mode is a 7-dim one-hot") {
    auto f = lid_feature(z_vals, LidMode::Cluster, cmap, 7);
    REQUIRE(f.shape() == Shape{1, 7});
    REQUIRE(f.at(0, 1) == 1.0);  // locale 2 -> cluster 1
  }
  SECTION("sg blocks gradient, argmax passes it straight through") {
    for (auto mode : {LidMode::StopGrad, LidMode::Argmax}) {
      Tape<double> tape;
      Tape<double>::Scope scope(tape);
      auto z = z_vals.clone();
      z.set_requires_grad(true);
      auto f = lid_feature(z, mode, cmap, 7);
      tape.backward(sum(f));
      auto g = tape.grad(z);
      double norm = 0;
      for (int64_t i = 0; i < g.numel(); ++i) norm += std::abs(g[i]);
      if (mode == LidMode::StopGrad) {
        REQUIRE(norm == 0.0);
      } else {
        REQUIRE(norm > 0.0);  // straight-through: d(sum one-hot)/dz = 1 per entry
      }
    }
  }
  SECTION("row variant agrees with the tensor variant") {
    std::vector<double> zr(z_vals.vec());
    for (auto mode : {LidMode::Distribution, LidMode::Argmax, LidMode::StopGrad, LidMode::Cluster}) {
      auto f = lid_feature(z_vals, mode, cmap, 7);
      auto fr = lid_feature_row(zr, mode, cmap, 7);
      REQUIRE(static_cast<int64_t>(fr.size()) == f.dim(1));
      for (int64_t i = 0; i < f.dim(1); ++i) REQUIRE(fr[static_cast<size_t>(i)] == f.at(0, i));
    }
  }
}

TEST_CASE("lid_loss: degenerate, uniform, and hand-computed values") {
  std::vector<double> perfect = {0.0, 1.0, 0.0};
  REQUIRE(lid_loss<double>(perfect, 1) == Catch::Approx(0.0).margin(1e-12));

  std::vector<double> uniform(5, 0.2);
  REQUIRE(lid_loss<double>(uniform, 3) == Catch::Approx(std::log(5.0)).margin(1e-12));

  std::vector<double> z = {0.5, 0.25, 0.25};
  REQUIRE(lid_loss<double>(z, 1) == Catch::Approx(1.3863).margin(1e-4));

  REQUIRE_THROWS_AS(lid_loss<double>(z, 7), ValueError);
}

TEST_CASE("logit-space loss equals -ln z[label]") {
  Rng rng(67);
  auto logits = random_tensor<double>({6, 5}, rng, 2.0);
  auto z = softmax(logits);
  const int64_t label = 2;
  double want = 0;
  for (int64_t t = 0; t < 6; ++t)
    want += lid_loss<double>({z.vec().data() + t * 5, 5}, label);
  want /= 6;
  REQUIRE(lid_loss_mean_from_logits(logits, label).item() == Catch::Approx(want).margin(1e-10));
}
