#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "caslid/eval.hpp"
#include "caslid/metrics.hpp"

using namespace caslid;

namespace {

// Independent oracle: the textbook recursive definition, memoized.
int64_t edit_distance_recursive(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                size_t i, size_t j, std::map<std::pair<size_t, size_t>, int64_t>& memo) {
  if (i == a.size()) return static_cast<int64_t>(b.size() - j);
  if (j == b.size()) return static_cast<int64_t>(a.size() - i);
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int64_t best = edit_distance_recursive(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, edit_distance_recursive(a, b, i + 1, j, memo) + 1);
  best = std::min(best, edit_distance_recursive(a, b, i, j + 1, memo) + 1);
  memo[key] = best;
  return best;
}

int64_t edit_distance_oracle(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::map<std::pair<size_t, size_t>, int64_t> memo;
  return edit_distance_recursive(a, b, 0, 0, memo);
}

}  // namespace

TEST_CASE("wer: identity, substitution, deletion, empty-reference edge") {
  REQUIRE(wer_counts({1, 2, 3}, {1, 2, 3}).percent() == 0.0);

  auto sub = wer_counts({1, 2, 3}, {1, 9, 3});
  REQUIRE(sub.sub == 1);
  REQUIRE(sub.ins == 0);
  REQUIRE(sub.del == 0);
  REQUIRE(sub.percent() == Catch::Approx(33.3333).margin(0.01));

  auto del = wer_counts({1}, {});
  REQUIRE(del.del == 1);
  REQUIRE(del.percent() == Catch::Approx(100.0).margin(1e-9));

  auto empty_ref = wer_counts({}, {4, 5});
  REQUIRE(empty_ref.ins == 2);
  REQUIRE(empty_ref.ref_len == 0);
  REQUIRE(empty_ref.flagged_empty_ref == 1);
  REQUIRE(empty_ref.percent() == 0.0);  // excluded from division

  REQUIRE(wer_counts({}, {}).flagged_empty_ref == 0);
}

TEST_CASE("wer decomposition prefers substitution over insert+delete") {
  auto c = wer_counts({1, 2}, {3, 4});
  REQUIRE(c.sub == 2);
  REQUIRE(c.ins == 0);
  REQUIRE(c.del == 0);
}

TEST_CASE("wer DP equals the exhaustive recursive oracle on all pairs up to length 6") {
  // all token-sequence pairs over a 3-symbol alphabet, lengths 0..6
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
  REQUIRE(all.size() == 1093);

  int64_t checked = 0;
  for (const auto& ref : all)
    for (const auto& hyp : all) {
      auto c = wer_counts(ref, hyp);
      const int64_t oracle = edit_distance_oracle(ref, hyp);
      if (c.errors() != oracle) {
        INFO("ref size " << ref.size() << " hyp size " << hyp.size());
        REQUIRE(c.errors() == oracle);
      }
      ++checked;
    }
  REQUIRE(checked == 1093 * 1093);
}

TEST_CASE("lid_accuracy: hand-counted frame rows") {
  // utterance A: T=3, correct at every frame; utterance B: T=2, always wrong
  std::vector<std::vector<std::vector<double>>> traces = {
      {{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}},
      {{0.9, 0.1}, {0.6, 0.4}},
  };
  std::vector<int64_t> labels = {0, 1};
  std::vector<std::string> locales = {"aa", "bb"};
  std::vector<int64_t> cmap = {0, 1};
  std::vector<std::string> cnames = {"aa", "bb"};

  auto rep = lid_accuracy<double>(traces, labels, {2}, locales, cmap, cnames);
  REQUIRE(rep.accuracy("9cls", "avg") == Catch::Approx(60.0).margin(1e-9));   // 3 of 5 frames
  REQUIRE(rep.accuracy("9cls", "2") == Catch::Approx(100.0).margin(1e-9));    // only A qualifies
  REQUIRE(rep.accuracy("9cls", "inf") == Catch::Approx(50.0).margin(1e-9));   // final frames: A yes, B no
  REQUIRE(rep.accuracy("9cls", "avg", "aa") == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("lid_accuracy cluster view maps prediction and label") {
  // locales 0,1 cluster together; prediction 1 for label 0 is correct in the
  // cluster view, wrong in the locale view
  std::vector<std::vector<std::vector<double>>> traces = {{{0.2, 0.7, 0.1}}};
  std::vector<int64_t> labels = {0};
  std::vector<std::string> locales = {"en-GB", "en-US", "fr-FR"};
  std::vector<int64_t> cmap = {0, 0, 1};
  std::vector<std::string> cnames = {"en-X", "fr-FR"};
  auto rep = lid_accuracy<double>(traces, labels, {}, locales, cmap, cnames);
  REQUIRE(rep.accuracy("9cls", "avg") == 0.0);
  REQUIRE(rep.accuracy("7cls", "avg") == 100.0);

  REQUIRE_THROWS_AS(lid_accuracy<double>({}, {}, {}, locales, cmap, cnames), ValueError);
}

TEST_CASE("evaluation perfect/constant-wrong sanity") {
  // perfect predictor -> 100 everywhere; constant-wrong on balanced 2-class -> 50 avg
  std::vector<std::vector<std::vector<double>>> traces;
  std::vector<int64_t> labels;
  for (int i = 0; i < 10; ++i) {
    const int64_t label = i % 2;
    std::vector<std::vector<double>> tr(4, std::vector<double>{label == 0 ? 1.0 : 0.0,
                                                               label == 0 ? 0.0 : 1.0});
    traces.push_back(tr);
    labels.push_back(label);
  }
  std::vector<std::string> locales = {"aa", "bb"};
  std::vector<int64_t> cmap = {0, 1};
  auto rep = lid_accuracy<double>(traces, labels, {1}, locales, cmap, locales);
  REQUIRE(rep.accuracy("9cls", "avg") == 100.0);
  REQUIRE(rep.accuracy("9cls", "inf") == 100.0);

  for (auto& tr : traces)
    for (auto& z : tr) std::swap(z[0], z[1]);  // now constant-wrong
  auto bad = lid_accuracy<double>(traces, labels, {1}, locales, cmap, locales);
  REQUIRE(bad.accuracy("9cls", "avg") == 0.0);

  // constant prediction of class 0 on a balanced set: 50%
  for (auto& tr : traces)
    for (auto& z : tr) z = {1.0, 0.0};
  auto half = lid_accuracy<double>(traces, labels, {1}, locales, cmap, locales);
  REQUIRE(half.accuracy("9cls", "avg") == 50.0);
}

TEST_CASE("csv round-trips and aggregate WER equals error-weighted aggregation") {
  EvalResult<float> res;
  res.wer1["aa"] = WerCounts{1, 0, 1, 10, 0};
  res.wer1["bb"] = WerCounts{2, 1, 0, 30, 0};
  res.wer1_total = res.wer1["aa"];
  res.wer1_total += res.wer1["bb"];
  res.wer2 = res.wer1;
  res.wer2_total = res.wer1_total;

  auto rows = csv_parse(wer_csv(res));
  REQUIRE(rows[0][0] == "pass");
  // find the 1st-pass ALL row and check it against the per-locale counts
  double all_wer = -1;
  int64_t sum_err = 0, sum_n = 0;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r][0] != "1st") continue;
    if (rows[r][1] == "ALL") {
      all_wer = std::stod(rows[r][7]);
    } else {
      sum_err += std::stoll(rows[r][2]) + std::stoll(rows[r][3]) + std::stoll(rows[r][4]);
      sum_n += std::stoll(rows[r][5]);
    }
  }
  REQUIRE(all_wer == Catch::Approx(100.0 * sum_err / sum_n).margin(0.005));
}
