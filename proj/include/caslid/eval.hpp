#pragma once

// Whole-dataset evaluation: two-pass decoding, WER per pass and locale,
// frame-indexed LID accuracy, and CSV / aligned-text renderings.

#include <map>
#include <string>
#include <vector>

#include "caslid/cascade.hpp"
#include "caslid/metrics.hpp"

namespace caslid {

template <typename S>
struct EvalResult {
  std::map<std::string, WerCounts> wer1, wer2;  // locale -> counts
  WerCounts wer1_total, wer2_total;
  bool has_lid = false;
  LidReport lid;
  std::vector<TwoPassOutput<S>> outputs;  // dataset order
};

template <typename S>
EvalResult<S> evaluate_model(const CascadeModel<S>& model,
                             const std::vector<Utterance<S>>& utts, int64_t threads = 1) {
  if (utts.empty()) throw ValueError("evaluate: empty evaluation set");
  const auto& cfg = model.config();
  EvalResult<S> res;
  res.outputs.resize(utts.size());

  auto run_range = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) res.outputs[i] = model.forward_two_pass(utts[i]);
  };
  const size_t nthreads = std::min<size_t>(std::max<int64_t>(threads, 1), utts.size());
  if (nthreads <= 1) {
    run_range(0, utts.size());
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::atomic<size_t> failed{0};
    const size_t chunk = (utts.size() + nthreads - 1) / nthreads;
    for (size_t w = 0; w < nthreads; ++w) {
      const size_t lo = w * chunk, hi = std::min(utts.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        try {
          run_range(lo, hi);
        } catch (...) {
          if (failed.fetch_add(1) == 0) error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  for (size_t i = 0; i < utts.size(); ++i) {
    const auto& loc = cfg.locales[static_cast<size_t>(utts[i].label)];
    auto c1 = wer_counts(utts[i].tokens, res.outputs[i].first_tokens);
    auto c2 = wer_counts(utts[i].tokens, res.outputs[i].second_tokens);
    res.wer1[loc] += c1;
    res.wer2[loc] += c2;
    res.wer1_total += c1;
    res.wer2_total += c2;
  }

  if (cfg.predicted_mode()) {
    res.has_lid = true;
    std::vector<std::vector<std::vector<S>>> traces;
    std::vector<int64_t> labels;
    for (size_t i = 0; i < utts.size(); ++i) {
      traces.push_back(res.outputs[i].z_trace);
      labels.push_back(utts[i].label);
    }
    res.lid = lid_accuracy<S>(traces, labels, cfg.eval.frame_indices, cfg.locales,
                              cfg.cluster_index_map(), cfg.cluster_names());
  }
  return res;
}

// ---- renderings ------------------------------------------------------------

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

template <typename S>
std::string wer_csv(const EvalResult<S>& res) {
  std::string out = "pass,locale,sub,ins,del,ref_tokens,flagged_empty_ref,wer_percent\n";
  auto row = [&](const char* pass, const std::string& loc, const WerCounts& c) {
    out += csv_join({pass, loc, std::to_string(c.sub), std::to_string(c.ins),
                     std::to_string(c.del), std::to_string(c.ref_len),
                     std::to_string(c.flagged_empty_ref), detail::fixed2(c.percent())}) +
           "\n";
  };
  for (const auto& [loc, c] : res.wer1) row("1st", loc, c);
  row("1st", "ALL", res.wer1_total);
  for (const auto& [loc, c] : res.wer2) row("2nd", loc, c);
  row("2nd", "ALL", res.wer2_total);
  return out;
}

template <typename S>
std::string lid_csv(const EvalResult<S>& res) {
  std::string out = "view,frame,group,correct,total,accuracy_percent\n";
  if (!res.has_lid) return out;
  for (const auto& [view, frames] : res.lid.cells)
    for (const auto& [frame, groups] : frames)
      for (const auto& [group, cell] : groups)
        out += csv_join({view, frame, group, std::to_string(cell.correct),
                         std::to_string(cell.total), detail::fixed2(cell.percent())}) +
               "\n";
  return out;
}

template <typename S>
std::string render_wer_table(const EvalResult<S>& res) {
  std::ostringstream os;
  os << "WER (%) by pass and locale\n";
  os << "  locale        1st      2nd\n";
  for (const auto& [loc, c1] : res.wer1) {
    const auto& c2 = res.wer2.at(loc);
    os << "  " << loc;
    for (size_t i = loc.size(); i < 12; ++i) os << ' ';
    os << detail::fixed2(c1.percent()) << "     " << detail::fixed2(c2.percent()) << "\n";
  }
  os << "  ALL         " << detail::fixed2(res.wer1_total.percent()) << "     "
     << detail::fixed2(res.wer2_total.percent()) << "\n";
  return os.str();
}

template <typename S>
std::string render_lid_table(const EvalResult<S>& res) {
  if (!res.has_lid) return "";
  std::ostringstream os;
  os << "LID accuracy (%) by frame index\n";
  os << "  view   frame   accuracy\n";
  for (const auto& [view, frames] : res.lid.cells) {
    // print avg first, then numeric frames ascending, then inf
    std::vector<std::string> order{"avg"};
    std::vector<int64_t> nums;
    for (const auto& [frame, groups] : frames) {
      (void)groups;
      if (frame != "avg" && frame != "inf") nums.push_back(std::stoll(frame));
    }
    std::sort(nums.begin(), nums.end());
    for (int64_t n : nums) order.push_back(std::to_string(n));
    order.push_back("inf");
    for (const auto& frame : order) {
      os << "  " << view << "   ";
      os << frame;
      for (size_t i = frame.size(); i < 6; ++i) os << ' ';
      os << detail::fixed2(res.lid.cells.at(view).at(frame).at("__all__").percent()) << "\n";
    }
  }
  return os.str();
}

inline std::string detokenize(const std::vector<int64_t>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += "t" + std::to_string(tokens[i]);
  }
  return out;
}

// JSON-lines decode dump: ids, token sequences, detokenized strings.
template <typename S>
std::string decode_jsonl(const EvalResult<S>& res, const std::vector<Utterance<S>>& utts,
                         const std::vector<std::string>& locales) {
  std::string out;
  for (size_t i = 0; i < utts.size(); ++i) {
    Json j{{"id", utts[i].id},
           {"locale", locales[static_cast<size_t>(utts[i].label)]},
           {"ref", utts[i].tokens},
           {"hyp1", res.outputs[i].first_tokens},
           {"hyp2", res.outputs[i].second_tokens},
           {"ref_text", detokenize(utts[i].tokens)},
           {"hyp1_text", detokenize(res.outputs[i].first_tokens)},
           {"hyp2_text", detokenize(res.outputs[i].second_tokens)}};
    out += j.dump() + "\n";
  }
  return out;
}

// z-trace export: one row per (utterance, frame) with per-locale probabilities.
template <typename S>
std::string z_trace_csv(const EvalResult<S>& res, const std::vector<Utterance<S>>& utts,
                        const std::vector<std::string>& locales) {
  std::string out = "utt_id,frame";
  for (const auto& loc : locales) out += "," + loc;
  out += "\n";
  for (size_t i = 0; i < res.outputs.size(); ++i)
    for (size_t t = 0; t < res.outputs[i].z_trace.size(); ++t) {
      out += std::to_string(utts[i].id) + "," + std::to_string(t);
      for (S v : res.outputs[i].z_trace[t]) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(v));
        out += std::string(",") + buf;
      }
      out += "\n";
    }
  return out;
}

}  // namespace caslid
