#pragma once

// Evaluation metrics: Levenshtein WER with a substitution/insertion/deletion
// decomposition, and frame-indexed LID accuracy with locale and cluster
// views.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "caslid/common.hpp"

namespace caslid {

struct WerCounts {
  int64_t sub = 0, ins = 0, del = 0;
  int64_t ref_len = 0;
  int64_t flagged_empty_ref = 0;  // hypotheses against an empty reference

  int64_t errors() const { return sub + ins + del; }
  double percent() const {
    return ref_len > 0 ? 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_len) : 0.0;
  }
  WerCounts& operator+=(const WerCounts& o) {
    sub += o.sub;
    ins += o.ins;
    del += o.del;
    ref_len += o.ref_len;
    flagged_empty_ref += o.flagged_empty_ref;
    return *this;
  }
};

// Unit-cost edit distance with a deterministic backtrace: prefer the
// diagonal (match/substitution), then deletion, then insertion. An empty
// reference with a non-empty hypothesis is counted as pure insertions,
// flagged, and excluded from aggregate WER division (ref_len stays 0).
inline WerCounts wer_counts(const std::vector<int64_t>& ref, const std::vector<int64_t>& hyp) {
  WerCounts out;
  out.ref_len = static_cast<int64_t>(ref.size());
  if (ref.empty()) {
    out.ins = static_cast<int64_t>(hyp.size());
    if (!hyp.empty()) out.flagged_empty_ref = 1;
    return out;
  }
  const size_t m = ref.size(), n = hyp.size();
  std::vector<int64_t> d((m + 1) * (n + 1));
  auto at = [&](size_t i, size_t j) -> int64_t& { return d[i * (n + 1) + j]; };
  for (size_t i = 0; i <= m; ++i) at(i, 0) = static_cast<int64_t>(i);
  for (size_t j = 0; j <= n; ++j) at(0, j) = static_cast<int64_t>(j);
  for (size_t i = 1; i <= m; ++i)
    for (size_t j = 1; j <= n; ++j) {
      const int64_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  // backtrace with fixed preference order
  size_t i = m, j = n;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) out.sub += 1;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      out.del += 1;
      --i;
    } else {
      out.ins += 1;
      --j;
    }
  }
  return out;
}

// ---- LID accuracy ------------------------------------------------------------

struct LidCell {
  int64_t correct = 0;
  int64_t total = 0;
  double percent() const { return total > 0 ? 100.0 * correct / static_cast<double>(total) : 0.0; }
};

struct LidReport {
  // view ("9cls" locale space, "7cls" cluster space) ->
  //   frame row ("avg", "0", "5", ..., "inf") ->
  //     group name (locale/cluster, or "__all__") -> cell
  std::map<std::string, std::map<std::string, std::map<std::string, LidCell>>> cells;

  double accuracy(const std::string& view, const std::string& frame_row,
                  const std::string& group = "__all__") const {
    return cells.at(view).at(frame_row).at(group).percent();
  }
};

// traces[i] is the per-frame distribution sequence of utterance i over
// locales; labels[i] its locale. Frame-k rows include only utterances with
// more than k frames; the "inf" row evaluates the final frame.
template <typename S>
LidReport lid_accuracy(const std::vector<std::vector<std::vector<S>>>& traces,
                       const std::vector<int64_t>& labels,
                       const std::vector<int64_t>& frame_indices,
                       const std::vector<std::string>& locales,
                       const std::vector<int64_t>& cluster_map,
                       const std::vector<std::string>& cluster_names) {
  if (traces.size() != labels.size()) throw ValueError("lid_accuracy: traces/labels mismatch");
  if (traces.empty()) throw ValueError("lid_accuracy: empty evaluation set");
  LidReport rep;

  auto argmax = [](const std::vector<S>& z) {
    size_t best = 0;
    for (size_t i = 1; i < z.size(); ++i)
      if (z[i] > z[best]) best = i;
    return static_cast<int64_t>(best);
  };

  auto tally = [&](const std::string& view, const std::string& frame_row,
                   const std::string& group, bool correct) {
    auto& cell = rep.cells[view][frame_row][group];
    cell.total += 1;
    cell.correct += correct ? 1 : 0;
    auto& all = rep.cells[view][frame_row]["__all__"];
    all.total += 1;
    all.correct += correct ? 1 : 0;
  };

  for (size_t ui = 0; ui < traces.size(); ++ui) {
    const auto& trace = traces[ui];
    if (trace.empty()) throw ValueError("lid_accuracy: utterance with empty trace");
    const int64_t label = labels[ui];
    const int64_t frames = static_cast<int64_t>(trace.size());
    const std::string loc = locales[static_cast<size_t>(label)];
    const std::string clu = cluster_names[static_cast<size_t>(cluster_map[static_cast<size_t>(label)])];

    auto judge = [&](int64_t t, const std::string& frame_row) {
      const int64_t pred = argmax(trace[static_cast<size_t>(t)]);
      tally("9cls", frame_row, loc, pred == label);
      const bool cluster_ok = cluster_map[static_cast<size_t>(pred)] ==
                              cluster_map[static_cast<size_t>(label)];
      tally("7cls", frame_row, clu, cluster_ok);
    };

    for (int64_t t = 0; t < frames; ++t) judge(t, "avg");
    for (int64_t k : frame_indices)
      if (frames > k) judge(k, std::to_string(k));
    judge(frames - 1, "inf");
  }
  return rep;
}

// ---- tiny CSV ------------------------------------------------------------

inline std::string csv_join(const std::vector<std::string>& fields) {
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ",";
    line += fields[i];
  }
  return line;
}

inline std::vector<std::vector<std::string>> csv_parse(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_string(line, ','));
  }
  return rows;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace caslid
