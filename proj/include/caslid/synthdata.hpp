#pragma once

// Deterministic synthetic multilingual corpus. Each locale is a bigram
// token chain over a vocab subset; a frame is
//
//   language_offset + token_mean + noise * N(0, I)
//
// so per-frame features identify the token (local signal for the ASR task)
// while the language offset only emerges from accumulated statistics —
// pooling over more frames genuinely helps LID. Paired locales share a
// cluster offset with a small per-locale perturbation, which makes the
// clustered (7-of-9) evaluation meaningful.
//
// Generation is a pure function of (config, seed): every utterance draws
// from its own counter-derived stream, so datasets are byte-identical
// across runs and machines.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "caslid/config.hpp"
#include "caslid/data.hpp"
#include "caslid/rng.hpp"

namespace caslid {

static_assert(std::endian::native == std::endian::little,
              "dataset format stores little-endian payloads");

struct LanguageSpec {
  std::string locale;
  std::vector<int64_t> token_subset;          // ids 1..V
  std::vector<std::vector<double>> bigram;    // [subset x subset], rows sum to 1
  std::vector<double> offset;                 // language offset vector
  double noise_scale = 0.0;
  int64_t dur_min = 0, dur_max = 0;
};

struct Dataset {
  int64_t d_feat = 0;
  int64_t vocab_size = 0;
  std::vector<std::string> locales;
  uint64_t config_hash = 0;
  std::vector<Utterance<float>> utterances;
};

namespace detail {

// Exact per-locale quotas by largest remainder; sampling noise would break
// the +-10% label-balance contract at small corpus sizes.
inline std::vector<int64_t> quota_counts(const std::vector<double>& mixture, int64_t total) {
  double sum = 0;
  for (double m : mixture) sum += m;
  std::vector<int64_t> counts(mixture.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  int64_t assigned = 0;
  for (size_t i = 0; i < mixture.size(); ++i) {
    const double exact = total * mixture[i] / sum;
    counts[i] = static_cast<int64_t>(exact);
    assigned += counts[i];
    remainders.push_back({exact - counts[i], i});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int64_t i = 0; i < total - assigned; ++i) counts[remainders[static_cast<size_t>(i)].second] += 1;
  return counts;
}

}  // namespace detail

// Per-locale generator specs derived from the config. Locales sharing a
// cluster share a base offset plus a small per-locale perturbation.
inline std::vector<LanguageSpec> build_language_specs(const CascadeConfig& cfg, uint64_t seed) {
  const auto& d = cfg.data;
  if (d.tokens_per_locale <= 0 || d.tokens_per_locale > cfg.vocab_size)
    throw ValueError("synthdata: tokens_per_locale must be in [1, vocab_size]");
  Rng master(seed);
  Rng offsets_rng = master.child(1);
  Rng subsets_rng = master.child(2);

  // cluster base offsets
  const auto cluster_names = cfg.cluster_names();
  std::vector<std::vector<double>> base(cluster_names.size(),
                                        std::vector<double>(static_cast<size_t>(cfg.d_feat)));
  for (auto& b : base)
    for (auto& v : b) v = offsets_rng.normal() * d.offset_scale;

  const auto cmap = cfg.cluster_index_map();
  std::vector<int64_t> cluster_sizes(cluster_names.size(), 0);
  for (int64_t c : cmap) cluster_sizes[static_cast<size_t>(c)] += 1;

  std::vector<LanguageSpec> specs;
  for (size_t li = 0; li < cfg.locales.size(); ++li) {
    LanguageSpec spec;
    spec.locale = cfg.locales[li];
    spec.noise_scale = d.noise_scale;
    spec.dur_min = d.token_dur_min;
    spec.dur_max = d.token_dur_max;

    spec.offset = base[static_cast<size_t>(cmap[li])];
    if (cluster_sizes[static_cast<size_t>(cmap[li])] > 1)
      for (auto& v : spec.offset) v += offsets_rng.normal() * d.pair_perturbation;

    // vocab subset: deterministic shuffle of 1..V, first tokens_per_locale
    std::vector<int64_t> all_tokens;
    for (int64_t t = 1; t <= cfg.vocab_size; ++t) all_tokens.push_back(t);
    subsets_rng.shuffle(all_tokens);
    spec.token_subset.assign(all_tokens.begin(), all_tokens.begin() + d.tokens_per_locale);
    std::sort(spec.token_subset.begin(), spec.token_subset.end());

    // bigram rows: positive weights, normalized
    const size_t k = spec.token_subset.size();
    spec.bigram.assign(k, std::vector<double>(k));
    for (auto& row : spec.bigram) {
      double sum = 0;
      for (auto& w : row) {
        w = 0.15 + subsets_rng.uniform();
        sum += w;
      }
      for (auto& w : row) w /= sum;
    }
    specs.push_back(std::move(spec));
  }

  // separability prerequisite
  for (size_t a = 0; a < specs.size(); ++a)
    for (size_t b = a + 1; b < specs.size(); ++b) {
      double dist = 0;
      for (size_t i = 0; i < specs[a].offset.size(); ++i) {
        const double diff = specs[a].offset[i] - specs[b].offset[i];
        dist += diff * diff;
      }
      if (dist <= 0)
        throw ValueError("synthdata: degenerate spec, locales " + specs[a].locale + " and " +
                         specs[b].locale + " have identical offsets");
    }
  return specs;
}

// Shared token mean table (one centroid per vocab id).
inline std::vector<std::vector<double>> build_token_means(const CascadeConfig& cfg, uint64_t seed) {
  Rng rng = Rng(seed).child(0);
  std::vector<std::vector<double>> means(static_cast<size_t>(cfg.vocab_size + 1),
                                         std::vector<double>(static_cast<size_t>(cfg.d_feat), 0.0));
  for (int64_t t = 1; t <= cfg.vocab_size; ++t)
    for (auto& v : means[static_cast<size_t>(t)]) v = rng.normal() * cfg.data.token_mean_scale;
  return means;
}

inline Utterance<float> generate_utterance(const LanguageSpec& spec,
                                           const std::vector<std::vector<double>>& token_means,
                                           int64_t label, int64_t d_feat, int64_t frames_min,
                                           int64_t frames_max, Rng rng, uint64_t id) {
  Utterance<float> utt;
  utt.label = label;
  utt.id = id;
  const int64_t frames = rng.uniform_int(static_cast<int>(frames_min), static_cast<int>(frames_max));

  std::vector<int64_t> durations;
  int64_t total = 0;
  size_t chain = rng.below(spec.token_subset.size());
  while (total < frames) {
    if (!utt.tokens.empty()) chain = rng.categorical(spec.bigram[chain]);
    utt.tokens.push_back(spec.token_subset[chain]);
    int64_t dur = rng.uniform_int(static_cast<int>(spec.dur_min), static_cast<int>(spec.dur_max));
    dur = std::min(dur, frames - total);
    durations.push_back(dur);
    total += dur;
  }

  auto feat = Tensor<float>::zeros({frames, d_feat});
  auto& v = feat.mutable_vec();
  int64_t t = 0;
  for (size_t ui = 0; ui < utt.tokens.size(); ++ui) {
    const auto& mean = token_means[static_cast<size_t>(utt.tokens[ui])];
    for (int64_t f = 0; f < durations[ui]; ++f, ++t)
      for (int64_t c = 0; c < d_feat; ++c)
        v[static_cast<size_t>(t * d_feat + c)] =
            static_cast<float>(spec.offset[static_cast<size_t>(c)] + mean[static_cast<size_t>(c)] +
                               rng.normal() * spec.noise_scale);
  }
  utt.features = feat;
  return utt;
}

// Whole corpus: exact label quotas, per-utterance counter streams, then a
// global zero-mean/unit-variance normalization pass (statistics over the
// generated set, like normalizing by training-corpus stats).
inline Dataset generate_dataset(const CascadeConfig& cfg, int64_t n_utts, uint64_t seed) {
  if (n_utts < 1) throw ValueError("generate_dataset: need at least one utterance");
  const auto& d = cfg.data;
  auto specs = build_language_specs(cfg, seed);
  auto token_means = build_token_means(cfg, seed);

  std::vector<double> mixture = d.mixture;
  if (mixture.empty()) {
    // built-in skew: one dominant locale (~25%), one rare (~5%), rest uniform
    mixture.assign(cfg.locales.size(), 10.0);
    for (size_t i = 0; i < cfg.locales.size(); ++i) {
      if (cfg.locales[i] == "en-US") mixture[i] = 25.0;
      if (cfg.locales[i] == "en-GB") mixture[i] = 5.0;
    }
  }
  auto counts = detail::quota_counts(mixture, n_utts);

  std::vector<int64_t> labels;
  for (size_t li = 0; li < counts.size(); ++li)
    labels.insert(labels.end(), static_cast<size_t>(counts[li]), static_cast<int64_t>(li));
  Rng master(seed);
  Rng order = master.child(3);
  order.shuffle(labels);

  Dataset ds;
  ds.d_feat = cfg.d_feat;
  ds.vocab_size = cfg.vocab_size;
  ds.locales = cfg.locales;
  {
    Json j = to_json(cfg)["data"];
    j["locales"] = cfg.locales;
    j["seed"] = seed;
    j["n_utts"] = n_utts;
    ds.config_hash = fnv1a64(j.dump());
  }

  for (int64_t i = 0; i < n_utts; ++i) {
    const int64_t label = labels[static_cast<size_t>(i)];
    ds.utterances.push_back(generate_utterance(
        specs[static_cast<size_t>(label)], token_means, label, cfg.d_feat, d.frames_min,
        d.frames_max, master.child(1000 + static_cast<uint64_t>(i)), static_cast<uint64_t>(i)));
  }

  // normalization pass: exact zero-mean unit-variance per dimension
  std::vector<double> mean(static_cast<size_t>(ds.d_feat), 0.0),
      var(static_cast<size_t>(ds.d_feat), 0.0);
  int64_t total_frames = 0;
  for (const auto& u : ds.utterances) {
    total_frames += u.features.dim(0);
    for (int64_t t = 0; t < u.features.dim(0); ++t)
      for (int64_t c = 0; c < ds.d_feat; ++c) mean[static_cast<size_t>(c)] += u.features.at(t, c);
  }
  for (auto& m : mean) m /= static_cast<double>(total_frames);
  for (const auto& u : ds.utterances)
    for (int64_t t = 0; t < u.features.dim(0); ++t)
      for (int64_t c = 0; c < ds.d_feat; ++c) {
        const double x = u.features.at(t, c) - mean[static_cast<size_t>(c)];
        var[static_cast<size_t>(c)] += x * x;
      }
  for (auto& s : var) s = std::sqrt(s / static_cast<double>(total_frames));
  for (auto& u : ds.utterances) {
    auto& v = u.features.mutable_vec();
    for (int64_t t = 0; t < u.features.dim(0); ++t)
      for (int64_t c = 0; c < ds.d_feat; ++c) {
        auto& x = v[static_cast<size_t>(t * ds.d_feat + c)];
        x = static_cast<float>((x - mean[static_cast<size_t>(c)]) / var[static_cast<size_t>(c)]);
      }
  }
  return ds;
}

// Deterministic disjoint partition with exact largest-remainder sizes.
inline std::vector<Dataset> split_dataset(const Dataset& ds, const std::vector<double>& fractions,
                                          uint64_t seed) {
  if (ds.utterances.empty()) throw ValueError("split_dataset: dataset is empty");
  double sum = 0;
  for (double f : fractions) {
    if (f < 0) throw ValueError("split_dataset: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValueError("split_dataset: fractions must sum to 1");

  const int64_t n = static_cast<int64_t>(ds.utterances.size());
  auto counts = detail::quota_counts(fractions, n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Dataset> out;
  size_t cursor = 0;
  for (size_t si = 0; si < fractions.size(); ++si) {
    Dataset part;
    part.d_feat = ds.d_feat;
    part.vocab_size = ds.vocab_size;
    part.locales = ds.locales;
    part.config_hash = ds.config_hash;
    for (int64_t i = 0; i < counts[si]; ++i)
      part.utterances.push_back(ds.utterances[static_cast<size_t>(order[cursor++])]);
    out.push_back(std::move(part));
  }
  return out;
}

// ---- on-disk format --------------------------------------------------------

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.append(tmp, sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw IoError("dataset file truncated");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_dataset(const Dataset& ds) {
  std::string buf;
  buf.append("CSLD");
  detail::put<uint32_t>(buf, 1);  // version
  detail::put<uint32_t>(buf, static_cast<uint32_t>(ds.d_feat));
  detail::put<uint32_t>(buf, static_cast<uint32_t>(ds.vocab_size));
  detail::put<uint32_t>(buf, static_cast<uint32_t>(ds.locales.size()));
  for (const auto& loc : ds.locales) {
    detail::put<uint16_t>(buf, static_cast<uint16_t>(loc.size()));
    buf.append(loc);
  }
  detail::put<uint64_t>(buf, ds.config_hash);
  detail::put<uint32_t>(buf, static_cast<uint32_t>(ds.utterances.size()));
  for (const auto& u : ds.utterances) {
    detail::put<uint64_t>(buf, u.id);
    detail::put<uint32_t>(buf, static_cast<uint32_t>(u.features.dim(0)));
    detail::put<uint32_t>(buf, static_cast<uint32_t>(u.tokens.size()));
    detail::put<uint32_t>(buf, static_cast<uint32_t>(u.label));
    for (int64_t tok : u.tokens) detail::put<int32_t>(buf, static_cast<int32_t>(tok));
    for (float v : u.features.vec()) detail::put<float>(buf, v);
  }
  return buf;
}

inline Dataset deserialize_dataset(const std::string& buf) {
  if (buf.size() < 4 || buf.substr(0, 4) != "CSLD") throw IoError("not a dataset file");
  size_t off = 4;
  const auto version = detail::take<uint32_t>(buf, off);
  if (version != 1) throw IoError("unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.d_feat = detail::take<uint32_t>(buf, off);
  ds.vocab_size = detail::take<uint32_t>(buf, off);
  const auto n_locales = detail::take<uint32_t>(buf, off);
  for (uint32_t i = 0; i < n_locales; ++i) {
    const auto len = detail::take<uint16_t>(buf, off);
    if (off + len > buf.size()) throw IoError("dataset file truncated");
    ds.locales.push_back(buf.substr(off, len));
    off += len;
  }
  ds.config_hash = detail::take<uint64_t>(buf, off);
  const auto n_utts = detail::take<uint32_t>(buf, off);
  for (uint32_t i = 0; i < n_utts; ++i) {
    Utterance<float> u;
    u.id = detail::take<uint64_t>(buf, off);
    const auto frames = detail::take<uint32_t>(buf, off);
    const auto n_tokens = detail::take<uint32_t>(buf, off);
    u.label = detail::take<uint32_t>(buf, off);
    for (uint32_t k = 0; k < n_tokens; ++k) u.tokens.push_back(detail::take<int32_t>(buf, off));
    std::vector<float> feat(static_cast<size_t>(frames) * static_cast<size_t>(ds.d_feat));
    for (auto& v : feat) v = detail::take<float>(buf, off);
    u.features = Tensor<float>::from_vector({frames, ds.d_feat}, std::move(feat));
    ds.utterances.push_back(std::move(u));
  }
  if (off != buf.size()) throw IoError("dataset file has trailing bytes");
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const auto buf = serialize_dataset(ds);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline Dataset read_dataset(const std::string& path) {
  return deserialize_dataset(read_file_bytes(path));
}

// Human-readable companion manifest (JSON lines).
inline void write_manifest(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& u : ds.utterances) {
    Json j{{"id", u.id},
           {"locale", ds.locales[static_cast<size_t>(u.label)]},
           {"U", u.tokens.size()},
           {"T", u.features.dim(0)}};
    out << j.dump() << "\n";
  }
}

template <typename S>
std::vector<Utterance<S>> dataset_utterances(const Dataset& ds) {
  std::vector<Utterance<S>> out;
  out.reserve(ds.utterances.size());
  for (const auto& u : ds.utterances) {
    Utterance<S> v;
    v.features = u.features.template cast<S>();
    v.tokens = u.tokens;
    v.label = u.label;
    v.id = u.id;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace caslid
