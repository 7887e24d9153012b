#pragma once

// Typed configuration for the whole system plus JSON (de)serialization.
// A config file fully determines the architecture; the model hash covers
// everything that affects parameter shapes and wiring and is validated
// when loading checkpoints.

#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "caslid/common.hpp"

namespace caslid {

using Json = nlohmann::json;

// Where LID information (oracle or predicted) is injected.
//   None:         plain cascade, no LID anywhere (S00)
//   OracleCausal: ground-truth one-hot appended to every input frame (S01)
//   OracleDec2:   ground-truth one-hot appended to the 2nd decoder's
//                 acoustic input (S02)
//   Fig1a:        predicted LID appended to the 2nd decoder's acoustic input
//   Fig1b:        predicted LID appended to the right-context encoder input
enum class InjectionMode { None, OracleCausal, OracleDec2, Fig1a, Fig1b };

// How the predicted distribution z_t is turned into the injected feature.
enum class LidMode { Distribution, Argmax, StopGrad, Cluster };

inline std::string to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::None: return "none";
    case InjectionMode::OracleCausal: return "oracle-causal";
    case InjectionMode::OracleDec2: return "oracle-dec2";
    case InjectionMode::Fig1a: return "fig1a";
    case InjectionMode::Fig1b: return "fig1b";
  }
  return "?";
}

inline InjectionMode injection_mode_from_string(const std::string& s) {
  if (s == "none") return InjectionMode::None;
  if (s == "oracle-causal") return InjectionMode::OracleCausal;
  if (s == "oracle-dec2") return InjectionMode::OracleDec2;
  if (s == "fig1a") return InjectionMode::Fig1a;
  if (s == "fig1b") return InjectionMode::Fig1b;
  throw ValueError("unknown injection mode: " + s);
}

inline std::string to_string(LidMode m) {
  switch (m) {
    case LidMode::Distribution: return "z";
    case LidMode::Argmax: return "argmax";
    case LidMode::StopGrad: return "sg";
    case LidMode::Cluster: return "cluster";
  }
  return "?";
}

inline LidMode lid_mode_from_string(const std::string& s) {
  if (s == "z") return LidMode::Distribution;
  if (s == "argmax") return LidMode::Argmax;
  if (s == "sg") return LidMode::StopGrad;
  if (s == "cluster") return LidMode::Cluster;
  throw ValueError("unknown lid mode: " + s);
}

struct EncoderConfig {
  int64_t num_blocks = 4;
  int64_t d_model = 64;
  int64_t num_heads = 4;
  int64_t conv_kernel = 3;
  std::vector<int64_t> per_layer_right_context;  // one entry per block
  int64_t left_context = -1;                     // -1 = unbounded past
  int64_t time_reduction_after = -1;             // reduce x2 after this block index, -1 = off
  int64_t ffn_mult = 4;

  int64_t r_total() const {
    return std::accumulate(per_layer_right_context.begin(), per_layer_right_context.end(),
                           int64_t{0});
  }

  // Even split of a total right-context budget, as in the reference setup.
  static std::vector<int64_t> even_right_context(int64_t total, int64_t blocks) {
    if (blocks <= 0 || total % blocks != 0)
      throw ValueError(detail::strfmt("right-context %lld does not split evenly over %lld blocks",
                                      static_cast<long long>(total),
                                      static_cast<long long>(blocks)));
    return std::vector<int64_t>(static_cast<size_t>(blocks), total / blocks);
  }

  void validate(const std::string& which) const {
    if (num_blocks <= 0 || d_model <= 0 || num_heads <= 0 || conv_kernel <= 0)
      throw ValueError(which + " encoder: extents must be positive");
    if (d_model % num_heads != 0) throw ValueError(which + " encoder: d_model % num_heads != 0");
    if (static_cast<int64_t>(per_layer_right_context.size()) != num_blocks)
      throw ValueError(which + " encoder: per-layer right-context list must have one entry per block");
    for (int64_t rc : per_layer_right_context)
      if (rc < 0) throw ValueError(which + " encoder: right-context must be nonnegative");
    if (time_reduction_after >= num_blocks)
      throw ValueError(which + " encoder: time_reduction_after out of range");
  }
};

struct DecoderConfig {
  int64_t embed_dim = 32;
  int64_t rnn_dim = 64;
  int64_t rnn_layers = 2;
  int64_t proj_dim = 32;
  int64_t joint_dim = 64;
};

struct LidConfig {
  int64_t hidden = 64;
  bool pooling = true;   // statistics pooling on/off (the Table-4 ablation)
  int64_t tap_shift_fig1a = -1;  // -1 = auto (R_total)
  int64_t tap_shift_fig1b = 0;   // 0 keeps the 2nd pass at exactly R_total latency
};

struct TrainConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t batch_size = 16;
  int64_t epochs = 8;
  int64_t max_symbols_per_frame = 4;
  int64_t log_every = 10;  // loss-curve rows
};

struct EvalConfig {
  std::vector<int64_t> frame_indices = {0, 5, 10};  // plus the implicit final-frame row
};

struct DataConfig {
  int64_t n_train = 2000;
  int64_t n_test = 200;
  int64_t frames_min = 30;
  int64_t frames_max = 120;  // the max-duration cap
  int64_t token_dur_min = 6;
  int64_t token_dur_max = 15;
  int64_t tokens_per_locale = 12;
  double noise_scale = 0.7;
  double token_mean_scale = 1.0;
  double offset_scale = 0.7;
  double pair_perturbation = 0.15;
  std::vector<double> mixture;  // per locale; empty = built-in skew
};

struct CascadeConfig {
  int64_t d_feat = 16;
  int64_t stack_n = 3;
  int64_t stack_stride = 3;
  int64_t max_positions = 256;
  EncoderConfig causal;
  EncoderConfig right;
  int64_t e_enc1_tap_block = -1;  // -1 = auto: first block after time reduction
  DecoderConfig decoder;
  int64_t vocab_size = 32;  // tokens excluding blank
  LidConfig lid;
  InjectionMode mode = InjectionMode::None;
  LidMode lid_mode = LidMode::Argmax;
  std::vector<std::string> locales;
  std::map<std::string, std::string> cluster_of;  // locale -> cluster; identity if absent
  double lambda_weight = 0.5;  // weight on the 1st-pass loss
  double alpha_weight = 0.05;  // weight on the LID loss
  TrainConfig train;
  EvalConfig eval;
  DataConfig data;

  int64_t num_locales() const { return static_cast<int64_t>(locales.size()); }

  std::string cluster_name(const std::string& locale) const {
    auto it = cluster_of.find(locale);
    return it == cluster_of.end() ? locale : it->second;
  }

  // Cluster names in first-appearance order over the locale list.
  std::vector<std::string> cluster_names() const {
    std::vector<std::string> out;
    for (const auto& loc : locales) {
      const auto c = cluster_name(loc);
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    return out;
  }

  // locale index -> cluster index
  std::vector<int64_t> cluster_index_map() const {
    const auto names = cluster_names();
    std::vector<int64_t> map;
    for (const auto& loc : locales) {
      const auto c = cluster_name(loc);
      map.push_back(std::find(names.begin(), names.end(), c) - names.begin());
    }
    return map;
  }

  int64_t num_clusters() const { return static_cast<int64_t>(cluster_names().size()); }

  bool predicted_mode() const {
    return mode == InjectionMode::Fig1a || mode == InjectionMode::Fig1b;
  }
  bool oracle_mode() const {
    return mode == InjectionMode::OracleCausal || mode == InjectionMode::OracleDec2;
  }

  // Width of the injected LID feature vector.
  int64_t injected_dim() const {
    if (mode == InjectionMode::None) return 0;
    if (predicted_mode() && lid_mode == LidMode::Cluster) return num_clusters();
    return num_locales();
  }

  int64_t resolved_tap_block() const {
    if (e_enc1_tap_block >= 0) return e_enc1_tap_block;
    return causal.time_reduction_after >= 0 ? causal.time_reduction_after + 1 : 0;
  }

  int64_t lid_shift_frames() const {
    if (mode == InjectionMode::Fig1b) return lid.tap_shift_fig1b;
    return lid.tap_shift_fig1a >= 0 ? lid.tap_shift_fig1a : right.r_total();
  }

  void validate() const {
    causal.validate("causal");
    right.validate("right-context");
    for (int64_t rc : causal.per_layer_right_context)
      if (rc != 0) throw ValueError("causal encoder must have zero right-context in every block");
    if (locales.empty()) throw ValueError("config: locale list is empty");
    if (lambda_weight < 0.0 || lambda_weight > 1.0) throw ValueError("config: lambda must be in [0,1]");
    if (alpha_weight < 0.0) throw ValueError("config: alpha must be nonnegative");
    if (vocab_size <= 0) throw ValueError("config: vocab_size must be positive");
    if (stack_n != stack_stride)
      throw ValueError("config: front-end stacking must be non-overlapping (stack_n == stack_stride)");
    if (resolved_tap_block() >= causal.num_blocks)
      throw ValueError("config: e_enc1_tap_block out of range");
    if (causal.time_reduction_after >= 0 && resolved_tap_block() <= causal.time_reduction_after)
      throw ValueError("config: e_enc1 tap must sit at or after the time reduction");
    for (const auto& [loc, cl] : cluster_of) {
      (void)cl;
      if (std::find(locales.begin(), locales.end(), loc) == locales.end())
        throw ValueError("config: cluster map names unknown locale " + loc);
    }
    if (!data.mixture.empty() && data.mixture.size() != locales.size())
      throw ValueError("config: mixture length must match locale count");
  }
};

// ---- JSON ---------------------------------------------------------------

inline Json to_json(const EncoderConfig& e) {
  return Json{{"blocks", e.num_blocks},
              {"d_model", e.d_model},
              {"heads", e.num_heads},
              {"conv_kernel", e.conv_kernel},
              {"right_context", e.per_layer_right_context},
              {"left_context", e.left_context},
              {"time_reduction_after", e.time_reduction_after},
              {"ffn_mult", e.ffn_mult}};
}

inline EncoderConfig encoder_from_json(const Json& j) {
  EncoderConfig e;
  e.num_blocks = j.value("blocks", e.num_blocks);
  e.d_model = j.value("d_model", e.d_model);
  e.num_heads = j.value("heads", e.num_heads);
  e.conv_kernel = j.value("conv_kernel", e.conv_kernel);
  if (j.contains("right_context")) {
    if (j["right_context"].is_array())
      e.per_layer_right_context = j["right_context"].get<std::vector<int64_t>>();
    else
      e.per_layer_right_context =
          EncoderConfig::even_right_context(j["right_context"].get<int64_t>(), e.num_blocks);
  } else {
    e.per_layer_right_context.assign(static_cast<size_t>(e.num_blocks), 0);
  }
  e.left_context = j.value("left_context", e.left_context);
  e.time_reduction_after = j.value("time_reduction_after", e.time_reduction_after);
  e.ffn_mult = j.value("ffn_mult", e.ffn_mult);
  return e;
}

inline Json to_json(const CascadeConfig& c) {
  Json j;
  j["model"] = Json{{"d_feat", c.d_feat},
                    {"stack_n", c.stack_n},
                    {"stack_stride", c.stack_stride},
                    {"max_positions", c.max_positions},
                    {"causal_encoder", to_json(c.causal)},
                    {"right_context_encoder", to_json(c.right)},
                    {"e_enc1_tap_block", c.e_enc1_tap_block},
                    {"vocab_size", c.vocab_size},
                    {"decoder",
                     Json{{"embed_dim", c.decoder.embed_dim},
                          {"rnn_dim", c.decoder.rnn_dim},
                          {"rnn_layers", c.decoder.rnn_layers},
                          {"proj_dim", c.decoder.proj_dim},
                          {"joint_dim", c.decoder.joint_dim}}},
                    {"lid",
                     Json{{"hidden", c.lid.hidden},
                          {"pooling", c.lid.pooling},
                          {"tap_shift_fig1a", c.lid.tap_shift_fig1a},
                          {"tap_shift_fig1b", c.lid.tap_shift_fig1b}}},
                    {"injection_mode", to_string(c.mode)},
                    {"lid_mode", to_string(c.lid_mode)}};
  j["locales"] = c.locales;
  j["clusters"] = c.cluster_of;
  j["loss"] = Json{{"lambda", c.lambda_weight}, {"alpha", c.alpha_weight}};
  j["train"] = Json{{"lr", c.train.lr},
                    {"beta1", c.train.beta1},
                    {"beta2", c.train.beta2},
                    {"eps", c.train.eps},
                    {"batch_size", c.train.batch_size},
                    {"epochs", c.train.epochs},
                    {"max_symbols_per_frame", c.train.max_symbols_per_frame},
                    {"log_every", c.train.log_every}};
  j["eval"] = Json{{"frame_indices", c.eval.frame_indices}};
  j["data"] = Json{{"n_train", c.data.n_train},
                   {"n_test", c.data.n_test},
                   {"frames_min", c.data.frames_min},
                   {"frames_max", c.data.frames_max},
                   {"token_dur_min", c.data.token_dur_min},
                   {"token_dur_max", c.data.token_dur_max},
                   {"tokens_per_locale", c.data.tokens_per_locale},
                   {"noise_scale", c.data.noise_scale},
                   {"token_mean_scale", c.data.token_mean_scale},
                   {"offset_scale", c.data.offset_scale},
                   {"pair_perturbation", c.data.pair_perturbation},
                   {"mixture", c.data.mixture}};
  return j;
}

inline CascadeConfig config_from_json(const Json& j) {
  CascadeConfig c;
  const Json& m = j.at("model");
  c.d_feat = m.value("d_feat", c.d_feat);
  c.stack_n = m.value("stack_n", c.stack_n);
  c.stack_stride = m.value("stack_stride", c.stack_stride);
  c.max_positions = m.value("max_positions", c.max_positions);
  c.causal = encoder_from_json(m.at("causal_encoder"));
  c.right = encoder_from_json(m.at("right_context_encoder"));
  c.e_enc1_tap_block = m.value("e_enc1_tap_block", c.e_enc1_tap_block);
  c.vocab_size = m.value("vocab_size", c.vocab_size);
  if (m.contains("decoder")) {
    const Json& d = m["decoder"];
    c.decoder.embed_dim = d.value("embed_dim", c.decoder.embed_dim);
    c.decoder.rnn_dim = d.value("rnn_dim", c.decoder.rnn_dim);
    c.decoder.rnn_layers = d.value("rnn_layers", c.decoder.rnn_layers);
    c.decoder.proj_dim = d.value("proj_dim", c.decoder.proj_dim);
    c.decoder.joint_dim = d.value("joint_dim", c.decoder.joint_dim);
  }
  if (m.contains("lid")) {
    const Json& l = m["lid"];
    c.lid.hidden = l.value("hidden", c.lid.hidden);
    c.lid.pooling = l.value("pooling", c.lid.pooling);
    c.lid.tap_shift_fig1a = l.value("tap_shift_fig1a", c.lid.tap_shift_fig1a);
    c.lid.tap_shift_fig1b = l.value("tap_shift_fig1b", c.lid.tap_shift_fig1b);
  }
  c.mode = injection_mode_from_string(m.value("injection_mode", std::string("none")));
  c.lid_mode = lid_mode_from_string(m.value("lid_mode", std::string("argmax")));
  c.locales = j.at("locales").get<std::vector<std::string>>();
  if (j.contains("clusters"))
    c.cluster_of = j["clusters"].get<std::map<std::string, std::string>>();
  if (j.contains("loss")) {
    c.lambda_weight = j["loss"].value("lambda", c.lambda_weight);
    c.alpha_weight = j["loss"].value("alpha", c.alpha_weight);
  }
  if (j.contains("train")) {
    const Json& t = j["train"];
    c.train.lr = t.value("lr", c.train.lr);
    c.train.beta1 = t.value("beta1", c.train.beta1);
    c.train.beta2 = t.value("beta2", c.train.beta2);
    c.train.eps = t.value("eps", c.train.eps);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.max_symbols_per_frame = t.value("max_symbols_per_frame", c.train.max_symbols_per_frame);
    c.train.log_every = t.value("log_every", c.train.log_every);
  }
  if (j.contains("eval"))
    c.eval.frame_indices = j["eval"].value("frame_indices", c.eval.frame_indices);
  if (j.contains("data")) {
    const Json& d = j["data"];
    c.data.n_train = d.value("n_train", c.data.n_train);
    c.data.n_test = d.value("n_test", c.data.n_test);
    c.data.frames_min = d.value("frames_min", c.data.frames_min);
    c.data.frames_max = d.value("frames_max", c.data.frames_max);
    c.data.token_dur_min = d.value("token_dur_min", c.data.token_dur_min);
    c.data.token_dur_max = d.value("token_dur_max", c.data.token_dur_max);
    c.data.tokens_per_locale = d.value("tokens_per_locale", c.data.tokens_per_locale);
    c.data.noise_scale = d.value("noise_scale", c.data.noise_scale);
    c.data.token_mean_scale = d.value("token_mean_scale", c.data.token_mean_scale);
    c.data.offset_scale = d.value("offset_scale", c.data.offset_scale);
    c.data.pair_perturbation = d.value("pair_perturbation", c.data.pair_perturbation);
    if (d.contains("mixture")) c.data.mixture = d["mixture"].get<std::vector<double>>();
  }
  c.validate();
  return c;
}

// Fingerprint of everything that affects parameter shapes and wiring.
inline uint64_t model_hash(const CascadeConfig& c) {
  Json j = to_json(c);
  Json arch{{"model", j["model"]}, {"locales", j["locales"]}, {"clusters", j["clusters"]}};
  return fnv1a64(arch.dump());
}

// ---- presets ------------------------------------------------------------

inline std::vector<std::string> default_locales() {
  return {"de-DE", "en-GB", "en-US", "es-ES", "es-US", "fr-FR", "it-IT", "ja-JP", "zh-TW"};
}

inline std::map<std::string, std::string> default_clusters() {
  return {{"en-GB", "en-X"}, {"en-US", "en-X"}, {"es-ES", "es-X"}, {"es-US", "es-X"}};
}

// Desk-scale default: small dims, short lookahead, fast to train on a CPU.
inline CascadeConfig toy_config() {
  CascadeConfig c;
  c.causal.num_blocks = 4;
  c.causal.d_model = 64;
  c.causal.num_heads = 4;
  c.causal.conv_kernel = 3;
  c.causal.per_layer_right_context.assign(4, 0);
  c.causal.time_reduction_after = 1;  // reduce between blocks 1 and 2
  c.right.num_blocks = 2;
  c.right.d_model = 64;
  c.right.num_heads = 4;
  c.right.conv_kernel = 3;
  c.right.per_layer_right_context = EncoderConfig::even_right_context(4, 2);
  c.locales = default_locales();
  c.cluster_of = default_clusters();
  c.validate();
  return c;
}

// Dimensions of the reference system; used for shape and parameter-count
// checks only (a shape-only build, never materialized).
inline CascadeConfig paper_shape_config() {
  CascadeConfig c;
  c.d_feat = 80;
  c.stack_n = 3;
  c.stack_stride = 3;
  c.max_positions = 1024;
  c.causal.num_blocks = 12;
  c.causal.d_model = 512;
  c.causal.num_heads = 8;
  c.causal.conv_kernel = 15;
  c.causal.per_layer_right_context.assign(12, 0);
  c.causal.time_reduction_after = 2;  // after the 3rd block
  c.right.num_blocks = 5;
  c.right.d_model = 512;
  c.right.num_heads = 8;
  c.right.conv_kernel = 15;
  c.right.per_layer_right_context = EncoderConfig::even_right_context(15, 5);
  c.e_enc1_tap_block = 3;  // the block fed by the reduced frames
  c.decoder.embed_dim = 640;
  c.decoder.rnn_dim = 2048;
  c.decoder.rnn_layers = 2;
  c.decoder.proj_dim = 640;
  c.decoder.joint_dim = 640;
  c.vocab_size = 16384;
  c.lid.hidden = 512;
  c.mode = InjectionMode::Fig1a;
  c.lid_mode = LidMode::Argmax;
  c.locales = default_locales();
  c.cluster_of = default_clusters();
  c.eval.frame_indices = {0, 15, 30};
  c.validate();
  return c;
}

}  // namespace caslid
