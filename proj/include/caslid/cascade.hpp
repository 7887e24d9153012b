#pragma once

// The assembled system: front-end stacking, causal encoder, right-context
// encoder, two separate transducer decoders, and the LID predictor, wired
// per injection mode.
//
// Index bookkeeping ("frame" = one decoding step, i.e. one post-reduction
// encoder frame): h_enc1[t] needs raw input up to the stacking/reduction
// window of t and nothing beyond; h_enc2[t] additionally waits for
// h_enc1[t + R_total]. In Fig-1(a) mode the LID predictor pools
// [e_enc1[min(t + shift, T-1)] ; e_enc2[t]] — with shift defaulting to
// R_total those causal rows are exactly the ones already paid for by the
// second pass, so LID adds no latency. In Fig-1(b) mode z is concatenated
// to the right-context encoder input; its shift defaults to 0, which keeps
// the second pass at exactly R_total frames of algorithmic latency (a
// positive shift buys the predictor lookahead at the cost of that much
// extra latency, and the streaming session defers accordingly).

#include <atomic>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "caslid/adam.hpp"
#include "caslid/config.hpp"
#include "caslid/data.hpp"
#include "caslid/decode.hpp"
#include "caslid/encoder.hpp"
#include "caslid/lid.hpp"
#include "caslid/streaming.hpp"
#include "caslid/transducer.hpp"

namespace caslid {

template <typename S>
struct TwoPassOutput {
  std::vector<int64_t> first_tokens;
  std::vector<int64_t> second_tokens;
  std::vector<std::vector<S>> z_trace;  // one distribution per frame (predicted modes)
  int64_t frames = 0;                   // post-reduction frame count
  double first_log_prob = 0.0;
  double second_log_prob = 0.0;
};

// Acoustic-side stepper for greedy/beam decoding over a (possibly growing)
// list of rows.
template <typename S>
struct RowStepper {
  using Scalar = S;
  using State = PredNetState<S>;
  const TransducerDecoder<S>* dec;
  const std::vector<Row<S>>* rows;

  State initial() const { return dec->prednet().initial(); }
  std::vector<S> logits(int64_t t, const State& st) const {
    const auto& r = (*rows)[static_cast<size_t>(t)];
    auto h = Tensor<S>::from_vector({static_cast<int64_t>(r.size())}, r);
    return std::vector<S>(dec->joint().logits(h, st.out).vec());
  }
  State advance(const State& st, int64_t tok) const { return dec->prednet().advance(st, tok); }
  int64_t vocab_total() const { return dec->vocab().total(); }
};

template <typename S>
class CascadeModel {
 public:
  CascadeModel(const CascadeConfig& cfg, uint64_t seed, bool shape_only = false)
      : cfg_(cfg), store_(seed, shape_only) {
    cfg_.validate();
    vocab_.num_tokens = cfg.vocab_size;
    const int64_t locales = cfg.num_locales();
    const int64_t stacked = cfg.stack_n * cfg.d_feat;

    const int64_t enc1_in = stacked + (cfg.mode == InjectionMode::OracleCausal ? locales : 0);
    enc1_ = EncoderStack<S>(store_, "enc1", cfg.causal, enc1_in, cfg.max_positions,
                            /*with_positions=*/true);

    const int64_t enc2_in =
        cfg.causal.d_model + (cfg.mode == InjectionMode::Fig1b ? cfg.injected_dim() : 0);
    enc2_ = EncoderStack<S>(store_, "enc2", cfg.right, enc2_in, cfg.max_positions,
                            /*with_positions=*/false);

    dec1_ = TransducerDecoder<S>(store_, "dec1", vocab_, cfg.causal.d_model, cfg.decoder.embed_dim,
                                 cfg.decoder.rnn_dim, cfg.decoder.rnn_layers, cfg.decoder.proj_dim,
                                 cfg.decoder.joint_dim);
    const int64_t dec2_ac =
        cfg.right.d_model +
        ((cfg.mode == InjectionMode::Fig1a || cfg.mode == InjectionMode::OracleDec2)
             ? cfg.injected_dim()
             : 0);
    dec2_ = TransducerDecoder<S>(store_, "dec2", vocab_, dec2_ac, cfg.decoder.embed_dim,
                                 cfg.decoder.rnn_dim, cfg.decoder.rnn_layers, cfg.decoder.proj_dim,
                                 cfg.decoder.joint_dim);

    // The predictor always exists (dormant outside the predicted modes) so
    // S00-vs-S20 comparisons run at identical parameter budgets.
    const int64_t lid_in =
        cfg.mode == InjectionMode::Fig1b ? cfg.causal.d_model : 2 * cfg.causal.d_model;
    lid_ = LidHead<S>(store_, "lid", lid_in, cfg.lid.hidden, locales, cfg.lid.pooling);
  }

  const CascadeConfig& config() const { return cfg_; }
  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }
  const Vocab& vocab() const { return vocab_; }
  const EncoderStack<S>& enc1() const { return enc1_; }
  const EncoderStack<S>& enc2() const { return enc2_; }
  const TransducerDecoder<S>& dec1() const { return dec1_; }
  const TransducerDecoder<S>& dec2() const { return dec2_; }
  const LidHead<S>& lid_head() const { return lid_; }
  int64_t r_total() const { return cfg_.right.r_total(); }

  static std::string group_of(const std::string& param_name) {
    if (starts_with(param_name, "enc1.")) return "causal-encoder";
    if (starts_with(param_name, "enc2.")) return "right-context-encoder";
    if (starts_with(param_name, "dec1.")) return "decoder1";
    if (starts_with(param_name, "dec2.")) return "decoder2";
    if (starts_with(param_name, "lid.")) return "lid-head";
    return "other";
  }

  // ---- differentiable losses -------------------------------------------

  struct LossParts {
    Tensor<S> first, second, lid, cascade, total;
    Tensor<S> h1, h2, e1;
    Tensor<S> lid_input;  // the predictor's pooled input stream (probe point)
    Tensor<S> z;          // [T x locales] (predicted modes)
  };

  LossParts loss_parts(const Utterance<S>& utt) const {
    LossParts parts;
    const int64_t locales = cfg_.num_locales();
    const auto cmap = cfg_.cluster_index_map();
    const int64_t nclusters = cfg_.num_clusters();

    auto xs = stack_frames(utt.features, cfg_.stack_n, cfg_.stack_stride);
    if (cfg_.mode == InjectionMode::OracleCausal) {
      require_label(utt.label, "oracle-causal training/inference");
      xs = concat(xs, one_hot_rows(xs.dim(0), utt.label, locales));
    }
    auto f1 = enc1_.forward(xs, cfg_.resolved_tap_block());
    parts.h1 = f1.out;
    parts.e1 = f1.tap;
    const int64_t frames = parts.h1.dim(0);

    Tensor<S> feat;  // injected LID feature rows
    if (cfg_.mode == InjectionMode::Fig1b) {
      parts.lid_input = gather_rows(parts.e1, shifted_indices(frames, cfg_.lid_shift_frames()));
      auto logits = lid_.logits_rows(parts.lid_input);
      parts.z = softmax(logits);
      feat = lid_feature(parts.z, cfg_.lid_mode, cmap, nclusters);
      parts.lid = lid_loss_term(logits, utt.label);
    }

    auto rc_in = cfg_.mode == InjectionMode::Fig1b ? concat(parts.h1, feat) : parts.h1;
    parts.h2 = enc2_.forward(rc_in).out;

    if (cfg_.mode == InjectionMode::Fig1a) {
      auto e1s = gather_rows(parts.e1, shifted_indices(frames, cfg_.lid_shift_frames()));
      parts.lid_input = concat(e1s, parts.h2);
      auto logits = lid_.logits_rows(parts.lid_input);
      parts.z = softmax(logits);
      feat = lid_feature(parts.z, cfg_.lid_mode, cmap, nclusters);
      parts.lid = lid_loss_term(logits, utt.label);
    }

    Tensor<S> dec2_ac = parts.h2;
    if (cfg_.mode == InjectionMode::Fig1a) {
      dec2_ac = concat(parts.h2, feat);
    } else if (cfg_.mode == InjectionMode::OracleDec2) {
      require_label(utt.label, "oracle-dec2 training/inference");
      dec2_ac = concat(parts.h2, one_hot_rows(frames, utt.label, locales));
    }

    parts.first = dec1_.rnnt_loss(parts.h1, utt.tokens);
    parts.second = dec2_.rnnt_loss(dec2_ac, utt.tokens);
    const S lam = static_cast<S>(cfg_.lambda_weight);
    parts.cascade = add(scale(parts.first, lam), scale(parts.second, S(1) - lam));
    if (parts.lid.defined() && cfg_.alpha_weight > 0.0)
      parts.total = add(parts.cascade, scale(parts.lid, static_cast<S>(cfg_.alpha_weight)));
    else
      parts.total = parts.cascade;
    return parts;
  }

  Tensor<S> cascade_loss(const Utterance<S>& utt) const { return loss_parts(utt).cascade; }
  Tensor<S> joint_loss(const Utterance<S>& utt) const { return loss_parts(utt).total; }

  // ---- offline two-pass inference ----------------------------------------

  TwoPassOutput<S> forward_two_pass(const Tensor<S>& features,
                                    std::optional<int64_t> oracle_label) const {
    if (cfg_.oracle_mode() && !oracle_label)
      throw ValueError("forward_two_pass: " + to_string(cfg_.mode) +
                       " requires ground-truth LID at inference");
    const int64_t locales = cfg_.num_locales();
    const auto cmap = cfg_.cluster_index_map();
    const int64_t nclusters = cfg_.num_clusters();
    const int64_t cap = cfg_.train.max_symbols_per_frame;

    auto xs = stack_frames(features, cfg_.stack_n, cfg_.stack_stride);
    if (cfg_.mode == InjectionMode::OracleCausal)
      xs = concat(xs, one_hot_rows(xs.dim(0), *oracle_label, locales));
    auto f1 = enc1_.forward(xs, cfg_.resolved_tap_block());
    const int64_t frames = f1.out.dim(0);

    TwoPassOutput<S> out;
    out.frames = frames;

    std::vector<Row<S>> h1_rows = tensor_rows(f1.out);
    std::vector<Row<S>> e1_rows = tensor_rows(f1.tap);

    // 1st pass: causal rows only
    {
      RowStepper<S> st{&dec1_, &h1_rows};
      auto res = greedy_decode(st, frames, cap);
      out.first_tokens = res.tokens;
      out.first_log_prob = res.log_prob;
    }

    // right-context encoder input (with z injected in Fig-1b mode)
    Tensor<S> rc_in = f1.out;
    PoolState<S> pool(lid_pool_dim());
    if (cfg_.mode == InjectionMode::Fig1b) {
      const int64_t shift = cfg_.lid_shift_frames();
      std::vector<Row<S>> rc_rows;
      for (int64_t t = 0; t < frames; ++t) {
        const auto& src = e1_rows[static_cast<size_t>(std::min(t + shift, frames - 1))];
        auto z = lid_.z_row(pool, {src.data(), src.size()});
        auto feat = lid_feature_row(z, cfg_.lid_mode, cmap, nclusters);
        out.z_trace.push_back(std::move(z));
        Row<S> row = h1_rows[static_cast<size_t>(t)];
        row.insert(row.end(), feat.begin(), feat.end());
        rc_rows.push_back(std::move(row));
      }
      rc_in = rows_tensor(rc_rows);
    }
    auto h2 = enc2_.forward(rc_in).out;
    std::vector<Row<S>> h2_rows = tensor_rows(h2);

    // 2nd pass acoustic rows (+ z trace in Fig-1a mode)
    std::vector<Row<S>> dec2_rows;
    for (int64_t t = 0; t < frames; ++t) {
      Row<S> row = h2_rows[static_cast<size_t>(t)];
      if (cfg_.mode == InjectionMode::Fig1a) {
        const int64_t shift = cfg_.lid_shift_frames();
        const auto& e1s = e1_rows[static_cast<size_t>(std::min(t + shift, frames - 1))];
        Row<S> pooled = e1s;
        pooled.insert(pooled.end(), row.begin(), row.end());
        auto z = lid_.z_row(pool, {pooled.data(), pooled.size()});
        auto feat = lid_feature_row(z, cfg_.lid_mode, cmap, nclusters);
        out.z_trace.push_back(std::move(z));
        row.insert(row.end(), feat.begin(), feat.end());
      } else if (cfg_.mode == InjectionMode::OracleDec2) {
        auto feat = one_hot<S>(*oracle_label, locales);
        row.insert(row.end(), feat.vec().begin(), feat.vec().end());
      }
      dec2_rows.push_back(std::move(row));
    }
    {
      RowStepper<S> st{&dec2_, &dec2_rows};
      auto res = greedy_decode(st, frames, cap);
      out.second_tokens = res.tokens;
      out.second_log_prob = res.log_prob;
    }
    return out;
  }

  TwoPassOutput<S> forward_two_pass(const Utterance<S>& utt) const {
    return forward_two_pass(utt.features, utt.label);
  }

  // ---- training -----------------------------------------------------------

  struct StepStats {
    double first = 0, second = 0, lid = 0, total = 0;
  };

  // One synchronized step: independent tapes per utterance (optionally on
  // worker threads), gradients reduced in utterance order, then Adam. The
  // reduction order is fixed, so results do not depend on the thread count.
  StepStats train_step(std::span<const Utterance<S>> batch, AdamState<S>& adam,
                       const AdamConfig<S>& opt, int64_t threads = 1) {
    if (batch.empty()) throw ValueError("train_step: empty batch");
    const size_t n = batch.size();
    std::vector<std::vector<Tensor<S>>> grads(n);
    std::vector<StepStats> stats(n);

    auto run_range = [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) {
        Tape<S> tape;
        typename Tape<S>::Scope scope(tape);
        auto parts = loss_parts(batch[i]);
        tape.backward(parts.total);
        auto& g = grads[i];
        g.reserve(store_.size());
        for (const auto& p : store_.params()) g.push_back(tape.grad(p.value));
        stats[i] = StepStats{parts.first.item(), parts.second.item(),
                             parts.lid.defined() ? parts.lid.item() : 0.0, parts.total.item()};
      }
    };

    const size_t nthreads = std::min<size_t>(std::max<int64_t>(threads, 1), n);
    if (nthreads <= 1) {
      run_range(0, n);
    } else {
      std::vector<std::thread> pool;
      std::exception_ptr error;
      std::atomic<size_t> failed{0};
      const size_t chunk = (n + nthreads - 1) / nthreads;
      for (size_t w = 0; w < nthreads; ++w) {
        const size_t lo = w * chunk, hi = std::min(n, lo + chunk);
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

    // mean gradient, accumulated in utterance order
    std::vector<Tensor<S>> mean_grads;
    mean_grads.reserve(store_.size());
    const S inv_n = S(1) / static_cast<S>(n);
    for (size_t pi = 0; pi < store_.size(); ++pi) {
      auto acc = grads[0][pi].clone();
      auto& av = acc.mutable_vec();
      for (size_t i = 1; i < n; ++i) {
        const auto& gv = grads[i][pi].vec();
        for (size_t k = 0; k < av.size(); ++k) av[k] += gv[k];
      }
      for (auto& v : av) v *= inv_n;
      mean_grads.push_back(std::move(acc));
    }

    auto updated = adam_step(store_.values(), mean_grads, adam, opt);
    store_.assign_values(updated);

    StepStats mean;
    for (const auto& s : stats) {
      mean.first += s.first;
      mean.second += s.second;
      mean.lid += s.lid;
      mean.total += s.total;
    }
    const double dn = static_cast<double>(n);
    mean.first /= dn;
    mean.second /= dn;
    mean.lid /= dn;
    mean.total /= dn;
    return mean;
  }

  int64_t lid_pool_dim() const {
    return cfg_.mode == InjectionMode::Fig1b ? cfg_.causal.d_model : 2 * cfg_.causal.d_model;
  }

  static std::vector<Row<S>> tensor_rows(const Tensor<S>& m) {
    std::vector<Row<S>> rows;
    rows.reserve(static_cast<size_t>(m.dim(0)));
    for (int64_t t = 0; t < m.dim(0); ++t)
      rows.emplace_back(m.vec().begin() + t * m.dim(1), m.vec().begin() + (t + 1) * m.dim(1));
    return rows;
  }

  static Tensor<S> rows_tensor(const std::vector<Row<S>>& rows) {
    std::vector<S> flat;
    flat.reserve(rows.size() * rows[0].size());
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor<S>::from_vector(
        {static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())}, std::move(flat));
  }

 private:
  static void require_label(int64_t label, const char* what) {
    if (label < 0) throw ValueError(std::string("missing LID label for ") + what);
  }

  Tensor<S> lid_loss_term(const Tensor<S>& logits, int64_t label) const {
    if (cfg_.alpha_weight <= 0.0) return Tensor<S>();
    require_label(label, "the LID loss");
    return lid_loss_mean_from_logits(logits, label);
  }

  static std::vector<int64_t> shifted_indices(int64_t frames, int64_t shift) {
    std::vector<int64_t> idx(static_cast<size_t>(frames));
    for (int64_t t = 0; t < frames; ++t) idx[static_cast<size_t>(t)] = std::min(t + shift, frames - 1);
    return idx;
  }

  Tensor<S> one_hot_rows(int64_t rows, int64_t label, int64_t k) const {
    if (label < 0 || label >= k) throw ValueError("one_hot_rows: label out of range");
    auto t = Tensor<S>::zeros({rows, k});
    for (int64_t r = 0; r < rows; ++r) t.mutable_vec()[static_cast<size_t>(r * k + label)] = S(1);
    return t;
  }

  CascadeConfig cfg_;
  ParamStore<S> store_;
  Vocab vocab_;
  EncoderStack<S> enc1_, enc2_;
  TransducerDecoder<S> dec1_, dec2_;
  LidHead<S> lid_;
};

// ---- streaming session ------------------------------------------------------

// Per-utterance incremental state: front-end stacking buffer, both encoder
// streams, pooling accumulators, and both greedy decoder states. Frames go
// in one raw frame at a time; events come out as encoder frames finalize.
// The 1st pass emits with zero right-context latency; the 2nd pass emits
// exactly R_total (+ Fig-1b shift) frames behind it.
template <typename S>
class StreamSession {
 public:
  StreamSession(const CascadeModel<S>& model, std::optional<int64_t> oracle_label)
      : model_(&model),
        cfg_(&model.config()),
        enc1_stream_(model.enc1(), cfg_->resolved_tap_block()),
        enc2_stream_(model.enc2(), -1),
        pool_(model.lid_pool_dim()),
        oracle_label_(oracle_label),
        cmap_(cfg_->cluster_index_map()) {
    if (cfg_->oracle_mode()) {
      if (!oracle_label_)
        throw ValueError("stream session: " + to_string(cfg_->mode) +
                         " requires ground-truth LID at inference");
      if (*oracle_label_ < 0 || *oracle_label_ >= cfg_->num_locales())
        throw ValueError("stream session: oracle LID label out of range");
    }
    dec1_state_ = greedy_begin(RowStepper<S>{&model.dec1(), &h1_rows_});
    dec2_state_ = greedy_begin(RowStepper<S>{&model.dec2(), &dec2_rows_});
  }

  struct Enc1Event {
    int64_t t;
    std::vector<int64_t> new_tokens;
  };
  struct Enc2Event {
    int64_t t;
    std::vector<int64_t> new_tokens;
    std::vector<S> z;  // empty outside predicted modes
  };
  struct Events {
    std::vector<Enc1Event> first;
    std::vector<Enc2Event> second;
  };

  Events push(std::span<const S> raw_frame) {
    if (flushed_) throw ValueError("stream session: step after flush");
    if (static_cast<int64_t>(raw_frame.size()) != cfg_->d_feat)
      throw ShapeError("stream session: raw frame dim mismatch");
    Events ev;
    stack_buf_.insert(stack_buf_.end(), raw_frame.begin(), raw_frame.end());
    const size_t window = static_cast<size_t>(cfg_->stack_n * cfg_->d_feat);
    if (stack_buf_.size() == window) {
      Row<S> stacked(stack_buf_.begin(), stack_buf_.end());
      stack_buf_.clear();
      if (cfg_->mode == InjectionMode::OracleCausal) append_one_hot(stacked, *oracle_label_);
      for (auto& e : enc1_stream_.push(stacked)) handle_enc1(std::move(e), ev, false);
      drain_enc2(ev, false);
    }
    return ev;
  }

  Events flush() {
    if (flushed_) throw ValueError("stream session: flush after flush");
    flushed_ = true;
    Events ev;
    // incomplete stacking window at the end is dropped (same as offline)
    for (auto& e : enc1_stream_.flush()) handle_enc1(std::move(e), ev, true);
    drain_enc2(ev, true);
    for (auto& e : enc2_stream_.flush()) handle_enc2(std::move(e.out), ev);
    return ev;
  }

  // Finalized results so far (complete after flush()).
  TwoPassOutput<S> output() const {
    TwoPassOutput<S> out;
    out.first_tokens = dec1_state_.result.tokens;
    out.second_tokens = dec2_state_.result.tokens;
    out.first_log_prob = dec1_state_.result.log_prob;
    out.second_log_prob = dec2_state_.result.log_prob;
    out.z_trace = z_trace_;
    out.frames = static_cast<int64_t>(h1_rows_.size());
    return out;
  }

  int64_t enc1_frames() const { return static_cast<int64_t>(h1_rows_.size()); }
  int64_t enc2_frames() const { return enc2_emitted_; }

 private:
  void append_one_hot(Row<S>& row, int64_t label) const {
    const int64_t k = cfg_->num_locales();
    for (int64_t i = 0; i < k; ++i) row.push_back(i == label ? S(1) : S(0));
  }

  void handle_enc1(typename EncoderStackStream<S>::Emit&& e, Events& ev, bool flushing) {
    h1_rows_.push_back(e.out);
    e1_rows_.push_back(std::move(e.tap));
    const int64_t t = static_cast<int64_t>(h1_rows_.size()) - 1;

    RowStepper<S> st{&model_->dec1(), &h1_rows_};
    const size_t before = dec1_state_.result.tokens.size();
    greedy_consume_frame(st, t, cfg_->train.max_symbols_per_frame, dec1_state_);
    ev.first.push_back(Enc1Event{
        t, std::vector<int64_t>(dec1_state_.result.tokens.begin() + before,
                                dec1_state_.result.tokens.end())});
    if (cfg_->mode == InjectionMode::Fig1b) pending_rc_.push_back(t);
    else rc_push(h1_rows_.back(), {}, ev, flushing);
  }

  // Fig-1b inputs wait until the predictor's (shifted) causal tap frame has
  // arrived; with the default shift of 0 nothing ever waits.
  void drain_enc2(Events& ev, bool flushing) {
    if (cfg_->mode != InjectionMode::Fig1b) return;
    const int64_t shift = cfg_->lid_shift_frames();
    const int64_t last = static_cast<int64_t>(e1_rows_.size()) - 1;
    while (!pending_rc_.empty()) {
      const int64_t s = pending_rc_.front();
      if (!flushing && s + shift > last) break;
      pending_rc_.pop_front();
      const auto& src = e1_rows_[static_cast<size_t>(std::min(s + shift, last))];
      auto z = model_->lid_head().z_row(pool_, {src.data(), src.size()});
      auto feat = lid_feature_row(z, cfg_->lid_mode, cmap_, cfg_->num_clusters());
      z_trace_.push_back(std::move(z));
      rc_push(h1_rows_[static_cast<size_t>(s)], feat, ev, flushing);
    }
  }

  void rc_push(const Row<S>& h1_row, const std::vector<S>& feat, Events& ev, bool flushing) {
    (void)flushing;
    Row<S> in = h1_row;
    in.insert(in.end(), feat.begin(), feat.end());
    for (auto& e : enc2_stream_.push(in)) handle_enc2(std::move(e.out), ev);
  }

  void handle_enc2(Row<S>&& h2_row, Events& ev) {
    const int64_t t = enc2_emitted_++;
    Row<S> row = std::move(h2_row);
    std::vector<S> z;
    if (cfg_->mode == InjectionMode::Fig1a) {
      const int64_t shift = cfg_->lid_shift_frames();
      const int64_t last = static_cast<int64_t>(e1_rows_.size()) - 1;
      const auto& e1s = e1_rows_[static_cast<size_t>(std::min(t + shift, last))];
      Row<S> pooled = e1s;
      pooled.insert(pooled.end(), row.begin(), row.end());
      z = model_->lid_head().z_row(pool_, {pooled.data(), pooled.size()});
      auto feat = lid_feature_row(z, cfg_->lid_mode, cmap_, cfg_->num_clusters());
      z_trace_.push_back(z);
      row.insert(row.end(), feat.begin(), feat.end());
    } else if (cfg_->mode == InjectionMode::OracleDec2) {
      append_one_hot(row, *oracle_label_);
    } else if (cfg_->mode == InjectionMode::Fig1b) {
      z = z_trace_[static_cast<size_t>(t)];
    }
    dec2_rows_.push_back(std::move(row));

    RowStepper<S> st{&model_->dec2(), &dec2_rows_};
    const size_t before = dec2_state_.result.tokens.size();
    greedy_consume_frame(st, t, cfg_->train.max_symbols_per_frame, dec2_state_);
    ev.second.push_back(Enc2Event{
        t,
        std::vector<int64_t>(dec2_state_.result.tokens.begin() + before,
                             dec2_state_.result.tokens.end()),
        std::move(z)});
  }

  const CascadeModel<S>* model_;
  const CascadeConfig* cfg_;
  EncoderStackStream<S> enc1_stream_;
  EncoderStackStream<S> enc2_stream_;
  PoolState<S> pool_;
  std::optional<int64_t> oracle_label_;
  std::vector<int64_t> cmap_;

  std::vector<S> stack_buf_;
  std::vector<Row<S>> h1_rows_, e1_rows_, dec2_rows_;
  std::deque<int64_t> pending_rc_;
  std::vector<std::vector<S>> z_trace_;
  GreedyState<RowStepper<S>> dec1_state_, dec2_state_;
  int64_t enc2_emitted_ = 0;
  bool flushed_ = false;
};

}  // namespace caslid
