#pragma once

// Incremental (frame-at-a-time) execution of an EncoderStack. Every stage
// runs the same row kernels as the batch path in the same order, so the
// streamed activations match the offline ones bit for bit; the only
// difference is *when* a frame can be finalized.
//
// A block with right-context r emits output t once input t+r has arrived
// (or at flush, with whatever shorter window the utterance actually has —
// exactly the window the offline mask would allow at the sequence edge).

#include <cstdint>
#include <vector>

#include "caslid/encoder.hpp"

namespace caslid {

template <typename S>
using Row = std::vector<S>;

template <typename S>
class BlockStream {
 public:
  explicit BlockStream(const EncoderBlock<S>* block) : block_(block) {}

  std::vector<Row<S>> push(const Row<S>& frame) {
    ingest(frame);
    std::vector<Row<S>> out;
    const int64_t last = static_cast<int64_t>(x_.size()) - 1;
    while (emitted_ + block_->right_context <= last) out.push_back(emit(emitted_, last));
    return out;
  }

  std::vector<Row<S>> flush() {
    std::vector<Row<S>> out;
    const int64_t last = static_cast<int64_t>(x_.size()) - 1;
    while (emitted_ <= last) out.push_back(emit(emitted_, last));
    return out;
  }

 private:
  void ingest(const Row<S>& frame) {
    const int64_t d = block_->d_model;
    Row<S> xl(static_cast<size_t>(d));
    block_->ln_att.forward_row(frame.data(), xl.data());
    Row<S> q(static_cast<size_t>(d)), k(static_cast<size_t>(d)), v(static_cast<size_t>(d));
    block_->wq.forward_row(xl, q.data());
    block_->wk.forward_row(xl, k.data());
    block_->wv.forward_row(xl, v.data());
    x_.push_back(frame);
    q_.push_back(std::move(q));
    k_.push_back(std::move(k));
    v_.push_back(std::move(v));
  }

  Row<S> emit(int64_t t, int64_t last) {
    const int64_t d = block_->d_model;
    const int64_t heads = block_->num_heads, hd = block_->head_dim;
    const int64_t lo = block_->left_context < 0 ? 0 : std::max<int64_t>(0, t - block_->left_context);
    const int64_t hi = std::min(t + block_->right_context, last);

    // attention over [lo, hi]
    Row<S> ctx(static_cast<size_t>(d), S(0));
    std::vector<S> scores(static_cast<size_t>(hi - lo + 1));
    for (int64_t h = 0; h < heads; ++h) {
      const int64_t off = h * hd;
      for (int64_t j = lo; j <= hi; ++j)
        scores[static_cast<size_t>(j - lo)] =
            kernels::dot(q_[t].data() + off, k_[j].data() + off, hd) * block_->inv_sqrt_dh;
      kernels::softmax_row(scores.data(), hi - lo + 1);
      for (int64_t c = 0; c < hd; ++c) {
        S acc = S(0);
        for (int64_t j = lo; j <= hi; ++j)
          acc += scores[static_cast<size_t>(j - lo)] * v_[j][static_cast<size_t>(off + c)];
        ctx[static_cast<size_t>(off + c)] = acc;
      }
    }
    Row<S> att(static_cast<size_t>(d));
    block_->wo.forward_row(ctx, att.data());
    Row<S> a(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) a[i] = x_[t][i] + att[i];

    // conv sublayer: ln, depthwise over the last `kernel` rows, swish, pw
    Row<S> c_in(static_cast<size_t>(d));
    block_->ln_conv.forward_row(a.data(), c_in.data());
    conv_hist_.push_back(c_in);
    const int64_t kk = block_->kernel;
    Row<S> conv(static_cast<size_t>(d));
    const auto& w = block_->conv_w->value;
    const int64_t hist_last = static_cast<int64_t>(conv_hist_.size()) - 1;  // == t
    for (int64_t c = 0; c < d; ++c) {
      S acc = S(0);
      for (int64_t j = 0; j < kk; ++j) {
        const int64_t src = hist_last - (kk - 1) + j;
        if (src >= 0) acc += w[j * d + c] * conv_hist_[src][static_cast<size_t>(c)];
      }
      conv[static_cast<size_t>(c)] = acc;
    }
    for (int64_t i = 0; i < d; ++i)
      conv[i] = conv[i] * kernels::sigmoid_scalar(conv[i]);  // swish
    Row<S> pw(static_cast<size_t>(d));
    block_->conv_pw.forward_row(conv, pw.data());
    Row<S> b(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) b[i] = a[i] + pw[i];

    // feed-forward sublayer
    Row<S> f_in(static_cast<size_t>(d));
    block_->ln_ffn.forward_row(b.data(), f_in.data());
    Row<S> f1(static_cast<size_t>(block_->ffn1.out_dim));
    block_->ffn1.forward_row(f_in, f1.data());
    for (auto& x : f1) x = x * kernels::sigmoid_scalar(x);
    Row<S> f2(static_cast<size_t>(d));
    block_->ffn2.forward_row(f1, f2.data());
    Row<S> y(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) y[i] = b[i] + f2[i];

    ++emitted_;
    return y;
  }

  const EncoderBlock<S>* block_;
  std::vector<Row<S>> x_, q_, k_, v_;
  std::vector<Row<S>> conv_hist_;
  int64_t emitted_ = 0;
};

// Streams a whole EncoderStack. push() returns the newly finalized
// (output, tap) row pairs; flush() drains the lookahead pipeline. The tap
// row for output t comes from the configured tap block and is finalized no
// later than output t itself.
template <typename S>
class EncoderStackStream {
 public:
  EncoderStackStream(const EncoderStack<S>& enc, int64_t tap_block)
      : enc_(&enc), tap_block_(tap_block) {
    for (const auto& b : enc.blocks()) blocks_.emplace_back(&b);
  }

  struct Emit {
    Row<S> out;
    Row<S> tap;
  };

  std::vector<Emit> push(const Row<S>& input) {
    if (flushed_) throw ValueError("encoder stream: step after flush");
    if (pushed_ >= enc_->max_positions())
      throw ValueError("encoder stream: input exceeds max positions");
    auto projected = project_input(input, pushed_);
    ++pushed_;
    return run_pipeline({std::move(projected)}, /*flushing=*/false);
  }

  std::vector<Emit> flush() {
    if (flushed_) throw ValueError("encoder stream: flush after flush");
    flushed_ = true;
    return run_pipeline({}, /*flushing=*/true);
  }

  int64_t emitted() const { return out_count_; }

 private:
  Row<S> project_input(const Row<S>& input, int64_t position) const {
    Row<S> h(static_cast<size_t>(enc_->config().d_model));
    enc_->input_proj().forward_row({input.data(), input.size()}, h.data());
    if (enc_->with_positions()) {
      const auto& table = enc_->pos_emb()->value;
      const int64_t d = enc_->config().d_model;
      for (int64_t i = 0; i < d; ++i) h[i] += table[position * d + i];
    }
    return h;
  }

  // Pass rows through blocks (+ reduction) stage by stage.
  std::vector<Emit> run_pipeline(std::vector<Row<S>> rows, bool flushing) {
    const auto& cfg = enc_->config();
    for (size_t bi = 0; bi < blocks_.size(); ++bi) {
      std::vector<Row<S>> next;
      for (auto& r : rows) {
        auto produced = blocks_[bi].push(r);
        for (auto& p : produced) next.push_back(std::move(p));
      }
      if (flushing) {
        auto produced = blocks_[bi].flush();
        for (auto& p : produced) next.push_back(std::move(p));
      }
      rows = std::move(next);
      if (static_cast<int64_t>(bi) == cfg.time_reduction_after) rows = reduce(rows, flushing);
      if (static_cast<int64_t>(bi) == tap_block_)
        for (const auto& r : rows) tap_rows_.push_back(r);
    }
    std::vector<Emit> out;
    for (auto& r : rows) {
      Row<S> y(static_cast<size_t>(cfg.d_model));
      enc_->final_ln().forward_row(r.data(), y.data());
      if (tap_block_ < 0) tap_rows_.push_back(y);
      Emit e{std::move(y), tap_rows_[static_cast<size_t>(out_count_)]};
      ++out_count_;
      out.push_back(std::move(e));
    }
    return out;
  }

  std::vector<Row<S>> reduce(std::vector<Row<S>>& rows, bool flushing) {
    const int64_t d = enc_->config().d_model;
    std::vector<Row<S>> out;
    for (auto& r : rows) {
      reduce_buf_.push_back(std::move(r));
      if (reduce_buf_.size() == 2) {
        out.push_back(reduce_pair(reduce_buf_[0], reduce_buf_[1]));
        reduce_buf_.clear();
      }
    }
    if (flushing && reduce_buf_.size() == 1) {
      Row<S> zero(static_cast<size_t>(d), S(0));
      out.push_back(reduce_pair(reduce_buf_[0], zero));
      reduce_buf_.clear();
    }
    return out;
  }

  Row<S> reduce_pair(const Row<S>& a, const Row<S>& b) const {
    Row<S> stacked;
    stacked.reserve(a.size() + b.size());
    stacked.insert(stacked.end(), a.begin(), a.end());
    stacked.insert(stacked.end(), b.begin(), b.end());
    Row<S> y(static_cast<size_t>(enc_->config().d_model));
    enc_->reduce_proj().forward_row({stacked.data(), stacked.size()}, y.data());
    return y;
  }

  const EncoderStack<S>* enc_;
  int64_t tap_block_;
  std::vector<BlockStream<S>> blocks_;
  std::vector<Row<S>> reduce_buf_;
  std::vector<Row<S>> tap_rows_;
  int64_t pushed_ = 0;
  int64_t out_count_ = 0;
  bool flushed_ = false;
};

}  // namespace caslid
