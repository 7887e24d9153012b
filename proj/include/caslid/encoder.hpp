#pragma once

// Masked self-attention encoder stacks. One block = attention + causal
// depthwise conv + feed-forward, each behind a pre-norm and a residual.
// Right-context is enforced per block through additive attention masks;
// masked scores sit at -1e9, which underflows to an exact zero weight after
// softmax, so causality and lookahead bounds hold bit-exactly, not just to
// a tolerance.

#include <cstdint>
#include <string>
#include <vector>

#include "caslid/config.hpp"
#include "caslid/nn.hpp"
#include "caslid/ops.hpp"

namespace caslid {

inline constexpr double kMaskNegative = -1e9;

// Additive [T x T] attention mask: row t may see columns
// [t - left_context, t + right_context] (unbounded left if left < 0).
template <typename S>
Tensor<S> attention_mask(int64_t frames, int64_t right_context, int64_t left_context) {
  auto m = Tensor<S>::zeros({frames, frames});
  auto& v = m.mutable_vec();
  for (int64_t t = 0; t < frames; ++t)
    for (int64_t j = 0; j < frames; ++j) {
      const bool allowed = j <= t + right_context && (left_context < 0 || j >= t - left_context);
      if (!allowed) v[static_cast<size_t>(t * frames + j)] = static_cast<S>(kMaskNegative);
    }
  return m;
}

template <typename S>
struct EncoderBlock {
  LayerNormModule<S> ln_att, ln_conv, ln_ffn;
  Linear<S> wq, wk, wv, wo;
  Param<S>* conv_w = nullptr;  // [kernel x d], depthwise, causal
  Linear<S> conv_pw;
  Linear<S> ffn1, ffn2;
  int64_t d_model = 0, num_heads = 0, head_dim = 0, kernel = 0;
  int64_t right_context = 0, left_context = -1;
  S inv_sqrt_dh = S(1);

  EncoderBlock() = default;
  EncoderBlock(ParamStore<S>& ps, const std::string& name, int64_t d, int64_t heads,
               int64_t conv_kernel, int64_t ffn_mult, int64_t rc, int64_t left)
      : ln_att(ps, name + ".ln_att", d),
        ln_conv(ps, name + ".ln_conv", d),
        ln_ffn(ps, name + ".ln_ffn", d),
        wq(ps, name + ".wq", d, d),
        wk(ps, name + ".wk", d, d),
        wv(ps, name + ".wv", d, d),
        wo(ps, name + ".wo", d, d),
        conv_pw(ps, name + ".conv_pw", d, d),
        ffn1(ps, name + ".ffn1", d, d * ffn_mult),
        ffn2(ps, name + ".ffn2", d * ffn_mult, d),
        d_model(d),
        num_heads(heads),
        head_dim(d / heads),
        kernel(conv_kernel),
        right_context(rc),
        left_context(left) {
    conv_w = ps.create(name + ".conv_w", {conv_kernel, d}, Init::ScaledUniform);
    inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(head_dim));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    const int64_t frames = x.dim(0);
    auto mask = attention_mask<S>(frames, right_context, left_context);

    // attention sublayer
    auto a_in = ln_att(x);
    auto q = wq(a_in), k = wk(a_in), v = wv(a_in);
    std::vector<Tensor<S>> heads;
    heads.reserve(static_cast<size_t>(num_heads));
    for (int64_t h = 0; h < num_heads; ++h) {
      auto qh = slice_cols(q, h * head_dim, head_dim);
      auto kh = slice_cols(k, h * head_dim, head_dim);
      auto vh = slice_cols(v, h * head_dim, head_dim);
      auto scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), mask);
      heads.push_back(matmul(softmax(scores), vh));
    }
    auto a = add(x, wo(concat(heads)));

    // conv sublayer (depthwise causal -> swish -> pointwise)
    auto c = add(a, conv_pw(swish(depthwise_conv1d(ln_conv(a), conv_w->value))));

    // feed-forward sublayer
    return add(c, ffn2(swish(ffn1(ln_ffn(c)))));
  }
};

// A full encoder: input projection (+ optional learned positions), blocks,
// optional x2 time reduction between two of them, final layer norm.
template <typename S>
class EncoderStack {
 public:
  struct Forward {
    Tensor<S> out;  // [T' x d]
    Tensor<S> tap;  // block output at the tap index (out if tap = -1)
  };

  EncoderStack() = default;
  EncoderStack(ParamStore<S>& ps, const std::string& name, const EncoderConfig& cfg,
               int64_t input_dim, int64_t max_positions, bool with_positions)
      : cfg_(cfg),
        with_positions_(with_positions),
        max_positions_(max_positions),
        input_proj_(ps, name + ".input_proj", input_dim, cfg.d_model) {
    cfg_.validate(name);
    if (with_positions_)
      pos_emb_ = ps.create(name + ".pos_emb", {max_positions, cfg.d_model}, Init::Normal, 0.02);
    for (int64_t bi = 0; bi < cfg.num_blocks; ++bi)
      blocks_.emplace_back(ps, name + ".block" + std::to_string(bi), cfg.d_model, cfg.num_heads,
                           cfg.conv_kernel, cfg.ffn_mult, cfg.per_layer_right_context[bi],
                           cfg.left_context);
    if (cfg.time_reduction_after >= 0)
      reduce_proj_ = Linear<S>(ps, name + ".reduce_proj", 2 * cfg.d_model, cfg.d_model);
    final_ln_ = LayerNormModule<S>(ps, name + ".final_ln", cfg.d_model);
  }

  const EncoderConfig& config() const { return cfg_; }
  int64_t r_total() const { return cfg_.r_total(); }

  int64_t out_frames(int64_t in_frames) const {
    return cfg_.time_reduction_after >= 0 ? (in_frames + 1) / 2 : in_frames;
  }

  // Largest input index that output frame t may depend on, accounting for
  // per-block lookahead and the x2 reduction. The exactness tests probe
  // against precisely this boundary.
  int64_t input_horizon(int64_t t) const {
    int64_t h = t;
    for (int64_t bi = cfg_.num_blocks - 1; bi >= 0; --bi) {
      h += cfg_.per_layer_right_context[bi];
      if (bi == cfg_.time_reduction_after + 1 && cfg_.time_reduction_after >= 0) h = 2 * h + 1;
    }
    if (cfg_.time_reduction_after == cfg_.num_blocks - 1) h = 2 * h + 1;
    return h;
  }

  Forward forward(const Tensor<S>& x, int64_t tap_block = -1) const {
    if (x.dim(0) > max_positions_)
      throw ValueError(detail::strfmt("encoder: %lld frames exceed max positions %lld",
                                      static_cast<long long>(x.dim(0)),
                                      static_cast<long long>(max_positions_)));
    auto h = input_proj_(x);
    if (with_positions_) h = add(h, slice_rows(pos_emb_->value, 0, h.dim(0)));
    Tensor<S> tap;
    for (int64_t bi = 0; bi < cfg_.num_blocks; ++bi) {
      h = blocks_[static_cast<size_t>(bi)].forward(h);
      if (bi == cfg_.time_reduction_after)
        h = reduce_proj_(stack_frames(h, 2, 2, /*pad_tail=*/true));
      if (bi == tap_block) tap = h;
    }
    h = final_ln_(h);
    if (!tap.defined()) tap = h;
    return {h, tap};
  }

  // Streaming needs the internals.
  const std::vector<EncoderBlock<S>>& blocks() const { return blocks_; }
  const Linear<S>& input_proj() const { return input_proj_; }
  const Linear<S>& reduce_proj() const { return reduce_proj_; }
  const LayerNormModule<S>& final_ln() const { return final_ln_; }
  const Param<S>* pos_emb() const { return pos_emb_; }
  bool with_positions() const { return with_positions_; }
  int64_t max_positions() const { return max_positions_; }

 private:
  EncoderConfig cfg_;
  bool with_positions_ = false;
  int64_t max_positions_ = 0;
  Linear<S> input_proj_;
  Param<S>* pos_emb_ = nullptr;
  std::vector<EncoderBlock<S>> blocks_;
  Linear<S> reduce_proj_;
  LayerNormModule<S> final_ln_;
};

}  // namespace caslid
