#pragma once

// Transducer machinery: prediction network (stacked LSTM), joint network,
// and the alignment-lattice loss.
//
// Alignment convention (used identically by the lattice DP and the
// brute-force enumerator): a path walks cells (t, u) from (0, 0) to (T, U);
// a blank at cell (t, u) consumes frame t and moves to (t+1, u); a token at
// cell (t, u) emits y[u] and moves to (t, u+1). Emissions condition on
// frame t, so no move may leave a cell with t == T — which forces the final
// symbol of every complete alignment to be the blank that consumes the last
// frame. loss = -log P(y|x) = -alpha[T][U].

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "caslid/nn.hpp"
#include "caslid/ops.hpp"

namespace caslid {

// Subword inventory; blank is id 0 and never appears inside a target
// sequence. Blank doubles as the begin-of-sequence input to the prediction
// network.
struct Vocab {
  int64_t num_tokens = 32;  // |V|, excluding blank
  static constexpr int64_t blank = 0;
  int64_t total() const { return num_tokens + 1; }
  bool valid_token(int64_t t) const { return t >= 1 && t <= num_tokens; }
};

// ---- prediction network ---------------------------------------------------

template <typename S>
struct LstmLayer {
  Param<S>* wx = nullptr;  // [in, 4h], gate order i|f|g|o
  Param<S>* wh = nullptr;  // [h, 4h]
  Param<S>* b = nullptr;   // [4h]
  int64_t hidden = 0;

  LstmLayer() = default;
  LstmLayer(ParamStore<S>& ps, const std::string& name, int64_t in, int64_t h) : hidden(h) {
    wx = ps.create(name + ".wx", {in, 4 * h}, Init::ScaledUniform);
    wh = ps.create(name + ".wh", {h, 4 * h}, Init::ScaledUniform);
    b = ps.create(name + ".b", {4 * h}, Init::Zeros);
  }
};

template <typename S>
struct PredNetState {
  std::vector<Tensor<S>> h;  // per layer, [hidden]
  std::vector<Tensor<S>> c;
  Tensor<S> out;  // projected text representation g_u, [proj_dim]
};

// Text side of the transducer. The state advances only when a non-blank
// token is fed; decode loops never feed blank.
template <typename S>
class PredictionNet {
 public:
  PredictionNet() = default;
  PredictionNet(ParamStore<S>& ps, const std::string& name, const Vocab& vocab, int64_t embed_dim,
                int64_t rnn_dim, int64_t rnn_layers, int64_t proj_dim)
      : vocab_(vocab), embed_dim_(embed_dim) {
    embedding_ = ps.create(name + ".embedding", {vocab.total(), embed_dim}, Init::Normal, 0.1);
    int64_t in = embed_dim;
    for (int64_t l = 0; l < rnn_layers; ++l) {
      layers_.emplace_back(ps, name + ".lstm" + std::to_string(l), in, rnn_dim);
      in = rnn_dim;
    }
    proj_ = Linear<S>(ps, name + ".proj", rnn_dim, proj_dim);
  }

  const Vocab& vocab() const { return vocab_; }
  int64_t proj_dim() const { return proj_.out_dim; }

  // Zero state; g_0 is produced by advancing once with the blank/BOS id.
  PredNetState<S> zero_state() const {
    PredNetState<S> st;
    for (const auto& l : layers_) {
      st.h.push_back(Tensor<S>::zeros({l.hidden}));
      st.c.push_back(Tensor<S>::zeros({l.hidden}));
    }
    return st;
  }

  PredNetState<S> initial() const { return advance(zero_state(), Vocab::blank); }

  PredNetState<S> advance(const PredNetState<S>& st, int64_t token) const {
    if (token != Vocab::blank && !vocab_.valid_token(token))
      throw ValueError("prediction net: token " + std::to_string(token) + " out of vocab");
    PredNetState<S> next;
    next.h.reserve(layers_.size());
    next.c.reserve(layers_.size());
    Tensor<S> x = embedding_lookup(embedding_->value, std::vector<int64_t>{token});
    x = reshape_copy(x, {embed_dim_});  // [embed]
    for (size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      // gates = x @ Wx + h @ Wh + b, gate order i|f|g|o
      auto gates = add(add(matmul(x, layer.wx->value), matmul(st.h[l], layer.wh->value)),
                       layer.b->value);
      auto grid = reshape_copy(gates, {1, 4 * layer.hidden});
      auto i_g = sigmoid(slice_cols(grid, 0, layer.hidden));
      auto f_g = sigmoid(slice_cols(grid, layer.hidden, layer.hidden));
      auto g_g = caslid::tanh(slice_cols(grid, 2 * layer.hidden, layer.hidden));
      auto o_g = sigmoid(slice_cols(grid, 3 * layer.hidden, layer.hidden));
      auto cprev = reshape_copy(st.c[l], {1, layer.hidden});
      auto cnew = add(mul(f_g, cprev), mul(i_g, g_g));
      auto hnew = mul(o_g, caslid::tanh(cnew));
      next.c.push_back(reshape_copy(cnew, {layer.hidden}));
      next.h.push_back(reshape_copy(hnew, {layer.hidden}));
      x = next.h.back();
    }
    next.out = proj_(x);
    return next;
  }

  // Rows g_0..g_U for the prefix-closed target sequence.
  Tensor<S> output_rows(const std::vector<int64_t>& tokens) const {
    std::vector<Tensor<S>> rows;
    auto st = initial();
    rows.push_back(st.out);
    for (int64_t tok : tokens) {
      st = advance(st, tok);
      rows.push_back(st.out);
    }
    return concat_rows(rows);
  }

 private:
  Vocab vocab_;
  int64_t embed_dim_ = 0;
  Param<S>* embedding_ = nullptr;
  std::vector<LstmLayer<S>> layers_;
  Linear<S> proj_;
};

// ---- joint network ----------------------------------------------------------

// Fuses one acoustic row with one text row: out = W_o tanh(A h + B g + b).
template <typename S>
class JointNet {
 public:
  JointNet() = default;
  JointNet(ParamStore<S>& ps, const std::string& name, int64_t acoustic_dim, int64_t text_dim,
           int64_t joint_dim, int64_t vocab_total)
      : acoustic_(ps, name + ".acoustic", acoustic_dim, joint_dim, /*bias=*/true),
        text_(ps, name + ".text", text_dim, joint_dim, /*bias=*/false),
        out_(ps, name + ".out", joint_dim, vocab_total, /*bias=*/true) {}

  int64_t acoustic_dim() const { return acoustic_.in_dim; }
  int64_t vocab_total() const { return out_.out_dim; }

  // Logits for a single (frame, text-state) pair; rank-1 in, rank-1 out.
  Tensor<S> logits(const Tensor<S>& h_row, const Tensor<S>& g_row) const {
    return out_(caslid::tanh(add(acoustic_(h_row), text_(g_row))));
  }

  // Full grid of logits: rows indexed by t * (U+1) + u.
  Tensor<S> logits_grid(const Tensor<S>& h, const Tensor<S>& g) const {
    return out_(caslid::tanh(outer_add(acoustic_(h), text_(g))));
  }

 private:
  Linear<S> acoustic_;
  Linear<S> text_;
  Linear<S> out_;
};

// ---- lattice loss ------------------------------------------------------------

template <typename S>
struct RnntLattice {
  int64_t T = 0, U = 0;
  std::vector<S> alpha;  // (T+1) x (U+1)
  std::vector<S> beta;
  S log_prob = 0;
};

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename S>
S lse2(S a, S b) {
  if (a == S(kNegInf)) return b;
  if (b == S(kNegInf)) return a;
  const S m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename S>
void validate_targets(const Vocab& vocab, const std::vector<int64_t>& y) {
  for (int64_t tok : y)
    if (!vocab.valid_token(tok))
      throw ValueError("rnnt: target token " + std::to_string(tok) + " out of vocab");
}

// Row-wise log-softmax of the (T*(U+1)) x (V+1) grid.
template <typename S>
std::vector<S> grid_log_softmax(const Tensor<S>& logits) {
  const int64_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<S> ls(logits.vec());
  for (int64_t r = 0; r < rows; ++r) {
    const S z = kernels::logsumexp_row(ls.data() + r * cols, cols);
    for (int64_t c = 0; c < cols; ++c) ls[r * cols + c] -= z;
  }
  return ls;
}

}  // namespace detail

// Forward/backward tables for -log P(y|x) over log-softmaxed cells.
template <typename S>
RnntLattice<S> rnnt_lattice(const std::vector<S>& ls, int64_t T, int64_t U,
                            const std::vector<int64_t>& y) {
  const int64_t W = U + 1;
  const int64_t V1 = static_cast<int64_t>(ls.size()) / (T * W);
  const S ninf = S(detail::kNegInf);
  auto cell = [&](int64_t t, int64_t u, int64_t v) { return ls[(t * W + u) * V1 + v]; };

  RnntLattice<S> lat;
  lat.T = T;
  lat.U = U;
  lat.alpha.assign(static_cast<size_t>((T + 1) * W), ninf);
  lat.beta.assign(static_cast<size_t>((T + 1) * W), ninf);
  auto a = [&](int64_t t, int64_t u) -> S& { return lat.alpha[t * W + u]; };
  auto b = [&](int64_t t, int64_t u) -> S& { return lat.beta[t * W + u]; };

  a(0, 0) = S(0);
  for (int64_t t = 0; t <= T; ++t)
    for (int64_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      S acc = ninf;
      if (t > 0) acc = detail::lse2(acc, a(t - 1, u) + cell(t - 1, u, Vocab::blank));
      if (u > 0 && t < T) acc = detail::lse2(acc, a(t, u - 1) + cell(t, u - 1, y[u - 1]));
      a(t, u) = acc;
    }

  b(T, U) = S(0);
  for (int64_t t = T; t >= 0; --t)
    for (int64_t u = U; u >= 0; --u) {
      if (t == T && u == U) continue;
      S acc = ninf;
      if (t < T) {
        acc = detail::lse2(acc, cell(t, u, Vocab::blank) + b(t + 1, u));
        if (u < U) acc = detail::lse2(acc, cell(t, u, y[u]) + b(t, u + 1));
      }
      b(t, u) = acc;
    }

  lat.log_prob = a(T, U);
  return lat;
}

// -log P(y|x) as a differentiable primitive over the raw logits grid
// ((T*(U+1)) x (V+1)). Gradients are the analytic alpha/beta posteriors —
// the DP cells are never taped individually.
template <typename S>
Tensor<S> rnnt_loss_from_logits(const Tensor<S>& logits, const Vocab& vocab,
                                const std::vector<int64_t>& y, int64_t T) {
  detail::require_rank2("rnnt_loss", logits);
  detail::validate_targets<S>(vocab, y);
  const int64_t U = static_cast<int64_t>(y.size());
  if (T < 1) throw ValueError("rnnt_loss: need at least one frame");
  if (logits.dim(0) != T * (U + 1) || logits.dim(1) != vocab.total())
    throw ShapeError(detail::strfmt("rnnt_loss: grid shape %s does not match T=%lld U=%lld V+1=%lld",
                                    shape_str(logits.shape()).c_str(), static_cast<long long>(T),
                                    static_cast<long long>(U),
                                    static_cast<long long>(vocab.total())));

  auto ls = detail::grid_log_softmax(logits);
  auto lat = rnnt_lattice<S>(ls, T, U, y);
  auto loss = Tensor<S>::scalar(-lat.log_prob);
  check_finite("rnnt_loss", loss);

  if (auto* tp = Tape<S>::active(); tp && tp->wants_grad(logits)) {
    size_t lgs = tp->ensure_slot(logits), out = tp->ensure_slot(loss);
    const int64_t W = U + 1, V1 = vocab.total();
    tp->record([=, ls = std::move(ls), lat = std::move(lat), y = y](Tape<S>& t) {
      if (!t.has_grad(out)) return;
      const S g_up = t.grad_view(out)[0];
      auto& gl = t.grad_buf(lgs);
      const S logp = lat.log_prob;
      for (int64_t tt = 0; tt < T; ++tt)
        for (int64_t u = 0; u < W; ++u) {
          const S* row = ls.data() + (tt * W + u) * V1;
          const S a = lat.alpha[tt * W + u];
          if (a == S(detail::kNegInf)) continue;
          const S gb = std::exp(a + row[Vocab::blank] + lat.beta[(tt + 1) * W + u] - logp);
          S gtok = S(0);
          if (u < U) gtok = std::exp(a + row[y[u]] + lat.beta[tt * W + u + 1] - logp);
          const S occ = gb + gtok;
          if (occ == S(0)) continue;
          S* grow = gl.data() + (tt * W + u) * V1;
          for (int64_t v = 0; v < V1; ++v) grow[v] += g_up * std::exp(row[v]) * occ;
          grow[Vocab::blank] -= g_up * gb;
          if (u < U) grow[y[u]] -= g_up * gtok;
        }
    });
  }
  return loss;
}

// Independent oracle: explicit enumeration of every monotone alignment.
// Exponential in T+U, so instances are capped.
template <typename S>
S rnnt_loss_bruteforce_from_logits(const Tensor<S>& logits, const Vocab& vocab,
                                   const std::vector<int64_t>& y, int64_t T) {
  detail::validate_targets<S>(vocab, y);
  const int64_t U = static_cast<int64_t>(y.size());
  if (T < 1) throw ValueError("rnnt_loss_bruteforce: need at least one frame");
  if (T + U > 10) throw ValueError("rnnt_loss_bruteforce: instance too large (T+U > 10)");
  const int64_t W = U + 1, V1 = vocab.total();

  // Own log-softmax, independent of the DP path's helper chain.
  std::vector<S> ls(logits.vec());
  for (int64_t r = 0; r < T * W; ++r) {
    S mx = ls[r * V1];
    for (int64_t v = 1; v < V1; ++v) mx = std::max(mx, ls[r * V1 + v]);
    S denom = S(0);
    for (int64_t v = 0; v < V1; ++v) denom += std::exp(ls[r * V1 + v] - mx);
    const S logz = mx + std::log(denom);
    for (int64_t v = 0; v < V1; ++v) ls[r * V1 + v] -= logz;
  }

  S total = S(detail::kNegInf);
  // Depth-first walk over blank/token moves.
  std::function<void(int64_t, int64_t, S)> walk = [&](int64_t t, int64_t u, S acc) {
    if (t == T && u == U) {
      total = detail::lse2(total, acc);
      return;
    }
    if (t == T) return;  // frames exhausted, tokens remain: dead end
    walk(t + 1, u, acc + ls[(t * W + u) * V1 + Vocab::blank]);
    if (u < U) walk(t, u + 1, acc + ls[(t * W + u) * V1 + y[u]]);
  };
  walk(0, 0, S(0));
  return -total;
}

// ---- decoder bundle ----------------------------------------------------------

// One complete transducer decoder: prediction net + joint. The cascade owns
// two of these (1st pass and 2nd pass), with separate parameters.
template <typename S>
class TransducerDecoder {
 public:
  TransducerDecoder() = default;
  TransducerDecoder(ParamStore<S>& ps, const std::string& name, const Vocab& vocab,
                    int64_t acoustic_dim, int64_t embed_dim, int64_t rnn_dim, int64_t rnn_layers,
                    int64_t proj_dim, int64_t joint_dim)
      : prednet_(ps, name + ".prednet", vocab, embed_dim, rnn_dim, rnn_layers, proj_dim),
        joint_(ps, name + ".joint", acoustic_dim, proj_dim, joint_dim, vocab.total()) {}

  const PredictionNet<S>& prednet() const { return prednet_; }
  const JointNet<S>& joint() const { return joint_; }
  const Vocab& vocab() const { return prednet_.vocab(); }

  Tensor<S> logits_grid(const Tensor<S>& acoustic, const std::vector<int64_t>& y) const {
    return joint_.logits_grid(acoustic, prednet_.output_rows(y));
  }

  // -log P(y | acoustic); differentiable end to end.
  Tensor<S> rnnt_loss(const Tensor<S>& acoustic, const std::vector<int64_t>& y) const {
    detail::require_rank2("rnnt_loss", acoustic);
    return rnnt_loss_from_logits(logits_grid(acoustic, y), vocab(), y, acoustic.dim(0));
  }

  // Same quantity via the enumeration oracle.
  S rnnt_loss_bruteforce(const Tensor<S>& acoustic, const std::vector<int64_t>& y) const {
    detail::require_rank2("rnnt_loss_bruteforce", acoustic);
    return rnnt_loss_bruteforce_from_logits(logits_grid(acoustic, y), vocab(), y,
                                            acoustic.dim(0));
  }

 private:
  PredictionNet<S> prednet_;
  JointNet<S> joint_;
};

}  // namespace caslid
