#pragma once

// Deterministic interpreter for encoder-only transformers without residual
// connections. Token matrices use the row-per-position convention, so every
// weight matrix maps row vectors: (in x out).

#include "common.hpp"
#include "tensor.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <variant>

namespace a2a {

using TokenMatrix = Matrix;

enum class AttentionMode { soft, hard };

inline const char* to_string(AttentionMode m) { return m == AttentionMode::soft ? "soft" : "hard"; }

struct AttentionHead {
  Matrix query;  // d x k
  Matrix key;    // d x k
  Matrix value;  // d x d_v
  // Overrides the owning layer's mode when set.
  std::optional<AttentionMode> mode;
  // Row i only attends to positions j <= i.
  bool causal = false;

  Index input_dim() const { return query.rows(); }
  Index value_dim() const { return value.cols(); }
};

// y = (act(x·W1 + b1)·W2 + b2)·out + x·passthrough.
// An empty `out` means identity; an empty `passthrough` means no bypass.
struct MlpStage {
  TwoLayerMlp mlp;
  Matrix out;
  Matrix passthrough;
};

// y = B(x·select_left, x·select_right)·out + x·passthrough, B bilinear.
struct BilinearStage {
  Matrix select_left;
  Matrix select_right;
  BilinearLayer layer;
  Matrix out;
  Matrix passthrough;
};

struct IdentityStage {};

using FeedForwardStage = std::variant<IdentityStage, MlpStage, BilinearStage>;

struct FeedForwardBlock {
  std::vector<FeedForwardStage> stages;

  // Widest hidden layer over all stages: MLP units, or the summed selector
  // widths for bilinear stages.
  Index width() const {
    Index w = 0;
    for (const auto& s : stages) {
      if (const auto* m = std::get_if<MlpStage>(&s)) w = std::max(w, m->mlp.width());
      if (const auto* b = std::get_if<BilinearStage>(&s))
        w = std::max(w, b->select_left.cols() + b->select_right.cols());
    }
    return w;
  }
};

struct LayerSpec {
  AttentionMode mode = AttentionMode::hard;
  std::vector<AttentionHead> heads;
  // Rows: concatenated head outputs followed by the layer input (the carry
  // block, which may be omitted). Columns: width handed to the feed-forward.
  Matrix merge;
  FeedForwardBlock ff;
  std::string name;
};

struct Embedding {
  std::map<Symbol, Vector> tokens;
  // Row r is added to the r-th input row.
  Matrix positional;
  // When set, inputs are left-padded with this token up to positional.rows().
  std::optional<Symbol> pad;
};

struct TransformerSpec {
  Index d = 0;
  Index budget = 0;  // maximum number of caller-supplied tokens
  Embedding embedding;
  std::vector<LayerSpec> layers;
  Matrix readout;  // d x out
  nlohmann::json meta = nlohmann::json::object();
};

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

inline Matrix attention_scores(const AttentionHead& h, const TokenMatrix& x) {
  require_dims(h.query.rows() == x.cols() && h.key.rows() == x.cols(), "head input width differs from tokens");
  require_dims(h.query.cols() == h.key.cols(), "query and key widths differ");
  Matrix q = x * h.query;
  Matrix k = x * h.key;
  return q * k.transpose();
}

namespace detail {
inline void apply_causal_mask(Matrix& s) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < s.rows(); ++i)
    for (Index j = i + 1; j < s.cols(); ++j) s(i, j) = neg_inf;
}

inline Matrix softmax_rows(const Matrix& s) {
  Matrix a(s.rows(), s.cols());
  for (Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    double total = 0.0;
    for (Index j = 0; j < s.cols(); ++j) {
      const double e = std::exp(s(i, j) - mx);
      a(i, j) = e;
      total += e;
    }
    a.row(i) /= total;
  }
  return a;
}

// Lowest index among the maxima.
inline std::vector<Index> argmax_rows(const Matrix& s) {
  std::vector<Index> out(static_cast<std::size_t>(s.rows()));
  for (Index i = 0; i < s.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < s.cols(); ++j)
      if (s(i, j) > s(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}
}  // namespace detail

// Attention pattern (rows sum to one) for the given mode.
inline Matrix attention_weights(const AttentionHead& h, const TokenMatrix& x, AttentionMode mode) {
  Matrix s = attention_scores(h, x);
  if (h.causal) detail::apply_causal_mask(s);
  if (mode == AttentionMode::soft) return detail::softmax_rows(s);
  Matrix a = Matrix::Zero(s.rows(), s.cols());
  const auto picks = detail::argmax_rows(s);
  for (Index i = 0; i < s.rows(); ++i) a(i, picks[static_cast<std::size_t>(i)]) = 1.0;
  return a;
}

inline TokenMatrix soft_attention(const AttentionHead& h, const TokenMatrix& x) {
  require_dims(h.value.rows() == x.cols(), "value matrix input width differs from tokens");
  return attention_weights(h, x, AttentionMode::soft) * (x * h.value);
}

inline TokenMatrix hard_attention(const AttentionHead& h, const TokenMatrix& x) {
  require_dims(h.value.rows() == x.cols(), "value matrix input width differs from tokens");
  Matrix s = attention_scores(h, x);
  if (h.causal) detail::apply_causal_mask(s);
  const auto picks = detail::argmax_rows(s);
  Matrix v = x * h.value;
  TokenMatrix out(x.rows(), v.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = v.row(picks[static_cast<std::size_t>(i)]);
  return out;
}

inline TokenMatrix head_forward(const AttentionHead& h, const TokenMatrix& x, AttentionMode layer_mode) {
  return h.mode.value_or(layer_mode) == AttentionMode::soft ? soft_attention(h, x) : hard_attention(h, x);
}

// ---------------------------------------------------------------------------
// Feed-forward
// ---------------------------------------------------------------------------

namespace detail {
inline Matrix apply_out(const Matrix& y, const Matrix& out) { return out.size() == 0 ? y : Matrix(y * out); }

inline void add_passthrough(Matrix& y, const Matrix& x, const Matrix& p) {
  if (p.size() == 0) return;
  require_dims(p.rows() == x.cols() && p.cols() == y.cols(), "pass-through matrix has the wrong shape");
  y.noalias() += x * p;
}

inline Matrix stage_forward(const IdentityStage&, const Matrix& x) { return x; }

inline Matrix stage_forward(const MlpStage& s, const Matrix& x) {
  require_dims(s.mlp.w1.rows() == x.cols(), "MLP input width differs from tokens");
  Matrix h = x * s.mlp.w1;
  h.rowwise() += s.mlp.b1.transpose();
  const Activation act = s.mlp.activation;
  h = h.unaryExpr([act](double v) { return activate(act, v); });
  Matrix y = h * s.mlp.w2;
  y.rowwise() += s.mlp.b2.transpose();
  y = apply_out(y, s.out);
  add_passthrough(y, x, s.passthrough);
  return y;
}

inline Matrix stage_forward(const BilinearStage& s, const Matrix& x) {
  require_dims(s.select_left.rows() == x.cols() && s.select_right.rows() == x.cols(),
               "bilinear selectors do not match the token width");
  const Matrix left = x * s.select_left;
  const Matrix right = x * s.select_right;
  Matrix z(x.rows(), s.layer.out_dim());
  for (Index r = 0; r < x.rows(); ++r)
    z.row(r) = bilinear_apply(s.layer, left.row(r).transpose(), right.row(r).transpose()).transpose();
  Matrix y = apply_out(z, s.out);
  add_passthrough(y, x, s.passthrough);
  return y;
}
}  // namespace detail

inline TokenMatrix feed_forward(const FeedForwardBlock& ff, const TokenMatrix& x) {
  Matrix y = x;
  for (const auto& stage : ff.stages) y = std::visit([&](const auto& s) { return detail::stage_forward(s, y); }, stage);
  return y;
}

// ---------------------------------------------------------------------------
// Layers and whole models
// ---------------------------------------------------------------------------

struct LayerTrace {
  std::vector<Matrix> attention;     // one pattern per head
  std::vector<Matrix> head_outputs;  // one per head
  TokenMatrix merged;                // input to the feed-forward block
  TokenMatrix output;
};

inline TokenMatrix merge_heads(const LayerSpec& layer, const std::vector<Matrix>& heads, const TokenMatrix& x) {
  Index concat = 0;
  for (const auto& h : heads) concat += h.cols();
  if (layer.merge.size() == 0) {
    Matrix m(x.rows(), concat);
    Index off = 0;
    for (const auto& h : heads) {
      m.middleCols(off, h.cols()) = h;
      off += h.cols();
    }
    return m;
  }
  const bool carry = layer.merge.rows() == concat + x.cols();
  require_dims(carry || layer.merge.rows() == concat, "merge matrix rows match neither heads nor heads + carry");
  Matrix m = Matrix::Zero(x.rows(), layer.merge.cols());
  Index off = 0;
  for (const auto& h : heads) {
    m.noalias() += h * layer.merge.middleRows(off, h.cols());
    off += h.cols();
  }
  if (carry) m.noalias() += x * layer.merge.bottomRows(x.cols());
  return m;
}

inline TokenMatrix layer_forward(const LayerSpec& layer, const TokenMatrix& x, LayerTrace* trace = nullptr) {
  std::vector<Matrix> outs;
  outs.reserve(layer.heads.size());
  for (const auto& h : layer.heads) {
    if (trace) {
      const AttentionMode mode = h.mode.value_or(layer.mode);
      Matrix a = attention_weights(h, x, mode);
      outs.push_back(a * (x * h.value));
      trace->attention.push_back(std::move(a));
      trace->head_outputs.push_back(outs.back());
    } else {
      outs.push_back(head_forward(h, x, layer.mode));
    }
  }
  Matrix merged = merge_heads(layer, outs, x);
  Matrix y = feed_forward(layer.ff, merged);
  if (trace) {
    trace->merged = std::move(merged);
    trace->output = y;
  }
  return y;
}

inline TokenMatrix embed_tokens(const TransformerSpec& spec, const Word& tokens) {
  if (static_cast<Index>(tokens.size()) > spec.budget)
    throw BudgetError("input has " + std::to_string(tokens.size()) + " tokens but the budget is " +
                      std::to_string(spec.budget));
  const Embedding& e = spec.embedding;
  const Index rows = e.pad ? e.positional.rows() : static_cast<Index>(tokens.size());
  if (rows > e.positional.rows()) throw BudgetError("input longer than the positional table");
  const Index offset = rows - static_cast<Index>(tokens.size());
  TokenMatrix x(rows, spec.d);
  auto lookup = [&](const Symbol& s) -> const Vector& {
    auto it = e.tokens.find(s);
    if (it == e.tokens.end()) throw SymbolError(s);
    return it->second;
  };
  for (Index r = 0; r < rows; ++r) {
    const Symbol& s = r < offset ? *e.pad : tokens[static_cast<std::size_t>(r - offset)];
    x.row(r) = lookup(s).transpose() + e.positional.row(r);
  }
  return x;
}

inline TokenMatrix transformer_hidden(const TransformerSpec& spec, const Word& tokens,
                                      std::vector<LayerTrace>* trace = nullptr) {
  TokenMatrix x = embed_tokens(spec, tokens);
  if (trace) trace->clear();
  for (const auto& layer : spec.layers) {
    if (trace) {
      trace->emplace_back();
      x = layer_forward(layer, x, &trace->back());
    } else {
      x = layer_forward(layer, x);
    }
  }
  return x;
}

inline TokenMatrix apply_readout(const TransformerSpec& spec, const TokenMatrix& hidden) {
  require_dims(spec.readout.rows() == hidden.cols(), "readout input width differs from the hidden width");
  return hidden * spec.readout;
}

inline TokenMatrix transformer_forward(const TransformerSpec& spec, const Word& tokens) {
  return apply_readout(spec, transformer_hidden(spec, tokens));
}

// ---------------------------------------------------------------------------
// Shape summaries
// ---------------------------------------------------------------------------

struct SpecShape {
  Index layers = 0;
  Index d = 0;
  Index heads = 0;            // maximum per layer
  Index attention_width = 0;  // widest head value output
  Index mlp_width = 0;        // widest feed-forward hidden layer
};

inline SpecShape spec_shape(const TransformerSpec& spec) {
  SpecShape s;
  s.layers = static_cast<Index>(spec.layers.size());
  s.d = spec.d;
  for (const auto& l : spec.layers) {
    s.heads = std::max<Index>(s.heads, static_cast<Index>(l.heads.size()));
    for (const auto& h : l.heads) s.attention_width = std::max(s.attention_width, h.value_dim());
    s.mlp_width = std::max(s.mlp_width, l.ff.width());
  }
  return s;
}

}  // namespace a2a
