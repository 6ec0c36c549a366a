#pragma once

// Compiles a weighted tree automaton into a transformer that reads the
// bracket string of a tree and writes μ of every subtree at the position
// where that subtree starts.
//
// Row layout (width n + 4 + p):
//   [0, n)        state block; leaf vectors initially, zero for brackets
//   [n, n + p)    positional features: phase pairs (cos hθ, sin hθ) for the
//                 odd harmonics h, the scaled index i/T and, in exact
//                 indicator mode, a one-hot of the position
//   n + p         marker (+1 open, 0 leaf, −1 close)
//   n + p + 1     constant 1
//   n + p + 2     bracket depth (filled by the first enrichment layer)
//   n + p + 3     squared depth (filled by the second enrichment layer)
//
// Parsing layer heads: the left child of an open bracket at i sits at i + 1;
// the right child is the nearest j >= i + 2 whose depth is one more than i's.
// The right head scores −β(1 − (d_j − d_i))² + cos((j − i − 2)π/T) + 2H(j − i)
// with H a step that is 1 for j − i >= 2 and 0 otherwise.

#include "automata.hpp"
#include "common.hpp"
#include "tensor.hpp"
#include "transformer.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace a2a {

enum class IndicatorMode { fourier, exact };
enum class ParsingFeedForward { bilinear, square_mlp };

struct WtaOptions {
  AttentionMode attention = AttentionMode::hard;
  double saturation = 1.0;  // C, only used with soft attention
  IndicatorMode indicator = IndicatorMode::fourier;
  int fourier_terms = -1;   // −1 picks the smallest k that separates heads
  double beta = 0.0;        // 0 picks 8 × the spread of the offset scores
  ParsingFeedForward feed_forward = ParsingFeedForward::bilinear;
};

struct WtaLayout {
  Index n = 0;
  Index T = 0;
  IndicatorMode indicator = IndicatorMode::fourier;
  int harmonics = 1;  // number of odd harmonics carried (k + 1 in Fourier mode)

  Index phase_cos(int h) const { return n + 2 * h; }  // h-th odd harmonic, 2h+1
  Index phase_sin(int h) const { return n + 2 * h + 1; }
  Index index_col() const { return n + 2 * harmonics; }
  Index onehot(Index pos) const { return index_col() + pos; }  // pos is 1-based
  Index p() const { return 2 * harmonics + 1 + (indicator == IndicatorMode::exact ? T : 0); }
  Index marker() const { return n + p(); }
  Index one() const { return n + p() + 1; }
  Index depth() const { return n + p() + 2; }
  Index depth_sq() const { return n + p() + 3; }
  Index d() const { return n + p() + 4; }
  double theta(Index pos) const { return std::numbers::pi * static_cast<double>(pos) / static_cast<double>(T); }
};

// ---------------------------------------------------------------------------
// Step approximation
// ---------------------------------------------------------------------------

inline constexpr double kStepPhase = 1.25;

// Partial sum 1/2 + (2/π) Σ_{l=0..k} sin((2l+1)(a − 1.25)π/T)/(2l+1) of a
// square wave whose jump sits between offsets a = 1 and a = 2.
inline double heaviside_partial_sum(int k, Index T, double offset) {
  const double x = (offset - kStepPhase) * std::numbers::pi / static_cast<double>(T);
  double s = 0.0;
  for (int l = 0; l <= k; ++l) {
    const double m = 2.0 * l + 1.0;
    s += std::sin(m * x) / m;
  }
  return 0.5 + 2.0 / std::numbers::pi * s;
}

struct HeavisideTable {
  int k = 0;
  Index T = 0;
  std::vector<Index> offsets;  // −T .. T
  std::vector<double> values;
  double delta = 0.0;          // max deviation from the exact step on the offsets a right head can see
};

inline HeavisideTable heaviside_fourier(int k, Index T) {
  if (k < 0) throw ArgumentError("heaviside_fourier needs k >= 0");
  if (T < 2) throw ArgumentError("heaviside_fourier needs T >= 2");
  HeavisideTable t{k, T, {}, {}, 0.0};
  for (Index a = -T; a <= T; ++a) {
    const double h = heaviside_partial_sum(k, T, static_cast<double>(a));
    t.offsets.push_back(a);
    t.values.push_back(h);
    if (a >= 2 - T && a <= T - 1) t.delta = std::max(t.delta, std::abs(h - (a >= 2 ? 1.0 : 0.0)));
  }
  return t;
}

// Score as a function of the offset a = j − i among same-depth candidates.
inline double offset_score(IndicatorMode mode, int k, Index T, Index a) {
  const double step = mode == IndicatorMode::exact ? (a >= 2 ? 1.0 : 0.0)
                                                    : heaviside_partial_sum(k, T, static_cast<double>(a));
  return 2.0 * step + std::cos(static_cast<double>(a - 2) * std::numbers::pi / static_cast<double>(T));
}

struct OffsetSelection {
  double margin = 0.0;  // min over the two separation requirements; > 0 means selection works
  double spread = 0.0;  // max − min of the offset score over reachable offsets
};

// Right-child selection needs the offset score to strictly decrease on
// a = 2..T−1 and to stay above every score at a <= 1.
inline OffsetSelection offset_selection(IndicatorMode mode, int k, Index T) {
  OffsetSelection s;
  double hi_after = -1e300, lo_after = 1e300, hi_before = -1e300, lo_before = 1e300;
  double min_drop = 1e300;
  double prev = 0.0;
  for (Index a = 2 - T; a <= T - 1; ++a) {
    const double g = offset_score(mode, k, T, a);
    if (a >= 2) {
      if (a > 2) min_drop = std::min(min_drop, prev - g);
      hi_after = std::max(hi_after, g);
      lo_after = std::min(lo_after, g);
      prev = g;
    } else {
      hi_before = std::max(hi_before, g);
      lo_before = std::min(lo_before, g);
    }
  }
  const double gap = lo_after == 1e300 ? 1.0 : lo_after - hi_before;
  s.margin = std::min(gap, min_drop);
  s.spread = std::max(hi_after, hi_before) - std::min(lo_after, lo_before);
  return s;
}

inline int choose_fourier_terms(Index T, int max_terms = 4096) {
  for (int k = 0; k <= max_terms; ++k)
    if (offset_selection(IndicatorMode::fourier, k, T).margin > 0.0) return k;
  throw CalibrationError("no Fourier order up to " + std::to_string(max_terms) + " separates right children at T=" +
                         std::to_string(T));
}

// ---------------------------------------------------------------------------
// Compilation result
// ---------------------------------------------------------------------------

struct WtaCompilation {
  TransformerSpec spec;
  WtaLayout layout;
  WtaOptions options;
  Index enrichment_layers = 2;
  Index parsing_layers = 0;
  int fourier_terms = 0;
  double fourier_delta = 0.0;
  double selection_margin = 0.0;
  double beta = 0.0;

  Index total_layers() const { return static_cast<Index>(spec.layers.size()); }
  Index p() const { return layout.p(); }
};

namespace detail {

// Query/key factorisation of a score x_iᵀ B x_j (B indexed [query][key]).
inline AttentionHead head_from_form(const Matrix& form, const Matrix& value, double scale) {
  std::vector<Index> used;
  for (Index r = 0; r < form.rows(); ++r)
    if (form.row(r).cwiseAbs().maxCoeff() > 0.0) used.push_back(r);
  if (used.empty()) used.push_back(0);
  const Index k = static_cast<Index>(used.size());
  AttentionHead h;
  h.query = Matrix::Zero(form.rows(), k);
  h.key = Matrix::Zero(form.cols(), k);
  const double root = std::sqrt(scale);
  for (Index c = 0; c < k; ++c) {
    h.query(used[static_cast<std::size_t>(c)], c) = root;
    h.key.col(c) = root * form.row(used[static_cast<std::size_t>(c)]).transpose();
  }
  h.value = value;
  return h;
}

// Adds weight · cos(θ_j − θ_i − γ) for the phase pair at (c, s).
inline void add_rotation(Matrix& form, Index c, Index s, double gamma, double weight) {
  form(c, c) += weight * std::cos(gamma);
  form(s, c) -= weight * std::sin(gamma);
  form(s, s) += weight * std::cos(gamma);
  form(c, s) += weight * std::sin(gamma);
}

inline Matrix selector(Index d, const std::vector<Index>& cols) {
  Matrix s = Matrix::Zero(d, static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) s(cols[c], static_cast<Index>(c)) = 1.0;
  return s;
}

inline Matrix identity_except(Index d, const std::vector<Index>& skip) {
  Matrix m = Matrix::Identity(d, d);
  for (Index c : skip) m(c, c) = 0.0;
  return m;
}

inline AttentionHead self_head(const WtaLayout& lay, double scale) {
  Matrix form = Matrix::Zero(lay.d(), lay.d());
  add_rotation(form, lay.phase_cos(0), lay.phase_sin(0), 0.0, 1.0);
  return head_from_form(form, Matrix::Identity(lay.d(), lay.d()), scale);
}

inline AttentionHead left_head(const WtaLayout& lay, double scale) {
  Matrix form = Matrix::Zero(lay.d(), lay.d());
  add_rotation(form, lay.phase_cos(0), lay.phase_sin(0), std::numbers::pi / static_cast<double>(lay.T), 1.0);
  std::vector<Index> state(static_cast<std::size_t>(lay.n));
  for (Index a = 0; a < lay.n; ++a) state[static_cast<std::size_t>(a)] = a;
  return head_from_form(form, selector(lay.d(), state), scale);
}

inline AttentionHead right_head(const WtaLayout& lay, int k, double beta, double scale) {
  const Index d = lay.d();
  Matrix form = Matrix::Zero(d, d);
  const Index one = lay.one(), dep = lay.depth(), dsq = lay.depth_sq();
  // −β(1 + d_j² + d_i² − 2d_j + 2d_i − 2 d_i d_j)
  form(one, one) -= beta;
  form(one, dsq) -= beta;
  form(dsq, one) -= beta;
  form(one, dep) += 2 * beta;
  form(dep, one) -= 2 * beta;
  form(dep, dep) += 2 * beta;
  const double step = std::numbers::pi / static_cast<double>(lay.T);
  add_rotation(form, lay.phase_cos(0), lay.phase_sin(0), 2 * step, 1.0);
  if (lay.indicator == IndicatorMode::exact) {
    for (Index i = 1; i <= lay.T; ++i)
      for (Index j = i + 2; j <= lay.T; ++j) form(lay.onehot(i), lay.onehot(j)) += 2.0;
  } else {
    // 2H = 1 + (4/π) Σ sin(h(θ_j − θ_i − 1.25π/T))/h, each sine a shifted cosine.
    form(one, one) += 1.0;
    for (int l = 0; l <= k; ++l) {
      const double h = 2.0 * l + 1.0;
      add_rotation(form, lay.phase_cos(l), lay.phase_sin(l), h * kStepPhase * step + std::numbers::pi / 2,
                   4.0 / (std::numbers::pi * h));
    }
  }
  std::vector<Index> state(static_cast<std::size_t>(lay.n));
  for (Index a = 0; a < lay.n; ++a) state[static_cast<std::size_t>(a)] = a;
  return head_from_form(form, selector(d, state), scale);
}

// Realises `poly` on the selected input coordinates either as one bilinear
// stage (when every term is a product of one left and one right variable) or
// as a square-activation MLP.
inline MlpStage square_stage(const PolynomialMap& poly, const Matrix& select, Matrix out, Matrix passthrough) {
  TwoLayerMlp mlp = quadratic_mlp_fit(poly);
  mlp.w1 = select * mlp.w1;
  return MlpStage{std::move(mlp), std::move(out), std::move(passthrough)};
}

inline Matrix place(Index rows, Index cols, const std::vector<std::pair<Index, Index>>& ones) {
  Matrix m = Matrix::Zero(rows, cols);
  for (auto [r, c] : ones) m(r, c) = 1.0;
  return m;
}

// Enrichment layer 1: prefix mean of the markers and a self copy; the
// feed-forward writes depth = T·(i/T)·mean − m.
inline LayerSpec enrichment_depth_layer(const WtaLayout& lay, const WtaOptions& opt, double scale) {
  const Index d = lay.d();
  AttentionHead mean;
  mean.query = Matrix::Zero(d, 1);
  mean.key = Matrix::Zero(d, 1);
  mean.value = selector(d, {lay.marker()});
  mean.mode = AttentionMode::soft;
  mean.causal = true;

  LayerSpec layer;
  layer.name = "enrich-depth";
  layer.mode = opt.attention;
  layer.heads = {mean, self_head(lay, scale)};
  // Concatenation: column 0 is the mean, columns 1..d the copied row.
  const Index w = d + 1;
  const Index mean_col = 0, idx_col = 1 + lay.index_col(), m_col = 1 + lay.marker();
  Matrix pass = Matrix::Zero(w, d);
  pass.bottomRows(d) = identity_except(d, {lay.depth()});
  pass(m_col, lay.depth()) = -1.0;
  const Matrix out = place(1, d, {{0, lay.depth()}});
  const double T = static_cast<double>(lay.T);
  if (opt.feed_forward == ParsingFeedForward::bilinear) {
    Tensor3 t(1, 1, 1);
    t(0, 0, 0) = T;
    layer.ff.stages.push_back(BilinearStage{selector(w, {idx_col}), selector(w, {mean_col}), make_bilinear(t), out, pass});
  } else {
    PolynomialMap poly;
    poly.inputs = 2;
    poly.outputs = 1;
    poly.add(0, T, {0, 1});
    layer.ff.stages.push_back(square_stage(poly, selector(w, {idx_col, mean_col}), out, pass));
  }
  return layer;
}

// Enrichment layer 2: self copy, feed-forward writes the squared depth.
inline LayerSpec enrichment_square_layer(const WtaLayout& lay, const WtaOptions& opt, double scale) {
  const Index d = lay.d();
  LayerSpec layer;
  layer.name = "enrich-depth-squared";
  layer.mode = opt.attention;
  layer.heads = {self_head(lay, scale)};
  const Matrix pass = identity_except(d, {lay.depth_sq()});
  const Matrix out = place(1, d, {{0, lay.depth_sq()}});
  if (opt.feed_forward == ParsingFeedForward::bilinear) {
    Tensor3 t(1, 1, 1);
    t(0, 0, 0) = 1.0;
    layer.ff.stages.push_back(
        BilinearStage{selector(d, {lay.depth()}), selector(d, {lay.depth()}), make_bilinear(t), out, pass});
  } else {
    PolynomialMap poly;
    poly.inputs = 1;
    poly.outputs = 1;
    poly.add(0, 1.0, {0, 0});
    layer.ff.stages.push_back(square_stage(poly, selector(d, {lay.depth()}), out, pass));
  }
  return layer;
}

// Parsing layer. Heads: left child state, right child state, self copy.
// Stage 1 computes u = 𝓣(left, right), g = (m + m²)/2 (1 on open brackets)
// and h = 1 − m² (1 on leaves). Stage 2 writes g·u + h·state, so closing
// brackets end up with a zero state.
inline LayerSpec parsing_layer(const Wta& a, const WtaLayout& lay, const WtaOptions& opt, int k, double beta,
                               double scale) {
  const Index n = lay.n, d = lay.d();
  LayerSpec layer;
  layer.name = "parse";
  layer.mode = opt.attention;
  layer.heads = {left_head(lay, scale), right_head(lay, k, beta, scale), self_head(lay, scale)};

  // Stage 1 input: (left n ‖ right n ‖ self d). Output: (u n ‖ g ‖ h ‖ self d).
  const Index in1 = 2 * n + d, out1 = n + 2 + d, self1 = 2 * n;
  const Index m1 = self1 + lay.marker(), one1 = self1 + lay.one();
  Matrix pass1 = Matrix::Zero(in1, out1);
  pass1.block(self1, n + 2, d, d) = Matrix::Identity(d, d);
  const Matrix out1m = Matrix::Identity(n + 2, out1);

  // Stage 2 input: stage 1 output. Output: d.
  const Index self2 = n + 2;
  Matrix pass2 = Matrix::Zero(out1, d);
  pass2.block(self2, 0, d, d) = identity_except(d, [&] {
    std::vector<Index> s;
    for (Index c = 0; c < n; ++c) s.push_back(c);
    return s;
  }());
  const Matrix out2m = Matrix::Identity(n, d);

  if (opt.feed_forward == ParsingFeedForward::bilinear) {
    // x1 = (left ‖ m ‖ 1), x2 = (right ‖ m ‖ 1)
    std::vector<Index> c1, c2;
    for (Index c = 0; c < n; ++c) c1.push_back(c), c2.push_back(n + c);
    c1.push_back(m1), c1.push_back(one1);
    c2.push_back(m1), c2.push_back(one1);
    Tensor3 t1(n + 2, n + 2, n + 2);
    for (Index p = 0; p < n; ++p)
      for (Index l = 0; l < n; ++l)
        for (Index r = 0; r < n; ++r) t1(l, r, p) = a.tensor(p, l, r);
    t1(n, n + 1, n) = 0.5;      // g += m/2
    t1(n, n, n) = 0.5;          // g += m²/2
    t1(n + 1, n + 1, n + 1) = 1.0;  // h += 1
    t1(n, n, n + 1) = -1.0;     // h −= m²
    layer.ff.stages.push_back(BilinearStage{selector(in1, c1), selector(in1, c2), make_bilinear(t1), out1m, pass1});

    // x1 = (u ‖ state), x2 = (g, h)
    std::vector<Index> e1, e2{n, n + 1};
    for (Index c = 0; c < n; ++c) e1.push_back(c);
    for (Index c = 0; c < n; ++c) e1.push_back(self2 + c);
    Tensor3 t2(2 * n, 2, n);
    for (Index c = 0; c < n; ++c) {
      t2(c, 0, c) = 1.0;
      t2(n + c, 1, c) = 1.0;
    }
    layer.ff.stages.push_back(BilinearStage{selector(out1, e1), selector(out1, e2), make_bilinear(t2), out2m, pass2});
  } else {
    // Inputs (left n ‖ right n ‖ m).
    std::vector<Index> c1;
    for (Index c = 0; c < 2 * n; ++c) c1.push_back(c);
    c1.push_back(m1);
    PolynomialMap p1;
    p1.inputs = 2 * n + 1;
    p1.outputs = n + 2;
    for (Index p = 0; p < n; ++p)
      for (Index l = 0; l < n; ++l)
        for (Index r = 0; r < n; ++r)
          if (a.tensor(p, l, r) != 0.0) p1.add(p, a.tensor(p, l, r), {l, n + r});
    p1.add(n, 0.5, {2 * n});
    p1.add(n, 0.5, {2 * n, 2 * n});
    p1.add(n + 1, 1.0);
    p1.add(n + 1, -1.0, {2 * n, 2 * n});
    layer.ff.stages.push_back(square_stage(p1, selector(in1, c1), out1m, pass1));

    // Inputs (u n ‖ state n ‖ g ‖ h).
    std::vector<Index> c2;
    for (Index c = 0; c < n; ++c) c2.push_back(c);
    for (Index c = 0; c < n; ++c) c2.push_back(self2 + c);
    c2.push_back(n), c2.push_back(n + 1);
    PolynomialMap p2;
    p2.inputs = 2 * n + 2;
    p2.outputs = n;
    for (Index c = 0; c < n; ++c) {
      p2.add(c, 1.0, {c, 2 * n});
      p2.add(c, 1.0, {n + c, 2 * n + 1});
    }
    layer.ff.stages.push_back(square_stage(p2, selector(out1, c2), out2m, pass2));
  }
  return layer;
}

inline Embedding wta_embedding(const Wta& a, const WtaLayout& lay) {
  Embedding e;
  const Index d = lay.d();
  for (const auto& s : a.alphabet) {
    Vector v = Vector::Zero(d);
    v.head(lay.n) = a.leaf(s);
    v(lay.one()) = 1.0;
    e.tokens[s] = v;
  }
  Vector open = Vector::Zero(d), close = Vector::Zero(d);
  open(lay.marker()) = 1.0;
  open(lay.one()) = 1.0;
  close(lay.marker()) = -1.0;
  close(lay.one()) = 1.0;
  e.tokens[kOpen] = open;
  e.tokens[kClose] = close;
  e.positional = Matrix::Zero(lay.T, d);
  for (Index i = 1; i <= lay.T; ++i) {
    const Index r = i - 1;
    for (int h = 0; h < lay.harmonics; ++h) {
      const double m = 2.0 * h + 1.0;
      e.positional(r, lay.phase_cos(h)) = std::cos(m * lay.theta(i));
      e.positional(r, lay.phase_sin(h)) = std::sin(m * lay.theta(i));
    }
    e.positional(r, lay.index_col()) = static_cast<double>(i) / static_cast<double>(lay.T);
    if (lay.indicator == IndicatorMode::exact) e.positional(r, lay.onehot(i)) = 1.0;
  }
  return e;
}

}  // namespace detail

inline WtaLayout wta_layout(Index n, Index T, IndicatorMode indicator, int fourier_terms) {
  WtaLayout lay{n, T, indicator, indicator == IndicatorMode::fourier ? fourier_terms + 1 : 1};
  return lay;
}

inline WtaCompilation compile_wta(const Wta& a, Index T, Index D, const WtaOptions& opt = {}) {
  a.validate();
  if (D < 1) throw ArgumentError("depth budget must be at least 1");
  if (T < 2) throw ArgumentError("token budget T must be at least 2");
  if (opt.attention == AttentionMode::soft && !(opt.saturation > 0.0))
    throw ArgumentError("saturation constant C must be positive");

  WtaCompilation c;
  c.options = opt;
  c.parsing_layers = D;
  c.fourier_terms = opt.indicator == IndicatorMode::exact ? 0
                    : opt.fourier_terms >= 0          ? opt.fourier_terms
                                                      : choose_fourier_terms(T);
  const OffsetSelection sel = offset_selection(opt.indicator, c.fourier_terms, T);
  c.selection_margin = sel.margin;
  c.fourier_delta = opt.indicator == IndicatorMode::exact ? 0.0 : heaviside_fourier(c.fourier_terms, T).delta;
  c.beta = opt.beta > 0.0 ? opt.beta : 8.0 * sel.spread;
  if (c.beta <= sel.spread)
    throw CalibrationError("beta " + std::to_string(c.beta) + " does not exceed the offset score spread " +
                           std::to_string(sel.spread));
  c.layout = wta_layout(a.states(), T, opt.indicator, c.fourier_terms);

  const double scale = opt.attention == AttentionMode::soft ? opt.saturation : 1.0;
  TransformerSpec& s = c.spec;
  s.d = c.layout.d();
  s.budget = T;
  s.embedding = detail::wta_embedding(a, c.layout);
  s.layers.push_back(detail::enrichment_depth_layer(c.layout, opt, scale));
  s.layers.push_back(detail::enrichment_square_layer(c.layout, opt, scale));
  const LayerSpec parse = detail::parsing_layer(a, c.layout, opt, c.fourier_terms, c.beta, scale);
  for (Index l = 0; l < D; ++l) s.layers.push_back(parse);
  s.readout = Matrix::Identity(c.layout.d(), a.states());
  nlohmann::json alphabet = a.alphabet;
  s.meta = {{"kind", "wta"},
            {"n", a.states()},
            {"T", T},
            {"D", D},
            {"alphabet", alphabet},
            {"attention", to_string(opt.attention)},
            {"saturation", opt.attention == AttentionMode::soft ? opt.saturation : 0.0},
            {"indicator", opt.indicator == IndicatorMode::exact ? "exact" : "fourier"},
            {"feed_forward", opt.feed_forward == ParsingFeedForward::bilinear ? "bilinear" : "square-mlp"},
            {"k", c.fourier_terms},
            {"delta_k", c.fourier_delta},
            {"selection_margin", c.selection_margin},
            {"beta", c.beta}};
  return c;
}

// μ at every position of index_set, read from the final layer.
inline std::map<int, Vector> simulate_wta(const WtaCompilation& c, const TreeEncoding& enc) {
  const TokenMatrix y = transformer_forward(c.spec, enc.tokens);
  std::map<int, Vector> out;
  for (int i : enc.index_set) out[i] = y.row(i - 1).transpose();
  return out;
}

// Readout after every layer (enrichment layers included), one T x n matrix each.
inline std::vector<Matrix> wta_layer_states(const WtaCompilation& c, const TreeEncoding& enc) {
  std::vector<Matrix> out;
  TokenMatrix x = embed_tokens(c.spec, enc.tokens);
  for (const auto& layer : c.spec.layers) {
    x = layer_forward(layer, x);
    out.push_back(apply_readout(c.spec, x));
  }
  return out;
}

inline TokenMatrix embed_tree(const WtaCompilation& c, const TreeEncoding& enc) { return embed_tokens(c.spec, enc.tokens); }

inline double wta_simulation_error(const Wta& a, const WtaCompilation& c, const BinaryTree& t) {
  const TreeEncoding enc = tree_to_str(t);
  const auto want = wta_subtree_states(a, enc);
  const auto got = simulate_wta(c, enc);
  double worst = 0.0;
  for (const auto& [i, v] : want) {
    const double e = (got.at(i) - v).cwiseAbs().maxCoeff();
    worst = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(worst, e);
  }
  return worst;
}

struct WtaCalibration {
  double C = 1.0;
  double probe_error = 0.0;
  int steps = 0;
};

// Doubling search on C from 1, as for word automata.
inline WtaCalibration calibrate_wta_saturation(const Wta& a, Index T, Index D, WtaOptions opt, double eps_target,
                                               const std::vector<BinaryTree>& probe) {
  if (std::isnan(eps_target) || eps_target < 0) throw ArgumentError("eps_target must be nonnegative");
  opt.attention = AttentionMode::soft;
  WtaCalibration r;
  for (double C = 1.0; C <= 18446744073709551616.0; C *= 2.0, ++r.steps) {
    opt.saturation = C;
    double err = 0.0;
    if (!std::isinf(eps_target)) {
      const WtaCompilation c = compile_wta(a, T, D, opt);
      for (const auto& t : probe) err = std::max(err, wta_simulation_error(a, c, t));
    }
    if (err < eps_target) {
      r.C = C;
      r.probe_error = err;
      return r;
    }
  }
  throw ConvergenceError("no saturation constant up to 2^64 reaches error " + std::to_string(eps_target));
}

inline nlohmann::json wta_report(const WtaCompilation& c) {
  const SpecShape s = spec_shape(c.spec);
  nlohmann::json j = {{"kind", "wta"},
                      {"n", c.layout.n},
                      {"T", c.layout.T},
                      {"D", c.parsing_layers},
                      {"enrichment_layers", c.enrichment_layers},
                      {"total_layers", s.layers},
                      {"d", s.d},
                      {"p", c.p()},
                      {"heads", s.heads},
                      {"attention_width", s.attention_width},
                      {"mlp_width", s.mlp_width},
                      {"attention", to_string(c.options.attention)},
                      {"indicator", c.options.indicator == IndicatorMode::exact ? "exact" : "fourier"},
                      {"feed_forward", c.options.feed_forward == ParsingFeedForward::bilinear ? "bilinear" : "square-mlp"},
                      {"k", c.fourier_terms},
                      {"delta_k", c.fourier_delta},
                      {"selection_margin", c.selection_margin},
                      {"beta", c.beta}};
  j["C"] = c.options.attention == AttentionMode::soft ? c.options.saturation : 0.0;
  return j;
}

}  // namespace a2a
