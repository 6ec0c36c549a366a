#pragma once

// Compiles a weighted word automaton into a log-depth transformer that
// computes every prefix state with a doubling scan. Hidden rows hold
// (vec L ‖ vec R ‖ cos ‖ sin): two copies of an accumulated transition
// product plus a phase encoding of the position. Inputs are left-padded to 2T
// rows with identity tokens; the row at position t (from −T+1 to T) carries
// the product over the window (t − 2^ℓ, t] after layer ℓ.

#include "automata.hpp"
#include "common.hpp"
#include "tensor.hpp"
#include "transformer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

namespace a2a {

inline const Symbol kIdentityToken = "<id>";

enum class WfaMode { exact, approx };

struct WfaLayout {
  Index n = 0;
  Index T = 0;

  Index block() const { return n * n; }
  Index left() const { return 0; }
  Index right() const { return n * n; }
  Index cos_col() const { return 2 * n * n; }
  Index sin_col() const { return 2 * n * n + 1; }
  Index d() const { return 2 * n * n + 2; }
  Index rows() const { return 2 * T; }
  Index layers() const { return static_cast<Index>(ceil_log2(static_cast<std::size_t>(T))); }
  // Position (−T+1 .. T) of hidden row r.
  Index position(Index r) const { return r - T + 1; }
  double phase(Index position) const { return std::numbers::pi * static_cast<double>(position) / static_cast<double>(T); }
};

struct WfaCompilation {
  TransformerSpec spec;
  WfaLayout layout;
  WfaMode mode = WfaMode::exact;
  double saturation = 0.0;  // C; 0 for the exact (hard attention) build
  Vector alpha;

  Index layers() const { return static_cast<Index>(spec.layers.size()); }
};

namespace detail {
inline void check_wfa_budget(const Wfa& a, Index T) {
  a.validate();
  if (T < 1 || !is_power_of_two(static_cast<std::size_t>(T)))
    throw ArgumentError("T must be a power of two, got " + std::to_string(T));
  if (a.has_symbol(kIdentityToken)) throw InvalidModelError("the symbol '<id>' is reserved for padding");
}

inline Matrix block_selector(Index d, Index offset, Index width) {
  Matrix s = Matrix::Zero(d, width);
  for (Index i = 0; i < width; ++i) s(offset + i, i) = 1.0;
  return s;
}

inline Matrix block_identity(Index d, Index offset, Index width) {
  Matrix s = Matrix::Zero(d, d);
  for (Index i = 0; i < width; ++i) s(offset + i, offset + i) = 1.0;
  return s;
}

inline Embedding wfa_embedding(const Wfa& a, const WfaLayout& lay) {
  Embedding e;
  const Index n = lay.n;
  auto token_row = [&](const Matrix& m) {
    Vector v = Vector::Zero(lay.d());
    v.segment(lay.left(), n * n) = vec(m);
    v.segment(lay.right(), n * n) = vec(m);
    return v;
  };
  for (const auto& s : a.alphabet) e.tokens[s] = token_row(a.transition(s));
  e.tokens[kIdentityToken] = token_row(Matrix::Identity(n, n));
  e.pad = kIdentityToken;
  e.positional = Matrix::Zero(lay.rows(), lay.d());
  for (Index r = 0; r < lay.rows(); ++r) {
    const double phi = lay.phase(lay.position(r));
    e.positional(r, lay.cos_col()) = std::cos(phi);
    e.positional(r, lay.sin_col()) = std::sin(phi);
  }
  return e;
}

// Layer ℓ (1-based). The left head reads the row 2^(ℓ−1) positions earlier:
// its key rotates each phase forward by γ so the score cos(φ_j + γ − φ_t)
// peaks at φ_j = φ_t − γ. The right head reads its own row.
inline LayerSpec wfa_layer(const WfaLayout& lay, Index ell, WfaMode mode, double saturation) {
  const Index d = lay.d(), nn = lay.block();
  const double gamma = std::numbers::pi * static_cast<double>(Index{1} << (ell - 1)) / static_cast<double>(lay.T);
  const double scale = mode == WfaMode::approx ? std::sqrt(saturation) : 1.0;

  Matrix pos = block_selector(d, lay.cos_col(), 2);
  Matrix rotated = Matrix::Zero(d, 2);
  rotated(lay.cos_col(), 0) = std::cos(gamma);
  rotated(lay.sin_col(), 0) = -std::sin(gamma);
  rotated(lay.cos_col(), 1) = std::sin(gamma);
  rotated(lay.sin_col(), 1) = std::cos(gamma);

  AttentionHead shifted{scale * pos, scale * rotated, block_identity(d, lay.left(), nn), std::nullopt, false};
  AttentionHead in_place{scale * pos, scale * pos, block_identity(d, lay.right(), nn), std::nullopt, false};

  LayerSpec layer;
  layer.name = "scan-" + std::to_string(ell);
  layer.mode = mode == WfaMode::exact ? AttentionMode::hard : AttentionMode::soft;
  layer.heads = {shifted, in_place};
  layer.merge = Matrix::Zero(3 * d, d);
  layer.merge.topRows(d) = Matrix::Identity(d, d);
  layer.merge.middleRows(d, d) = Matrix::Identity(d, d);
  layer.merge.bottomRows(d) = block_identity(d, lay.cos_col(), 2);

  const Matrix sel_left = block_selector(d, lay.left(), nn);
  const Matrix sel_right = block_selector(d, lay.right(), nn);
  Matrix copy_out = Matrix::Zero(nn, d);
  copy_out.middleCols(lay.left(), nn) = Matrix::Identity(nn, nn);
  copy_out.middleCols(lay.right(), nn) = Matrix::Identity(nn, nn);
  const Matrix keep_pos = block_identity(d, lay.cos_col(), 2);
  const BilinearLayer product = make_bilinear(matmul_tensor(lay.n));

  if (mode == WfaMode::exact) {
    layer.ff.stages.push_back(BilinearStage{sel_left, sel_right, product, copy_out, keep_pos});
  } else {
    TwoLayerMlp mlp = quadratic_mlp_fit(bilinear_polynomial(product));
    Matrix select(d, 2 * nn);
    select << sel_left, sel_right;
    mlp.w1 = select * mlp.w1;
    layer.ff.stages.push_back(MlpStage{std::move(mlp), copy_out, keep_pos});
  }
  return layer;
}

inline Matrix wfa_readout_matrix(const Vector& alpha, const WfaLayout& lay) {
  const Index n = lay.n;
  Matrix w = Matrix::Zero(lay.d(), n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) w(lay.right() + i + j * n, j) = alpha(i);
  return w;
}

inline WfaCompilation compile_wfa(const Wfa& a, Index T, WfaMode mode, double saturation) {
  check_wfa_budget(a, T);
  if (mode == WfaMode::approx && !(saturation > 0.0)) throw ArgumentError("saturation constant C must be positive");
  WfaLayout lay{a.states(), T};
  WfaCompilation c;
  c.layout = lay;
  c.mode = mode;
  c.saturation = mode == WfaMode::approx ? saturation : 0.0;
  c.alpha = a.alpha;
  c.spec.d = lay.d();
  c.spec.budget = T;
  c.spec.embedding = wfa_embedding(a, lay);
  for (Index ell = 1; ell <= lay.layers(); ++ell) c.spec.layers.push_back(wfa_layer(lay, ell, mode, saturation));
  c.spec.readout = wfa_readout_matrix(a.alpha, lay);
  nlohmann::json alphabet = a.alphabet;
  c.spec.meta = {{"kind", "wfa"},
                 {"mode", mode == WfaMode::exact ? "exact" : "approx"},
                 {"n", lay.n},
                 {"T", T},
                 {"alphabet", alphabet},
                 {"saturation", c.saturation}};
  return c;
}
}  // namespace detail

inline WfaCompilation compile_exact(const Wfa& a, Index T) { return detail::compile_wfa(a, T, WfaMode::exact, 0.0); }

inline WfaCompilation compile_approx(const Wfa& a, Index T, double C) {
  return detail::compile_wfa(a, T, WfaMode::approx, C);
}

// Embedding of a word, left-padded with identity rows to 2T positions.
inline TokenMatrix embed_word(const Wfa& a, const Word& word, Index T) {
  detail::check_wfa_budget(a, T);
  if (static_cast<Index>(word.size()) > T) throw BudgetError("word longer than T");
  WfaLayout lay{a.states(), T};
  TransformerSpec spec;
  spec.d = lay.d();
  spec.budget = T;
  spec.embedding = detail::wfa_embedding(a, lay);
  return embed_tokens(spec, word);
}

// Row t of the result is αᵀ·unvec(right block of row t).
inline StateSequence readout(const TokenMatrix& rows, const Vector& alpha) {
  const Index n = alpha.size();
  require_dims(rows.cols() >= 2 * n * n, "readout: rows are narrower than two transition blocks");
  StateSequence out{Matrix(rows.rows(), n)};
  for (Index r = 0; r < rows.rows(); ++r) {
    Vector block = rows.row(r).segment(n * n, n * n).transpose();
    out.rows.row(r) = alpha.transpose() * unvec(block, n);
  }
  return out;
}

// The word's states sit in the last |word| + 1 rows (the extra row is the
// identity buffer just before the first symbol, which reads out as αᵀ).
inline StateSequence simulate_wfa(const WfaCompilation& c, const Word& word) {
  TokenMatrix y = transformer_forward(c.spec, word);
  const Index k = static_cast<Index>(word.size()) + 1;
  return StateSequence{y.bottomRows(k)};
}

inline std::vector<TokenMatrix> wfa_layer_states(const WfaCompilation& c, const Word& word) {
  std::vector<TokenMatrix> out;
  TokenMatrix x = embed_tokens(c.spec, word);
  for (const auto& layer : c.spec.layers) {
    x = layer_forward(layer, x);
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error budget
// ---------------------------------------------------------------------------

struct ErrorBudget {
  double M = 0.0;
  double eps_attn = 0.0;
  std::vector<double> eps_mlp;
  std::vector<double> eps_total;
};

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

inline double transition_norm_bound(const Wfa& a) {
  double best = 0.0;
  for (const auto& [s, m] : a.transitions) best = std::max(best, spectral_norm(m));
  return 2.0 * best;
}

inline ErrorBudget error_bound(double M, double eps_attn, const std::vector<double>& eps_mlp, std::size_t L) {
  if (M < 0 || eps_attn < 0) throw ArgumentError("error_bound inputs must be nonnegative");
  if (eps_mlp.size() < L) throw ArgumentError("error_bound needs one MLP error per layer");
  ErrorBudget b{M, eps_attn, std::vector<double>(eps_mlp.begin(), eps_mlp.begin() + static_cast<std::ptrdiff_t>(L)), {}};
  for (std::size_t l = 0; l < L; ++l) {
    if (eps_mlp[l] < 0) throw ArgumentError("error_bound inputs must be nonnegative");
    const double prev = l == 0 ? eps_attn : b.eps_total[l - 1];
    b.eps_total.push_back(prev * M + prev * prev + eps_mlp[l]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Saturation calibration
// ---------------------------------------------------------------------------

inline Word random_word(const std::vector<Symbol>& alphabet, std::size_t length, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  Word w;
  w.reserve(length);
  for (std::size_t i = 0; i < length; ++i) w.push_back(alphabet[pick(rng)]);
  return w;
}

inline std::vector<Word> random_words(const std::vector<Symbol>& alphabet, std::size_t length, std::size_t count,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Word> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_word(alphabet, length, rng));
  return out;
}

// Frobenius norm of the state-sequence difference over rows 1..|word|.
inline double wfa_simulation_error(const Wfa& a, const WfaCompilation& c, const Word& word) {
  const StateSequence got = simulate_wfa(c, word);
  const StateSequence want = wfa_states(a, word);
  const Index k = static_cast<Index>(word.size());
  if (k == 0) return 0.0;
  return (got.rows.bottomRows(k) - want.rows.bottomRows(k)).norm();
}

inline double max_simulation_error(const Wfa& a, const WfaCompilation& c, const std::vector<Word>& words) {
  double worst = 0.0;
  for (const auto& w : words) {
    const double e = wfa_simulation_error(a, c, w);
    if (!(e <= worst)) worst = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(worst, e);
  }
  return worst;
}

struct CalibrationResult {
  double C = 1.0;
  double probe_error = 0.0;
  int steps = 0;
};

inline constexpr double kSaturationCap = 18446744073709551616.0;  // 2^64

// Doubles C from 1 until the worst probe error drops below eps_target.
inline CalibrationResult calibrate_saturation(const Wfa& a, Index T, double eps_target,
                                              const std::vector<Word>& probe) {
  if (!(eps_target > 0.0) && eps_target != 0.0) throw ArgumentError("eps_target must be nonnegative");
  CalibrationResult r;
  for (double C = 1.0; C <= kSaturationCap; C *= 2.0, ++r.steps) {
    const double err = std::isinf(eps_target) ? 0.0 : max_simulation_error(a, compile_approx(a, T, C), probe);
    if (err < eps_target) {
      r.C = C;
      r.probe_error = err;
      return r;
    }
  }
  throw ConvergenceError("no saturation constant up to 2^64 reaches error " + std::to_string(eps_target));
}

inline CalibrationResult calibrate_saturation(const Wfa& a, Index T, double eps_target, std::size_t probes = 32,
                                              std::uint64_t seed = 0x5eed) {
  return calibrate_saturation(a, T, eps_target, random_words(a.alphabet, static_cast<std::size_t>(T), probes, seed));
}

// ---------------------------------------------------------------------------
// Instrumented layer-by-layer comparison against the hard-attention build
// ---------------------------------------------------------------------------

struct LayerErrors {
  std::vector<double> total;      // right-block error after each layer
  std::vector<double> attention;  // head-output error introduced by soft attention
  std::vector<double> mlp;        // feed-forward error against the exact product
};

// Rows compared are positions 1..T. Errors are Frobenius norms of n x n
// blocks, maximised over rows.
inline LayerErrors measure_layer_errors(const WfaCompilation& approx, const WfaCompilation& exact,
                                        const Word& word) {
  const WfaLayout& lay = approx.layout;
  const Index nn = lay.block(), T = lay.T;
  LayerErrors out;
  TokenMatrix xa = embed_tokens(approx.spec, word);
  TokenMatrix xe = embed_tokens(exact.spec, word);
  const BilinearLayer product = make_bilinear(matmul_tensor(lay.n));
  for (std::size_t l = 0; l < approx.spec.layers.size(); ++l) {
    const LayerSpec& la = approx.spec.layers[l];
    const LayerSpec& le = exact.spec.layers[l];
    // Same input, soft versus hard heads: the error attention alone introduces.
    double attn = 0.0;
    for (std::size_t h = 0; h < la.heads.size(); ++h) {
      const Matrix soft = head_forward(la.heads[h], xa, la.mode);
      const Matrix hard = head_forward(le.heads[h], xa, le.mode);
      for (Index r = T; r < 2 * T; ++r) attn = std::max(attn, (soft.row(r) - hard.row(r)).norm());
    }
    // Feed-forward versus the exact product on the same merged rows.
    std::vector<Matrix> heads;
    for (const auto& h : la.heads) heads.push_back(head_forward(h, xa, la.mode));
    const Matrix merged = merge_heads(la, heads, xa);
    const Matrix ff = feed_forward(la.ff, merged);
    double mlp = 0.0;
    for (Index r = T; r < 2 * T; ++r) {
      const Vector want = bilinear_apply(product, merged.row(r).segment(lay.left(), nn).transpose(),
                                         merged.row(r).segment(lay.right(), nn).transpose());
      mlp = std::max(mlp, (ff.row(r).segment(lay.right(), nn).transpose() - want).norm());
    }
    xa = ff;
    xe = layer_forward(le, xe);
    double total = 0.0;
    for (Index r = T; r < 2 * T; ++r)
      total = std::max(total, (xa.row(r).segment(lay.right(), nn) - xe.row(r).segment(lay.right(), nn)).norm());
    out.attention.push_back(attn);
    out.mlp.push_back(mlp);
    out.total.push_back(total);
  }
  return out;
}

// Error budget with eps_attn and eps_mlp taken as the worst measurements over
// the probe words, next to the measured per-layer error in `measured`.
inline ErrorBudget measured_error_budget(const Wfa& a, const WfaCompilation& approx, const std::vector<Word>& probe,
                                         std::vector<double>* measured = nullptr) {
  const WfaCompilation exact = compile_exact(a, approx.layout.T);
  const std::size_t L = approx.spec.layers.size();
  double eps_attn = 0.0;
  std::vector<double> mlp(L, 0.0), total(L, 0.0);
  for (const auto& w : probe) {
    const LayerErrors m = measure_layer_errors(approx, exact, w);
    for (std::size_t l = 0; l < L; ++l) {
      eps_attn = std::max(eps_attn, m.attention[l]);
      mlp[l] = std::max(mlp[l], m.mlp[l]);
      total[l] = std::max(total[l], m.total[l]);
    }
  }
  if (measured) *measured = total;
  return error_bound(transition_norm_bound(a), eps_attn, mlp, L);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline nlohmann::json wfa_report(const WfaCompilation& c, const ErrorBudget* budget = nullptr) {
  const SpecShape s = spec_shape(c.spec);
  nlohmann::json j = {{"kind", "wfa"},
                      {"mode", c.mode == WfaMode::exact ? "exact" : "approx"},
                      {"n", c.layout.n},
                      {"T", c.layout.T},
                      {"L", s.layers},
                      {"d", s.d},
                      {"heads", s.heads},
                      {"attention_width", s.attention_width},
                      {"mlp_width", s.mlp_width}};
  if (c.mode == WfaMode::approx) j["C"] = c.saturation;
  if (budget) {
    j["error_budget"] = {{"M", budget->M},
                         {"eps_attn", budget->eps_attn},
                         {"eps_mlp", budget->eps_mlp},
                         {"eps_total", budget->eps_total}};
  }
  return j;
}

}  // namespace a2a
