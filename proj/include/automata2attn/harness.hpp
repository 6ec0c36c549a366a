#pragma once

// Verification of compiled transformers against the automaton oracles,
// dataset generation, and a small deterministic parallel-for.

#include "automata.hpp"
#include "common.hpp"
#include "json_io.hpp"
#include "scan.hpp"
#include "wfa_compiler.hpp"
#include "wta_compiler.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace a2a {

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

// Hardware concurrency, capped by AUTOMATA2ATTN_THREADS when set.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AUTOMATA2ATTN_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Runs fn(i) for i in [0, count). Results must be written to slot i by the
// callee so that merging is independent of scheduling.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const unsigned workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(count, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_lock;
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(failure_lock);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct VerificationReport {
  std::string kind;
  std::size_t inputs = 0;
  double eps = 0.0;
  std::vector<double> errors;        // per-input Frobenius error
  double max_error = 0.0;
  double mean_error = 0.0;
  std::vector<double> layer_errors;  // per layer, worst over inputs
  int first_failing_layer = 0;       // 1-based; 0 when every layer is within eps
  std::map<int, double> depth_errors;  // trees only: subtree depth -> worst error
  bool pass = false;
  double seconds = 0.0;
};

inline void finish_report(VerificationReport& r) {
  r.inputs = r.errors.size();
  r.max_error = 0.0;
  double sum = 0.0;
  for (double e : r.errors) {
    r.max_error = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(r.max_error, e);
    sum += e;
  }
  r.mean_error = r.errors.empty() ? 0.0 : sum / static_cast<double>(r.errors.size());
  r.first_failing_layer = 0;
  for (std::size_t l = 0; l < r.layer_errors.size(); ++l)
    if (!(r.layer_errors[l] < r.eps)) {
      r.first_failing_layer = static_cast<int>(l) + 1;
      break;
    }
  r.pass = r.max_error < r.eps;
}

// Wall-clock time is left out so identical runs give identical JSON.
inline Json report_to_json(const VerificationReport& r) {
  Json depth = Json::object();
  for (const auto& [d, e] : r.depth_errors) depth[std::to_string(d)] = e;
  return {{"kind", r.kind},
          {"inputs", r.inputs},
          {"eps", r.eps},
          {"pass", r.pass},
          {"max_error", r.max_error},
          {"mean_error", r.mean_error},
          {"errors", r.errors},
          {"layer_errors", r.layer_errors},
          {"first_failing_layer", r.first_failing_layer},
          {"depth_errors", depth}};
}

inline std::string report_table(const VerificationReport& r) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific;
  os << "verification (" << r.kind << "): " << (r.pass ? "PASS" : "FAIL") << "\n";
  os << "  inputs      " << r.inputs << "\n";
  os << "  eps         " << r.eps << "\n";
  os << "  max error   " << r.max_error << "\n";
  os << "  mean error  " << r.mean_error << "\n";
  os << "  layer  error\n";
  for (std::size_t l = 0; l < r.layer_errors.size(); ++l)
    os << "  " << std::setw(5) << l + 1 << "  " << r.layer_errors[l]
       << (static_cast<int>(l) + 1 == r.first_failing_layer ? "  <- first layer above eps" : "") << "\n";
  if (!r.depth_errors.empty()) {
    os << "  depth  error\n";
    for (const auto& [d, e] : r.depth_errors) os << "  " << std::setw(5) << d << "  " << e << "\n";
  }
  os << std::fixed << std::setprecision(3) << "  wall clock  " << r.seconds << " s\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Word automata
// ---------------------------------------------------------------------------

// Rebuilds the compilation record of a spec that was saved to JSON. The
// weights come from the spec itself, so a hand-edited spec is verified as is.
inline WfaCompilation wfa_compilation_from_spec(const TransformerSpec& spec) {
  const Json& m = spec.meta;
  if (m.value("kind", "") != "wfa") throw InvalidModelError("spec was not compiled from a word automaton");
  WfaCompilation c;
  c.spec = spec;
  c.layout = WfaLayout{m.at("n").get<Index>(), m.at("T").get<Index>()};
  c.mode = m.value("mode", "exact") == "approx" ? WfaMode::approx : WfaMode::exact;
  c.saturation = m.value("saturation", 0.0);
  if (spec.d != c.layout.d() || spec.readout.rows() != spec.d || spec.readout.cols() != c.layout.n)
    throw InvalidModelError("spec dimensions disagree with its metadata");
  // The readout stores α on the diagonal blocks of the right transition copy.
  c.alpha = spec.readout.col(0).segment(c.layout.right(), c.layout.n);
  return c;
}

inline WtaCompilation wta_compilation_from_spec(const TransformerSpec& spec) {
  const Json& m = spec.meta;
  if (m.value("kind", "") != "wta") throw InvalidModelError("spec was not compiled from a tree automaton");
  WtaCompilation c;
  c.spec = spec;
  c.options.attention = m.value("attention", "hard") == "soft" ? AttentionMode::soft : AttentionMode::hard;
  c.options.saturation = m.value("saturation", 0.0);
  c.options.indicator = m.value("indicator", "fourier") == "exact" ? IndicatorMode::exact : IndicatorMode::fourier;
  c.options.feed_forward =
      m.value("feed_forward", "bilinear") == "bilinear" ? ParsingFeedForward::bilinear : ParsingFeedForward::square_mlp;
  c.fourier_terms = m.value("k", 0);
  c.fourier_delta = m.value("delta_k", 0.0);
  c.selection_margin = m.value("selection_margin", 0.0);
  c.beta = m.value("beta", 0.0);
  c.parsing_layers = m.at("D").get<Index>();
  c.layout = wta_layout(m.at("n").get<Index>(), m.at("T").get<Index>(), c.options.indicator, c.fourier_terms);
  if (spec.d != c.layout.d() || c.total_layers() != c.enrichment_layers + c.parsing_layers)
    throw InvalidModelError("spec dimensions disagree with its metadata");
  return c;
}

// Exact window products after each of the log2 T scan rounds, for positions
// 1..T, computed with the scan module on the identity-padded sequence of
// length 2T. The scan's last round (window 2T) has no layer counterpart.
inline std::vector<std::vector<Matrix>> scan_rounds(const Wfa& a, const Word& word, Index T) {
  const Index n = a.states();
  std::vector<Matrix> seq(static_cast<std::size_t>(2 * T) - word.size(), Matrix::Identity(n, n));
  for (const auto& s : word) seq.push_back(a.transition(s));
  std::vector<std::vector<Matrix>> rounds;
  prefix_scan<Matrix>(matrix_product_monoid(n), seq, nullptr, [&](std::size_t, const std::vector<Matrix>& state) {
    rounds.emplace_back(state.begin() + static_cast<std::ptrdiff_t>(T), state.end());
  });
  rounds.resize(ceil_log2(static_cast<std::size_t>(T)));
  return rounds;
}

inline VerificationReport verify_wfa(const Wfa& a, const WfaCompilation& c, const std::vector<Word>& words,
                                     double eps = 1e-9) {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& w : words)
    if (static_cast<Index>(w.size()) > c.layout.T)
      throw BudgetError("word of length " + std::to_string(w.size()) + " exceeds T=" + std::to_string(c.layout.T));
  VerificationReport r;
  r.kind = c.mode == WfaMode::exact ? "wfa-exact" : "wfa-approx";
  r.eps = c.mode == WfaMode::exact ? std::min(eps, 1e-9) : eps;
  const Index L = c.layers(), T = c.layout.T, n = c.layout.n, nn = n * n;
  std::vector<double> errors(words.size());
  std::vector<std::vector<double>> layer(words.size(), std::vector<double>(static_cast<std::size_t>(L), 0.0));
  parallel_for(words.size(), [&](std::size_t i) {
    const Word& w = words[i];
    errors[i] = wfa_simulation_error(a, c, w);
    const auto states = wfa_layer_states(c, w);
    const auto rounds = scan_rounds(a, w, T);
    for (Index l = 0; l < L; ++l) {
      double worst = 0.0;
      for (Index t = 0; t < T; ++t) {
        const Matrix got = unvec(states[static_cast<std::size_t>(l)].row(T + t).segment(nn, nn).transpose(), n);
        const double e = (got - rounds[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)]).norm();
        worst = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(worst, e);
      }
      layer[i][static_cast<std::size_t>(l)] = worst;
    }
  });
  r.errors = std::move(errors);
  r.layer_errors.assign(static_cast<std::size_t>(L), 0.0);
  for (const auto& per : layer)
    for (std::size_t l = 0; l < per.size(); ++l) r.layer_errors[l] = std::max(r.layer_errors[l], per[l]);
  finish_report(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Tree automata
// ---------------------------------------------------------------------------

inline VerificationReport verify_wta(const Wta& a, const WtaCompilation& c, const std::vector<BinaryTree>& trees,
                                     double eps = 1e-6) {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& t : trees) {
    if (t.token_count() > c.layout.T)
      throw BudgetError("tree with " + std::to_string(t.token_count()) + " tokens exceeds T=" +
                        std::to_string(c.layout.T));
    if (t.depth() > c.parsing_layers)
      throw BudgetError("tree of depth " + std::to_string(t.depth()) + " exceeds the depth budget " +
                        std::to_string(c.parsing_layers));
  }
  VerificationReport r;
  r.kind = "wta";
  r.eps = eps;
  const Index D = c.parsing_layers;
  std::vector<double> errors(trees.size());
  std::vector<std::vector<double>> layer(trees.size(), std::vector<double>(static_cast<std::size_t>(D), 0.0));
  std::vector<std::map<int, double>> depth(trees.size());
  parallel_for(trees.size(), [&](std::size_t idx) {
    const TreeEncoding enc = tree_to_str(trees[idx]);
    const auto want = wta_subtree_states(a, enc);
    const auto per_layer = wta_layer_states(c, enc);
    const Matrix& final_rows = per_layer.back();
    double sq = 0.0;
    for (const auto& [i, v] : want) {
      const Vector diff = final_rows.row(i - 1).transpose() - v;
      sq += diff.squaredNorm();
      const int dep = enc.subtree_depth.at(i);
      depth[idx][dep] = std::max(depth[idx][dep], diff.cwiseAbs().maxCoeff());
    }
    errors[idx] = std::sqrt(sq);
    // After parsing layer ℓ the rows whose subtree has depth <= ℓ are final.
    for (Index l = 0; l < D; ++l) {
      const Matrix& rows = per_layer[static_cast<std::size_t>(c.enrichment_layers + l)];
      double worst = 0.0;
      for (const auto& [i, v] : want)
        if (enc.subtree_depth.at(i) <= l + 1) worst = std::max(worst, (rows.row(i - 1).transpose() - v).norm());
      layer[idx][static_cast<std::size_t>(l)] = worst;
    }
  });
  r.errors = std::move(errors);
  r.layer_errors.assign(static_cast<std::size_t>(D), 0.0);
  for (std::size_t i = 0; i < trees.size(); ++i) {
    for (std::size_t l = 0; l < layer[i].size(); ++l) r.layer_errors[l] = std::max(r.layer_errors[l], layer[i][l]);
    for (const auto& [d, e] : depth[i]) r.depth_errors[d] = std::max(r.depth_errors[d], e);
  }
  finish_report(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Smallest D for which the root row is correct (within tol) after D parsing
// layers, read off a single run of a compilation with budget >= depth(t).
inline Index minimal_parsing_depth(const Wta& a, const WtaCompilation& c, const BinaryTree& t, double tol = 1e-6) {
  const TreeEncoding enc = tree_to_str(t);
  const Vector root = wta_mu(a, t);
  const auto per_layer = wta_layer_states(c, enc);
  for (Index l = 0; l < c.parsing_layers; ++l) {
    const Matrix& rows = per_layer[static_cast<std::size_t>(c.enrichment_layers + l)];
    const Vector got = rows.row(0).transpose();
    if ((got - root).cwiseAbs().maxCoeff() <= tol) {
      // The root must stay correct in every later layer as well.
      bool stable = true;
      for (Index m = l + 1; m < c.parsing_layers; ++m)
        stable = stable && (per_layer[static_cast<std::size_t>(c.enrichment_layers + m)].row(0).transpose() - root)
                                   .cwiseAbs()
                                   .maxCoeff() <= tol;
      if (stable) return l + 1;
    }
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Tree shapes
// ---------------------------------------------------------------------------

enum class TreeFamily { balanced, comb, uniform };

inline TreeFamily tree_family_from_string(const std::string& s) {
  if (s == "balanced") return TreeFamily::balanced;
  if (s == "comb") return TreeFamily::comb;
  if (s == "uniform" || s == "uniform-random") return TreeFamily::uniform;
  throw ArgumentError("unknown tree family '" + s + "'");
}

inline const char* to_string(TreeFamily f) {
  switch (f) {
    case TreeFamily::balanced: return "balanced";
    case TreeFamily::comb: return "comb";
    case TreeFamily::uniform: return "uniform-random";
  }
  return "?";
}

// Leaves are labelled in order from `labels`.
inline BinaryTree make_balanced(const std::vector<Symbol>& labels, std::size_t begin, std::size_t end) {
  if (end - begin == 1) return BinaryTree::leaf(labels[begin]);
  const std::size_t mid = begin + (end - begin + 1) / 2;
  return BinaryTree::node(make_balanced(labels, begin, mid), make_balanced(labels, mid, end));
}

inline BinaryTree make_balanced(const std::vector<Symbol>& labels) {
  if (labels.empty()) throw ArgumentError("a tree needs at least one leaf");
  return make_balanced(labels, 0, labels.size());
}

inline BinaryTree make_comb(const std::vector<Symbol>& labels) {
  if (labels.empty()) throw ArgumentError("a tree needs at least one leaf");
  BinaryTree t = BinaryTree::leaf(labels.back());
  for (std::size_t i = labels.size() - 1; i-- > 0;) t = BinaryTree::node(BinaryTree::leaf(labels[i]), t);
  return t;
}

inline long double catalan(int k) {
  long double c = 1.0L;
  for (int i = 0; i < k; ++i) c = c * 2.0L * (2.0L * i + 1.0L) / (i + 2.0L);
  return c;
}

namespace detail {
// Uniform over binary shapes with `leaves` leaves: the left subtree gets j
// leaves with probability Cat(j−1)·Cat(leaves−j−1)/Cat(leaves−1).
inline BinaryTree uniform_shape(std::size_t leaves, const std::vector<Symbol>& labels, std::size_t& next,
                                std::mt19937_64& rng) {
  if (leaves == 1) return BinaryTree::leaf(labels[next++]);
  const long double total = catalan(static_cast<int>(leaves) - 1);
  long double u = std::uniform_real_distribution<long double>(0.0L, 1.0L)(rng) * total;
  std::size_t left = 1;
  for (; left < leaves - 1; ++left) {
    const long double w = catalan(static_cast<int>(left) - 1) * catalan(static_cast<int>(leaves - left) - 1);
    if (u < w) break;
    u -= w;
  }
  BinaryTree l = uniform_shape(left, labels, next, rng);
  BinaryTree r = uniform_shape(leaves - left, labels, next, rng);
  return BinaryTree::node(std::move(l), std::move(r));
}
}  // namespace detail

inline BinaryTree random_tree(const std::vector<Symbol>& alphabet, std::size_t leaves, TreeFamily family,
                              std::mt19937_64& rng) {
  if (leaves < 1) throw ArgumentError("a tree needs at least one leaf");
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::vector<Symbol> labels;
  for (std::size_t i = 0; i < leaves; ++i) labels.push_back(alphabet[pick(rng)]);
  switch (family) {
    case TreeFamily::balanced: return make_balanced(labels);
    case TreeFamily::comb: return make_comb(labels);
    case TreeFamily::uniform: {
      std::size_t next = 0;
      return detail::uniform_shape(leaves, labels, next, rng);
    }
  }
  return make_comb(labels);
}

// Every tree with exactly `leaves` leaves over the alphabet.
inline std::vector<BinaryTree> all_trees(const std::vector<Symbol>& alphabet, int leaves) {
  if (leaves == 1) {
    std::vector<BinaryTree> out;
    for (const auto& s : alphabet) out.push_back(BinaryTree::leaf(s));
    return out;
  }
  std::vector<BinaryTree> out;
  for (int left = 1; left < leaves; ++left) {
    const auto ls = all_trees(alphabet, left);
    const auto rs = all_trees(alphabet, leaves - left);
    for (const auto& l : ls)
      for (const auto& r : rs) out.push_back(BinaryTree::node(l, r));
  }
  return out;
}

inline std::vector<BinaryTree> all_trees_up_to(const std::vector<Symbol>& alphabet, int max_leaves) {
  std::vector<BinaryTree> out;
  for (int l = 1; l <= max_leaves; ++l) {
    auto batch = all_trees(alphabet, l);
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct WordDataset {
  std::vector<Symbol> alphabet;
  Index T = 0;
  std::uint64_t seed = 0;
  std::vector<Word> inputs;
  std::vector<StateSequence> targets;  // empty until attach_targets
};

struct TreeDataset {
  std::vector<Symbol> alphabet;
  Index max_tokens = 0;
  TreeFamily family = TreeFamily::uniform;
  std::uint64_t seed = 0;
  std::vector<BinaryTree> inputs;
  std::vector<std::map<int, Vector>> targets;
};

inline WordDataset gen_words(const std::vector<Symbol>& alphabet, Index T, std::size_t count, std::uint64_t seed) {
  if (alphabet.empty()) throw ArgumentError("empty alphabet");
  WordDataset d{alphabet, T, seed, random_words(alphabet, static_cast<std::size_t>(T), count, seed), {}};
  return d;
}

inline void attach_targets(WordDataset& d, const Wfa& a) {
  d.targets.clear();
  for (const auto& w : d.inputs) d.targets.push_back(wfa_states(a, w));
}

// Leaf counts are drawn uniformly from 1..(max_tokens + 2)/3 for the
// uniform family; balanced and comb trees use the largest count that fits.
inline TreeDataset gen_trees(const std::vector<Symbol>& alphabet, Index max_tokens, TreeFamily family,
                             std::size_t count, std::uint64_t seed) {
  if (alphabet.empty()) throw ArgumentError("empty alphabet");
  if (max_tokens < 1) throw ArgumentError("max_tokens must be positive");
  const std::size_t max_leaves = static_cast<std::size_t>((max_tokens + 2) / 3);
  std::mt19937_64 rng(seed);
  TreeDataset d{alphabet, max_tokens, family, seed, {}, {}};
  std::uniform_int_distribution<std::size_t> leaves(1, max_leaves);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t l = family == TreeFamily::uniform ? leaves(rng) : max_leaves;
    d.inputs.push_back(random_tree(alphabet, l, family, rng));
  }
  return d;
}

inline void attach_targets(TreeDataset& d, const Wta& a) {
  d.targets.clear();
  for (const auto& t : d.inputs) d.targets.push_back(wta_subtree_states(a, tree_to_str(t)));
}

// Fraction of (state, symbol) pairs whose transition row has a nonzero entry.
inline double symbol_sparsity(const Wfa& a) {
  std::size_t nonzero = 0;
  for (const auto& s : a.alphabet) {
    const Matrix& m = a.transition(s);
    for (Index q = 0; q < m.rows(); ++q)
      if (m.row(q).cwiseAbs().maxCoeff() > 0.0) ++nonzero;
  }
  return static_cast<double>(nonzero) / static_cast<double>(a.states() * static_cast<Index>(a.alphabet.size()));
}

inline std::string join_word(const Word& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? " " : "") + w[i];
  return out;
}

inline std::string to_jsonl(const WordDataset& d) {
  std::ostringstream os;
  for (std::size_t i = 0; i < d.inputs.size(); ++i) {
    Json rec = {{"index", i}, {"seed", d.seed}, {"input", join_word(d.inputs[i])}};
    if (i < d.targets.size()) rec["states"] = matrix_to_json(d.targets[i].rows);
    os << rec.dump() << "\n";
  }
  return os.str();
}

inline std::string to_jsonl(const TreeDataset& d) {
  std::ostringstream os;
  for (std::size_t i = 0; i < d.inputs.size(); ++i) {
    Json rec = {{"index", i}, {"seed", d.seed}, {"family", to_string(d.family)}, {"input", tree_text(d.inputs[i])}};
    if (i < d.targets.size()) {
      Json states = Json::object();
      for (const auto& [pos, v] : d.targets[i]) states[std::to_string(pos)] = vector_to_json(v);
      rec["states"] = states;
    }
    os << rec.dump() << "\n";
  }
  return os.str();
}

inline Json dataset_summary(const WordDataset& d, const Wfa* a) {
  Json j = {{"inputs", d.inputs.size()}, {"T", d.T}, {"seed", d.seed}, {"alphabet", d.alphabet}};
  if (a) {
    j["states"] = a->states();
    j["symbol_sparsity"] = symbol_sparsity(*a);
  }
  return j;
}

}  // namespace a2a
