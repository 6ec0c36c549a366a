// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include "automata2attn/harness.hpp"
#include "automata2attn/prepared.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <unordered_map>

using namespace a2a;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

void check(Outcome& o, bool ok, const std::string& what) {
  if (!ok && o.pass) o.detail = what;
  o.pass = o.pass && ok;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

Word random_length_word(const std::vector<Symbol>& alphabet, Index T, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> len(0, T);
  return random_word(alphabet, static_cast<std::size_t>(len(rng)), rng);
}

double max_abs(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  return (a - b).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------

Outcome exact_wfa() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Index n = 1 + k % 3;
    const Wfa a = oracle::random_wfa(n, {"a", "b", "c"}, rng);
    for (Index T : {4, 8, 16}) {
      const WfaCompilation c = compile_exact(a, T);
      check(o, c.layers() == static_cast<Index>(std::log2(T)), "layer count differs from log2 T");
      check(o, c.spec.d == 2 * n * n + 2, "embedding width differs from 2n^2+2");
      const PreparedTransformer p(c.spec);
      for (int i = 0; i < 50; ++i) {
        const Word w = random_length_word(a.alphabet, T, rng);
        const Matrix got = p.forward(w).bottomRows(static_cast<Index>(w.size()) + 1);
        worst = std::max(worst, max_abs(got, oracle::wfa_prefix_states(a, w)));
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  check(o, worst <= 1e-9, "max error " + fmt(worst));
  check(o, secs < 30.0, "runtime " + fmt(secs) + " s");
  o.detail = o.pass ? "3000 words, max error " + fmt(worst) + ", " + fmt(secs) + " s" : o.detail;
  return o;
}

Outcome approx_wfa() {
  Outcome o;
  const Wfa a = make_counting_wfa();
  std::string summary;
  for (Index T : {8, 16}) {
    const CalibrationResult cal = calibrate_saturation(a, T, 1e-3, 32, 7);
    const WfaCompilation c = compile_approx(a, T, cal.C);
    const auto held_out = random_words(a.alphabet, static_cast<std::size_t>(T), 100, 9000 + T);
    const double err = max_simulation_error(a, c, held_out);
    check(o, err < 1e-3, "T=" + std::to_string(T) + " held-out error " + fmt(err));
    check(o, spec_shape(c.spec).mlp_width == 45, "MLP width is not 45");

    double previous = std::numeric_limits<double>::infinity();
    for (double C : {10.0, 30.0, 100.0, 300.0, 1e3, 3e3}) {
      const double e = max_simulation_error(a, compile_approx(a, T, C), held_out);
      check(o, e <= previous, "error increased at C=" + fmt(C));
      previous = e;
    }

    std::vector<double> measured;
    const ErrorBudget b = measured_error_budget(a, c, held_out, &measured);
    for (std::size_t l = 0; l < measured.size(); ++l)
      check(o, measured[l] <= b.eps_total[l], "layer " + std::to_string(l + 1) + " above the error bound");
    summary += "T=" + std::to_string(T) + ": C=" + fmt(cal.C) + " error " + fmt(err) + "; ";
  }
  if (o.pass) o.detail = summary + "MLP width 45";
  return o;
}

Outcome scan_oracles() {
  Outcome o;
  std::mt19937_64 rng(303);
  for (Index n = 1; n <= 4; ++n) {
    const BilinearLayer l = make_bilinear(matmul_tensor(n));
    for (Index i = 0; i < n * n; ++i)
      for (Index j = 0; j < n * n; ++j) {
        const Matrix A = unvec(Vector::Unit(n * n, i), n), B = unvec(Vector::Unit(n * n, j), n);
        check(o, bilinear_apply(l, vec(A), vec(B)) == vec(oracle::naive_matmul(A, B)), "basis pair mismatch");
      }
  }
  for (int k = 0; k < 500; ++k) {
    const Index n = 1 + k % 4;
    const BilinearLayer l = make_bilinear(matmul_tensor(n));
    const Matrix A = oracle::uniform_matrix(n, n, rng), B = oracle::uniform_matrix(n, n, rng);
    check(o, bilinear_apply(l, vec(A), vec(B)) == vec(oracle::naive_matmul(A, B)), "random pair mismatch");
  }
  double worst = 0.0;
  for (std::size_t len = 1; len <= 129; ++len) {
    const Index n = 1 + static_cast<Index>(len % 3);
    std::vector<Matrix> seq;
    for (std::size_t i = 0; i < len; ++i) seq.push_back(oracle::uniform_matrix(n, n, rng));
    const auto m = matrix_product_monoid(n);
    ScanStats stats;
    const auto scanned = prefix_scan<Matrix>(m, seq, &stats);
    const auto folded = sequential_fold<Matrix>(m, seq);
    for (std::size_t i = 0; i < len; ++i) worst = std::max(worst, max_abs(scanned[i], folded[i]));
    check(o, stats.rounds == ceil_log2(len), "round count at length " + std::to_string(len));
  }
  check(o, worst <= 1e-10, "scan deviation " + fmt(worst));
  if (o.pass) o.detail = "basis pairs n<=4, 500 random pairs exact; scan lengths 1..129, deviation " + fmt(worst);
  return o;
}

Outcome wta_simulation() {
  Outcome o;
  std::mt19937_64 rng(404);
  const std::vector<Symbol> alphabet{"a", "b"};
  double worst = 0.0;
  Index p = 0;
  for (int k = 0; k < 100; ++k) {
    const Index n = 1 + k % 3;
    const Wta a = oracle::random_wta(n, alphabet, rng);
    std::uniform_int_distribution<std::size_t> leaves(1, 11);
    const BinaryTree t = random_tree(alphabet, leaves(rng), TreeFamily::uniform, rng);
    const WtaCompilation c = compile_wta(a, 31, std::max(1, t.depth()));
    p = c.p();
    check(o, c.spec.d == n + 4 + c.p(), "embedding width differs from n+4+p");
    const TreeEncoding enc = tree_to_str(t);
    const auto got = simulate_wta(c, enc);
    for (int i : enc.index_set) {
      const auto [first, last] = enc.spans.at(i);
      const BinaryTree sub = str_to_tree(std::vector<Symbol>(enc.tokens.begin() + first - 1, enc.tokens.begin() + last));
      worst = std::max(worst, (got.at(i) - oracle::nested_mu(a, sub)).cwiseAbs().maxCoeff());
    }
  }
  check(o, worst <= 1e-6, "subtree state error " + fmt(worst));

  const Wta a = oracle::leaf_count_wta();
  const BinaryTree balanced = make_balanced(std::vector<Symbol>(16, "a"));
  const BinaryTree comb = make_comb(std::vector<Symbol>(8, "b"));
  const Index depth_balanced = minimal_parsing_depth(a, compile_wta(a, 46, 6), balanced);
  const Index depth_comb = minimal_parsing_depth(a, compile_wta(a, 22, 9), comb);
  check(o, depth_balanced == 4, "balanced 16-leaf minimal depth " + std::to_string(depth_balanced));
  check(o, depth_comb == 7, "comb 8-leaf minimal depth " + std::to_string(depth_comb));
  if (o.pass)
    o.detail = "100 pairs, max error " + fmt(worst) + "; minimal depth balanced-16 = 4, comb-8 = 7; p = " +
               std::to_string(p) + " at T=31";
  return o;
}

// Every 2-state Boolean tree automaton over {a, b} against every tree with at
// most 7 leaves.
//
// Rule sets (256) are compiled once each over four symbols whose leaf vectors
// are the four 0/1 vectors. A symbol's embedding row depends only on its leaf
// vector, so the token sequence for (leaf assignment, tree) is the sequence for
// the tree relabelled into those four symbols. Runs are deduplicated over the
// relabelled trees; the accepting set only enters through the final dot product.
Outcome boolean_automata() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Symbol> alphabet{"a", "b"};
  const std::vector<Symbol> vectors{"v00", "v10", "v01", "v11"};  // leaf vector (q0, q1)
  const auto trees = all_trees_up_to(alphabet, 7);

  // Relabelled trees, one table column per leaf assignment (sa, sb).
  std::vector<Word> unique_tokens;
  std::unordered_map<std::string, std::size_t> index_of;
  std::vector<std::vector<std::size_t>> relabelled(16, std::vector<std::size_t>(trees.size()));
  std::vector<TreeEncoding> encodings;
  for (const auto& t : trees) encodings.push_back(tree_to_str(t));
  for (int assign = 0; assign < 16; ++assign) {
    const Symbol& sa = vectors[static_cast<std::size_t>(assign % 4)];
    const Symbol& sb = vectors[static_cast<std::size_t>(assign / 4)];
    for (std::size_t i = 0; i < trees.size(); ++i) {
      Word tokens = encodings[i].tokens;
      std::string key;
      for (auto& tok : tokens) {
        if (tok == "a") tok = sa;
        if (tok == "b") tok = sb;
        key += tok + ' ';
      }
      auto [it, fresh] = index_of.try_emplace(key, unique_tokens.size());
      if (fresh) unique_tokens.push_back(std::move(tokens));
      relabelled[static_cast<std::size_t>(assign)][i] = it->second;
    }
  }

  // Postorder programs for the direct Boolean evaluator: a leaf is (-1, symbol),
  // an inner node is (left slot, right slot).
  std::vector<std::vector<std::pair<int, int>>> programs;
  for (const auto& t : trees) {
    std::vector<std::pair<int, int>> prog;
    std::function<int(const BinaryTree&)> emit = [&](const BinaryTree& u) -> int {
      if (u.is_leaf()) {
        prog.emplace_back(-1, u.label() == "a" ? 0 : 1);
      } else {
        const int l = emit(u.left());
        const int r = emit(u.right());
        prog.emplace_back(l, r);
      }
      return static_cast<int>(prog.size()) - 1;
    };
    emit(t);
    programs.push_back(std::move(prog));
  }

  // Batches of equal length with identical bracket structure kept adjacent,
  // so the executor can reuse attention patterns within a batch.
  std::vector<std::size_t> order(unique_tokens.size());
  std::vector<std::string> shape(unique_tokens.size());
  for (std::size_t u = 0; u < unique_tokens.size(); ++u) {
    order[u] = u;
    for (const auto& tok : unique_tokens[u]) shape[u] += tok == "(" || tok == ")" ? tok : std::string("x");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return shape[x].size() != shape[y].size() ? shape[x].size() < shape[y].size() : shape[x] < shape[y];
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t u : order) {
    if (batches.empty() || batches.back().size() == 32 ||
        unique_tokens[batches.back().front()].size() != unique_tokens[u].size())
      batches.emplace_back();
    batches.back().push_back(u);
  }

  std::size_t automata = 0, checks = 0, runs = 0;
  for (int rules = 0; rules < 256; ++rules) {
    BoolTreeAutomaton ta;
    ta.states = 2;
    ta.alphabet = vectors;
    ta.leaf_states = {{"v00", {}}, {"v10", {0}}, {"v01", {1}}, {"v11", {0, 1}}};
    for (int bit = 0; bit < 8; ++bit)
      if (rules >> bit & 1) ta.rules.insert({bit >> 2 & 1, bit >> 1 & 1, bit & 1});
    const WtaCompilation c = compile_wta(bool_ta_to_wta(ta), 19, 6);
    const PreparedTransformer prepared(c.spec);
    std::vector<Vector> root(unique_tokens.size());
    parallel_for(batches.size(), [&](std::size_t b) {
      std::vector<Word> batch;
      for (std::size_t u : batches[b]) batch.push_back(unique_tokens[u]);
      const auto out = prepared.forward_batch(batch);
      for (std::size_t i = 0; i < out.size(); ++i) root[batches[b][i]] = out[i].row(0).transpose();
    });
    runs += unique_tokens.size();

    // combine[l][r]: state set of a node whose children have state sets l, r.
    int combine[4][4] = {};
    for (int l = 0; l < 4; ++l)
      for (int r = 0; r < 4; ++r)
        for (int bit = 0; bit < 8; ++bit)
          if ((rules >> bit & 1) && (l >> (bit >> 1 & 1) & 1) && (r >> (bit & 1) & 1)) combine[l][r] |= 1 << (bit >> 2);

    std::vector<int> slot(13);
    for (int assign = 0; assign < 16; ++assign) {
      const int leaf_mask[2] = {assign % 4, assign / 4};  // bit q set when state q is allowed
      for (std::size_t i = 0; i < trees.size(); ++i) {
        const auto& prog = programs[i];
        for (std::size_t k = 0; k < prog.size(); ++k)
          slot[k] = prog[k].first < 0 ? leaf_mask[prog[k].second] : combine[slot[prog[k].first]][slot[prog[k].second]];
        const int run = slot[prog.size() - 1];
        const Vector& mu = root[relabelled[static_cast<std::size_t>(assign)][i]];
        for (int accepting = 0; accepting < 4; ++accepting) {
          const double value = (accepting & 1 ? mu(0) : 0.0) + (accepting & 2 ? mu(1) : 0.0);
          const bool accepted = (run & accepting) != 0;
          if ((value > 0.5) != accepted) {
            check(o, false,
                  "rules=" + std::to_string(rules) + " leaves=" + std::to_string(assign) +
                      " accepting=" + std::to_string(accepting) + " tree " + tree_text(trees[i]));
          }
          ++checks;
        }
      }
    }
    automata += 64;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.pass)
    o.detail = std::to_string(automata) + " automata x " + std::to_string(trees.size()) + " trees (" +
               std::to_string(checks) + " checks, " + std::to_string(runs) + " transformer runs, " + fmt(secs) +
               " s)";
  return o;
}

Outcome worked_values() {
  Outcome o;
  const Wfa k = make_k_counting_wfa(2, {"a", "b", "c"});
  const Word w{"a", "a", "a", "b", "b"};
  const StateSequence s = simulate_wfa(compile_exact(k, 8), w);
  const RowVector want = (RowVector(3) << 3, 2, 1).finished();
  check(o, max_abs(s.rows.row(5), want) <= 1e-12, "k-counting final state differs from (3,2,1)");

  const Wfa counting = make_counting_wfa();
  const PreparedTransformer p(compile_exact(counting, 16).spec);
  std::mt19937_64 rng(606);
  for (int i = 0; i < 1000; ++i) {
    const Word x = random_length_word(counting.alphabet, 16, rng);
    const Matrix got = p.forward(x).bottomRows(static_cast<Index>(x.size()) + 1);
    Matrix want_rows(got.rows(), 2);
    double zeros = 0.0;
    want_rows.row(0) << 0.0, 1.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      zeros += x[t] == "0" ? 1.0 : 0.0;
      want_rows.row(static_cast<Index>(t) + 1) << zeros, 1.0;
    }
    check(o, max_abs(got, want_rows) <= 1e-9, "counting word " + join_word(x));
  }
  if (o.pass) o.detail = "\"aaabb\" -> (3,2,1); 1000 counting words match (|w|_0, 1)";
  return o;
}

// The trained-model tables and elbow curves have no counterpart here. What is
// checked is the analytical scaling the bench command emits: L = log2 T at a
// fixed width, with exact outputs.
Outcome scaling_substitute() {
  Outcome o;
  const Wfa a = make_counting_wfa();
  std::string ls;
  for (Index T : {16, 32, 64, 128}) {
    const WfaCompilation c = compile_exact(a, T);
    const SpecShape s = spec_shape(c.spec);
    check(o, s.layers == static_cast<Index>(std::log2(T)), "L differs from log2 T at T=" + std::to_string(T));
    check(o, s.d == 10, "width changes with T");
    const double err = max_simulation_error(a, c, random_words(a.alphabet, static_cast<std::size_t>(T), 10, T));
    check(o, err < 1e-9, "error " + fmt(err) + " at T=" + std::to_string(T));
    ls += std::to_string(s.layers) + (T == 128 ? "" : ",");
  }
  if (o.pass)
    o.detail = "trained-model MSE tables not reproduced (no training); substitute scaling check L = {" + ls +
               "} for T = {16,32,64,128}, d = 10";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"C1 exact WFA simulation", exact_wfa},
      {"C2 approximate WFA simulation", approx_wfa},
      {"C3 tensor contraction and prefix scan", scan_oracles},
      {"C4 WTA simulation", wta_simulation},
      {"C5 all 2-state Boolean tree automata", boolean_automata},
      {"C6 worked values", worked_values},
      {"C7 scaling data in place of trained-model curves", scaling_substitute},
  };
  bool all = true;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
