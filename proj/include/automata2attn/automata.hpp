#pragma once

// Weighted word and tree automata together with their exact sequential
// semantics. Everything else in the library is checked against these.

#include "common.hpp"
#include "tensor.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <tuple>

namespace a2a {

// ---------------------------------------------------------------------------
// Word automata
// ---------------------------------------------------------------------------

struct Wfa {
  std::vector<Symbol> alphabet;
  Vector alpha;
  std::map<Symbol, Matrix> transitions;
  Vector beta;

  Index states() const { return alpha.size(); }

  const Matrix& transition(const Symbol& s) const {
    auto it = transitions.find(s);
    if (it == transitions.end()) throw SymbolError(s);
    return it->second;
  }

  bool has_symbol(const Symbol& s) const { return transitions.count(s) != 0; }

  void validate() const {
    const Index n = alpha.size();
    if (n < 1) throw InvalidModelError("WFA needs at least one state");
    if (beta.size() != n) throw InvalidModelError("beta length differs from alpha length");
    if (alphabet.empty()) throw InvalidModelError("WFA alphabet is empty");
    std::set<Symbol> seen;
    for (const auto& s : alphabet) {
      if (!seen.insert(s).second) throw InvalidModelError("duplicate symbol '" + s + "'");
      auto it = transitions.find(s);
      if (it == transitions.end()) throw InvalidModelError("no transition matrix for '" + s + "'");
      if (it->second.rows() != n || it->second.cols() != n)
        throw InvalidModelError("transition matrix for '" + s + "' is not n x n");
    }
    if (transitions.size() != alphabet.size())
      throw InvalidModelError("transition matrix given for a symbol outside the alphabet");
  }
};

inline Wfa make_wfa(std::vector<Symbol> alphabet, Vector alpha, std::map<Symbol, Matrix> transitions,
                    Vector beta) {
  Wfa a{std::move(alphabet), std::move(alpha), std::move(transitions), std::move(beta)};
  a.validate();
  return a;
}

// Row t holds the state after reading the first t symbols.
struct StateSequence {
  Matrix rows;

  Index size() const { return rows.rows(); }
  RowVector row(Index t) const { return rows.row(t); }
};

inline StateSequence wfa_states(const Wfa& a, const Word& word) {
  StateSequence out{Matrix(static_cast<Index>(word.size()) + 1, a.states())};
  RowVector state = a.alpha.transpose();
  out.rows.row(0) = state;
  for (std::size_t t = 0; t < word.size(); ++t) {
    state = state * a.transition(word[t]);
    out.rows.row(static_cast<Index>(t) + 1) = state;
  }
  return out;
}

inline double wfa_eval(const Wfa& a, const Word& word) {
  RowVector state = a.alpha.transpose();
  for (const auto& s : word) state = state * a.transition(s);
  return state.dot(a.beta);
}

// ---------------------------------------------------------------------------
// Probabilistic models
// ---------------------------------------------------------------------------

// transition is row-stochastic (n x n); observation is p x n with column i the
// emission distribution of state i.
struct Hmm {
  std::vector<Symbol> alphabet;
  Matrix transition;
  Matrix observation;
  Vector initial;

  void validate(double tol = 1e-12) const {
    const Index n = initial.size();
    if (n < 1) throw InvalidModelError("HMM needs at least one state");
    if (transition.rows() != n || transition.cols() != n)
      throw InvalidModelError("HMM transition matrix is not n x n");
    if (observation.cols() != n) throw InvalidModelError("HMM observation matrix must have n columns");
    if (static_cast<Index>(alphabet.size()) != observation.rows())
      throw InvalidModelError("HMM alphabet size differs from observation rows");
    if ((transition.array() < 0).any() || (observation.array() < 0).any() || (initial.array() < 0).any())
      throw InvalidModelError("HMM has a negative probability");
    for (Index i = 0; i < n; ++i) {
      if (std::abs(transition.row(i).sum() - 1.0) > tol)
        throw InvalidModelError("HMM transition row " + std::to_string(i) + " does not sum to 1");
      if (std::abs(observation.col(i).sum() - 1.0) > tol)
        throw InvalidModelError("HMM observation column " + std::to_string(i) + " does not sum to 1");
    }
    if (std::abs(initial.sum() - 1.0) > tol) throw InvalidModelError("HMM initial distribution does not sum to 1");
  }
};

inline Wfa hmm_to_wfa(const Hmm& h, double tol = 1e-12) {
  h.validate(tol);
  Wfa a;
  a.alphabet = h.alphabet;
  a.alpha = h.initial;
  a.beta = Vector::Ones(h.initial.size());
  for (Index x = 0; x < h.observation.rows(); ++x)
    a.transitions[h.alphabet[static_cast<std::size_t>(x)]] =
        h.observation.row(x).transpose().asDiagonal() * h.transition;
  a.validate();
  return a;
}

// transitions[σ](q, q') = P(q, σ, q').
struct Pfa {
  std::vector<Symbol> alphabet;
  Vector initial;
  std::map<Symbol, Matrix> transitions;
  Vector final;

  Index states() const { return initial.size(); }

  void validate(double tol = 1e-12) const {
    const Index n = initial.size();
    if (n < 1) throw InvalidModelError("PFA needs at least one state");
    if (final.size() != n) throw InvalidModelError("PFA final weights have the wrong length");
    if ((initial.array() < 0).any() || (final.array() < 0).any())
      throw InvalidModelError("PFA has a negative weight");
    Vector outgoing = final;
    for (const auto& s : alphabet) {
      auto it = transitions.find(s);
      if (it == transitions.end()) throw InvalidModelError("PFA has no transitions for '" + s + "'");
      if (it->second.rows() != n || it->second.cols() != n)
        throw InvalidModelError("PFA transition matrix for '" + s + "' is not n x n");
      if ((it->second.array() < 0).any()) throw InvalidModelError("PFA has a negative weight");
      outgoing += it->second.rowwise().sum();
    }
    if (transitions.size() != alphabet.size()) throw InvalidModelError("PFA transitions use unknown symbols");
    if (std::abs(initial.sum() - 1.0) > tol) throw InvalidModelError("PFA initial weights do not sum to 1");
    for (Index q = 0; q < n; ++q)
      if (std::abs(outgoing(q) - 1.0) > tol)
        throw InvalidModelError("PFA state " + std::to_string(q) + " has outgoing mass " +
                                std::to_string(outgoing(q)));
  }
};

inline Wfa pfa_to_wfa(const Pfa& p, double tol = 1e-12) {
  p.validate(tol);
  Wfa a{p.alphabet, p.initial, p.transitions, p.final};
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Reference automata
// ---------------------------------------------------------------------------

// Two states; the first component counts zeros, the second is a constant 1.
inline Wfa make_counting_wfa() {
  Matrix zero(2, 2);
  zero << 1, 0, 1, 1;
  Vector alpha(2), beta(2);
  alpha << 0, 1;
  beta << 1, 0;
  return make_wfa({"0", "1"}, alpha, {{"0", zero}, {"1", Matrix::Identity(2, 2)}}, beta);
}

// Counts occurrences of each of the first k symbols. State k (0-based) holds
// the constant 1 that feeds every increment.
inline Wfa make_k_counting_wfa(int k, const std::vector<Symbol>& alphabet) {
  const int n_symbols = static_cast<int>(alphabet.size());
  if (k < 1) throw ArgumentError("k must be positive");
  if (k > n_symbols) throw ArgumentError("k exceeds the alphabet size");
  const Index n = k + 1;
  std::map<Symbol, Matrix> trans;
  for (int i = 0; i < n_symbols; ++i) {
    Matrix m = Matrix::Identity(n, n);
    if (i < k) m(k, i) += 1.0;
    trans[alphabet[static_cast<std::size_t>(i)]] = m;
  }
  Vector alpha = Vector::Zero(n);
  alpha(k) = 1.0;
  Vector beta = Vector::Zero(n);
  beta(k) = 1.0;
  return make_wfa(alphabet, alpha, trans, beta);
}

inline std::vector<Symbol> digit_alphabet(int size) {
  std::vector<Symbol> out;
  for (int i = 0; i < size; ++i) out.push_back(std::to_string(i));
  return out;
}

inline Wfa make_k_counting_wfa(int k, int alphabet_size) {
  if (k > alphabet_size) throw ArgumentError("k exceeds the alphabet size");
  return make_k_counting_wfa(k, digit_alphabet(alphabet_size));
}

// ---------------------------------------------------------------------------
// Binary trees and their bracket encoding
// ---------------------------------------------------------------------------

inline const Symbol kOpen = "(";
inline const Symbol kClose = ")";

class BinaryTree {
 public:
  static BinaryTree leaf(Symbol s) {
    BinaryTree t;
    t.label_ = std::move(s);
    return t;
  }
  static BinaryTree node(BinaryTree left, BinaryTree right) {
    BinaryTree t;
    t.left_ = std::make_shared<const BinaryTree>(std::move(left));
    t.right_ = std::make_shared<const BinaryTree>(std::move(right));
    return t;
  }

  bool is_leaf() const { return left_ == nullptr; }
  const Symbol& label() const { return label_; }
  const BinaryTree& left() const { return *left_; }
  const BinaryTree& right() const { return *right_; }

  // Height counted in edges: a leaf has depth 0.
  int depth() const { return is_leaf() ? 0 : 1 + std::max(left_->depth(), right_->depth()); }
  int leaves() const { return is_leaf() ? 1 : left_->leaves() + right_->leaves(); }
  int token_count() const { return 3 * leaves() - 2; }

  friend bool operator==(const BinaryTree& a, const BinaryTree& b) {
    if (a.is_leaf() != b.is_leaf()) return false;
    if (a.is_leaf()) return a.label_ == b.label_;
    return *a.left_ == *b.left_ && *a.right_ == *b.right_;
  }

 private:
  Symbol label_;
  std::shared_ptr<const BinaryTree> left_, right_;
};

// Positions are 1-based throughout, matching the bracket-string view.
struct TreeEncoding {
  std::vector<Symbol> tokens;
  std::vector<int> index_set;
  std::map<int, std::pair<int, int>> spans;
  std::vector<int> markers;
  std::vector<int> depths;
  // Height of the subtree rooted at each position of index_set.
  std::map<int, int> subtree_depth;

  int size() const { return static_cast<int>(tokens.size()); }
  const Symbol& token(int pos) const { return tokens[static_cast<std::size_t>(pos - 1)]; }
  int marker(int pos) const { return markers[static_cast<std::size_t>(pos - 1)]; }
  int depth_at(int pos) const { return depths[static_cast<std::size_t>(pos - 1)]; }
};

namespace detail {
inline int emit_tree(const BinaryTree& t, TreeEncoding& enc) {
  const int start = enc.size() + 1;
  if (t.is_leaf()) {
    enc.tokens.push_back(t.label());
    enc.spans[start] = {start, start};
    enc.subtree_depth[start] = 0;
    return 0;
  }
  enc.tokens.push_back(kOpen);
  const int dl = emit_tree(t.left(), enc);
  const int dr = emit_tree(t.right(), enc);
  enc.tokens.push_back(kClose);
  enc.spans[start] = {start, enc.size()};
  const int d = 1 + std::max(dl, dr);
  enc.subtree_depth[start] = d;
  return d;
}
}  // namespace detail

inline TreeEncoding tree_to_str(const BinaryTree& t) {
  TreeEncoding enc;
  detail::emit_tree(t, enc);
  int balance = 0;
  for (const auto& tok : enc.tokens) {
    enc.depths.push_back(balance);
    if (tok == kOpen) {
      enc.markers.push_back(1);
      ++balance;
    } else if (tok == kClose) {
      enc.markers.push_back(-1);
      --balance;
    } else {
      enc.markers.push_back(0);
    }
  }
  for (const auto& [pos, span] : enc.spans) enc.index_set.push_back(pos);
  return enc;
}

namespace detail {
inline BinaryTree parse_tree(const std::vector<Symbol>& tokens, std::size_t& pos) {
  if (pos >= tokens.size()) throw ParseError("unexpected end of tree string", pos);
  const Symbol& tok = tokens[pos];
  if (tok == kClose) throw ParseError(pos > 0 && tokens[pos - 1] == kOpen ? "empty node" : "unexpected ')'", pos);
  if (tok != kOpen) {
    ++pos;
    return BinaryTree::leaf(tok);
  }
  ++pos;
  if (pos < tokens.size() && tokens[pos] == kClose) throw ParseError("empty node", pos);
  BinaryTree left = parse_tree(tokens, pos);
  if (pos < tokens.size() && tokens[pos] == kClose) throw ParseError("node with a single child", pos);
  BinaryTree right = parse_tree(tokens, pos);
  if (pos >= tokens.size()) throw ParseError("unbalanced brackets: missing ')'", pos);
  if (tokens[pos] != kClose) throw ParseError("node with more than two children", pos);
  ++pos;
  return BinaryTree::node(std::move(left), std::move(right));
}
}  // namespace detail

inline BinaryTree str_to_tree(const std::vector<Symbol>& tokens) {
  std::size_t pos = 0;
  BinaryTree t = detail::parse_tree(tokens, pos);
  if (pos != tokens.size()) throw ParseError("trailing tokens after a complete tree", pos);
  return t;
}

// Splits tree text into tokens. Brackets are always tokens of their own.
// Without whitespace every other character is a leaf symbol; with whitespace,
// maximal runs of non-bracket, non-space characters are symbols.
inline std::vector<Symbol> tokenize_tree_text(const std::string& text) {
  const bool spaced = std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
  std::vector<Symbol> out;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) out.push_back(run);
    run.clear();
  };
  for (char c : text) {
    if (c == '(' || c == ')') {
      flush();
      out.emplace_back(1, c);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (spaced) {
      run.push_back(c);
    } else {
      out.emplace_back(1, c);
    }
  }
  flush();
  return out;
}

inline BinaryTree parse_tree_text(const std::string& text) { return str_to_tree(tokenize_tree_text(text)); }

inline std::string tree_text(const BinaryTree& t) {
  if (t.is_leaf()) return t.label();
  return "(" + tree_text(t.left()) + " " + tree_text(t.right()) + ")";
}

// ---------------------------------------------------------------------------
// Tree automata
// ---------------------------------------------------------------------------

// tensor(k, a, b) is the weight of producing state k from children (a, b).
struct Wta {
  std::vector<Symbol> alphabet;
  Vector alpha;
  Tensor3 tensor;
  std::map<Symbol, Vector> leaves;

  Index states() const { return alpha.size(); }

  const Vector& leaf(const Symbol& s) const {
    auto it = leaves.find(s);
    if (it == leaves.end()) throw SymbolError(s);
    return it->second;
  }

  void validate() const {
    const Index n = alpha.size();
    if (n < 1) throw InvalidModelError("WTA needs at least one state");
    if (tensor.dim(0) != n || tensor.dim(1) != n || tensor.dim(2) != n)
      throw InvalidModelError("WTA tensor must be n x n x n");
    if (alphabet.empty()) throw InvalidModelError("WTA alphabet is empty");
    std::set<Symbol> seen;
    for (const auto& s : alphabet) {
      if (s == kOpen || s == kClose) throw InvalidModelError("brackets cannot be alphabet symbols");
      if (!seen.insert(s).second) throw InvalidModelError("duplicate symbol '" + s + "'");
      auto it = leaves.find(s);
      if (it == leaves.end()) throw InvalidModelError("no leaf vector for '" + s + "'");
      if (it->second.size() != n) throw InvalidModelError("leaf vector for '" + s + "' has the wrong length");
    }
    if (leaves.size() != alphabet.size()) throw InvalidModelError("leaf vector given for an unknown symbol");
  }
};

inline Vector wta_combine(const Wta& a, const Vector& left, const Vector& right) {
  return contract_children(a.tensor, left, right);
}

inline Vector wta_mu(const Wta& a, const BinaryTree& t) {
  if (t.is_leaf()) return a.leaf(t.label());
  return wta_combine(a, wta_mu(a, t.left()), wta_mu(a, t.right()));
}

inline double wta_eval(const Wta& a, const BinaryTree& t) { return a.alpha.dot(wta_mu(a, t)); }

// μ for every position of index_set, keyed by 1-based position.
inline std::map<int, Vector> wta_subtree_states(const Wta& a, const TreeEncoding& enc) {
  std::map<int, Vector> out;
  // Walk right to left so both children of a node are known before the node.
  for (auto it = enc.index_set.rbegin(); it != enc.index_set.rend(); ++it) {
    const int i = *it;
    if (enc.marker(i) == 0) {
      out[i] = a.leaf(enc.token(i));
      continue;
    }
    const int left = i + 1;
    const int right = enc.spans.at(left).second + 1;
    out[i] = wta_combine(a, out.at(left), out.at(right));
  }
  return out;
}

// Bottom-up nondeterministic tree automaton. A rule (p, l, r) lets a node whose
// children are in states l and r be in state p.
struct BoolTreeAutomaton {
  int states = 0;
  std::vector<Symbol> alphabet;
  std::map<Symbol, std::set<int>> leaf_states;
  std::set<std::tuple<int, int, int>> rules;
  std::set<int> accepting;
};

inline Wta bool_ta_to_wta(const BoolTreeAutomaton& ta) {
  if (ta.states < 1) throw InvalidModelError("tree automaton needs at least one state");
  const Index n = ta.states;
  auto in_range = [&](int q) { return q >= 0 && q < ta.states; };
  Wta w;
  w.alphabet = ta.alphabet;
  w.alpha = Vector::Zero(n);
  for (int q : ta.accepting) {
    if (!in_range(q)) throw InvalidModelError("accepting state out of range");
    w.alpha(q) = 1.0;
  }
  w.tensor = Tensor3(n, n, n);
  for (const auto& [p, l, r] : ta.rules) {
    if (!in_range(p) || !in_range(l) || !in_range(r)) throw InvalidModelError("rule mentions an unknown state");
    w.tensor(p, l, r) = 1.0;
  }
  for (const auto& s : ta.alphabet) {
    Vector v = Vector::Zero(n);
    auto it = ta.leaf_states.find(s);
    if (it != ta.leaf_states.end())
      for (int q : it->second) {
        if (!in_range(q)) throw InvalidModelError("leaf state out of range");
        v(q) = 1.0;
      }
    w.leaves[s] = v;
  }
  for (const auto& [s, qs] : ta.leaf_states)
    if (std::find(ta.alphabet.begin(), ta.alphabet.end(), s) == ta.alphabet.end())
      throw InvalidModelError("leaf map uses symbol '" + s + "' outside the alphabet");
  w.validate();
  return w;
}

}  // namespace a2a
