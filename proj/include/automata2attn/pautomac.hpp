#pragma once

// Reader for PAutomaC model files. A file is a list of sections
//
//   I: (state)                 initial probabilities
//   F: (state)                 final (stopping) probabilities
//   S: (state,symbol)          symbol probabilities
//   T: (state,symbol,state)    transitions of a PFA, conditional on the symbol
//   T: (state,state)           transitions of an HMM
//
// followed by lines "(i,j,...) value". States and symbols are 0-based
// integers; symbol i is named by its decimal string.
//
// PFA files give P(q, σ, q') = S(q, σ)·T(q, σ, q'); without an S section the
// T values are taken as the joint weights. HMM files without stopping mass
// become an Hmm. An HMM file with a nonzero F section is a stopping chain
// (stop at q with F(q), otherwise emit with S and move with T, whose rows
// then sum to 1 − F(q)); it has no Hmm representation and is returned as the
// equivalent Pfa.

#include "automata.hpp"
#include "common.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <sstream>
#include <variant>

namespace a2a {

using ProbabilisticModel = std::variant<Hmm, Pfa>;

inline constexpr double kPautomacTolerance = 1e-6;

namespace detail {
struct PautomacEntry {
  std::vector<Index> key;
  double value;
  std::size_t line;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline ProbabilisticModel parse_pautomac(const std::string& text) {
  using detail::PautomacEntry;
  std::map<char, std::vector<PautomacEntry>> sections;
  std::map<char, std::size_t> arity;
  static const std::regex header(R"(^([IFST])\s*:\s*\(([^)]*)\)\s*$)");
  static const std::regex entry(R"(^\(\s*([0-9]+(?:\s*,\s*[0-9]+)*)\s*\)\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*$)");

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  char current = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    std::smatch m;
    if (std::regex_match(line, m, header)) {
      current = m[1].str()[0];
      if (sections.count(current)) throw ParseError(std::string("section ") + current + " appears twice", line_no, true);
      sections[current];
      const std::string fields = m[2].str();
      arity[current] = static_cast<std::size_t>(std::count(fields.begin(), fields.end(), ',')) + 1;
      continue;
    }
    if (!std::regex_match(line, m, entry)) throw ParseError("malformed line '" + line + "'", line_no, true);
    if (!current) throw ParseError("entry before any section header", line_no, true);
    PautomacEntry e{{}, 0.0, line_no};
    std::string idx = m[1].str();
    std::replace(idx.begin(), idx.end(), ',', ' ');
    std::istringstream ids(idx);
    for (Index v; ids >> v;) e.key.push_back(v);
    if (e.key.size() != arity[current])
      throw ParseError("entry has " + std::to_string(e.key.size()) + " indices, section expects " +
                           std::to_string(arity[current]),
                       line_no, true);
    e.value = std::stod(m[2].str());
    if (e.value < 0) throw InvalidModelError("negative probability on line " + std::to_string(line_no));
    sections[current].push_back(e);
  }
  for (char s : {'I', 'T'})
    if (!sections.count(s)) throw ParseError(std::string("missing section ") + s, line_no, true);
  const std::size_t t_arity = arity['T'];
  if (t_arity != 2 && t_arity != 3) throw ParseError("T section must have 2 or 3 indices", line_no, true);
  if (sections.count('S') && arity['S'] != 2) throw ParseError("S section must have 2 indices", line_no, true);
  for (char s : {'I', 'F'})
    if (sections.count(s) && arity[s] != 1) throw ParseError(std::string("section ") + s + " must have 1 index", line_no, true);

  Index n = 0, p = 0;
  auto see_state = [&](Index q) { n = std::max(n, q + 1); };
  auto see_symbol = [&](Index s) { p = std::max(p, s + 1); };
  for (const auto& e : sections['I']) see_state(e.key[0]);
  for (const auto& e : sections['F']) see_state(e.key[0]);
  for (const auto& e : sections['S']) see_state(e.key[0]), see_symbol(e.key[1]);
  for (const auto& e : sections['T']) {
    see_state(e.key[0]);
    see_state(e.key.back());
    if (t_arity == 3) see_symbol(e.key[1]);
  }
  if (n == 0 || p == 0) throw InvalidModelError("model has no states or no symbols");
  const std::vector<Symbol> alphabet = digit_alphabet(static_cast<int>(p));

  Vector initial = Vector::Zero(n), final = Vector::Zero(n);
  for (const auto& e : sections['I']) initial(e.key[0]) += e.value;
  for (const auto& e : sections['F']) final(e.key[0]) += e.value;
  Matrix emit = Matrix::Zero(n, p);
  for (const auto& e : sections['S']) emit(e.key[0], e.key[1]) += e.value;
  const bool has_emit = sections.count('S') != 0;

  auto renormalize_pfa = [&](Pfa pfa) {
    pfa.validate(kPautomacTolerance);
    pfa.initial /= pfa.initial.sum();
    Vector mass = pfa.final;
    for (const auto& [s, m] : pfa.transitions) mass += m.rowwise().sum();
    for (Index q = 0; q < n; ++q) {
      pfa.final(q) /= mass(q);
      for (auto& [s, m] : pfa.transitions) m.row(q) /= mass(q);
    }
    pfa.validate();
    return pfa;
  };

  if (t_arity == 3) {
    Pfa pfa{alphabet, initial, {}, final};
    for (const auto& s : alphabet) pfa.transitions[s] = Matrix::Zero(n, n);
    for (const auto& e : sections['T']) {
      const double w = has_emit ? emit(e.key[0], e.key[1]) * e.value : e.value;
      pfa.transitions[alphabet[static_cast<std::size_t>(e.key[1])]](e.key[0], e.key[2]) += w;
    }
    return renormalize_pfa(std::move(pfa));
  }

  if (!has_emit) throw ParseError("HMM file needs an S section", line_no, true);
  Matrix trans = Matrix::Zero(n, n);
  for (const auto& e : sections['T']) trans(e.key[0], e.key[1]) += e.value;
  if (final.cwiseAbs().maxCoeff() > 0.0) {
    Pfa pfa{alphabet, initial, {}, final};
    for (Index s = 0; s < p; ++s)
      pfa.transitions[alphabet[static_cast<std::size_t>(s)]] = emit.col(s).asDiagonal() * trans;
    return renormalize_pfa(std::move(pfa));
  }
  Hmm h{alphabet, trans, emit.transpose(), initial};
  h.validate(kPautomacTolerance);
  for (Index q = 0; q < n; ++q) {
    h.transition.row(q) /= h.transition.row(q).sum();
    h.observation.col(q) /= h.observation.col(q).sum();
  }
  h.initial /= h.initial.sum();
  h.validate();
  return h;
}

inline Wfa probabilistic_to_wfa(const ProbabilisticModel& m) {
  return std::visit(
      [](const auto& x) -> Wfa {
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, Hmm>)
          return hmm_to_wfa(x);
        else
          return pfa_to_wfa(x);
      },
      m);
}

}  // namespace a2a
