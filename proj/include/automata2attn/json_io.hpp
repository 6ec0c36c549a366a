#pragma once

// JSON (de)serialization for automata and transformer specs. Matrices are
// nested row-major arrays; tensors nest as [mode1][mode2][mode3].

#include "automata.hpp"
#include "common.hpp"
#include "tensor.hpp"
#include "transformer.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace a2a {

using Json = nlohmann::json;

namespace detail {
inline void json_require(bool ok, const std::string& what) {
  if (!ok) throw InvalidModelError(what);
}

inline const Json& field(const Json& j, const char* key) {
  json_require(j.is_object() && j.contains(key), std::string("missing field '") + key + "'");
  return j.at(key);
}
}  // namespace detail

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  detail::json_require(j.is_array(), "matrix must be an array of rows");
  if (j.empty()) return Matrix(0, 0);
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    detail::json_require(row.is_array() && static_cast<Index>(row.size()) == cols, "matrix rows differ in length");
    for (Index c = 0; c < cols; ++c) {
      detail::json_require(row.at(static_cast<std::size_t>(c)).is_number(), "matrix entries must be numbers");
      m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const Json& j) {
  detail::json_require(j.is_array(), "vector must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    detail::json_require(j[i].is_number(), "vector entries must be numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Json tensor_to_json(const Tensor3& t) {
  Json out = Json::array();
  for (Index i = 0; i < t.dim(0); ++i) {
    Json slab = Json::array();
    for (Index j = 0; j < t.dim(1); ++j) {
      Json fiber = Json::array();
      for (Index k = 0; k < t.dim(2); ++k) fiber.push_back(t(i, j, k));
      slab.push_back(std::move(fiber));
    }
    out.push_back(std::move(slab));
  }
  return out;
}

inline Tensor3 tensor_from_json(const Json& j) {
  detail::json_require(j.is_array(), "tensor must be a nested array");
  const Index d1 = static_cast<Index>(j.size());
  const Index d2 = d1 ? static_cast<Index>(j[0].size()) : 0;
  const Index d3 = d2 ? static_cast<Index>(j[0][0].size()) : 0;
  Tensor3 t(d1, d2, d3);
  for (Index i = 0; i < d1; ++i) {
    const Json& slab = j[static_cast<std::size_t>(i)];
    detail::json_require(slab.is_array() && static_cast<Index>(slab.size()) == d2, "ragged tensor");
    for (Index k2 = 0; k2 < d2; ++k2) {
      const Json& fiber = slab[static_cast<std::size_t>(k2)];
      detail::json_require(fiber.is_array() && static_cast<Index>(fiber.size()) == d3, "ragged tensor");
      for (Index k3 = 0; k3 < d3; ++k3) t(i, k2, k3) = fiber[static_cast<std::size_t>(k3)].get<double>();
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Automata
// ---------------------------------------------------------------------------

inline Json to_json(const Wfa& a) {
  Json trans = Json::object();
  for (const auto& s : a.alphabet) trans[s] = matrix_to_json(a.transition(s));
  return {{"type", "wfa"},
          {"n", a.states()},
          {"alphabet", a.alphabet},
          {"alpha", vector_to_json(a.alpha)},
          {"beta", vector_to_json(a.beta)},
          {"transitions", trans}};
}

inline std::vector<Symbol> alphabet_from_json(const Json& j) {
  const Json& a = detail::field(j, "alphabet");
  detail::json_require(a.is_array(), "alphabet must be an array of strings");
  std::vector<Symbol> out;
  for (const auto& s : a) {
    detail::json_require(s.is_string(), "alphabet entries must be strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

inline void check_state_count(const Json& j, Index n) {
  if (j.contains("n")) detail::json_require(j.at("n").get<Index>() == n, "field 'n' disagrees with the vectors");
}

inline Wfa wfa_from_json(const Json& j) {
  Wfa a;
  a.alphabet = alphabet_from_json(j);
  a.alpha = vector_from_json(detail::field(j, "alpha"));
  a.beta = vector_from_json(detail::field(j, "beta"));
  for (const auto& [s, m] : detail::field(j, "transitions").items()) a.transitions[s] = matrix_from_json(m);
  check_state_count(j, a.alpha.size());
  a.validate();
  return a;
}

inline Json to_json(const Wta& a) {
  Json leaves = Json::object();
  for (const auto& s : a.alphabet) leaves[s] = vector_to_json(a.leaf(s));
  return {{"type", "wta"},
          {"n", a.states()},
          {"alphabet", a.alphabet},
          {"alpha", vector_to_json(a.alpha)},
          {"tensor", tensor_to_json(a.tensor)},
          {"leaves", leaves}};
}

inline Wta wta_from_json(const Json& j) {
  Wta a;
  a.alphabet = alphabet_from_json(j);
  a.alpha = vector_from_json(detail::field(j, "alpha"));
  a.tensor = tensor_from_json(detail::field(j, "tensor"));
  for (const auto& [s, v] : detail::field(j, "leaves").items()) a.leaves[s] = vector_from_json(v);
  check_state_count(j, a.alpha.size());
  a.validate();
  return a;
}

inline Json to_json(const Hmm& h) {
  return {{"type", "hmm"},
          {"n", h.initial.size()},
          {"alphabet", h.alphabet},
          {"pi", vector_to_json(h.initial)},
          {"T", matrix_to_json(h.transition)},
          {"O", matrix_to_json(h.observation)}};
}

inline Hmm hmm_from_json(const Json& j) {
  Hmm h;
  h.alphabet = alphabet_from_json(j);
  h.initial = vector_from_json(detail::field(j, "pi"));
  h.transition = matrix_from_json(detail::field(j, "T"));
  h.observation = matrix_from_json(detail::field(j, "O"));
  check_state_count(j, h.initial.size());
  h.validate(1e-9);
  return h;
}

inline Json to_json(const Pfa& p) {
  Json trans = Json::object();
  for (const auto& s : p.alphabet) trans[s] = matrix_to_json(p.transitions.at(s));
  return {{"type", "pfa"},
          {"n", p.states()},
          {"alphabet", p.alphabet},
          {"alpha", vector_to_json(p.initial)},
          {"beta", vector_to_json(p.final)},
          {"transitions", trans}};
}

inline Pfa pfa_from_json(const Json& j) {
  Pfa p;
  p.alphabet = alphabet_from_json(j);
  p.initial = vector_from_json(detail::field(j, "alpha"));
  p.final = vector_from_json(detail::field(j, "beta"));
  for (const auto& [s, m] : detail::field(j, "transitions").items()) p.transitions[s] = matrix_from_json(m);
  check_state_count(j, p.initial.size());
  p.validate(1e-9);
  return p;
}

// "type" decides; without it, a "tensor" field means a tree automaton.
inline std::string model_type(const Json& j) {
  if (j.contains("type")) return j.at("type").get<std::string>();
  if (j.contains("tensor")) return "wta";
  if (j.contains("O")) return "hmm";
  return "wfa";
}

// ---------------------------------------------------------------------------
// Transformer specs
// ---------------------------------------------------------------------------

namespace detail {
inline Json stage_to_json(const FeedForwardStage& stage) {
  if (std::holds_alternative<IdentityStage>(stage)) return {{"kind", "identity"}};
  if (const auto* m = std::get_if<MlpStage>(&stage))
    return {{"kind", "mlp"},
            {"activation", to_string(m->mlp.activation)},
            {"W1", matrix_to_json(m->mlp.w1)},
            {"b1", vector_to_json(m->mlp.b1)},
            {"W2", matrix_to_json(m->mlp.w2)},
            {"b2", vector_to_json(m->mlp.b2)},
            {"W_out", matrix_to_json(m->out)},
            {"passthrough", matrix_to_json(m->passthrough)}};
  const auto& b = std::get<BilinearStage>(stage);
  return {{"kind", "bilinear"},
          {"select_left", matrix_to_json(b.select_left)},
          {"select_right", matrix_to_json(b.select_right)},
          {"tensor", tensor_to_json(b.layer.tensor)},
          {"bias", vector_to_json(b.layer.bias)},
          {"W_out", matrix_to_json(b.out)},
          {"passthrough", matrix_to_json(b.passthrough)}};
}

inline FeedForwardStage stage_from_json(const Json& j) {
  const std::string kind = field(j, "kind").get<std::string>();
  if (kind == "identity") return IdentityStage{};
  if (kind == "mlp") {
    MlpStage m;
    m.mlp.activation = activation_from_string(field(j, "activation").get<std::string>());
    m.mlp.w1 = matrix_from_json(field(j, "W1"));
    m.mlp.b1 = vector_from_json(field(j, "b1"));
    m.mlp.w2 = matrix_from_json(field(j, "W2"));
    m.mlp.b2 = vector_from_json(field(j, "b2"));
    m.out = matrix_from_json(j.value("W_out", Json::array()));
    m.passthrough = matrix_from_json(j.value("passthrough", Json::array()));
    return m;
  }
  if (kind == "bilinear") {
    BilinearStage b;
    b.select_left = matrix_from_json(field(j, "select_left"));
    b.select_right = matrix_from_json(field(j, "select_right"));
    b.layer.tensor = tensor_from_json(field(j, "tensor"));
    b.layer.bias = vector_from_json(field(j, "bias"));
    b.layer.validate();
    b.out = matrix_from_json(j.value("W_out", Json::array()));
    b.passthrough = matrix_from_json(j.value("passthrough", Json::array()));
    return b;
  }
  throw InvalidModelError("unknown feed-forward kind '" + kind + "'");
}

inline AttentionMode mode_from_string(const std::string& s) {
  if (s == "soft") return AttentionMode::soft;
  if (s == "hard") return AttentionMode::hard;
  throw InvalidModelError("unknown attention mode '" + s + "'");
}
}  // namespace detail

inline Json to_json(const TransformerSpec& spec) {
  Json layers = Json::array();
  for (const auto& l : spec.layers) {
    Json heads = Json::array();
    for (const auto& h : l.heads) {
      Json jh = {{"WQ", matrix_to_json(h.query)}, {"WK", matrix_to_json(h.key)}, {"WV", matrix_to_json(h.value)}};
      if (h.mode) jh["mode"] = to_string(*h.mode);
      if (h.causal) jh["causal"] = true;
      heads.push_back(std::move(jh));
    }
    Json ff;
    if (l.ff.stages.size() == 1) {
      ff = detail::stage_to_json(l.ff.stages.front());
    } else if (l.ff.stages.empty()) {
      ff = {{"kind", "identity"}};
    } else {
      Json stages = Json::array();
      for (const auto& s : l.ff.stages) stages.push_back(detail::stage_to_json(s));
      ff = {{"kind", "sequence"}, {"stages", stages}};
    }
    layers.push_back({{"name", l.name},
                      {"mode", to_string(l.mode)},
                      {"heads", heads},
                      {"merge", matrix_to_json(l.merge)},
                      {"ff", ff}});
  }
  Json tokens = Json::object();
  for (const auto& [s, v] : spec.embedding.tokens) tokens[s] = vector_to_json(v);
  Json emb = {{"tokens", tokens}, {"positional", matrix_to_json(spec.embedding.positional)}};
  emb["pad"] = spec.embedding.pad ? Json(*spec.embedding.pad) : Json(nullptr);
  return {{"d", spec.d},
          {"T_budget", spec.budget},
          {"meta", spec.meta},
          {"embedding", emb},
          {"layers", layers},
          {"readout", matrix_to_json(spec.readout)}};
}

inline TransformerSpec spec_from_json(const Json& j) {
  TransformerSpec spec;
  spec.d = detail::field(j, "d").get<Index>();
  spec.budget = detail::field(j, "T_budget").get<Index>();
  spec.meta = j.value("meta", Json::object());
  const Json& emb = detail::field(j, "embedding");
  for (const auto& [s, v] : detail::field(emb, "tokens").items()) {
    spec.embedding.tokens[s] = vector_from_json(v);
    detail::json_require(spec.embedding.tokens[s].size() == spec.d, "token embedding width differs from d");
  }
  spec.embedding.positional = matrix_from_json(detail::field(emb, "positional"));
  if (emb.contains("pad") && !emb.at("pad").is_null()) spec.embedding.pad = emb.at("pad").get<std::string>();
  for (const auto& jl : detail::field(j, "layers")) {
    LayerSpec l;
    l.name = jl.value("name", "");
    l.mode = detail::mode_from_string(detail::field(jl, "mode").get<std::string>());
    for (const auto& jh : detail::field(jl, "heads")) {
      AttentionHead h;
      h.query = matrix_from_json(detail::field(jh, "WQ"));
      h.key = matrix_from_json(detail::field(jh, "WK"));
      h.value = matrix_from_json(detail::field(jh, "WV"));
      if (jh.contains("mode")) h.mode = detail::mode_from_string(jh.at("mode").get<std::string>());
      h.causal = jh.value("causal", false);
      l.heads.push_back(std::move(h));
    }
    l.merge = matrix_from_json(jl.value("merge", Json::array()));
    const Json& ff = detail::field(jl, "ff");
    if (detail::field(ff, "kind").get<std::string>() == "sequence") {
      for (const auto& s : detail::field(ff, "stages")) l.ff.stages.push_back(detail::stage_from_json(s));
    } else {
      l.ff.stages.push_back(detail::stage_from_json(ff));
    }
    spec.layers.push_back(std::move(l));
  }
  spec.readout = matrix_from_json(detail::field(j, "readout"));
  return spec;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("invalid JSON in '") + path + "': " + e.what(), e.byte, false);
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write file '" + path + "'");
  out << text;
}

}  // namespace a2a
