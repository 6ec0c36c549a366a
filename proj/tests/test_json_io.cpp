#include "automata2attn/json_io.hpp"
#include "automata2attn/wfa_compiler.hpp"
#include "automata2attn/wta_compiler.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace a2a;

TEST(JsonIo, MatrixRowMajor) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Json j = matrix_to_json(m);
  EXPECT_EQ(j.dump(), "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
  EXPECT_EQ(matrix_from_json(j), m);
  EXPECT_THROW(matrix_from_json(Json::parse("[[1,2],[3]]")), InvalidModelError);
}

TEST(JsonIo, WfaRoundTrip) {
  std::mt19937_64 rng(1);
  const Wfa a = oracle::random_wfa(3, {"x", "y"}, rng);
  const Wfa b = wfa_from_json(Json::parse(to_json(a).dump()));
  EXPECT_EQ(b.alphabet, a.alphabet);
  EXPECT_EQ(b.alpha, a.alpha);
  EXPECT_EQ(b.beta, a.beta);
  for (const auto& s : a.alphabet) EXPECT_EQ(b.transition(s), a.transition(s));
  EXPECT_EQ(model_type(to_json(a)), "wfa");
}

TEST(JsonIo, WtaRoundTrip) {
  std::mt19937_64 rng(2);
  const Wta a = oracle::random_wta(2, {"a", "b"}, rng);
  const Wta b = wta_from_json(Json::parse(to_json(a).dump()));
  EXPECT_EQ(b.tensor, a.tensor);
  EXPECT_EQ(b.alpha, a.alpha);
  for (const auto& s : a.alphabet) EXPECT_EQ(b.leaf(s), a.leaf(s));
  EXPECT_EQ(model_type(to_json(a)), "wta");
}

TEST(JsonIo, HmmAndPfaRoundTrip) {
  std::mt19937_64 rng(3);
  const Hmm h = oracle::random_hmm(3, 2, rng);
  const Hmm h2 = hmm_from_json(to_json(h));
  EXPECT_EQ(h2.transition, h.transition);
  EXPECT_EQ(h2.observation, h.observation);
  EXPECT_EQ(model_type(to_json(h)), "hmm");

  Pfa p;
  p.alphabet = {"a"};
  p.initial = Vector::Ones(1);
  p.final = Vector::Constant(1, 0.5);
  p.transitions["a"] = Matrix::Constant(1, 1, 0.5);
  const Pfa p2 = pfa_from_json(to_json(p));
  EXPECT_EQ(p2.final, p.final);
  EXPECT_EQ(model_type(to_json(p)), "pfa");
}

TEST(JsonIo, RejectsMissingFieldsAndBadShapes) {
  Json j = to_json(make_counting_wfa());
  j.erase("beta");
  EXPECT_THROW(wfa_from_json(j), InvalidModelError);
  Json k = to_json(make_counting_wfa());
  k["n"] = 3;
  EXPECT_THROW(wfa_from_json(k), InvalidModelError);
  Json m = to_json(make_counting_wfa());
  m["transitions"]["0"] = Json::parse("[[1,0,0],[0,1,0],[0,0,1]]");
  EXPECT_THROW(wfa_from_json(m), Error);
}

TEST(JsonIo, WfaSpecRoundTripPreservesOutputs) {
  const Wfa a = make_counting_wfa();
  for (const WfaCompilation& c : {compile_exact(a, 8), compile_approx(a, 8, 100.0)}) {
    const TransformerSpec s = spec_from_json(Json::parse(to_json(c.spec).dump()));
    for (const auto& w : random_words(a.alphabet, 8, 10, 4))
      EXPECT_EQ(transformer_forward(s, w), transformer_forward(c.spec, w));
  }
}

TEST(JsonIo, WtaSpecRoundTripPreservesOutputs) {
  std::mt19937_64 rng(5);
  const Wta a = oracle::random_wta(2, {"a", "b"}, rng);
  WtaOptions opt;
  opt.attention = AttentionMode::soft;
  opt.saturation = 64.0;
  const WtaCompilation c = compile_wta(a, 16, 3, opt);
  const Json j = to_json(c.spec);
  const TransformerSpec s = spec_from_json(Json::parse(j.dump()));
  EXPECT_EQ(to_json(s), j);
  const Word tokens = tree_to_str(parse_tree_text("(a(bb))")).tokens;
  EXPECT_EQ(transformer_forward(s, tokens), transformer_forward(c.spec, tokens));
}

TEST(JsonIo, SpecSchemaFields) {
  const Json j = to_json(compile_exact(make_counting_wfa(), 4).spec);
  EXPECT_EQ(j["d"], 10);
  EXPECT_EQ(j["T_budget"], 4);
  ASSERT_EQ(j["layers"].size(), 2u);
  EXPECT_EQ(j["layers"][0]["mode"], "hard");
  EXPECT_EQ(j["layers"][0]["heads"].size(), 2u);
  EXPECT_TRUE(j["layers"][0]["heads"][0].contains("WQ"));
  EXPECT_EQ(j["layers"][0]["ff"]["kind"], "bilinear");
  EXPECT_TRUE(j.contains("embedding"));
  EXPECT_TRUE(j.contains("readout"));
}
