// Command-line front end: compile automata into transformer specs, run and
// verify specs, benchmark the depth/width scaling, and write datasets.
//
// Exit codes: 0 ok, 1 verification failed (or calibration did not converge),
// 2 bad input, 3 conflicting flags, 4 input over the compiled budget.

#include "automata2attn/harness.hpp"
#include "automata2attn/pautomac.hpp"

#include <CLI11.hpp>

#include <cctype>
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <variant>

using namespace a2a;

namespace {

struct FlagConflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  std::string model;
  std::string spec;
  std::optional<Index> T;
  std::optional<std::string> mode;
  std::optional<double> C;
  bool auto_C = false;
  std::optional<double> eps;
  std::optional<Index> depth;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::optional<std::string> input;
  std::size_t count = 100;
  std::string family = "uniform-random";
  std::vector<Index> ladder{16, 32, 64};
};

using Model = std::variant<Wfa, Wta>;

Model load_model(const std::string& path) {
  const std::string text = read_text_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw InvalidModelError("model file '" + path + "' is empty");
  if (text[first] != '{') return probabilistic_to_wfa(parse_pautomac(text));
  const Json j = read_json_file(path);
  const std::string type = model_type(j);
  if (type == "wfa") return wfa_from_json(j);
  if (type == "wta") return wta_from_json(j);
  if (type == "hmm") return hmm_to_wfa(hmm_from_json(j));
  if (type == "pfa") return pfa_to_wfa(pfa_from_json(j));
  throw InvalidModelError("unknown model type '" + type + "'");
}

// Whitespace-separated tokens when the text has any whitespace, otherwise
// one symbol per character.
Word parse_word(const std::string& text) {
  Word w;
  if (text.find_first_of(" \t") != std::string::npos) {
    std::istringstream in(text);
    for (std::string s; in >> s;) w.push_back(s);
  } else {
    for (char ch : text) w.emplace_back(1, ch);
  }
  return w;
}

void emit(const Config& cfg, const std::string& text) {
  if (cfg.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(cfg.out, text);
  }
}

std::string row_csv(Index position, const RowVector& v) {
  std::ostringstream os;
  os << std::setprecision(17) << position;
  for (Index i = 0; i < v.size(); ++i) os << "," << v(i);
  return os.str() + "\n";
}

std::string csv_state_header(Index n) {
  std::string h = "position";
  for (Index i = 0; i < n; ++i) h += ",q" + std::to_string(i);
  return h + "\n";
}

Index require_T(const Config& cfg) {
  if (!cfg.T) throw ArgumentError("--T is required");
  return *cfg.T;
}

// Shared flag checks for compile/verify/bench.
bool approx_requested(const Config& cfg) {
  if (cfg.C && cfg.auto_C) throw FlagConflict("--C and --auto-C are mutually exclusive");
  const bool wants_C = cfg.C.has_value() || cfg.auto_C;
  if (cfg.mode == "exact" && wants_C) throw FlagConflict("--C/--auto-C only apply to --mode approx");
  if (cfg.mode == "approx" && !wants_C) throw FlagConflict("--mode approx needs --C or --auto-C");
  return cfg.mode == "approx" || wants_C;
}

double wfa_eps(const Config& cfg, bool approx) { return cfg.eps.value_or(approx ? 1e-3 : 1e-9); }

struct WfaBuild {
  WfaCompilation c;
  Json calibration;
};

WfaBuild build_wfa(const Wfa& a, Index T, const Config& cfg) {
  if (cfg.depth) throw FlagConflict("--depth only applies to tree automata");
  const bool approx = approx_requested(cfg);
  if (!approx) return {compile_exact(a, T), nullptr};
  if (cfg.C) return {compile_approx(a, T, *cfg.C), nullptr};
  const CalibrationResult cal = calibrate_saturation(a, T, wfa_eps(cfg, true), 32, cfg.seed);
  return {compile_approx(a, T, cal.C),
          {{"C", cal.C}, {"probe_error", cal.probe_error}, {"doublings", cal.steps}, {"target", wfa_eps(cfg, true)}}};
}

std::vector<BinaryTree> trees_within(const std::vector<Symbol>& alphabet, Index T, Index D, const Config& cfg,
                                     std::size_t count) {
  std::vector<BinaryTree> out;
  for (const auto& t : gen_trees(alphabet, T, tree_family_from_string(cfg.family), count, cfg.seed).inputs)
    if (t.depth() <= D) out.push_back(t);
  return out;
}

struct WtaBuild {
  WtaCompilation c;
  Json calibration;
};

WtaBuild build_wta(const Wta& a, Index T, const Config& cfg) {
  if (!cfg.depth) throw ArgumentError("--depth is required for tree automata");
  const bool approx = approx_requested(cfg);
  WtaOptions opt;
  if (!approx) return {compile_wta(a, T, *cfg.depth, opt), nullptr};
  opt.attention = AttentionMode::soft;
  if (cfg.C) {
    opt.saturation = *cfg.C;
    return {compile_wta(a, T, *cfg.depth, opt), nullptr};
  }
  const double target = cfg.eps.value_or(1e-6);
  const WtaCalibration cal = calibrate_wta_saturation(a, T, *cfg.depth, opt, target, trees_within(a.alphabet, T, *cfg.depth, cfg, 16));
  opt.saturation = cal.C;
  return {compile_wta(a, T, *cfg.depth, opt),
          {{"C", cal.C}, {"probe_error", cal.probe_error}, {"doublings", cal.steps}, {"target", target}}};
}

std::string report_csv(const Json& report) {
  std::ostringstream os;
  os << "key,value\n";
  for (const auto& [k, v] : report.items())
    if (v.is_primitive()) os << k << "," << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_compile(const Config& cfg) {
  const Model model = load_model(cfg.model);
  const Index T = require_T(cfg);
  Json report;
  TransformerSpec spec;
  if (const auto* a = std::get_if<Wfa>(&model)) {
    WfaBuild b = build_wfa(*a, T, cfg);
    if (b.c.mode == WfaMode::approx) {
      std::vector<double> measured;
      const auto probe = random_words(a->alphabet, static_cast<std::size_t>(T), 16, cfg.seed);
      const ErrorBudget budget = measured_error_budget(*a, b.c, probe, &measured);
      report = wfa_report(b.c, &budget);
      report["error_budget"]["measured"] = measured;
    } else {
      report = wfa_report(b.c);
    }
    if (!b.calibration.is_null()) report["calibration"] = b.calibration;
    spec = std::move(b.c.spec);
  } else {
    WtaBuild b = build_wta(std::get<Wta>(model), T, cfg);
    report = wta_report(b.c);
    if (!b.calibration.is_null()) report["calibration"] = b.calibration;
    spec = std::move(b.c.spec);
  }
  report["seed"] = cfg.seed;
  report["model"] = cfg.model;
  if (!cfg.out.empty()) {
    write_text_file(cfg.out, to_json(spec).dump(2) + "\n");
    report["spec"] = cfg.out;
    std::cout << (cfg.format == "csv" ? report_csv(report) : report.dump(2) + "\n");
  } else {
    Json all = {{"report", report}, {"spec", to_json(spec)}};
    std::cout << (cfg.format == "csv" ? report_csv(report) : all.dump(2) + "\n");
  }
  return 0;
}

int cmd_simulate(const Config& cfg) {
  const TransformerSpec spec = spec_from_json(read_json_file(cfg.spec));
  const std::string text = cfg.input.value_or("");
  const std::string kind = spec.meta.value("kind", "");
  Json rows = Json::array();
  std::string csv;
  if (kind == "wfa") {
    const WfaCompilation c = wfa_compilation_from_spec(spec);
    const Word w = parse_word(text);
    const StateSequence s = simulate_wfa(c, w);
    csv = csv_state_header(c.layout.n);
    for (Index t = 0; t < s.size(); ++t) {
      rows.push_back({{"position", t}, {"state", vector_to_json(s.row(t).transpose())}});
      csv += row_csv(t, s.row(t));
    }
  } else if (kind == "wta") {
    const WtaCompilation c = wta_compilation_from_spec(spec);
    const TreeEncoding enc = tree_to_str(parse_tree_text(text));
    if (static_cast<Index>(enc.tokens.size()) > c.layout.T)
      throw BudgetError("tree has " + std::to_string(enc.tokens.size()) + " tokens, budget is " +
                        std::to_string(c.layout.T));
    if (enc.subtree_depth.at(1) > c.parsing_layers)
      throw BudgetError("tree depth " + std::to_string(enc.subtree_depth.at(1)) + " exceeds the depth budget " +
                        std::to_string(c.parsing_layers));
    csv = csv_state_header(c.layout.n);
    for (const auto& [pos, v] : simulate_wta(c, enc)) {
      rows.push_back({{"position", pos},
                      {"token", enc.tokens[static_cast<std::size_t>(pos - 1)]},
                      {"state", vector_to_json(v)}});
      csv += row_csv(pos, v.transpose());
    }
  } else {
    throw InvalidModelError("spec metadata has no kind 'wfa' or 'wta'");
  }
  if (cfg.format == "csv")
    emit(cfg, "# seed=" + std::to_string(cfg.seed) + "\n" + csv);
  else
    emit(cfg, Json{{"kind", kind}, {"input", text}, {"seed", cfg.seed}, {"rows", rows}}.dump(2) + "\n");
  return 0;
}

int cmd_verify(const Config& cfg) {
  const Model model = load_model(cfg.model);
  std::optional<TransformerSpec> loaded;
  if (!cfg.spec.empty()) {
    if (cfg.T || cfg.mode || cfg.C || cfg.auto_C || cfg.depth)
      throw FlagConflict("compile flags (--T, --mode, --C, --auto-C, --depth) conflict with --spec");
    loaded = spec_from_json(read_json_file(cfg.spec));
  }
  VerificationReport r;
  if (const auto* a = std::get_if<Wfa>(&model)) {
    const WfaCompilation c = loaded ? wfa_compilation_from_spec(*loaded) : build_wfa(*a, require_T(cfg), cfg).c;
    const double eps = wfa_eps(cfg, c.mode == WfaMode::approx);
    r = verify_wfa(*a, c, gen_words(a->alphabet, c.layout.T, cfg.count, cfg.seed).inputs, eps);
  } else {
    const Wta& tree_model = std::get<Wta>(model);
    const WtaCompilation c = loaded ? wta_compilation_from_spec(*loaded) : build_wta(tree_model, require_T(cfg), cfg).c;
    r = verify_wta(tree_model, c, trees_within(tree_model.alphabet, c.layout.T, c.parsing_layers, cfg, cfg.count), cfg.eps.value_or(1e-6));
  }
  std::cerr << report_table(r);
  Json j = report_to_json(r);
  j["seed"] = cfg.seed;
  if (cfg.format == "csv") {
    std::ostringstream os;
    os << "# seed=" << cfg.seed << " pass=" << (r.pass ? 1 : 0) << "\nlayer,max_error\n" << std::setprecision(17);
    for (std::size_t l = 0; l < r.layer_errors.size(); ++l) os << l + 1 << "," << r.layer_errors[l] << "\n";
    emit(cfg, os.str());
  } else {
    emit(cfg, j.dump(2) + "\n");
  }
  return r.pass ? 0 : 1;
}

int cmd_bench(const Config& cfg) {
  const Model model = load_model(cfg.model);
  const auto* a = std::get_if<Wfa>(&model);
  if (!a) throw ArgumentError("bench runs on word automata only");
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::time_point s) { return std::chrono::duration<double, std::milli>(clock::now() - s).count(); };
  std::ostringstream csv;
  csv << "# seed=" << cfg.seed << "\nT,L,d,attn_width,mlp_width,heads,compile_ms,verify_ms,max_error\n";
  Json rows = Json::array();
  bool all_pass = true;
  for (Index T : cfg.ladder) {
    const auto t0 = clock::now();
    const WfaCompilation c = build_wfa(*a, T, cfg).c;
    const double compile_ms = ms(t0);
    const auto t1 = clock::now();
    const VerificationReport r =
        verify_wfa(*a, c, gen_words(a->alphabet, T, cfg.count, cfg.seed).inputs, wfa_eps(cfg, c.mode == WfaMode::approx));
    const double verify_ms = ms(t1);
    all_pass = all_pass && r.pass;
    const SpecShape s = spec_shape(c.spec);
    csv << T << "," << s.layers << "," << s.d << "," << s.attention_width << "," << s.mlp_width << "," << s.heads
        << "," << std::fixed << std::setprecision(3) << compile_ms << "," << verify_ms << ","
        << std::scientific << std::setprecision(6) << r.max_error << std::defaultfloat << "\n";
    rows.push_back({{"T", T},
                    {"L", s.layers},
                    {"d", s.d},
                    {"attn_width", s.attention_width},
                    {"mlp_width", s.mlp_width},
                    {"heads", s.heads},
                    {"compile_ms", compile_ms},
                    {"verify_ms", verify_ms},
                    {"max_error", r.max_error},
                    {"pass", r.pass}});
  }
  if (cfg.format == "json")
    emit(cfg, Json{{"seed", cfg.seed}, {"rows", rows}}.dump(2) + "\n");
  else
    emit(cfg, csv.str());
  return all_pass ? 0 : 1;
}

int cmd_scan(const Config& cfg) {
  const Model model = load_model(cfg.model);
  const auto* a = std::get_if<Wfa>(&model);
  if (!a) throw ArgumentError("scan runs on word automata only");
  const Word w = parse_word(cfg.input.value_or(""));
  if (w.empty()) throw ArgumentError("scan needs a nonempty --input");
  std::vector<Matrix> seq;
  for (const auto& s : w) seq.push_back(a->transition(s));
  const auto monoid = matrix_product_monoid(a->states());
  ScanStats stats;
  const auto scanned = prefix_scan<Matrix>(monoid, seq, &stats);
  const auto folded = sequential_fold<Matrix>(monoid, seq);
  double deviation = 0.0;
  Json states = Json::array();
  std::string csv = csv_state_header(a->states());
  for (std::size_t t = 0; t < scanned.size(); ++t) {
    deviation = std::max(deviation, (scanned[t] - folded[t]).cwiseAbs().maxCoeff());
    const RowVector row = a->alpha.transpose() * scanned[t];
    states.push_back(vector_to_json(row.transpose()));
    csv += row_csv(static_cast<Index>(t + 1), row);
  }
  if (cfg.format == "csv") {
    emit(cfg, "# seed=" + std::to_string(cfg.seed) + " rounds=" + std::to_string(stats.rounds) + "\n" + csv);
  } else {
    emit(cfg, Json{{"seed", cfg.seed},
                   {"length", w.size()},
                   {"rounds", stats.rounds},
                   {"padded_length", stats.padded_length},
                   {"max_deviation_from_fold", deviation},
                   {"states", states}}
                      .dump(2) +
                  "\n");
  }
  return 0;
}

int cmd_dataset(const Config& cfg) {
  const Model model = load_model(cfg.model);
  const Index T = require_T(cfg);
  Json summary;
  std::string lines;
  if (const auto* a = std::get_if<Wfa>(&model)) {
    WordDataset d = gen_words(a->alphabet, T, cfg.count, cfg.seed);
    attach_targets(d, *a);
    lines = to_jsonl(d);
    summary = dataset_summary(d, a);
  } else {
    const Wta& tree_model = std::get<Wta>(model);
    TreeDataset d = gen_trees(tree_model.alphabet, T, tree_family_from_string(cfg.family), cfg.count, cfg.seed);
    attach_targets(d, tree_model);
    lines = to_jsonl(d);
    summary = {{"inputs", d.inputs.size()}, {"max_tokens", T}, {"family", to_string(d.family)}, {"seed", cfg.seed},
               {"states", tree_model.states()}};
  }
  if (cfg.out.empty()) {
    std::cout << lines;
  } else {
    write_text_file(cfg.out, lines);
    summary["out"] = cfg.out;
    std::cout << summary.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compile weighted automata into transformer weights and check the simulation."};
  app.require_subcommand(1);
  Config cfg;

  auto model_opt = [&](CLI::App* s) { s->add_option("--model", cfg.model, "automaton file (JSON or PAutomaC)"); };
  auto compile_opts = [&](CLI::App* s) {
    s->add_option("--T", cfg.T, "token budget (a power of two for word automata)");
    s->add_option("--mode", cfg.mode, "exact (hard attention) or approx (soft attention)")
        ->check(CLI::IsMember({"exact", "approx"}));
    s->add_option("--C", cfg.C, "saturation constant for approx mode");
    s->add_flag("--auto-C", cfg.auto_C, "calibrate C by doubling until --eps is met");
    s->add_option("--depth", cfg.depth, "parsing depth budget for tree automata");
  };
  auto common_opts = [&](CLI::App* s) {
    s->add_option("--eps", cfg.eps, "error tolerance");
    s->add_option("--seed", cfg.seed, "seed for generated inputs");
    s->add_option("--out", cfg.out, "output path");
    s->add_option("--format", cfg.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  };

  auto* compile = app.add_subcommand("compile", "compile an automaton into a transformer spec");
  model_opt(compile);
  compile_opts(compile);
  common_opts(compile);
  compile->get_option("--model")->required();

  auto* simulate = app.add_subcommand("simulate", "run a spec on one word or tree");
  simulate->add_option("--spec", cfg.spec, "transformer spec JSON")->required();
  simulate->add_option("--input", cfg.input, "word (characters or space-separated symbols) or tree text");
  common_opts(simulate);

  auto* verify = app.add_subcommand("verify", "check a spec against its automaton on generated inputs");
  model_opt(verify);
  verify->get_option("--model")->required();
  verify->add_option("--spec", cfg.spec, "transformer spec JSON; compiled from the model when absent");
  compile_opts(verify);
  common_opts(verify);
  verify->add_option("--count", cfg.count, "number of generated inputs");
  verify->add_option("--family", cfg.family, "tree family: uniform-random, balanced, comb");

  auto* bench = app.add_subcommand("bench", "compile and verify over a ladder of T values");
  model_opt(bench);
  bench->get_option("--model")->required();
  compile_opts(bench);
  common_opts(bench);
  bench->add_option("--ladder", cfg.ladder, "comma-separated T values")->delimiter(',');
  bench->add_option("--count", cfg.count, "words verified per T");

  auto* scan = app.add_subcommand("scan", "run the doubling prefix scan of a word's transition matrices");
  model_opt(scan);
  scan->get_option("--model")->required();
  scan->add_option("--input", cfg.input, "word")->required();
  common_opts(scan);

  auto* dataset = app.add_subcommand("dataset", "write (input, target states) pairs as JSON lines");
  model_opt(dataset);
  dataset->get_option("--model")->required();
  dataset->add_option("--T", cfg.T, "maximum word length or tree token count")->required();
  dataset->add_option("--count", cfg.count, "number of inputs");
  dataset->add_option("--family", cfg.family, "tree family: uniform-random, balanced, comb");
  common_opts(dataset);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (bench->parsed() && bench->get_option("--format")->count() == 0) cfg.format = "csv";

  try {
    if (compile->parsed()) return cmd_compile(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (verify->parsed()) return cmd_verify(cfg);
    if (bench->parsed()) return cmd_bench(cfg);
    if (scan->parsed()) return cmd_scan(cfg);
    if (dataset->parsed()) return cmd_dataset(cfg);
  } catch (const FlagConflict& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const BudgetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CalibrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
