#include "automata2attn/json_io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace a2a;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(A2A_CLI_PATH) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t got = fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string sample(const std::string& name) { return std::string(A2A_SAMPLES_DIR) + "/" + name; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("a2a_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Compiles samples/<model> into a spec file and returns its path.
  std::string compiled(const std::string& model, const std::string& flags) {
    const std::string out = path("spec.json");
    const CliResult r = cli("compile --model " + sample(model) + " " + flags + " --out " + out);
    EXPECT_EQ(r.code, 0) << r.out;
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, CompileExactReportsDepthAndWidth) {
  const CliResult r = cli("compile --model " + sample("counting.json") + " --T 16 --mode exact --seed 5 --out " +
                    path("spec.json"));
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["L"], 4);
  EXPECT_EQ(j["d"], 10);
  EXPECT_EQ(j["seed"], 5);
  EXPECT_TRUE(fs::exists(path("spec.json")));
  EXPECT_EQ(read_json_file(path("spec.json"))["layers"].size(), 4u);
}

TEST_F(CliTest, CompileWithoutOutEmbedsSpec) {
  const CliResult r = cli("compile --model " + sample("counting.json") + " --T 4");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["report"]["L"], 2);
  EXPECT_EQ(j["spec"]["d"], 10);
}

TEST_F(CliTest, CompileApproxCalibratesC) {
  const CliResult r = cli("compile --model " + sample("counting.json") + " --T 8 --mode approx --auto-C --eps 1e-3 --out " +
                    path("spec.json"));
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  ASSERT_TRUE(j.contains("C"));
  EXPECT_GT(j["C"].get<double>(), 1.0);
  EXPECT_EQ(j["calibration"]["C"], j["C"]);
  EXPECT_LT(j["calibration"]["probe_error"].get<double>(), 1e-3);
  EXPECT_EQ(j["mlp_width"], 45);
  EXPECT_EQ(j["error_budget"]["eps_total"].size(), 3u);
  const auto& measured = j["error_budget"]["measured"];
  for (std::size_t l = 0; l < measured.size(); ++l)
    EXPECT_LE(measured[l].get<double>(), j["error_budget"]["eps_total"][l].get<double>());
}

TEST_F(CliTest, CompileWtaReportsTotalDepth) {
  const CliResult r = cli("compile --model " + sample("bool_tree.json") + " --T 31 --depth 5 --out " + path("spec.json"));
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["total_layers"], 7);
  EXPECT_EQ(j["D"], 5);
  EXPECT_EQ(j["d"].get<int>(), 2 + j["p"].get<int>() + 4);
}

TEST_F(CliTest, CompileCsvFormat) {
  const CliResult r = cli("compile --model " + sample("counting.json") + " --T 8 --format csv --out " + path("s.json"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("key,value\n", 0), 0u);
  EXPECT_NE(r.out.find("\nL,3\n"), std::string::npos);
}

TEST_F(CliTest, SimulateCountingWord) {
  const std::string spec = compiled("counting.json", "--T 16");
  const CliResult r = cli("simulate --spec " + spec + " --input 0010 --seed 3");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["seed"], 3);
  ASSERT_EQ(j["rows"].size(), 5u);
  const Json& last = j["rows"][4]["state"];
  EXPECT_NEAR(last[0].get<double>(), 3.0, 1e-9);
  EXPECT_NEAR(last[1].get<double>(), 1.0, 1e-9);
  EXPECT_EQ(j["rows"][4]["position"], 4);
}

TEST_F(CliTest, SimulateEmptyWordGivesAlpha) {
  const std::string spec = compiled("counting.json", "--T 4");
  const CliResult r = cli("simulate --spec " + spec + " --input \"\"");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  ASSERT_EQ(j["rows"].size(), 1u);
  EXPECT_NEAR(j["rows"][0]["state"][0].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(j["rows"][0]["state"][1].get<double>(), 1.0, 1e-12);
}

TEST_F(CliTest, SimulateCsv) {
  const std::string spec = compiled("counting.json", "--T 4");
  const CliResult r = cli("simulate --spec " + spec + " --input 00 --format csv --seed 9");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("# seed=9\nposition,q0,q1\n0,0,1\n1,1,1\n2,2,1\n", 0), 0u) << r.out;
}

TEST_F(CliTest, SimulateTree) {
  const std::string spec = compiled("bool_tree.json", "--T 8 --depth 2");
  const CliResult r = cli("simulate --spec " + spec + " --input \"(ab)\"");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  ASSERT_EQ(j["rows"].size(), 3u);
  // Parity of b leaves: a -> (1,0), b -> (0,1), (ab) -> odd -> (0,1).
  const std::vector<std::vector<double>> want{{0, 1}, {1, 0}, {0, 1}};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(j["rows"][i]["position"], static_cast<int>(i) + 1);
    for (std::size_t q = 0; q < 2; ++q) EXPECT_NEAR(j["rows"][i]["state"][q].get<double>(), want[i][q], 1e-6);
  }
}

TEST_F(CliTest, SimulateOverBudget) {
  const std::string spec = compiled("counting.json", "--T 4");
  EXPECT_EQ(cli("simulate --spec " + spec + " --input 00000").code, 4);
  const std::string tree_spec = compiled("bool_tree.json", "--T 16 --depth 1");
  EXPECT_EQ(cli("simulate --spec " + tree_spec + " --input \"(a(ab))\"").code, 4);
}

TEST_F(CliTest, SimulateUnknownSymbol) {
  const std::string spec = compiled("counting.json", "--T 4");
  EXPECT_EQ(cli("simulate --spec " + spec + " --input 0x").code, 2);
}

TEST_F(CliTest, VerifyPassesOnCompiledSpec) {
  const std::string spec = compiled("counting.json", "--T 8");
  const CliResult r = cli("verify --model " + sample("counting.json") + " --spec " + spec + " --count 50 --seed 4");
  EXPECT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["inputs"], 50);
  EXPECT_EQ(j["seed"], 4);
}

TEST_F(CliTest, VerifyCompilesWhenNoSpecGiven) {
  EXPECT_EQ(cli("verify --model " + sample("bool_tree.json") + " --T 16 --depth 4 --count 30").code, 0);
  EXPECT_EQ(cli("verify --model " + sample("pfa_two_state.pautomac") + " --T 8 --count 20").code, 0);
}

TEST_F(CliTest, VerifySabotagedSpecFails) {
  const std::string spec = compiled("counting.json", "--T 8");
  Json j = read_json_file(spec);
  j["embedding"]["tokens"]["0"][0] = j["embedding"]["tokens"]["0"][0].get<double>() + 1.0;
  write_text_file(spec, j.dump());
  const CliResult r = cli("verify --model " + sample("counting.json") + " --spec " + spec + " --count 20");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(Json::parse(r.out)["pass"].get<bool>());
}

TEST_F(CliTest, BadInputsExitTwo) {
  EXPECT_EQ(cli("verify --model " + path("missing.json") + " --T 8").code, 2);
  write_text_file(path("bad.json"), "{\"type\":\"wfa\",\"alphabet\":[\"a\"]}");
  EXPECT_EQ(cli("compile --model " + path("bad.json") + " --T 8").code, 2);
  EXPECT_EQ(cli("compile --model " + sample("counting.json") + " --T 6").code, 2);
  EXPECT_EQ(cli("compile --model " + sample("counting.json") + " --T 8 --format xml").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(CliTest, FlagConflictsExitThree) {
  const std::string m = " --model " + sample("counting.json") + " --T 8";
  EXPECT_EQ(cli("compile" + m + " --mode exact --C 10").code, 3);
  EXPECT_EQ(cli("compile" + m + " --C 10 --auto-C").code, 3);
  EXPECT_EQ(cli("compile" + m + " --mode approx").code, 3);
  EXPECT_EQ(cli("compile" + m + " --depth 3").code, 3);
  const std::string spec = compiled("counting.json", "--T 8");
  EXPECT_EQ(cli("verify --model " + sample("counting.json") + " --spec " + spec + " --T 8").code, 3);
}

TEST_F(CliTest, BenchLadder) {
  const CliResult r = cli("bench --model " + sample("counting.json") + " --ladder 16,32,64 --count 10 --seed 12");
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# seed=12");
  std::getline(in, line);
  EXPECT_EQ(line, "T,L,d,attn_width,mlp_width,heads,compile_ms,verify_ms,max_error");
  const std::vector<std::pair<int, int>> want{{16, 4}, {32, 5}, {64, 6}};
  for (const auto& [T, L] : want) {
    ASSERT_TRUE(std::getline(in, line));
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 9u);
    EXPECT_EQ(std::stoi(cells[0]), T);
    EXPECT_EQ(std::stoi(cells[1]), L);
    EXPECT_EQ(std::stoi(cells[2]), 10);
    EXPECT_LT(std::stod(cells[8]), 1e-9);
  }
  EXPECT_FALSE(std::getline(in, line));
}

TEST_F(CliTest, BenchJson) {
  const CliResult r = cli("bench --model " + sample("counting.json") + " --ladder 4,8 --count 5 --format json");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["rows"][1]["L"], 3);
  EXPECT_EQ(j["seed"], 0);
}

TEST_F(CliTest, ScanReportsRounds) {
  const CliResult r = cli("scan --model " + sample("counting.json") + " --input 00100 --seed 2");
  ASSERT_EQ(r.code, 0);
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["rounds"], 3);
  EXPECT_EQ(j["padded_length"], 8);
  EXPECT_EQ(j["max_deviation_from_fold"], 0.0);
  EXPECT_EQ(j["states"][4][0], 4.0);
  EXPECT_EQ(j["seed"], 2);
}

TEST_F(CliTest, DatasetIsReproducible) {
  const std::string args = "dataset --model " + sample("counting.json") + " --T 8 --count 5 --seed 77";
  const CliResult a = cli(args);
  const CliResult b = cli(args);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 5);
  const CliResult s = cli(args + " --out " + path("d.jsonl"));
  ASSERT_EQ(s.code, 0);
  const Json summary = Json::parse(s.out);
  EXPECT_EQ(summary["seed"], 77);
  EXPECT_EQ(summary["symbol_sparsity"], 1.0);
  EXPECT_EQ(read_text_file(path("d.jsonl")), a.out);
}

TEST_F(CliTest, TreeDataset) {
  const CliResult r = cli("dataset --model " + sample("bool_tree.json") + " --T 16 --count 3 --family comb --seed 1");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("\"family\":\"comb\""), std::string::npos);
}
