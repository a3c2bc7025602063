#include "stokesres/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace stokesres;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "stokesres-cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream os;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), os);
  return {code, os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("stokesres_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST(CliConfig, JsonRoundTrip) {
  cli::RunConfig c;
  c.command = "scan resolvent";
  c.meshes = {"icosphere:1", "icosphere:2"};
  c.lambdas = {cplx(1.0, 0.0), std::polar(10.0, 2.3)};
  c.p = {2.0, 3.0};
  c.tolerances["band"] = 0.3;
  const cli::RunConfig back = cli::RunConfig::from_json(nlohmann::json::parse(c.canonical()));
  EXPECT_EQ(back.canonical(), c.canonical());
  EXPECT_EQ(cli::sha256_hex(back.canonical()), cli::sha256_hex(c.canonical()));
}

TEST(CliConfig, Sha256KnownAnswer) {
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CliConfig, LambdaOutsideSectorIsAConfigError) {
  const CliRun r = run_cli({"solve", "dirichlet", "--mesh", "icosphere:1", "--lambda-re", "-1"});
  EXPECT_EQ(r.code, cli::kConfigError);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["exit_code"], 2);
  EXPECT_NE(j["message"].get<std::string>().find("lambda outside sector"), std::string::npos);
}

TEST(CliConfig, PrintConfigIsCanonical) {
  const CliRun r = run_cli({"scan", "conditioning", "--mesh", "icosphere:1", "--print-config"});
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["lambdas"].size(), 15u);
  EXPECT_EQ(j.dump() + "\n", r.out);
}

TEST(CliConfig, BadArgumentsAndTolerances) {
  EXPECT_EQ(run_cli({"scan", "nonsense"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"scan", "conditioning", "--mesh", "icosphere:1", "--tol-null", "-1"}).code, cli::kConfigError);
  EXPECT_EQ(run_cli({"solve", "neumann", "--mesh", "missing.obj", "--lambda-re", "1"}).code, cli::kConfigError);
}

TEST_F(CliTest, MeshMakeAndInfo) {
  const CliRun a = run_cli({"mesh", "make", "icosphere", "--subdiv", "2", "-o", path("s.obj")});
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(nlohmann::json::parse(a.out)["n_tri"], 320);
  const CliRun b = run_cli({"mesh", "make", "cube", "--per-edge", "3", "-o", path("c.obj")});
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(nlohmann::json::parse(b.out)["n_tri"], 108);
  const CliRun c = run_cli({"mesh", "info", path("c.obj")});
  ASSERT_EQ(c.code, 0) << c.out;
  const auto j = nlohmann::json::parse(c.out);
  EXPECT_NEAR(j["area"].get<double>(), 6.0, 1e-12);
  EXPECT_NEAR(j["volume"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(j["euler_characteristic"], 2);
  const CliRun d = run_cli({"mesh", "info", path("s.obj")});
  EXPECT_TRUE(nlohmann::json::parse(d.out)["sphere_chart"].get<bool>());
  const CliRun e = run_cli({"mesh", "make", "graph", "--graph", "wedge", "--M", "0.5", "--r", "1", "-o", path("g.obj")});
  ASSERT_EQ(e.code, 0) << e.out;
}

TEST_F(CliTest, SolveReproducesStokeslet) {
  const CliRun r = run_cli({"solve", "dirichlet", "--mesh", "icosphere:1", "--lambda-re", "1", "--data",
                     "stokeslet:x0=1.5,1,0.8,e=0.3,-0.5,0.8", "--tol-interior", "2e-2", "--dump", path("d.json")});
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(path("d.json")));
  const CliRun z = run_cli({"solve", "neumann", "--mesh", "icosphere:1", "--lambda-re", "0", "--lambda-im", "10"});
  EXPECT_EQ(z.code, 0) << z.out;
}

TEST_F(CliTest, ResolventScanHas45RowsAndReruns) {
  const std::vector<std::string> args{"scan", "resolvent", "--mesh", "icosphere:0", "--forcings", "1",
                                      "--volume-order", "2"};
  auto with_out = [&](const std::string& prefix) {
    auto a = args;
    a.push_back("-o");
    a.push_back(path(prefix));
    return run_cli(a);
  };
  const CliRun first = with_out("a");
  ASSERT_TRUE(first.code == 0 || first.code == cli::kNumericalFailure) << first.out;
  const std::string csv = slurp(path("a.csv"));
  EXPECT_EQ(line_count(csv), 46u); // header + 15 lambdas x 3 p
  EXPECT_EQ(csv.rfind("level,h,lambda_abs,lambda_arg,p,", 0), 0u);
  const CliRun second = with_out("b");
  EXPECT_EQ(second.code, first.code);
  EXPECT_EQ(slurp(path("b.csv")), csv);
  // the configs differ only in the output prefix; the reports are identical
  EXPECT_EQ(nlohmann::json::parse(slurp(path("b.json")))["reports"], nlohmann::json::parse(slurp(path("a.json")))["reports"]);
  // replay from the saved configuration rewrites identical outputs
  fs::remove(path("a.csv"));
  const CliRun replay = run_cli({"run", "--config", path("a.json")});
  EXPECT_EQ(replay.code, first.code);
  EXPECT_EQ(replay.out, first.out);
  EXPECT_EQ(slurp(path("a.csv")), csv);
}

TEST_F(CliTest, KernelCheckPasses) {
  const CliRun r = run_cli({"scan", "kernel-check", "--dim", "3", "--points", "100", "-o", path("k")});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["reports"][0]["passed"].get<bool>());
  const CliRun e = run_cli({"scan", "kernel-check", "--dim", "6"});
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(e.out.rfind("z_abs,z_arg,remainder,status", 0), 0u);
}

TEST_F(CliTest, InstalledBinaryExitCodes) {
  const std::string bin = STOKESRES_CLI_PATH;
  const std::string ok = bin + " mesh make icosphere --subdiv 1 -o " + path("s.obj") + " > " + path("o.txt");
  const int a = std::system(ok.c_str());
  ASSERT_TRUE(WIFEXITED(a));
  EXPECT_EQ(WEXITSTATUS(a), 0);
  EXPECT_NE(slurp(path("o.txt")).find("\"n_tri\":80"), std::string::npos);
  const std::string bad = bin + " solve dirichlet --mesh " + path("s.obj") + " --lambda-re -1 > " + path("e.txt");
  const int b = std::system(bad.c_str());
  ASSERT_TRUE(WIFEXITED(b));
  EXPECT_EQ(WEXITSTATUS(b), 2);
  EXPECT_NE(slurp(path("e.txt")).find("lambda outside sector"), std::string::npos);
}
