#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;

  std::vector<json> lines() const {
    std::vector<json> v;
    std::istringstream in(out);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) v.push_back(json::parse(line));
    return v;
  }
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("lsf_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static std::string write(const std::string& name, const std::string& text) {
    std::ofstream(path(name)) << text;
    return path(name);
  }

  static Result run(const std::string& args) {
    const std::string err = path("stderr.txt");
    const std::string cmd = std::string(LSF_CLI_PATH) + " " + args + " 2>" + err;
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
  }

  static std::string small_config() {
    return write("small.json", R"({
      "model": {"n_enc": 1, "n_dec": 1, "d_model": 16, "n_heads": 2, "d_ff": 24, "vocab": 12, "max_len": 8},
      "train": {"steps": 6, "batch_tokens": 48, "warmup_steps": 2, "log_every": 2},
      "data": {"task": "copy", "train_size": 48, "eval_size": 8}
    })");
  }

  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, PlanAttentionBackwardSmall) {
  const auto r = run("plan --attn-bwd 1 4 2 1 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = r.lines().at(0);
  EXPECT_EQ(j["peak"], 48);
  EXPECT_EQ(j["naive_peak"], 76);
  EXPECT_EQ(j["safe"], true);
  EXPECT_EQ(j["blocks"].size(), 4u);
}

TEST_F(Cli, PlanAttentionBackwardLarge) {
  const auto r = run("plan --attn-bwd 8 256 32 4 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = r.lines().at(0);
  EXPECT_EQ(j["peak"], 393216);
  EXPECT_EQ(j["naive_peak"], 622592);
}

TEST_F(Cli, PlanLifetimeFile) {
  const auto f = write("two.json", R"([{"id": 0, "size": 10, "first": 0, "last": 1},
                                       {"id": 1, "size": 6, "first": 2, "last": 3, "label": "b"}])");
  const auto r = run("plan " + f + " --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = r.lines().at(0);
  EXPECT_EQ(j["blocks"].size(), 1u);
  EXPECT_EQ(j["peak"], 10);

  const auto diagram = run("plan " + f);
  EXPECT_EQ(diagram.code, 0);
  EXPECT_NE(diagram.out.find("peak"), std::string::npos);
}

TEST_F(Cli, PlanRejectsMalformedInput) {
  EXPECT_EQ(run("plan " + write("bad.json", R"([{"id": 0, "size": -3, "first": 0, "last": 1}])")).code, 1);
  EXPECT_EQ(run("plan " + write("notjson.json", "[{")).code, 1);
  EXPECT_EQ(run("plan " + write("dup.json", R"([{"id": 0, "size": 1, "first": 0, "last": 1},
                                                {"id": 0, "size": 1, "first": 2, "last": 3}])"))
                .code,
            1);
  EXPECT_EQ(run("plan --attn-bwd 0 4 2 1").code, 1);
  EXPECT_EQ(run("plan").code, 1);
}

TEST_F(Cli, GradcheckPassesAndReportsEveryOp) {
  const auto r = run("gradcheck --instances 5 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = r.lines();
  ASSERT_EQ(lines.size(), 8u);
  for (const auto& j : lines) EXPECT_TRUE(j["pass"].get<bool>()) << j.dump();
  EXPECT_EQ(lines.back()["op"], "model");
  EXPECT_LE(lines.back()["max_rel_error"].get<double>(), 1e-4);
}

TEST_F(Cli, GradcheckFaultInjectionExitsFourNamingTheOp) {
  const auto r = run("gradcheck --instances 3 --inject-fault layernorm_backward --json");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("layernorm_backward"), std::string::npos) << r.err;
  for (const auto& j : r.lines()) EXPECT_EQ(j["pass"].get<bool>(), j["op"] != "layernorm_backward") << j.dump();
}

TEST_F(Cli, TrainDryRunEchoesConfigAndCapacity) {
  const auto r = run("train --config " + small_config() + " --steps 0 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = r.lines().at(0);
  EXPECT_EQ(j["kind"], "config");
  EXPECT_GT(j["arena_capacity"].get<std::size_t>(), 0u);
  EXPECT_EQ(j["config"]["model"]["d_model"], 16);
}

TEST_F(Cli, TrainLogsAreReproducibleBySeedAndThreads) {
  const auto cfg = small_config();
  const auto a = run("train --config " + cfg + " --seed 9 --json --no-timing");
  const auto b = run("train --config " + cfg + " --seed 9 --json --no-timing");
  const auto c = run("train --config " + cfg + " --seed 9 --threads 3 --json --no-timing");
  const auto d = run("train --config " + cfg + " --seed 10 --json --no-timing");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out, c.out);
  EXPECT_NE(a.out, d.out);
  const auto lines = a.lines();
  ASSERT_EQ(lines.size(), 4u);  // steps 2, 4, 6 and the eval line
  EXPECT_EQ(lines[0]["step"], 2);
  EXPECT_EQ(lines.back()["kind"], "eval");
  EXPECT_EQ(lines.back()["reallocations"], 0);
}

TEST_F(Cli, TrainErrorsUseDistinctExitCodes) {
  EXPECT_EQ(run("train --config " + write("unknown.json", R"({"train": {"speed": 1}})") + " --steps 0").code, 1);
  EXPECT_EQ(run("train --config /nonexistent.json --steps 0").code, 1);
  const auto missing = write("file.json", R"({"data": {"task": "file", "path": "/nonexistent/tokens.txt"}})");
  EXPECT_EQ(run("train --config " + missing + " --steps 0").code, 2);
  EXPECT_EQ(run("train --bogus-flag").code, 1);
}

TEST_F(Cli, CheckpointResumeAndExport) {
  const auto cfg = small_config();
  const auto ck = path("run.lsf");
  const auto full = run("train --config " + cfg + " --json --no-timing --checkpoint " + ck);
  ASSERT_EQ(full.code, 0) << full.err;

  const auto ex = run("export " + ck);
  ASSERT_EQ(ex.code, 0) << ex.err;
  const auto j = ex.lines().at(0);
  EXPECT_EQ(j["format"], "LSF2");
  EXPECT_EQ(j["step"], 6);
  ASSERT_FALSE(j["records"].empty());
  EXPECT_EQ(j["records"][0]["dtype"], "binary16");
  std::size_t params = 0;
  for (const auto& rec : j["records"])
    if (rec["name"].get<std::string>().rfind("param/", 0) == 0) params += rec["numel"].get<std::size_t>();
  EXPECT_EQ(j["parameters"], params);

  // resuming at the end reproduces the final evaluation
  const auto again = run("train --config " + cfg + " --json --no-timing --resume " + ck);
  ASSERT_EQ(again.code, 0) << again.err;
  const auto e0 = full.lines().back(), e1 = again.lines().back();
  for (const char* k : {"step", "loss", "accuracy", "tokens"}) EXPECT_EQ(e1[k], e0[k]) << k;

  EXPECT_EQ(run("export " + write("junk.lsf", "not a checkpoint")).code, 2);
}

TEST_F(Cli, BenchReportsParity) {
  const auto r = run("bench --rows 32 --width 16 --runs 1 --json");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = r.lines();
  EXPECT_EQ(lines.size(), 9u);
  for (const auto& j : lines) EXPECT_TRUE(j["parity_ok"].get<bool>()) << j.dump();
}
