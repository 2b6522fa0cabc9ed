#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "birdhunt/cli.hpp"

using namespace birdhunt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "birdhunt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

// Runs the installed binary through the shell; returns its exit status.
int run_binary(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(BIRDHUNT_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::string text;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) text += buf;
  const int status = pclose(p);
  if (output) *output = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("birdhunt_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path tiny_config(const fs::path& dir, const std::string& id, const std::string& mode = "RL_ONLY") {
  nlohmann::json j{{"id", id},
                   {"env", to_json(desk_env_config(Tier::Low))},
                   {"mode", mode},
                   {"hidden", 16},
                   {"budget", 600},
                   {"window", 200},
                   {"seeds", {0}},
                   {"sac", {{"learning_starts", 100}, {"batch_size", 16}}},
                   {"convergence", {{"threshold", 0.5}, {"k", 1}}},
                   {"output", "runs/" + id}};
  if (mode != "RL_ONLY") j["demos"] = {{{"oracle", {{"epsilon", 0.0}, {"episodes", 5}, {"seed", 1}}}}};
  const auto p = dir / (id + ".json");
  write_text_file(p, j.dump(2));
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"train"}).code, 2);
  EXPECT_EQ(run_cli({"fly"}).code, 2);
  EXPECT_EQ(run_cli({"record-oracle", "low", "--bogus"}).code, 2);
  EXPECT_EQ(run_cli({"record-oracle", "low", "--epsilon", "1.5", "-o", "x"}).code, 2);
  EXPECT_EQ(run_binary("--no-such-flag"), 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, RecordOracleThenValidate) {
  const auto dir = temp_dir("record");
  const auto file = (dir / "m.demo.jsonl").string();
  const auto r = run_cli({"--seed", "3", "record-oracle", "medium", "--epsilon", "0", "--episodes", "100", "-o", file});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("100 episodes"), std::string::npos);
  EXPECT_GE(summarize(load_demo(file)).mean_reward, 0.99);
  const auto v = run_cli({"demo-validate", file, "medium"});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_NE(v.out.find(": ok"), std::string::npos);

  // Wrong env and a damaged file are both exit 5 with diagnostics on stderr.
  const auto full = (fs::path(BIRDHUNT_CONFIG_DIR) / "env" / "full_medium.json").string();
  const auto w = run_cli({"demo-validate", file, full});
  EXPECT_EQ(w.code, 5);
  EXPECT_NE(w.err.find("incompatible dimensions"), std::string::npos) << w.err;
  std::string text = detail::read_file(file);
  text.resize(text.size() / 2);
  write_text_file(file, text);
  std::string out;
  EXPECT_EQ(run_binary("demo-validate " + file + " medium", &out), 5);
  EXPECT_FALSE(out.empty());
}

TEST(Cli, ErrorKindsMapToExitCodes) {
  const auto dir = temp_dir("codes");
  EXPECT_EQ(run_cli({"train", (dir / "missing.json").string()}).code, 4);
  write_text_file(dir / "bad.json", "{\"env\": {\"tier\": \"LOW\", \"width\": -3}}");
  EXPECT_EQ(run_cli({"train", (dir / "bad.json").string()}).code, 3);
  write_text_file(dir / "ck.bin", "not a checkpoint");
  EXPECT_EQ(run_cli({"eval", (dir / "ck.bin").string(), "low"}).code, 5);
  EXPECT_EQ(run_cli({"record-oracle", "low"}).code, 3);
}

TEST(Cli, TrainTwiceGivesIdenticalMetrics) {
  const auto dir = temp_dir("train");
  const auto cfg = tiny_config(dir, "tiny", "BC_AND_GAIL");
  const auto a = run_cli({"-q", "--out", (dir / "a").string(), "train", cfg.string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run_binary("-q --out " + (dir / "b").string() + " train " + cfg.string());
  ASSERT_EQ(b, 0);
  EXPECT_EQ(detail::read_file(dir / "a" / "metrics_seed0.csv"), detail::read_file(dir / "b" / "metrics_seed0.csv"));
  EXPECT_TRUE(fs::exists(dir / "a" / "report.json"));

  // The checkpoint evaluates and writes its summary.
  const auto e = run_cli({"--out", (dir / "eval.json").string(), "eval", (dir / "a" / "checkpoint_seed0.bin").string(),
                          "low", "--episodes", "20"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto j = read_json_file(dir / "eval.json");
  EXPECT_EQ(j.at("episodes"), 20);
  EXPECT_TRUE(j.at("greedy").get<bool>());
  // A LOW checkpoint cannot drive the larger 50x50 env.
  const auto full = (fs::path(BIRDHUNT_CONFIG_DIR) / "env" / "full_low.json").string();
  EXPECT_EQ(run_cli({"eval", (dir / "a" / "checkpoint_seed0.bin").string(), full}).code, 5);
}

TEST(Cli, CompareWritesTableForRuns) {
  const auto dir = temp_dir("compare");
  const auto rl = tiny_config(dir, "rl");
  const auto bc = tiny_config(dir, "bc", "BC_ONLY");
  ASSERT_EQ(run_cli({"-q", "--out", (dir / "runs" / "rl").string(), "train", rl.string()}).code, 0);
  ASSERT_EQ(run_cli({"-q", "--out", (dir / "runs" / "bc").string(), "train", bc.string()}).code, 0);
  const auto c = run_cli({"compare", (dir / "runs").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("Step Count"), std::string::npos);
  const auto csv = detail::read_file(dir / "runs" / "comparison.csv");
  EXPECT_EQ(csv.rfind("method,convergence_step,final_reward,final_entropy,seeds,threshold,k\n", 0), 0u);
  EXPECT_LT(csv.find("RL (SAC)"), csv.find("BC Only"));
  const auto strict = run_cli({"-q", "--out", (dir / "strict").string(), "compare", (dir / "runs").string(),
                               "--threshold", "5"});
  ASSERT_EQ(strict.code, 0) << strict.err;
  const auto s = detail::read_file(dir / "strict" / "comparison.csv");
  // Only the threshold is overridden; each run keeps its own k.
  EXPECT_NE(s.find("RL (SAC),No Convergence,No Convergence,No Convergence,1,5,1\n"), std::string::npos) << s;
  EXPECT_EQ(run_cli({"compare", (dir / "nothing").string()}).code, 4);
}
