#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "koopguide/dataset.hpp"
#include "test_util.hpp"

using namespace koopguide;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun cli(const std::string& args, const std::filesystem::path& dir) {
  const std::string cmd = std::string(KOOPGUIDE_CLI) + " " + args + " > " +
                          (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "stdout.txt");
  r.err = slurp(dir / "stderr.txt");
  return r;
}

std::string config_flag() {
  return "--config " + (test::config_dir() / "default.json").string();
}

}  // namespace

TEST(Cli, GenDataWritesRequestedTrajectories) {
  const auto dir = test::scratch_dir("cli");
  const CliRun r = cli("gen-data " + config_flag() + " --out-dir " + dir.string() +
                        " --n 10 --s 30 --seed 7",
                    dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["trajectories"], 10);
  EXPECT_EQ(j["tuples"], 300);
  const InteractionDataset d = load_dataset(dir / "dataset.jsonl");
  EXPECT_EQ(d.trajectories.size(), 10u);
  EXPECT_EQ(d.meta.seed, 7u);
}

TEST(Cli, UnknownMethodIsUsageError) {
  const auto dir = test::scratch_dir("cli");
  const CliRun r = cli("train " + config_flag() + " --out-dir " + dir.string() + " --method lstm", dir);
  EXPECT_EQ(r.code, 1);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["exit_code"], 1);
  EXPECT_EQ(j["error"], "usage");
}

TEST(Cli, StartInsideObstacleIsValidationError) {
  const auto dir = test::scratch_dir("cli");
  const CliRun r = cli("plan " + config_flag() + " --out-dir " + dir.string() +
                        " --planner foc --start 3.8,4.6",
                    dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not strictly safe"), std::string::npos) << r.err;
}

TEST(Cli, MissingModelIsNamed) {
  const auto dir = test::scratch_dir("cli");
  const auto model = dir / "absent_model.json";
  const CliRun r = cli("plan " + config_flag() + " --out-dir " + dir.string() +
                        " --planner koopman --model " + model.string(),
                    dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent_model.json"), std::string::npos) << r.err;
}

TEST(Cli, MalformedStartIsUsageError) {
  const auto dir = test::scratch_dir("cli");
  const CliRun r = cli("plan " + config_flag() + " --out-dir " + dir.string() +
                        " --planner foc --start 1,two",
                    dir);
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, MissingEnvironmentIsUsageError) {
  const auto dir = test::scratch_dir("cli");
  std::ofstream(dir / "noenv.json") << "{\"leader\": {\"horizon\": 5}}";
  const CliRun r = cli("gen-data --config " + (dir / "noenv.json").string() + " --out-dir " +
                        dir.string() + " --n 1 --s 1",
                    dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--env"), std::string::npos) << r.err;
}

TEST(Cli, EnvFlagSuppliesEnvironment) {
  const auto dir = test::scratch_dir("cli");
  std::ofstream(dir / "noenv.json") << "{}";
  const CliRun r = cli("gen-data --config " + (dir / "noenv.json").string() + " --env " +
                        (test::config_dir() / "env_default.json").string() + " --out-dir " +
                        dir.string() + " --n 2 --s 3",
                    dir);
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, HelpOnEverySubcommand) {
  const auto dir = test::scratch_dir("cli");
  for (const char* sub : {"gen-data", "train", "plan", "eval"}) {
    const CliRun r = cli(std::string(sub) + " --help", dir);
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--out-dir"), std::string::npos) << sub;
  }
  EXPECT_EQ(cli("--help", dir).code, 0);
  EXPECT_EQ(cli("", dir).code, 1);
}

TEST(Cli, TrainAndPlanPipeline) {
  const auto dir = test::scratch_dir("cli");
  const std::string common = config_flag() + " --out-dir " + dir.string();
  ASSERT_EQ(cli("gen-data " + common + " --n 10 --s 8 --seed 1", dir).code, 0);
  for (const char* m : {"koopman", "nn", "dmd"}) {
    const CliRun r = cli("train " + common + " --method " + m + " --epochs 2 --embed-dim 4", dir);
    ASSERT_EQ(r.code, 0) << m << ": " << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / (std::string(m) + ".json"))) << m;
  }
  const CliRun p = cli("plan " + common + " --planner dmd --max-steps 2", dir);
  ASSERT_EQ(p.code, 0) << p.err;
  const auto j = nlohmann::json::parse(p.out);
  EXPECT_EQ(j["steps"], 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "episode_dmd.jsonl"));
}
