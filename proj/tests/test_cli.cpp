#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "detective/checkpoint.hpp"
#include "detective/data.hpp"

namespace detective {
namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    ASSERT_EQ(run("gen-data --output " + q(root() / "ds") + " --train 12 --val 4 --seed 3"), 0);
    ASSERT_EQ(run("train --dataset " + q(root() / "ds") + " --output " + q(root() / "run") +
                  " --epochs 2 --hidden-channels 8 --seed 2"),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }

  static fs::path root() { return fs::temp_directory_path() / "detective_cli_test"; }
  static std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

  static int run(const std::string& args, const std::string& out_name = "out") {
    const std::string cmd = std::string("\"") + DETECTIVE_CLI_PATH + "\" " + args + " >" +
                            q(root() / (out_name + ".stdout")) + " 2>" +
                            q(root() / (out_name + ".stderr"));
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
};

TEST_F(Cli, TrainWritesCheckpointsLogsAndConfigEcho) {
  for (const char* f : {"last.ckpt", "best.ckpt", "loss_log.csv", "epochs.csv", "config.json"}) {
    EXPECT_TRUE(fs::exists(root() / "run" / f)) << f;
  }
  const auto config = nlohmann::json::parse(read(root() / "run" / "config.json"));
  EXPECT_EQ(config.at("command"), "train");
  EXPECT_EQ(config.at("batch_size"), 1);
  EXPECT_EQ(config.at("adam").at("lr"), 1e-4);
  EXPECT_EQ(config.at("model").at("hidden_channels"), 8);
  EXPECT_TRUE(fs::exists(root() / "ds" / "config.json"));
}

TEST_F(Cli, EvalIsReproducibleAndQuietOnStdout) {
  const std::string args = "eval --checkpoint " + q(root() / "run" / "best.ckpt") + " --dataset " +
                           q(root() / "ds") + " --nms-threshold 0.5 --output ";
  ASSERT_EQ(run(args + q(root() / "eval_a"), "eval_a"), 0);
  ASSERT_EQ(run(args + q(root() / "eval_b"), "eval_b"), 0);
  EXPECT_EQ(read(root() / "eval_a.stdout"), "");
  for (const char* f : {"sparse.json", "sparse.txt", "sparse_categories.csv", "dense.json",
                        "comparison.json"}) {
    EXPECT_EQ(read(root() / "eval_a" / f), read(root() / "eval_b" / f)) << f;
  }
  const auto cmp = nlohmann::json::parse(read(root() / "eval_a" / "comparison.json"));
  EXPECT_TRUE(cmp.contains("sparse_map"));
  EXPECT_TRUE(cmp.contains("dense_map"));
}

TEST_F(Cli, InferPrintsZeroDetectionsWhenEosComesFirst) {
  LoadedCheckpoint ck = load_checkpoint(root() / "run" / "best.ckpt");
  Detective& model = ck.model;
  model.heads().w_cls.fill(0.0);
  model.heads().b_cls.fill(0.0);
  model.heads().b_cls[model.config().eos_index()] = 10.0;
  save_checkpoint(root() / "eos.ckpt", model, ck.metadata);
  ASSERT_EQ(run("infer --checkpoint " + q(root() / "eos.ckpt") + " --image " +
                    q(root() / "ds" / "images" / "000000.ppm") + " --output " +
                    q(root() / "infer"),
                "infer"),
            0);
  EXPECT_EQ(read(root() / "infer.stdout"), "0 detections\n");
  EXPECT_TRUE(fs::exists(root() / "infer" / "attention_01.pgm"));
  EXPECT_FALSE(fs::exists(root() / "infer" / "attention_02.pgm"));
}

TEST_F(Cli, AnalyzeWritesTables) {
  ASSERT_EQ(run("analyze --checkpoint " + q(root() / "run" / "last.ckpt") + " --dataset " +
                q(root() / "ds") + " --output " + q(root() / "analysis")),
            0);
  for (const char* f : {"analysis.json", "analysis.txt", "analysis_categories.csv",
                        "analysis_precision.csv", "analysis_counts.csv"}) {
    EXPECT_TRUE(fs::exists(root() / "analysis" / f)) << f;
  }
}

TEST_F(Cli, SelfcheckPasses) {
  EXPECT_EQ(run("selfcheck --output " + q(root() / "selfcheck"), "selfcheck"), 0);
  const std::string log = read(root() / "selfcheck.stderr");
  EXPECT_NE(log.find("max relative error"), std::string::npos);
  EXPECT_NE(log.find("6000 cases"), std::string::npos);
}

TEST_F(Cli, FailuresHaveDistinctExitCodes) {
  EXPECT_EQ(run("train --dataset x --output y --unknown-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("eval --checkpoint " + q(root() / "missing.ckpt") + " --dataset " +
                q(root() / "ds") + " --output " + q(root() / "x")),
            3);
  EXPECT_EQ(run("train --dataset " + q(root() / "nowhere") + " --output " + q(root() / "x")), 3);

  ASSERT_EQ(run("gen-data --output " + q(root() / "ds16") +
                " --train 2 --val 1 --image-size 16 --min-size 0.25"),
            0);
  EXPECT_EQ(run("eval --checkpoint " + q(root() / "run" / "best.ckpt") + " --dataset " +
                q(root() / "ds16") + " --output " + q(root() / "x")),
            4);
  std::ofstream(root() / "junk.ckpt") << "not a checkpoint\n";
  EXPECT_EQ(run("infer --checkpoint " + q(root() / "junk.ckpt") + " --image " +
                q(root() / "ds" / "images" / "000000.ppm") + " --output " + q(root() / "x")),
            4);

  std::ofstream(root() / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_EQ(run("infer --checkpoint " + q(root() / "run" / "best.ckpt") + " --image " +
                q(root() / "bad.ppm") + " --output " + q(root() / "x"), "bad"),
            5);
  const std::string err = read(root() / "bad.stderr");
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1) << err;
}

}  // namespace
}  // namespace detective
