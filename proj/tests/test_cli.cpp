// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"

namespace dflow {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "dflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Tiny end-to-end pipeline in `dir`, shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli_pipeline");
    const std::string d = dir_.string();
    ASSERT_EQ(run({"gen-data", "--kind", "shapes", "--samples", "120", "--seed", "1", "--out", d}).code, 0);
    ASSERT_EQ(run({"pretrain", "--data", d + "/data.dfds", "--epochs", "1", "--width", "16", "--blocks", "1",
                   "--seed", "2", "--out", d})
                  .code,
              0);
    for (const char* name : {"src", "vic"}) {
      const Result r = run({"train-classifier", "--data", d + "/data.dfds", "--name", name, "--arch", "mlp",
                            "--hidden", "16", "--epochs", "1", "--seed", name[0] == 's' ? "3" : "4", "--out", d});
      ASSERT_EQ(r.code, 0) << r.err;
    }
  }

  static fs::path dir_;
};

fs::path Pipeline::dir_;

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_NE(run({}).code, 0);
  const Result missing_seed = run({"gen-data", "--kind", "shapes"});
  EXPECT_NE(missing_seed.code, 0);
  EXPECT_NE(run({"gen-data", "--seed", "1", "--bogus", "3"}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
}

TEST(Cli, BadInputsReportErrors) {
  const auto dir = testing::scratch_dir("cli_bad");
  const Result r = run({"gen-data", "--kind", "cifar", "--seed", "1", "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, VerifyMorseWritesTable) {
  const auto dir = testing::scratch_dir("cli_morse");
  const Result r = run({"verify-morse", "--problems", "bowl", "--grid", "5", "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(testing::read_text(dir / "morse.csv")), 2u);
}

TEST_F(Pipeline, AttackThenEvalIsDeterministic) {
  const std::string d = dir_.string();
  std::vector<std::string> csvs;
  for (const char* sub : {"a", "b"}) {
    const std::string o = d + "/" + sub;
    Result r = run({"attack-train", "--data", d + "/data.dfds", "--velocity", d + "/velocity.dflw", "--classifier",
                    d + "/src.dflw", "--steps", "2", "--n_steps", "2", "--batch_size", "4", "--seed", "7", "--out", o});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"eval", "--data", d + "/data.dfds", "--attack", o + "/attack.dflw", "--victim", "src=" + d + "/src.dflw",
             "--victim", "vic=" + d + "/vic.dflw", "--source", "src", "--defense", "median:3", "--eval_images", "10",
             "--targets", "0,1", "--splits", "2", "--out", o});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("src*"), std::string::npos);
    csvs.push_back(testing::read_text(fs::path(o) / "eval.csv") + testing::read_text(fs::path(o) / "eval_ci.csv") +
                   testing::read_text(fs::path(o) / "attack_metrics.csv"));
  }
  EXPECT_EQ(csvs[0], csvs[1]);
  EXPECT_EQ(testing::read_text(fs::path(d) / "a" / "attack.dflw"),
            testing::read_text(fs::path(d) / "b" / "attack.dflw"));
}

TEST_F(Pipeline, DefenseSweepExpands) {
  const std::string d = dir_.string();
  const std::string o = d + "/sweep";
  Result r = run({"attack-train", "--data", d + "/data.dfds", "--velocity", d + "/velocity.dflw", "--classifier",
                  d + "/src.dflw", "--steps", "1", "--n_steps", "2", "--seed", "3", "--out", o});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"eval", "--data", d + "/data.dfds", "--attack", o + "/attack.dflw", "--victim", "src=" + d + "/src.dflw",
           "--source", "src", "--defense", "none", "--defense", "sweep", "--eval_images", "4", "--targets", "0", "--splits", "2",
           "--out", o});
  ASSERT_EQ(r.code, 0) << r.err;
  // header plus one row per defense for the single victim
  EXPECT_EQ(count_lines(testing::read_text(fs::path(o) / "eval_ci.csv")), 7u);
}

TEST_F(Pipeline, AblateSweepProducesOneRowPerCell) {
  const std::string d = dir_.string();
  const std::string o = d + "/ablate";
  const Result r = run({"ablate", "--data", d + "/data.dfds", "--velocity", d + "/velocity.dflw", "--classifier",
                        d + "/src.dflw", "--victim", d + "/vic.dflw", "--variants", "co,rs", "--steps", "1,2,4,8",
                        "--train-steps", "1", "--batch_size", "2", "--eval_images", "4", "--targets", "0",
                        "--seed", "5", "--out", o});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = testing::read_text(fs::path(o) / "ablate.csv");
  EXPECT_EQ(count_lines(csv), 9u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,n_steps,sample_gamma,white_box_asr,black_box_asr,updates");
}

TEST_F(Pipeline, AttackSampleDumpsImages) {
  const std::string d = dir_.string();
  const std::string o = d + "/sample";
  Result r = run({"attack-train", "--data", d + "/data.dfds", "--velocity", d + "/velocity.dflw", "--classifier",
                  d + "/src.dflw", "--steps", "1", "--n_steps", "2", "--variant", "rs", "--seed", "1", "--out", o});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"attack-sample", "--data", d + "/data.dfds", "--attack", o + "/attack.dflw", "--eval_images", "3",
           "--targets", "2", "--viz", "2", "--out", o});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(o) / "adv.dfds"));
  std::size_t pgms = 0;
  for (const auto& e : fs::directory_iterator(o)) pgms += e.path().extension() == ".pgm";
  EXPECT_EQ(pgms, 6u);
}

}  // namespace
}  // namespace dflow
