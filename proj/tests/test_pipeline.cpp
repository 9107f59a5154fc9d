#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "capsdbn/pipeline.hpp"

namespace capsdbn {
namespace {

namespace fs = std::filesystem;
namespace pl = pipeline;

const char* kSmallConfig = R"(seed = 5
synth.per_category = 10
synth.extent = 16
augment.multiplier = 2
caps.conv_kernel = 5
caps.primary_kernel = 4
caps.primary_stride = 2
early_stop.max_epochs = 3
dbn.layers = 2
dbn.l1.visible_extent = 16
dbn.l1.visible_channels = 3
dbn.l1.groups = 4
dbn.l1.filter_extent = 5
dbn.l1.pool_window = 2
dbn.l2.visible_extent = 6
dbn.l2.visible_channels = 4
dbn.l2.groups = 4
dbn.l2.filter_extent = 3
dbn.l2.pool_window = 2
dbn.epochs_per_layer = 1
fusion.epochs = 5
)";

struct CliResult {
  int status = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "capsdbn_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "small.cfg") << kSmallConfig;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static CliResult run(const std::string& args) {
    const fs::path err = root_ / "stderr.txt";
    const std::string cmd = std::string(CAPSDBN_CLI_PATH) + " " + args + " > " + (root_ / "stdout.txt").string() +
                            " 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
  }
  static std::string slurp(const fs::path& p) { return io::read_file(p); }

  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, FullPipelineIsDeterministic) {
  const std::string cfg = " --config " + (root_ / "small.cfg").string();
  const fs::path d = root_ / "run";
  ASSERT_EQ(run("synth --out " + (d / "data").string() + cfg).status, 0);
  ASSERT_EQ(run("preprocess --manifest " + (d / "data" / "manifest.csv").string() + " --out " +
                (d / "archive").string() + cfg)
                .status,
            0);
  const std::string archive = " --archive " + (d / "archive").string();
  ASSERT_EQ(run("pretrain-dbn" + archive + " --out " + (d / "dbn").string() + cfg).status, 0);
  ASSERT_EQ(run("train-caps" + archive + " --out " + (d / "caps").string() + cfg).status, 0);
  const std::string models = " --caps " + (d / "caps" / "caps.cblf").string() + " --dbn " +
                             (d / "dbn" / "dbn.cblf").string();
  ASSERT_EQ(run("train-fusion" + archive + models + " --out " + (d / "fusion").string() + cfg).status, 0);
  const std::string all = models + " --fusion " + (d / "fusion" / "fusion.cblf").string();
  ASSERT_EQ(run("evaluate" + archive + all + " --out " + (d / "eval1").string()).status, 0);
  ASSERT_EQ(run("evaluate" + archive + all + " --out " + (d / "eval2").string()).status, 0);

  for (const char* f : {"metrics.csv", "confusion.csv", "referral.csv", "auc.csv"})
    EXPECT_EQ(slurp(d / "eval1" / f), slurp(d / "eval2" / f)) << f;
  EXPECT_EQ(slurp(d / "eval1" / "metrics.csv").substr(0, 35), "category,precision,recall,f1,suppor");
  EXPECT_TRUE(fs::exists(d / "dbn" / "dbn_errors.csv"));
  EXPECT_TRUE(fs::exists(d / "caps" / "curves.csv"));

  // Retraining the capsule stage reproduces the curves exactly.
  ASSERT_EQ(run("train-caps" + archive + " --out " + (d / "caps_again").string() + cfg).status, 0);
  EXPECT_EQ(slurp(d / "caps" / "curves.csv"), slurp(d / "caps_again" / "curves.csv"));
  EXPECT_EQ(slurp(d / "caps" / "caps.cblf"), slurp(d / "caps_again" / "caps.cblf"));

  ASSERT_EQ(run("predict" + all + " " + (d / "data" / "images" / "c4_00000.png").string()).status, 0);
  const std::string out = slurp(root_ / "stdout.txt");
  EXPECT_EQ(out.rfind("path,category,probabilities,referral\n", 0), 0u);
  EXPECT_NE(out.find("c4_00000.png,"), std::string::npos);
}

TEST_F(Cli, ErrorsAreSingleLineWithKindedExitCodes) {
  CliResult r = run("preprocess --manifest " + (root_ / "none.csv").string() + " --out " + (root_ / "x").string());
  EXPECT_EQ(r.status, 3);
  EXPECT_EQ(r.err.rfind("error kind=io message=\"", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  std::ofstream(root_ / "bad.cfg") << "dbn.l1.pool_window = 3\n";
  r = run("synth --out " + (root_ / "x").string() + " --config " + (root_ / "bad.cfg").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("dbn.l1.pool_window"), std::string::npos);

  EXPECT_EQ(run("no-such-command").status, 4);
  EXPECT_EQ(run("train-caps --out x").status, 4);

  io::Checkpoint ck;
  ck.add_text("kind", "capsnet");
  std::string bytes = ck.serialize();
  bytes[4] = 9;
  io::write_atomic(root_ / "old.cblf", bytes);
  r = run("predict --caps " + (root_ / "old.cblf").string() + " --dbn x --fusion y z.png");
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("version mismatch"), std::string::npos);
}

TEST(Reports, PerfectOracleGivesUnitMetrics) {
  const fs::path dir = fs::temp_directory_path() / "capsdbn_perfect_reports";
  fs::remove_all(dir);
  const std::vector<std::size_t> truths{0, 1, 2, 3, 4, 4, 3, 2, 1, 0};
  const pl::EvaluationReport r = pl::evaluate_predictions(truths, truths, 5, ReferralPolicy{});
  pl::write_reports(dir, r, default_category_names(), false);
  std::istringstream metrics(io::read_file(dir / "metrics.csv"));
  std::string line;
  std::getline(metrics, line);
  std::size_t rows = 0;
  while (std::getline(metrics, line)) {
    EXPECT_NE(line.find(",1.000000,1.000000,1.000000,2"), std::string::npos) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 5u);
  EXPECT_EQ(io::read_file(dir / "referral.csv"), "precision,recall,f1,support\n1.000000,1.000000,1.000000,4\n");
  fs::remove_all(dir);
}

TEST(Split, StratifiedCounts) {
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < 5; ++k)
    for (int i = 0; i < 120; ++i) labels.push_back(k);
  const pl::SplitIndices s = pl::stratified_split(labels, 5, 100.0 / 120.0, RandomStream(1));
  EXPECT_EQ(s.train.size(), 500u);
  EXPECT_EQ(s.val.size(), 100u);
  std::vector<std::size_t> per(5, 0);
  for (std::size_t i : s.val) ++per[labels[i]];
  for (std::size_t n : per) EXPECT_EQ(n, 20u);
}

}  // namespace
}  // namespace capsdbn
