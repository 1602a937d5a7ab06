// Runs the lesionnet executable as a user would and checks exit codes and files.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
};

CliResult run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "lesionnet_cli_stdout.txt";
  const std::string cmd = std::string(LESIONNET_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lesionnet_cli_" + name);
  fs::remove_all(p);
  return p;
}

// Small trained model shared by the eval tests.
class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh_dir("trained");
    const std::string d = (root_ / "data").string();
    ASSERT_EQ(run("synth --n-per-class 12 --classes 2 --side 32 --seed 3 --out-dir " + d).code, 0);
    ASSERT_EQ(run("split --data-dir " + d + " --train 0.5 --val 0.5 --test 0 --seed 1 --out-dir " +
                  (root_ / "split").string())
                  .code,
              0);
    const CliResult r = run("train --data-dir " + d + " --split-dir " + (root_ / "split").string() +
                      " --input-side 32 --classes 2 --width 0.125 --epochs 2 --batch-size 6" +
                      " --seed 5 --quiet --out-dir " + (root_ / "run").string());
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static fs::path root_;
};
fs::path TrainedModel::root_;

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("synth --classes 8 --out-dir " + fresh_dir("bad").string()).code, 2);
  const CliResult r = run("train --epochs 0 --out-dir x");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, SynthIsCompleteAndByteIdenticalOnRerun) {
  const fs::path a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  ASSERT_EQ(run("synth --n-per-class 100 --classes 3 --side 64 --seed 7 --out-dir " + a.string()).code, 0);
  ASSERT_EQ(run("synth --n-per-class 100 --classes 3 --side 64 --seed 7 --out-dir " + b.string()).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a / "images")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / "images" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 300u);
  const std::string meta = slurp(a / "metadata.csv");
  EXPECT_EQ(meta, slurp(b / "metadata.csv"));
  EXPECT_EQ(std::count(meta.begin(), meta.end(), '\n'), 301);
}

TEST(Cli, SplitWritesManifestsAndRejectsBadFractions) {
  const fs::path d = fresh_dir("split");
  ASSERT_EQ(run("synth --n-per-class 20 --classes 2 --side 16 --out-dir " + d.string()).code, 0);
  EXPECT_EQ(run("split --data-dir " + d.string() + " --train 0.6 --val 0.15 --test 0.15 --out-dir " +
                (d / "s").string())
                .code,
            2);
  const CliResult ok = run("split --data-dir " + d.string() + " --out-dir " + (d / "s").string());
  ASSERT_EQ(ok.code, 0) << ok.out;
  std::size_t lines = 0;
  for (const char* part : {"train.txt", "val.txt", "test.txt"}) {
    const std::string t = slurp(d / "s" / part);
    EXPECT_EQ(t.find('\r'), std::string::npos);
    lines += std::count(t.begin(), t.end(), '\n');
  }
  EXPECT_EQ(lines, 40u);
  EXPECT_EQ(slurp(d / "s" / "split_summary.csv").rfind("class,total,train,val,test\n", 0), 0u);
  EXPECT_EQ(run("split --metadata /nonexistent/m.csv --out-dir " + (d / "t").string()).code, 4);
}

TEST_F(TrainedModel, TrainWritesCheckpointHistoryAndManifest) {
  const fs::path run_dir = root_ / "run";
  EXPECT_TRUE(fs::exists(run_dir / "model.ckpt"));
  const std::string hist = slurp(run_dir / "history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);
  const auto m = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  EXPECT_EQ(m["config"]["epochs"], 2);
  EXPECT_EQ(m["config_sources"]["epochs"], "cli");
  EXPECT_EQ(m["config_sources"]["lr"], "default");
  EXPECT_EQ(m["train_samples"], 12);
  EXPECT_EQ(m["val_samples"], 12);
}

TEST_F(TrainedModel, EvalMatchesFinalValidationAccuracy) {
  const fs::path out = root_ / "eval";
  const CliResult r = run("eval --checkpoint " + (root_ / "run" / "model.ckpt").string() +
                    " --data-dir " + (root_ / "data").string() + " --manifest " +
                    (root_ / "split" / "val.txt").string() + " --format text,csv,svg --out-dir " +
                    out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string csv = slurp(out / "report.csv");
  EXPECT_EQ(csv.rfind("class,precision,recall,f1,support\n", 0), 0u);
  EXPECT_NE(csv.find("\nmicro,"), std::string::npos);
  EXPECT_NE(csv.find("\nweighted,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "confusion.svg"));
  EXPECT_TRUE(fs::exists(out / "report.txt"));

  const double eval_acc = std::stod(csv.substr(csv.find("accuracy,") + 9));
  std::istringstream hist(slurp(root_ / "run" / "history.csv"));
  std::string line, last;
  while (std::getline(hist, line))
    if (!line.empty()) last = line;
  const double val_acc = std::stod(last.substr(last.rfind(',') + 1));
  EXPECT_NEAR(eval_acc, val_acc, 5e-5);

  // The written confusion matrix re-renders to the same text report.
  const CliResult again = run("report --confusion " + (out / "confusion.csv").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(again.out, slurp(out / "report.txt"));
}

TEST_F(TrainedModel, ClassCountMismatchExitsWithConsistencyCode) {
  const CliResult r = run("eval --checkpoint " + (root_ / "run" / "model.ckpt").string() +
                    " --data-dir " + (root_ / "data").string() + " --classes 3");
  EXPECT_EQ(r.code, 5) << r.out;
}

TEST_F(TrainedModel, WarmStartWithConfigFile) {
  const fs::path cfg = root_ / "train.ini";
  std::ofstream(cfg) << "[train]\nepochs = 1\nbatch-size = 4\n";
  const fs::path out = root_ / "warm";
  const CliResult r = run("train --config " + cfg.string() + " --data-dir " + (root_ / "data").string() +
                    " --split-dir " + (root_ / "split").string() +
                    " --input-side 32 --classes 2 --width 0.125 --freeze 0.5 --quiet --init-from " +
                    (root_ / "run" / "model.ckpt").string() + " --out-dir " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["config"]["epochs"], 1);
  EXPECT_EQ(m["config_sources"]["epochs"], "config");
  EXPECT_EQ(m["config_sources"]["freeze"], "cli");

  std::ofstream(cfg) << "[train]\nbogus = 1\n";
  EXPECT_EQ(run("train --config " + cfg.string() + " --out-dir " + (root_ / "x").string()).code, 2);
}

TEST(Cli, OracleConfusionMatrixReport) {
  const CliResult r = run("eval --oracle-cm " LESIONNET_DATA_DIR "/ham10000_resnet_confusion.csv");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("Accuracy: 0.9051 (3004 samples)"), std::string::npos) << r.out;
  const CliResult csv = run("report --confusion " LESIONNET_DATA_DIR
                      "/ham10000_resnet_confusion.csv --format csv");
  EXPECT_NE(csv.out.find("accuracy,0.9051"), std::string::npos) << csv.out;
  EXPECT_EQ(run("report --confusion /nonexistent.csv").code, 4);
  EXPECT_EQ(run("report --confusion x.csv --format pdf").code, 2);
}
