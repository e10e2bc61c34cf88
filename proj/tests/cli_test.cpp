#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "selfdepth_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Runs the CLI inside the work directory; returns its exit status and output.
int run(const std::string& args, std::string* output = nullptr) {
  fs::path log = work() / "last_output.txt";
  std::string cmd = "cd '" + work().string() + "' && '" SELFDEPTH_CLI "' " + args + " > '" +
                    log.string() + "' 2>&1";
  int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST(Cli, HelpListsDefaultsAndExitsZero) {
  for (const char* sub : {"synth", "train", "infer", "eval", "gradcheck", "ablate"}) {
    std::string out;
    EXPECT_EQ(run(std::string(sub) + " --help", &out), 0) << sub;
    EXPECT_NE(out.find("--"), std::string::npos) << sub;
  }
  std::string out;
  run("train --help", &out);
  EXPECT_NE(out.find("--epochs UINT [20]"), std::string::npos) << out;
  EXPECT_NE(out.find("--threads UINT [1]"), std::string::npos) << out;
}

TEST(Cli, UsageErrorsExitOne) {
  std::string out;
  EXPECT_EQ(run("train --data d --bogus 3", &out), 1);
  EXPECT_EQ(run("frobnicate", &out), 1);
  EXPECT_EQ(run("train --data no_such_dir", &out), 1);
  EXPECT_NE(out.find("--data"), std::string::npos) << out;
  std::ofstream(work() / "bad.cfg") << "epochs=2\nlambda9=1\n";
  fs::create_directories(work() / "empty");
  EXPECT_EQ(run("train --data empty --config bad.cfg", &out), 1);
  EXPECT_NE(out.find("lambda9"), std::string::npos) << out;
  EXPECT_EQ(run("synth --out x --resolution 96by64", &out), 1);
  EXPECT_NE(out.find("--resolution"), std::string::npos) << out;
  EXPECT_EQ(run("train --data empty --losses reproj,glitter", &out), 1);
  EXPECT_NE(out.find("glitter"), std::string::npos) << out;
}

TEST(Cli, SynthTrainInferEvalPipeline) {
  ASSERT_EQ(run("synth --scene plane --frames 12 --resolution 64x32 --out d"), 0);
  ASSERT_TRUE(fs::exists(work() / "d" / "frame_000011.png"));
  std::string out;
  ASSERT_EQ(run("train --data d --epochs 2 --out r", &out), 0) << out;
  EXPECT_EQ(out.rfind("# train resolved configuration", 0), 0u) << out;
  EXPECT_TRUE(fs::exists(work() / "r" / "model.sdck"));
  EXPECT_TRUE(fs::exists(work() / "r" / "checkpoint_epoch_0002.sdck"));
  std::string log = slurp(work() / "r" / "train_log.tsv");
  EXPECT_EQ(count_lines(log), 3u) << log;  // header + one step in each of two epochs
  EXPECT_NE(log.find("\n1\t"), std::string::npos);

  // Identical inputs and seed give identical artifacts.
  ASSERT_EQ(run("train --data d --epochs 2 --out r2"), 0);
  for (const char* f : {"model.sdck", "checkpoint_epoch_0001.sdck", "train_log.tsv"}) {
    EXPECT_EQ(slurp(work() / "r" / f), slurp(work() / "r2" / f)) << f;
  }

  ASSERT_EQ(run("infer --checkpoint r/model.sdck --image d/frame_000004.png --ref d --out p", &out),
            0) << out;
  EXPECT_TRUE(fs::exists(work() / "p" / "sigmoid_000004.bin"));
  EXPECT_TRUE(fs::exists(work() / "p" / "depth_000004.bin"));
  EXPECT_EQ(run("infer --checkpoint r/model.sdck --image d/frame_000004.png --out q"), 1);
  ASSERT_EQ(run("eval --pred p --data d --out e", &out), 0) << out;
  std::string csv = slurp(work() / "e" / "report.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,abs_rel,sq_rel,rmse,d1.25,d1.15,d1.05,pixels");
  std::string row = csv.substr(csv.find('\n') + 1);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7) << row;
  EXPECT_EQ(row.find("nan"), std::string::npos) << row;
  EXPECT_TRUE(fs::exists(work() / "e" / "report.txt"));

  ASSERT_EQ(run("eval --pred p --data d --out e2 --align minmax --threshold 1.25 --threshold 1.1",
                &out), 0) << out;
  EXPECT_NE(out.find("d<1.1 "), std::string::npos) << out;
  EXPECT_EQ(run("eval --pred p --data d --align sideways"), 1);
}

TEST(Cli, ResumeContinuesTheRun) {
  ASSERT_EQ(run("synth --scene plane --frames 6 --resolution 32x16 --out d6"), 0);
  ASSERT_EQ(run("train --data d6 --epochs 3 --batch 2 --out full"), 0);
  ASSERT_EQ(run("train --data d6 --epochs 3 --batch 2 --out part --max-steps 3"), 0);
  std::string out;
  ASSERT_EQ(run("train --data d6 --out part --resume part/model.sdck", &out), 0) << out;
  EXPECT_EQ(slurp(work() / "full" / "model.sdck"), slurp(work() / "part" / "model.sdck"));
  EXPECT_EQ(slurp(work() / "full" / "train_log.tsv"), slurp(work() / "part" / "train_log.tsv"));
}

TEST(Cli, GradcheckSize8ExitsZero) {
  std::string out;
  EXPECT_EQ(run("gradcheck --size 8", &out), 0) << out;
  EXPECT_NE(out.find("max relative discrepancy"), std::string::npos);
  EXPECT_NE(out.find("full loss 8x8"), std::string::npos);
}
