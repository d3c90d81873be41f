#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(GOALNCA_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.output += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& work_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / "goalnca_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

const std::string kTiny = std::string("--preset locomotion-desk --data-dir ") + GOALNCA_DATA_DIR +
                          " --set grid_size=16 --set content_size=8 --set batch_size=2 --set pool_size=4"
                          " --set min_steps=4 --set max_steps=8 --set n_hidden=4 --checkpoint-every 2";

// Trains the tiny locomotion model once and returns its checkpoint.
const fs::path& tiny_checkpoint() {
  static const fs::path ck = [] {
    const auto out = work_dir() / "tiny_a";
    const auto r = run("train " + kTiny + " --iters 3 --seed 1 --out " + out.string());
    EXPECT_EQ(r.code, 0) << r.output;
    return out / "final.gnca";
  }();
  return ck;
}

}  // namespace

TEST(Cli, MissingCheckpointNamesPath) {
  const auto r = run("eval --ckpt missing.gnca --out " + (work_dir() / "e0").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("missing.gnca"), std::string::npos) << r.output;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("train --bogus-flag").code, 1);
  EXPECT_EQ(run("eval").code, 1);
  const auto r = run("train --preset nope --out " + (work_dir() / "u").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("nope"), std::string::npos);
}

TEST(Cli, TrainingIsDeterministic) {
  const auto& a = tiny_checkpoint();
  const auto out_b = work_dir() / "tiny_b";
  const auto r = run("train " + kTiny + " --iters 3 --seed 1 --out " + out_b.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(a), slurp(out_b / "final.gnca"));
  EXPECT_TRUE(fs::exists(out_b / "ckpt_2.gnca"));
  EXPECT_TRUE(fs::exists(out_b / "config.txt"));
  std::ifstream log(out_b / "train.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["segment_losses"].size(), 4u);
  }
  EXPECT_EQ(lines, 3);
}

TEST(Cli, EnvironmentThreadsFallback) {
  const auto out = work_dir() / "tiny_env";
  const auto r = run("train " + kTiny + " --iters 3 --seed 1 --out " + out.string() + " && GOALNCA_THREADS=0 " +
                     GOALNCA_CLI + " train " + kTiny + " --iters 1 --out " + (work_dir() / "bad_env").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("GOALNCA_THREADS"), std::string::npos) << r.output;
  // Thread count does not change the result.
  const auto out2 = work_dir() / "tiny_env2";
  const std::string cmd = "train " + kTiny + " --iters 3 --seed 1 --threads 2 --out " + out2.string();
  ASSERT_EQ(run(cmd).code, 0);
  EXPECT_EQ(slurp(tiny_checkpoint()), slurp(out2 / "final.gnca"));
}

TEST(Cli, InitFromMismatchedCheckpoint) {
  const auto r = run("train " + kTiny + " --set n_hidden=6 --iters 1 --init " + tiny_checkpoint().string() +
                     " --out " + (work_dir() / "mm").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("C=8"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("C=10"), std::string::npos) << r.output;
}

TEST(Cli, SweepWritesOneRowPerDirection) {
  const auto out = work_dir() / "sweep";
  const auto r = run("sweep --ckpt " + tiny_checkpoint().string() +
                     " --rates 1.0 --grid 24 --grow 8 --move 8 --settle 8 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(out / "sweep.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("fire_rate,", 0), 0u);
  for (const char* d : {"right", "up", "left", "down"}) {
    EXPECT_EQ(std::count_if(lines.begin(), lines.end(),
                            [&](const std::string& l) { return l.find(std::string(",") + d + ",") != std::string::npos; }),
              1);
  }
}

TEST(Cli, EvalRenderPca) {
  const auto out = work_dir() / "eval";
  auto r = run("eval --ckpt " + tiny_checkpoint().string() + " --goal right --steps 8 --grid 20 --frame-every 4 --out " +
               out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  EXPECT_TRUE(fs::exists(out / "frame_000000.png"));
  EXPECT_TRUE(fs::exists(out / "frame_000008.png"));

  r = run("eval --ckpt " + tiny_checkpoint().string() + " --goal sideways --out " + out.string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("sideways"), std::string::npos);

  r = run("render --ckpt " + tiny_checkpoint().string() + " --phase stay:4 --phase up:4 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "render.png"));

  r = run("pca --ckpt " + tiny_checkpoint().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(out / "pca.json"));
  EXPECT_EQ(j["goals"].size(), 5u);
  EXPECT_EQ(j["goals"][4]["goal"], "right");
}
