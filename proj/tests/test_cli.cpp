#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(HGD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hgd_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& json) {
  const auto path = dir / "config.json";
  std::ofstream(path) << json;
  return path;
}

TEST(Cli, GradcheckExitCodes) {
  EXPECT_EQ(run("gradcheck"), 0);
  EXPECT_EQ(run("gradcheck --corrupt-backward"), 1);
  const auto dir = scratch("gc");
  EXPECT_EQ(run("gradcheck --config " + write_config(dir, R"({"precision": "f32"})").string()), 2);
}

TEST(Cli, CostExitCodes) {
  EXPECT_EQ(run("cost resnet101 --input 512"), 0);
  EXPECT_EQ(run("cost hgd-fpn --k 3 --format text"), 0);
  EXPECT_EQ(run("cost no-such-net"), 2);
  EXPECT_EQ(run("cost resnet101 --input 5x"), 2);
  EXPECT_EQ(run("cost resnet101 --input 100"), 2);
  EXPECT_EQ(run("cost resnet101 --format xml"), 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("demo-seg"), 2);
  EXPECT_EQ(run("dump --tensor /nonexistent/file.hgdt"), 2);
  const auto dir = scratch("bad");
  EXPECT_EQ(run("demo-seg --out " + dir.string() + " --config " +
                write_config(dir, R"({"hgd": {"bogus": 1}})").string()),
            2);
}

TEST(Cli, SegDemoWritesArtifacts) {
  const auto dir = scratch("seg");
  const auto config = write_config(dir, R"({"seed": 2, "input_size": 32, "num_classes": 3,
      "samples": 4, "backbone": {"channels": [4, 4, 8, 8]},
      "hgd": {"n": 3, "codeword_dim": 4, "compressed": 2, "guidance": 4},
      "train": {"base_lr": 0.01, "max_iter": 5, "batch": 2}, "precision": "f32"})");
  const auto out = dir / "out";
  ASSERT_EQ(run("demo-seg --config " + config.string() + " --out " + out.string()), 0);
  for (const char* f : {"train_log.csv", "metrics.json", "config.json", "checkpoint/manifest.json",
                        "weighting_000.pgm", "weighting_002.pgm"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream in(out / "metrics.json");
  const auto metrics = nlohmann::json::parse(in);
  EXPECT_EQ(metrics["iterations"], 5);
  EXPECT_GE(metrics["pixAcc"].get<double>(), 0.0);
  EXPECT_EQ(run("dump --tensor " + (out / "checkpoint" / "classifier.weight.hgdt").string()), 0);
}

TEST(Cli, FpnDemoWritesPyramids) {
  const auto dir = scratch("fpn");
  const auto config = write_config(dir, R"({"task": "fpn", "input_size": 64,
      "fpn": {"n": 3, "c": 4, "k": 2, "channels": 4}})");
  const auto out = dir / "out";
  ASSERT_EQ(run("demo-fpn --config " + config.string() + " --out " + out.string()), 0);
  for (const char* f : {"input/manifest.json", "output/manifest.json", "summary.json",
                        "weighting_000.pgm"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream in(out / "output" / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  EXPECT_EQ(manifest["levels"].size(), 5u);
  EXPECT_EQ(manifest["levels"][0]["stride"], 8);
}

}  // namespace
