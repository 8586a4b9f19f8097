// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cvm/cli/cli.hpp"
#include "cvm/dataio/config.hpp"
#include "cvm/dataio/manifest.hpp"
#include "cvm/metrics/metrics.hpp"
#include "cvm/mtl/pipeline.hpp"
#include "paper_tables.hpp"

using namespace cvm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "cvm_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string out, err;
};

Run cvm_main(std::vector<std::string> args) {
  args.insert(args.begin(), "cvm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

io::RunConfig small_config() {
  io::RunConfig cfg;
  cfg.model.tasks = mtl::nyu_tasks(4);
  cfg.model.head_hidden = 8;
  cfg.model.encoder.channels = {8, 8, 12, 12};
  cfg.model.cvm.encoder.block_channels = {8, 8, 16};
  cfg.model.cvm.transformer.channels = 16;
  cfg.model.cvm.transformer.heads = 2;
  cfg.model.cvm.transformer.layers = 2;
  cfg.model.cvm.transformer.window_size = 4;
  cfg.model.cvm.depth_candidates = 8;
  cfg.model.cvm.d_min = 0.8;
  cfg.model.cvm.d_max = 5;
  cfg.training.steps = 4;
  cfg.training.batch_size = 1;
  cfg.training.lr = 1e-3;
  cfg.synth.scene.width = cfg.synth.scene.height = 32;
  cfg.synth.train_scenes = 3;
  cfg.synth.test_scenes = 2;
  return cfg;
}

// Dataset plus config shared by the training tests.
fs::path small_dataset() {
  static const fs::path dir = [] {
    const auto d = scratch("dataset");
    io::save_run_config(d / "small.json", small_config());
    const auto r = cvm_main({"synth", "--config", (d / "small.json").string(), "--out", (d / "ds").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(CliSynth, SixteenScenesAreReproducible) {
  const auto dir = scratch("synth16");
  auto cfg = small_config();
  cfg.synth.train_scenes = 16;
  cfg.synth.test_scenes = 0;
  io::save_run_config(dir / "c.json", cfg);
  for (const char* out : {"a", "b"}) {
    const auto r = cvm_main({"synth", "--config", (dir / "c.json").string(), "--seed", "7", "--out", (dir / out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto m = io::read_manifest(dir / "a" / "manifest.jsonl");
  EXPECT_EQ(m.records.size(), 16u);
  EXPECT_EQ(bytes(dir / "a" / "manifest.jsonl"), bytes(dir / "b" / "manifest.jsonl"));
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(bytes(e.path()), bytes(dir / "b" / rel)) << rel;
  }
  EXPECT_EQ(io::load_run_config(dir / "a" / "config.json").synth.seed, 7u);
}

TEST(CliSynth, VideoRecordsCarryDepthOnly) {
  const auto dir = scratch("video");
  auto cfg = small_config();
  cfg.synth.train_scenes = 1;
  cfg.synth.test_scenes = 0;
  cfg.synth.video_scenes = 2;
  cfg.synth.video_frames = 4;
  io::save_run_config(dir / "c.json", cfg);
  ASSERT_EQ(cvm_main({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "ds").string()}).code, 0);
  const auto m = io::read_manifest(dir / "ds" / "manifest.jsonl");
  const auto video = m.split("video");
  ASSERT_EQ(video.size(), 2u);
  for (const auto* r : video) {
    EXPECT_EQ(r->tasks, std::vector<std::string>{"depth"});
    EXPECT_EQ(r->views.size(), 4u);
    for (const auto& v : r->views) EXPECT_EQ(v.labels.size(), 1u);
  }
}

TEST(CliSynth, RefusesNonEmptyOutputWithoutForce) {
  const auto dir = scratch("refuse");
  io::save_run_config(dir / "c.json", small_config());
  fs::create_directories(dir / "ds");
  write_text(dir / "ds" / "keep.txt", "x");
  const auto r = cvm_main({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "ds").string()});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "ds" / "manifest.jsonl"));
  EXPECT_EQ(cvm_main({"synth", "--config", (dir / "c.json").string(), "--out", (dir / "ds").string(), "--force"}).code,
            0);
}

TEST(CliReport, PaperRowsReproduceDeltaColumn) {
  const auto dir = scratch("report");
  write_text(dir / "stl.json", metrics::to_json(cvm::testing::stl()).dump());
  write_text(dir / "dinov3.json", metrics::to_json(cvm::testing::dinov3()).dump());
  const auto r = cvm_main({"report", (dir / "stl.json").string(), (dir / "dinov3.json").string(), "--baseline", "STL",
                           "--out", (dir / "table").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = bytes(dir / "table.csv");
  EXPECT_NE(csv.find("DINOv3,63.6800,0.4113,15.5300,80.1000,16.33"), std::string::npos) << csv;
  EXPECT_NE(csv.find("STL,54.1900,0.5560,19.2200,78.0900,0.00"), std::string::npos);
  const auto txt = bytes(dir / "table.txt");
  EXPECT_NE(txt.find("dMTL (%)"), std::string::npos);
  EXPECT_EQ(cvm_main({"report", (dir / "stl.json").string(), "--baseline", "nope", "--out", (dir / "t").string()}).code,
            cli::kUsage);
}

TEST(CliTrain, AblationNoCvmDropsCrossViewSlices) {
  const auto d = small_dataset();
  const auto out = scratch("nocvm");
  const auto r = cvm_main({"train", "--config", (d / "small.json").string(), "--manifest",
                           (d / "ds" / "manifest.jsonl").string(), "--out", out.string(), "--ablation", "no-cvm"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = mtl::load_model(out / "model.ckpt");
  EXPECT_EQ(m.config.model.fusion, mtl::FusionMode::NoCvm);
  EXPECT_EQ(m.config.model.fused_channels(), m.config.model.encoder.out_channels());
  const auto e = cvm_main({"eval", "--checkpoint", (out / "model.ckpt").string(), "--manifest",
                           (d / "ds" / "manifest.jsonl").string(), "--out", (out / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(fs::exists(out / "eval" / "nocvm.json"));
}

TEST(CliTrain, DepthCandidateSweepEmitsOneEvalPerSetting) {
  const auto d = small_dataset();
  const auto out = scratch("sweep");
  const auto r = cvm_main({"train", "--config", (d / "small.json").string(), "--manifest",
                           (d / "ds" / "manifest.jsonl").string(), "--out", out.string(), "--depth-candidates",
                           "96,128,256", "--steps", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> args{"eval", "--manifest", (d / "ds" / "manifest.jsonl").string(), "--out",
                                (out / "eval").string()};
  for (int l : {96, 128, 256}) {
    const auto ck = out / ("L" + std::to_string(l)) / "model.ckpt";
    EXPECT_EQ(mtl::load_model(ck).config.model.cvm.depth_candidates, l);
    args.insert(args.end(), {"--checkpoint", ck.string()});
  }
  const auto e = cvm_main(args);
  ASSERT_EQ(e.code, 0) << e.err;
  for (int l : {96, 128, 256}) EXPECT_TRUE(fs::exists(out / "eval" / ("L" + std::to_string(l) + ".json")));
}

TEST(CliTrain, InferWritesEveryTask) {
  const auto d = small_dataset();
  const auto out = scratch("infer");
  ASSERT_EQ(cvm_main({"train", "--config", (d / "small.json").string(), "--manifest",
                      (d / "ds" / "manifest.jsonl").string(), "--out", out.string()})
                .code,
            0);
  const auto r = cvm_main({"infer", "--checkpoint", (out / "model.ckpt").string(), "--image",
                           (d / "ds" / "test_0000" / "v0_image.png").string(), "--out", (out / "pred").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"segmentation.png", "depth.png", "depth.pfm", "normal.png", "boundary.png"})
    EXPECT_TRUE(fs::exists(out / "pred" / f)) << f;
}

TEST(CliExitCodes, UsageDataAndNumericFailures) {
  const auto d = small_dataset();
  EXPECT_EQ(cvm_main({"train", "--bogus"}).code, cli::kUsage);
  EXPECT_EQ(cvm_main({}).code, cli::kUsage);
  EXPECT_EQ(cvm_main({"eval", "--manifest", "/nonexistent.jsonl", "--checkpoint", "x", "--out", "y"}).code, cli::kUsage);
  EXPECT_EQ(cvm_main({"train", "--manifest", (d / "ds" / "manifest.jsonl").string(), "--out", "/tmp/x", "--ablation",
                      "half"})
                .code,
            cli::kUsage);
  for (const char* cmd : {"synth", "train", "eval", "infer", "report"}) {
    const auto r = cvm_main({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << cmd;
  }

  const auto dir = scratch("codes");
  write_text(dir / "bad.jsonl", "{\"id\": 3}\n");
  EXPECT_EQ(cvm_main({"train", "--config", (d / "small.json").string(), "--manifest", (dir / "bad.jsonl").string(),
                      "--out", (dir / "run").string()})
                .code,
            cli::kDataError);

  auto cfg = small_config();
  cfg.training.lr = 1e30;
  cfg.training.steps = 20;
  io::save_run_config(dir / "wild.json", cfg);
  const auto r = cvm_main({"train", "--config", (dir / "wild.json").string(), "--manifest",
                           (d / "ds" / "manifest.jsonl").string(), "--out", (dir / "wild").string()});
  EXPECT_EQ(r.code, cli::kNumericFailure) << r.err;
}
