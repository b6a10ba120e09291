// Copyright 2026 The Relume Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Runs the relume binary end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "relume/dataset.hpp"
#include "relume/enhancer.hpp"
#include "relume/image_io.hpp"
#include "relume/io.hpp"
#include "relume/model_store.hpp"

namespace relume {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("relume_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(root_);
    ASSERT_EQ(run("synth --count 8 --size 32 --seed 1 --out " + q(root_ / "train") + " --clean-out " +
                  q(root_ / "train_clean"))
                  .code,
              0);
    ASSERT_EQ(run("synth --count 4 --size 32 --seed 1 --stream val --out " + q(root_ / "val")).code, 0);
    search_ = run("search --train-dir " + q(root_ / "train") + " --val-dir " + q(root_ / "val") +
                  " --epochs 6 --seed 3 --out " + q(root_ / "a.ckpt"));
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

  static Invocation run(const std::string& args) {
    const fs::path out = root_ / "stdout.txt";
    const std::string cmd = std::string(RELUME_CLI_PATH) + " " + args + " > " + q(out) + " 2>&1";
    const int status = std::system(cmd.c_str());
    Invocation r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = fs::exists(out) ? read_file(out) : "";
    return r;
  }

  static fs::path root_;
  static Invocation search_;
};

fs::path Cli::root_;
Invocation Cli::search_;

TEST_F(Cli, MissingRequiredFlagIsUsageError) {
  const Invocation r = run("search --val-dir " + q(root_ / "val") + " --out " + q(root_ / "x.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--train-dir"), std::string::npos) << r.out;
}

TEST_F(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run("").code, 2); }

TEST_F(Cli, HelpSucceeds) { EXPECT_EQ(run("--help").code, 0); }

TEST_F(Cli, SearchWritesCheckpointIrAndLog) {
  ASSERT_EQ(search_.code, 0) << search_.out;
  const SupernetState s = load_checkpoint(root_ / "a.ckpt");
  EXPECT_TRUE(s.frozen.frozen(Tier::Width) && s.frozen.frozen(Tier::Depth) && s.frozen.frozen(Tier::Cell));
  const BlockFile f = load_block(root_ / "a.ckpt.ir");
  EXPECT_NO_THROW(validate(f.block));
  const std::string log = read_file(root_ / "a.ckpt.search.csv");
  EXPECT_EQ(log.rfind("stage,step,train_loss,val_loss\n", 0), 0u);
  // Six epochs of four batches each.
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1 + 6 * 4);
}

TEST_F(Cli, SameSeedGivesIdenticalFiles) {
  ASSERT_EQ(search_.code, 0);
  ASSERT_EQ(run("search --train-dir " + q(root_ / "train") + " --val-dir " + q(root_ / "val") +
                " --epochs 6 --seed 3 --out " + q(root_ / "b.ckpt"))
                .code,
            0);
  EXPECT_EQ(read_file(root_ / "a.ckpt.ir"), read_file(root_ / "b.ckpt.ir"));
  EXPECT_EQ(read_file(root_ / "a.ckpt"), read_file(root_ / "b.ckpt"));
}

TEST_F(Cli, TrainZeroEpochsEqualsMergedIr) {
  ASSERT_EQ(search_.code, 0);
  ASSERT_EQ(run("train --ir " + q(root_ / "a.ckpt.ir") + " --train-dir " + q(root_ / "train") +
                " --epochs 0 --out " + q(root_ / "zero.model"))
                .code,
            0);
  const BlockFile f = load_block(root_ / "a.ckpt.ir");
  EXPECT_EQ(load_model(root_ / "zero.model"), merge_model(f.block, f.head));
  EXPECT_EQ(read_file(root_ / "zero.model.train.csv"), "step,L_fid,L_smooth,L_total\n");
}

TEST_F(Cli, TrainLogsOneRowPerStep) {
  ASSERT_EQ(search_.code, 0);
  const Invocation r = run("train --ir " + q(root_ / "a.ckpt.ir") + " --train-dir " + q(root_ / "train") +
                    " --epochs 2 --out " + q(root_ / "two.model"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string log = read_file(root_ / "two.model.train.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1 + 2 * 4);
}

TEST_F(Cli, ConfigFileValuesYieldToFlags) {
  ASSERT_EQ(search_.code, 0);
  write_file_atomic(root_ / "train.ini", "[train]\nepochs=3\nseed=5\n");
  const Invocation r = run("--config " + q(root_ / "train.ini") + " train --ir " + q(root_ / "a.ckpt.ir") +
                    " --train-dir " + q(root_ / "train") + " --epochs 1 --out " + q(root_ / "cfg.model"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string log = read_file(root_ / "cfg.model.train.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1 + 4);
  ModelMeta meta;
  load_model(root_ / "cfg.model", &meta);
  EXPECT_EQ(meta.seed, 5u);
}

TEST_F(Cli, MergeIsIdempotentAndVerifyPasses) {
  ASSERT_EQ(search_.code, 0);
  ASSERT_EQ(run("merge --checkpoint " + q(root_ / "a.ckpt") + " --out " + q(root_ / "m1.model")).code, 0);
  ASSERT_EQ(run("merge --checkpoint " + q(root_ / "a.ckpt") + " --out " + q(root_ / "m2.model")).code, 0);
  EXPECT_EQ(read_file(root_ / "m1.model"), read_file(root_ / "m2.model"));
  const Invocation v = run("verify --checkpoint " + q(root_ / "a.ckpt"));
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_EQ(run("verify --checkpoint " + q(root_ / "a.ckpt.ir")).code, 0);
}

TEST_F(Cli, VerifyRejectsCorruptedCheckpoint) {
  ASSERT_EQ(search_.code, 0);
  std::string text = read_file(root_ / "a.ckpt");
  text.resize(text.size() / 2);
  write_file_atomic(root_ / "broken.ckpt", text);
  const Invocation r = run("verify --checkpoint " + q(root_ / "broken.ckpt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error"), std::string::npos) << r.out;
}

TEST_F(Cli, EnhanceWithZeroModelReturnsInputs) {
  save_model(root_ / "zero_kernel.model", EnhancerModel{ConvKernel(3, 3, 3, 3), {}});
  const Invocation r = run("enhance --model " + q(root_ / "zero_kernel.model") + " --in " + q(root_ / "train") +
                    " --out " + q(root_ / "enh"));
  ASSERT_EQ(r.code, 0) << r.out;
  for (const fs::path& p : list_images(root_ / "train")) {
    // u equals y, so x is one wherever y is non-zero.
    const Tensor y = read_image(p), x = read_image(root_ / "enh" / p.filename());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(x[i], y[i] > 0.0 ? 1.0 : 0.0);
  }
}

TEST_F(Cli, MetricsOnIdenticalDirectories) {
  const Invocation r = run("metrics --ref " + q(root_ / "train_clean") + " --test " + q(root_ / "train_clean"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mean,inf,1.000000"), std::string::npos) << r.out;
}

TEST_F(Cli, MetricsMissingCounterpartFails) {
  EXPECT_EQ(run("metrics --ref " + q(root_ / "train_clean") + " --test " + q(root_ / "val")).code, 1);
}

TEST_F(Cli, BenchJsonSchema) {
  const Invocation r = run("bench --runs 2 --warmup 0 --resolution 32x24 --resolution 64x48 --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("runs"), 2);
  ASSERT_EQ(j.at("entries").size(), 2u);
  const auto& e = j.at("entries")[1];
  EXPECT_EQ(e.at("resolution"), "64x48");
  EXPECT_EQ(e.at("macs"), 81u * 64u * 48u);
  EXPECT_EQ(e.at("params"), 84u);
  for (const char* key : {"mean_s", "median_s", "stddev_s"}) EXPECT_GE(e.at(key).get<double>(), 0.0) << key;
}

TEST_F(Cli, BenchRejectsBadResolution) { EXPECT_EQ(run("bench --runs 1 --resolution 12by4").code, 2); }

}  // namespace
}  // namespace relume
