//
// Copyright 2026 The ragdp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "ragdp/ragdp.hpp"
#include "test_util.hpp"

namespace ragdp {
namespace {

namespace fs = std::filesystem;
using testing::ScratchDir;

// Small enough that a full run takes a couple of seconds.
Json SmallConfig() {
  Json c = DefaultConfig();
  for (const char* o :
       {"data.pub_pre_size=800", "data.pub_ref_size=200", "data.prv_size=200",
        "data.holdout_size=80", "pretrain.epochs=5", "extractor.epochs=1",
        "dp.iterations=5", "dp.expected_batch=16", "sample.num_samples=48"}) {
    ApplyOverride(c, o);
  }
  return c;
}

std::map<std::string, std::string> ReadTree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timings.json") continue;
    files[fs::relative(e.path(), root).string()] = ReadFileBytes(e.path().string());
  }
  return files;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

class FullRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(ScratchDir("pipeline_full"));
    Pipeline p(*dir_, SmallConfig());
    metrics_ = new Json(p.RunAll());
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete metrics_;
  }
  static fs::path* dir_;
  static Json* metrics_;
};
fs::path* FullRun::dir_ = nullptr;
Json* FullRun::metrics_ = nullptr;

TEST(Config, OverridesParseAsJsonOrString) {
  Json c = DefaultConfig();
  ApplyOverride(c, "dp.iterations=300");
  ApplyOverride(c, "schedule.kind=cosine");
  ApplyOverride(c, "denoiser.hidden=[8,8]");
  EXPECT_EQ(c["dp"]["iterations"], 300);
  EXPECT_EQ(c["schedule"]["kind"], "cosine");
  EXPECT_EQ(c["denoiser"]["hidden"], Json::array({8, 8}));
  EXPECT_NO_THROW(ParseConfig(c));
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  Json c = DefaultConfig();
  EXPECT_EQ(CodeOf([&] { ApplyOverride(c, "dp.iteratoins=3"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { ApplyOverride(c, "no_equals_sign"); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(CodeOf([&] { MergeConfig(DefaultConfig(), Json{{"bogus", 1}}); }),
            ErrorCode::kInvalidArgument);
  Json bad = DefaultConfig();
  ApplyOverride(bad, "sample.steps_late=50");
  EXPECT_EQ(CodeOf([&] { ParseConfig(bad); }), ErrorCode::kInvalidArgument);
}

TEST(Config, ResolutionOrderSeedThenOverride) {
  const Json a = ResolveConfig(std::nullopt, 7, {});
  EXPECT_EQ(a["seed"], 7);
  const Json b = ResolveConfig(std::nullopt, 7, {"seed=9"});
  EXPECT_EQ(b["seed"], 9);
}

TEST(Pipeline, StageOrderViolationNamesProducer) {
  const fs::path dir = ScratchDir("pipeline_order");
  Pipeline p(dir, SmallConfig());
  try {
    p.Pretrain();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingArtifact);
    EXPECT_NE(std::string(e.what()).find("generate-data"), std::string::npos);
  }
  p.GenerateData();
  EXPECT_EQ(CodeOf([&] { p.BuildKb(); }), ErrorCode::kMissingArtifact);
}

TEST(Pipeline, DifferentConfigInSameDirectoryRejected) {
  const fs::path dir = ScratchDir("pipeline_reuse");
  { Pipeline p(dir, SmallConfig()); }
  Json other = SmallConfig();
  ApplyOverride(other, "seed=2");
  EXPECT_EQ(CodeOf([&] { Pipeline q(dir, other); }), ErrorCode::kInvalidArgument);
}

TEST(Pipeline, TamperedArtifactDetected) {
  const fs::path dir = ScratchDir("pipeline_tamper");
  Pipeline p(dir, SmallConfig());
  p.GenerateData();
  {
    std::fstream f(dir / "data/pub_pre.rpds", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  EXPECT_EQ(CodeOf([&] { p.Pretrain(); }), ErrorCode::kChecksumMismatch);
  fs::remove(dir / "data/pub_pre.rpds");
  EXPECT_EQ(CodeOf([&] { p.Pretrain(); }), ErrorCode::kMissingArtifact);
}

TEST(Pipeline, ZeroPretrainEpochsKeepsInitialization) {
  Json c = SmallConfig();
  ApplyOverride(c, "pretrain.epochs=0");
  Pipeline p(ScratchDir("pipeline_zero_epochs"), c);
  p.GenerateData();
  p.Pretrain();
  Rng rng(p.config().seeds.pretrain);
  const DenoiserModel init = DenoiserModel::Create(p.config().denoiser, rng);
  const DenoiserModel saved =
      DenoiserFromCheckpoint(DecodeCheckpoint(p.ReadValidated(artifacts::kDenoiser)));
  EXPECT_EQ(ModelChecksum(saved), ModelChecksum(init));
}

TEST_F(FullRun, ManifestListsEveryStageWithInputsAndOutputs) {
  const Json m = Json::parse(ReadFileBytes((*dir_ / "manifest.json").string()));
  for (const char* s : {"generate-data", "pretrain", "train-extractor", "build-kb", "dp-finetune",
                        "sample/pretrained_full", "sample/pretrained_rag",
                        "sample/finetuned_rag", "evaluate"}) {
    ASSERT_TRUE(m["stages"].contains(s)) << s;
    EXPECT_TRUE(m["stages"][s]["inputs"].contains("config")) << s;
  }
  for (const auto& [name, rec] : m["artifacts"].items()) {
    EXPECT_EQ(Sha256Hex(ReadFileBytes((*dir_ / name).string())), rec["sha256"]) << name;
  }
  EXPECT_EQ(m["stages"]["build-kb"]["inputs"].size(), 4u);  // config, pub_ref, denoiser, extractor
}

TEST_F(FullRun, ArtifactsEmbedInputChecksums) {
  const Dataset syn = DecodeDataset(ReadFileBytes((*dir_ / "samples/finetuned_rag.rpds").string()));
  const Json m = Json::parse(ReadFileBytes((*dir_ / "manifest.json").string()));
  std::map<std::string, std::string> prov;
  for (const auto& [n, d] : syn.provenance) prov[n] = ToHex(d);
  EXPECT_EQ(prov.at(std::string(artifacts::kFinetuned)),
            m["artifacts"][std::string(artifacts::kFinetuned)]["sha256"]);
  EXPECT_EQ(prov.at(std::string(artifacts::kKb)),
            m["artifacts"][std::string(artifacts::kKb)]["sha256"]);
}

TEST_F(FullRun, SampleStagesReportCallsAndGrids) {
  const Json m = Json::parse(ReadFileBytes((*dir_ / "manifest.json").string()));
  const Json& full = m["stages"]["sample/pretrained_full"]["metrics"];
  const Json& rag = m["stages"]["sample/finetuned_rag"]["metrics"];
  EXPECT_EQ(full["calls_per_sample"], 100.0);
  EXPECT_EQ(rag["calls_per_sample"], 41.0);
  EXPECT_EQ(full["timesteps"].size(), 101u);
  EXPECT_EQ(full["timesteps"].front(), 100);
  EXPECT_EQ(full["timesteps"].back(), 0);
  EXPECT_EQ(rag["timesteps_early"].front(), 100);
  EXPECT_EQ(rag["timesteps_early"].back(), 80);
  EXPECT_EQ(rag["timesteps_late"].front(), 20);
  EXPECT_EQ(rag["timesteps_late"].back(), 0);
}

TEST_F(FullRun, MetricsHaveEverySetAndPrivacyRecord) {
  const Json& sets = (*metrics_)["sample_sets"];
  for (const char* s : {"pretrained_full", "pretrained_rag", "finetuned_rag", "gaussian_baseline"}) {
    ASSERT_TRUE(sets.contains(s)) << s;
    EXPECT_GE(sets[s]["coverage"].get<double>(), 0.0);
    EXPECT_LE(sets[s]["coverage"].get<double>(), 1.0);
    EXPECT_TRUE(sets[s].contains("frechet_class")) << s;
  }
  const Json& priv = (*metrics_)["privacy"];
  EXPECT_EQ(priv["steps"], 5);
  EXPECT_LE(priv["epsilon"].get<double>(), 10.0);
  EXPECT_NEAR(priv["sigma"].get<double>(), CalibrateSigma(10.0, 1e-5, 5), 1e-12);
  EXPECT_TRUE((*metrics_)["retrieval"].contains("top1"));
}

TEST_F(FullRun, RerunIsByteIdentical) {
  const fs::path again = ScratchDir("pipeline_rerun");
  Pipeline p(again, SmallConfig());
  p.RunAll();
  const auto a = ReadTree(*dir_);
  const auto b = ReadTree(again);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) EXPECT_TRUE(b.at(name) == bytes) << name;
}

TEST_F(FullRun, RepeatingAStageReplacesItsRecordDeterministically) {
  const fs::path copy = ScratchDir("pipeline_repeat");
  fs::copy(*dir_, copy, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const std::string before = ReadFileBytes((copy / "manifest.json").string());
  Pipeline p(copy, SmallConfig());
  p.BuildKb();
  EXPECT_EQ(ReadFileBytes((copy / "manifest.json").string()), before);
}

TEST(Evaluate, PrivateDataAsSamplesScoresPerfectly) {
  const Dataset prv = GenerateDataset(Generator::kGaussianRing, {}, 400, 3, DatasetRole::kPrv);
  const Json m = EvaluateSampleSet(prv, prv, CoverageConfig{5});
  EXPECT_EQ(m["coverage"], 1.0);
  EXPECT_NEAR(m["frechet"].get<double>(), 0.0, 1e-6);
  EXPECT_NEAR(m["frechet_class"].get<double>(), 0.0, 1e-6);
}

TEST(Pretrain, LearnsThePublicDistribution) {
  // Default settings; scored per label, since a single Gaussian fit cannot
  // tell a ring from a blob with the same moments.
  Pipeline p(ScratchDir("pipeline_pretrain_quality"), DefaultConfig());
  p.GenerateData();
  p.Pretrain();
  const DenoiserModel net =
      DenoiserFromCheckpoint(DecodeCheckpoint(p.ReadValidated(artifacts::kDenoiser)));
  const Dataset holdout = DecodeDataset(p.ReadValidated(artifacts::kHoldout));
  const VarianceSchedule schedule = p.config().Schedule();
  std::vector<Vec> samples, noise;
  for (std::size_t i = 0; i < holdout.size(); ++i) {
    Rng rng = Substream(11, {i});
    samples.push_back(SampleFull(net, 2, 100, schedule, rng, holdout.labels[i]).final_latent());
    noise.push_back(StandardNormal(rng, 2));
  }
  const double learned = ClassConditionalFrechet(holdout.points, holdout.labels, samples,
                                                 holdout.labels);
  const double baseline = ClassConditionalFrechet(holdout.points, holdout.labels, noise,
                                                  holdout.labels);
  EXPECT_LT(learned * 10, baseline) << learned << " vs " << baseline;
}

TEST(Sweep, OneDirectoryPerValue) {
  const fs::path dir = ScratchDir("pipeline_sweep");
  Json c = SmallConfig();
  const auto cells = RunSweep(dir, c, "data.pub_ref_size", Json::array({100, 150}));
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "sweep" / "data.pub_ref_size=100" / "manifest.json"));
  const Json summary = Json::parse(ReadFileBytes((dir / "sweep.json").string()));
  EXPECT_EQ(summary["cells"].size(), 2u);
  const Json m = Json::parse(ReadFileBytes((cells[1].dir / "config.json").string()));
  EXPECT_EQ(m["data"]["pub_ref_size"], 150);
}

#ifdef RAGDP_CLI_PATH
TEST(Cli, ExitCodesAndErrorRecord) {
  const fs::path dir = ScratchDir("pipeline_cli");
  const std::string cli = RAGDP_CLI_PATH;
  const std::string err = (dir / "err.json").string();
  const int rc = std::system(
      (cli + " --out " + (dir / "run").string() + " pretrain 2> " + err + " > /dev/null").c_str());
  ASSERT_TRUE(WIFEXITED(rc));
  EXPECT_EQ(WEXITSTATUS(rc), 3);
  // Progress lines come first; the error record is the last line.
  std::string text = ReadFileBytes(err);
  while (!text.empty() && text.back() == '\n') text.pop_back();
  const Json e = Json::parse(text.substr(text.rfind('\n') + 1));
  EXPECT_EQ(e["error"]["code"], "missing_artifact");
  EXPECT_EQ(e["error"]["command"], "pretrain");

  const int bad = std::system((cli + " --out " + (dir / "run2").string() +
                               " --override nope=1 generate-data 2> /dev/null > /dev/null")
                                  .c_str());
  EXPECT_EQ(WEXITSTATUS(bad), 2);

  const int ok = std::system((cli + " --out " + (dir / "run3").string() +
                              " --override data.pub_pre_size=50 generate-data > /dev/null")
                                 .c_str());
  EXPECT_EQ(WEXITSTATUS(ok), 0);
}
#endif

}  // namespace
}  // namespace ragdp
