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

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragdp/accountant.hpp"
#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/contrastive.hpp"
#include "ragdp/dataset.hpp"
#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/dp_trainer.hpp"
#include "ragdp/error.hpp"
#include "ragdp/eval.hpp"
#include "ragdp/knowledge_base.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/pretrain.hpp"
#include "ragdp/provenance.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

// Every key here can be set from a config file or --override. Keys absent from
// this tree are rejected.
inline Json DefaultConfig() {
  return Json::parse(R"({
  "seed": 1,
  "seeds": {"data": null, "pretrain": null, "extractor": null, "kb": null,
            "dp": null, "sample": null, "eval": null},
  "schedule": {"horizon": 100, "beta_start": 0.0001, "beta_end": 0.02, "kind": "linear"},
  "data": {
    "generator": "gaussian_ring", "num_modes": 8, "radius": 2.0, "mode_std": 0.05,
    "noise": 0.05, "dim": 2, "conditional": true,
    "pub_pre_size": 4000, "pub_ref_size": 2000, "prv_size": 2000, "holdout_size": 800,
    "prv_rotation": 0.39269908169872414, "prv_translate_x": 0.0, "prv_translate_y": 0.0
  },
  "denoiser": {"hidden": [64, 64], "activation": "tanh", "time_embed_dim": 16,
               "class_embed_dim": 4},
  "pretrain": {"epochs": 200, "batch_size": 128, "learning_rate": 0.002, "label_dropout": 0.05,
               "final_lr_fraction": 0.05},
  "extractor": {
    "hidden": [64, 64], "feature_dim": 16, "activation": "relu", "epochs": 10,
    "batch_size": 64, "learning_rate": 0.001, "temperature": 0.5, "negatives_per_anchor": 0,
    "augment": {"jitter_sigma": 0.05, "scale_lo": 0.95, "scale_hi": 1.05,
                "rotation_max_radians": 0.0, "flip_axes": []}
  },
  "kb": {"k_fraction": 0.8, "v_fraction": 0.2, "entries_per_example": 1},
  "dp": {"epsilon": 10.0, "delta": 0.00001, "noise_scale": null, "clip_norm": 0.3,
         "expected_batch": 64, "iterations": 200, "learning_rate": 0.01,
         "v_prime_draws": 8, "retrieval_topk": 1},
  "sample": {"num_samples": 800, "steps_full": 100, "steps_early": 20, "steps_late": 20,
             "retrieval_topk": 1},
  "eval": {"nn_size": 5, "retrieval_topk": [1, 5]},
  "sweep": {"key": "data.pub_ref_size", "values": [100, 1000, 5000]}
})");
}

namespace internal {

inline std::vector<std::string> SplitDotted(std::string_view key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    parts.emplace_back(key.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  for (const std::string& p : parts) {
    Require(!p.empty(), ErrorCode::kInvalidArgument,
            "malformed config key \"" + std::string(key) + "\"");
  }
  return parts;
}

// Recursive merge that keeps explicit nulls and rejects keys the base lacks.
inline void MergeInto(Json& base, const Json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) {
      throw Error(ErrorCode::kInvalidArgument, "unknown config key \"" + path + "\"");
    }
    Json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      MergeInto(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

}  // namespace internal

// Merges a (possibly partial) config document over the defaults.
inline Json MergeConfig(Json base, const Json& patch) {
  internal::Require(patch.is_object(), ErrorCode::kInvalidArgument,
                    "config document must be a JSON object");
  internal::MergeInto(base, patch, "");
  return base;
}

// "a.b.c=value". The value is parsed as JSON when possible and taken as a
// string otherwise, so dp.iterations=300 and schedule.kind=cosine both work.
inline void ApplyOverride(Json& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  internal::Require(eq != std::string_view::npos && eq > 0, ErrorCode::kInvalidArgument,
                    "override must look like key=value, got \"" + std::string(assignment) +
                        "\"");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;
  Json* node = &config;
  for (const std::string& part : internal::SplitDotted(key)) {
    if (!node->is_object() || !node->contains(part)) {
      throw Error(ErrorCode::kInvalidArgument, "unknown config key \"" + key + "\"");
    }
    node = &(*node)[part];
  }
  *node = std::move(value);
}

inline Json LoadConfigFile(const std::string& path) {
  const std::string text = ReadFileBytes(path);
  Json doc = Json::parse(text, nullptr, false);
  internal::Require(!doc.is_discarded(), ErrorCode::kFormat,
                    "config file " + path + " is not valid JSON");
  return doc;
}

struct StageSeeds {
  std::uint64_t data = 0;
  std::uint64_t pretrain = 0;
  std::uint64_t extractor = 0;
  std::uint64_t kb = 0;
  std::uint64_t dp = 0;
  std::uint64_t sample = 0;
  std::uint64_t eval = 0;
};

// Typed view of a resolved config document.
struct ExperimentConfig {
  Json document;
  std::uint64_t seed = 0;
  StageSeeds seeds;

  int horizon = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleKind schedule_kind = ScheduleKind::kLinear;

  Generator generator = Generator::kGaussianRing;
  GeneratorParams pub_params;
  GeneratorParams prv_params;
  bool conditional = true;
  std::size_t pub_pre_size = 0;
  std::size_t pub_ref_size = 0;
  std::size_t prv_size = 0;
  std::size_t holdout_size = 0;

  DenoiserSpec denoiser;
  PretrainConfig pretrain;
  ExtractorSpec extractor;
  ContrastiveConfig contrastive;
  AugmentConfig augment;

  double k_fraction = 0.8;
  double v_fraction = 0.2;
  int k_timestep = 80;
  int v_timestep = 20;
  int entries_per_example = 1;

  DpConfig dp;  // noise_scale resolved by the dp-finetune stage
  double dp_epsilon = 10.0;
  std::optional<double> dp_noise_scale;

  int num_samples = 800;
  int steps_full = 100;
  RagInferenceConfig rag;

  CoverageConfig coverage;
  std::vector<int> retrieval_topk;

  std::string sweep_key;
  Json sweep_values;

  VarianceSchedule Schedule() const {
    return MakeSchedule(horizon, beta_start, beta_end, schedule_kind);
  }

  // Labels used when sampling: i mod C for conditional models.
  std::vector<int> SampleLabels() const {
    std::vector<int> labels;
    if (!conditional) return labels;
    for (int i = 0; i < num_samples; ++i) labels.push_back(i % pub_params.num_modes);
    return labels;
  }
};

namespace internal {

inline int FractionToTimestep(double fraction, int horizon) {
  return static_cast<int>(std::lround(fraction * horizon));
}

}  // namespace internal

inline ExperimentConfig ParseConfig(const Json& doc) {
  ExperimentConfig c;
  c.document = doc;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    const Json& seeds = doc.at("seeds");
    auto stage_seed = [&](const char* name, std::uint64_t tag) {
      const Json& s = seeds.at(name);
      return s.is_null() ? DeriveSeed(c.seed, {tag}) : s.get<std::uint64_t>();
    };
    c.seeds = {stage_seed("data", 1),  stage_seed("pretrain", 2), stage_seed("extractor", 3),
               stage_seed("kb", 4),    stage_seed("dp", 5),       stage_seed("sample", 6),
               stage_seed("eval", 7)};

    const Json& sch = doc.at("schedule");
    c.horizon = sch.at("horizon").get<int>();
    c.beta_start = sch.at("beta_start").get<double>();
    c.beta_end = sch.at("beta_end").get<double>();
    c.schedule_kind = ParseScheduleKind(sch.at("kind").get<std::string>());

    const Json& data = doc.at("data");
    c.generator = ParseGenerator(data.at("generator").get<std::string>());
    c.pub_params.num_modes = data.at("num_modes").get<int>();
    c.pub_params.radius = data.at("radius").get<double>();
    c.pub_params.mode_std = data.at("mode_std").get<double>();
    c.pub_params.noise = data.at("noise").get<double>();
    c.pub_params.dim = data.at("dim").get<int>();
    c.prv_params = c.pub_params;
    c.prv_params.rotation = data.at("prv_rotation").get<double>();
    c.prv_params.translate_x = data.at("prv_translate_x").get<double>();
    c.prv_params.translate_y = data.at("prv_translate_y").get<double>();
    c.conditional = data.at("conditional").get<bool>();
    c.pub_pre_size = data.at("pub_pre_size").get<std::size_t>();
    c.pub_ref_size = data.at("pub_ref_size").get<std::size_t>();
    c.prv_size = data.at("prv_size").get<std::size_t>();
    c.holdout_size = data.at("holdout_size").get<std::size_t>();
    if (c.generator == Generator::kCheckerboard) c.pub_params.num_modes = 8;
    c.prv_params.num_modes = c.pub_params.num_modes;

    const Json& den = doc.at("denoiser");
    c.denoiser.data_dim = c.generator == Generator::kBlobs ? c.pub_params.dim : 2;
    c.denoiser.horizon = c.horizon;
    c.denoiser.hidden = den.at("hidden").get<std::vector<int>>();
    c.denoiser.hidden_activation = ParseActivation(den.at("activation").get<std::string>());
    c.denoiser.time_embed_dim = den.at("time_embed_dim").get<int>();
    c.denoiser.class_embed_dim = den.at("class_embed_dim").get<int>();
    c.denoiser.num_classes = c.conditional ? c.pub_params.num_modes : 0;

    const Json& pre = doc.at("pretrain");
    c.pretrain.epochs = pre.at("epochs").get<int>();
    c.pretrain.batch_size = pre.at("batch_size").get<int>();
    c.pretrain.learning_rate = pre.at("learning_rate").get<double>();
    c.pretrain.label_dropout = pre.at("label_dropout").get<double>();
    c.pretrain.final_lr_fraction = pre.at("final_lr_fraction").get<double>();

    const Json& ex = doc.at("extractor");
    c.extractor.hidden = ex.at("hidden").get<std::vector<int>>();
    c.extractor.feature_dim = ex.at("feature_dim").get<int>();
    c.extractor.hidden_activation = ParseActivation(ex.at("activation").get<std::string>());
    c.contrastive.epochs = ex.at("epochs").get<int>();
    c.contrastive.batch_size = ex.at("batch_size").get<int>();
    c.contrastive.learning_rate = ex.at("learning_rate").get<double>();
    c.contrastive.temperature = ex.at("temperature").get<double>();
    c.contrastive.negatives_per_anchor = ex.at("negatives_per_anchor").get<int>();
    const Json& aug = ex.at("augment");
    c.augment.jitter_sigma = aug.at("jitter_sigma").get<double>();
    c.augment.scale_lo = aug.at("scale_lo").get<double>();
    c.augment.scale_hi = aug.at("scale_hi").get<double>();
    c.augment.rotation_max_radians = aug.at("rotation_max_radians").get<double>();
    c.augment.flip_axes = aug.at("flip_axes").get<std::vector<bool>>();

    const Json& kb = doc.at("kb");
    c.k_fraction = kb.at("k_fraction").get<double>();
    c.v_fraction = kb.at("v_fraction").get<double>();
    c.entries_per_example = kb.at("entries_per_example").get<int>();

    const Json& dp = doc.at("dp");
    c.dp_epsilon = dp.at("epsilon").get<double>();
    if (!dp.at("noise_scale").is_null()) c.dp_noise_scale = dp.at("noise_scale").get<double>();
    c.dp.delta = dp.at("delta").get<double>();
    c.dp.clip_norm = dp.at("clip_norm").get<double>();
    c.dp.expected_batch = dp.at("expected_batch").get<int>();
    c.dp.iterations = dp.at("iterations").get<int>();
    c.dp.learning_rate = dp.at("learning_rate").get<double>();
    c.dp.v_prime_draws = dp.at("v_prime_draws").get<int>();
    c.dp.retrieval_topk = dp.at("retrieval_topk").get<int>();

    const Json& s = doc.at("sample");
    c.num_samples = s.at("num_samples").get<int>();
    c.steps_full = s.at("steps_full").get<int>();
    c.rag.steps_early = s.at("steps_early").get<int>();
    c.rag.steps_late = s.at("steps_late").get<int>();
    c.rag.retrieval_topk = s.at("retrieval_topk").get<int>();

    const Json& ev = doc.at("eval");
    c.coverage.nn_size = ev.at("nn_size").get<int>();
    c.retrieval_topk = ev.at("retrieval_topk").get<std::vector<int>>();

    const Json& sw = doc.at("sweep");
    c.sweep_key = sw.at("key").get<std::string>();
    c.sweep_values = sw.at("values");
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }

  internal::Require(c.k_fraction > 0 && c.k_fraction < 1 && c.v_fraction > 0 &&
                        c.v_fraction < c.k_fraction,
                    ErrorCode::kInvalidArgument,
                    "need 0 < kb.v_fraction < kb.k_fraction < 1");
  c.k_timestep = internal::FractionToTimestep(c.k_fraction, c.horizon);
  c.v_timestep = internal::FractionToTimestep(c.v_fraction, c.horizon);
  internal::Require(0 < c.v_timestep && c.v_timestep < c.k_timestep &&
                        c.k_timestep < c.horizon,
                    ErrorCode::kInvalidArgument,
                    "fractions round to timesteps outside 0 < v < k < T");
  c.dp.k_timestep = c.rag.k_timestep = c.contrastive.key_timestep = c.k_timestep;
  c.dp.v_timestep = c.rag.v_timestep = c.v_timestep;
  c.dp.seed = c.seeds.dp;
  internal::Require(c.pub_pre_size >= 1 && c.pub_ref_size >= 1 && c.prv_size >= 1 &&
                        c.holdout_size >= 1,
                    ErrorCode::kInvalidArgument, "dataset sizes must be >= 1");
  internal::Require(c.num_samples >= 2, ErrorCode::kInvalidArgument,
                    "sample.num_samples must be >= 2");
  internal::Require(c.rag.steps_early >= 1 && c.rag.steps_early <= c.horizon - c.k_timestep &&
                        c.rag.steps_late >= 1 && c.rag.steps_late <= c.v_timestep &&
                        c.steps_full >= 1 && c.steps_full <= c.horizon,
                    ErrorCode::kInvalidArgument, "sampling step counts out of range");
  internal::Require(c.dp_epsilon > 0, ErrorCode::kInvalidArgument, "dp.epsilon must be > 0");
  c.augment.Validate();
  return c;
}

// Defaults, then the config file, then --seed, then --override, in that order.
inline Json ResolveConfig(const std::optional<std::string>& config_path,
                          std::optional<std::uint64_t> seed,
                          const std::vector<std::string>& overrides) {
  Json doc = DefaultConfig();
  if (config_path) doc = MergeConfig(std::move(doc), LoadConfigFile(*config_path));
  if (seed) doc["seed"] = *seed;
  for (const std::string& o : overrides) ApplyOverride(doc, o);
  ParseConfig(doc);  // validate early
  return doc;
}

// ---------------------------------------------------------------------------
// Artifacts and the run manifest

namespace artifacts {
inline constexpr std::string_view kPubPre = "data/pub_pre.rpds";
inline constexpr std::string_view kPubRef = "data/pub_ref.rpds";
inline constexpr std::string_view kPrv = "data/prv.rpds";
inline constexpr std::string_view kHoldout = "data/holdout.rpds";
inline constexpr std::string_view kDenoiser = "models/denoiser.rpdn";
inline constexpr std::string_view kExtractor = "models/extractor.rpdn";
inline constexpr std::string_view kKb = "kb/kb.rpkb";
inline constexpr std::string_view kFinetuned = "models/finetuned.rpdn";
inline constexpr std::string_view kLedger = "privacy/ledger.json";
inline constexpr std::string_view kMetrics = "eval/metrics.json";
}  // namespace artifacts

inline std::string ProducerOf(std::string_view artifact) {
  if (artifact.starts_with("data/")) return "generate-data";
  if (artifact == artifacts::kDenoiser) return "pretrain";
  if (artifact == artifacts::kExtractor) return "train-extractor";
  if (artifact == artifacts::kKb) return "build-kb";
  if (artifact == artifacts::kFinetuned || artifact == artifacts::kLedger) return "dp-finetune";
  if (artifact.starts_with("samples/")) return "sample";
  if (artifact == artifacts::kMetrics) return "evaluate";
  return "unknown";
}

enum class SampleMode { kFull, kRag };
enum class SampleModel { kPretrained, kFinetuned };

inline SampleMode ParseSampleMode(std::string_view s) {
  if (s == "full") return SampleMode::kFull;
  if (s == "rag") return SampleMode::kRag;
  throw Error(ErrorCode::kInvalidArgument, "sample mode must be full or rag");
}

inline SampleModel ParseSampleModel(std::string_view s) {
  if (s == "pretrained") return SampleModel::kPretrained;
  if (s == "finetuned") return SampleModel::kFinetuned;
  throw Error(ErrorCode::kInvalidArgument, "sample model must be pretrained or finetuned");
}

inline std::string SampleSetName(SampleModel model, SampleMode mode) {
  return std::string(model == SampleModel::kPretrained ? "pretrained" : "finetuned") + "_" +
         (mode == SampleMode::kFull ? "full" : "rag");
}

// Metrics of one synthetic set against the private data.
inline Json EvaluateSampleSet(const Dataset& real, const Dataset& syn,
                              const CoverageConfig& coverage) {
  Json m;
  const double d2 = FrechetDistanceSquared(FitGaussian(real.points), FitGaussian(syn.points));
  m["frechet"] = std::sqrt(d2);
  m["frechet_squared"] = d2;
  if (real.labeled() && syn.labeled()) {
    m["frechet_class"] = ClassConditionalFrechet(real.points, real.labels, syn.points, syn.labels);
  }
  m["coverage"] = Coverage(real.points, syn.points, coverage);
  m["n"] = syn.size();
  return m;
}

using ProgressFn = std::function<void(std::string_view)>;

// One experiment directory. Each stage reads its inputs through the manifest
// (checksum-validated), writes outputs that embed their inputs' checksums, and
// records itself in manifest.json. Wall-clock times go to timings.json so the
// manifest and every artifact stay byte-identical across reruns.
class Pipeline {
 public:
  Pipeline(std::filesystem::path out_dir, Json config, ProgressFn progress = {})
      : dir_(std::move(out_dir)),
        config_(ParseConfig(config)),
        progress_(std::move(progress)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    internal::Require(!ec, ErrorCode::kIo, "cannot create " + dir_.string());
    config_sha_ = Sha256Hex(config_.document.dump());
    const std::filesystem::path mpath = dir_ / "manifest.json";
    if (std::filesystem::exists(mpath)) {
      manifest_ = Json::parse(ReadFileBytes(mpath.string()), nullptr, false);
      internal::Require(!manifest_.is_discarded() && manifest_.is_object(), ErrorCode::kFormat,
                        "manifest.json is not valid JSON");
      if (manifest_.value("config_sha256", std::string()) != config_sha_) {
        throw Error(ErrorCode::kInvalidArgument,
                    "output directory " + dir_.string() +
                        " holds a run with a different config; use a fresh --out");
      }
    } else {
      manifest_ = Json{{"format", "ragdp-manifest/1"},
                       {"config", config_.document},
                       {"config_sha256", config_sha_},
                       {"artifacts", Json::object()},
                       {"stages", Json::object()}};
      WriteFileBytes((dir_ / "config.json").string(), config_.document.dump(2) + "\n");
      SaveManifest();
    }
  }

  const ExperimentConfig& config() const { return config_; }
  const Json& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  void GenerateData() {
    Stage stage(*this, "generate-data");
    const ExperimentConfig& c = config_;
    auto make = [&](std::string_view name, const GeneratorParams& p, std::size_t n,
                    std::uint64_t tag, DatasetRole role) {
      Dataset d = GenerateDataset(c.generator, p, n, DeriveSeed(c.seeds.data, {tag}), role);
      d.provenance = stage.Provenance();
      stage.Write(name, EncodeDataset(d));
    };
    make(artifacts::kPubPre, c.pub_params, c.pub_pre_size, 0, DatasetRole::kPubPre);
    make(artifacts::kPubRef, c.pub_params, c.pub_ref_size, 1, DatasetRole::kPubRef);
    make(artifacts::kPrv, c.prv_params, c.prv_size, 2, DatasetRole::kPrv);
    make(artifacts::kHoldout, c.pub_params, c.holdout_size, 3, DatasetRole::kPubRef);
    stage.Finish({});
  }

  void Pretrain() {
    Stage stage(*this, "pretrain");
    const Dataset pub = stage.ReadDataset(artifacts::kPubPre);
    RequireRole(pub, DatasetRole::kPubPre);
    Rng rng(config_.seeds.pretrain);
    DenoiserModel init = DenoiserModel::Create(config_.denoiser, rng);
    const VarianceSchedule schedule = config_.Schedule();
    PretrainResult r = PretrainDenoiser(std::move(init), pub.points, pub.labels, schedule,
                                        config_.pretrain, rng);
    Checkpoint ckpt = DenoiserCheckpoint(r.model);
    SetCheckpointProvenance(ckpt, stage.Provenance());
    stage.Write(artifacts::kDenoiser, EncodeCheckpoint(ckpt));
    Json m{{"parameter_count", r.model.parameter_count()},
           {"model_sha256", ToHex(ModelChecksum(r.model))}};
    if (!r.epoch_losses.empty()) {
      m["loss_first_epoch"] = r.epoch_losses.front();
      m["loss_final_epoch"] = r.epoch_losses.back();
    }
    stage.Finish(std::move(m));
  }

  void TrainExtractorStage() {
    Stage stage(*this, "train-extractor");
    const Dataset ref = stage.ReadDataset(artifacts::kPubRef);
    RequireRole(ref, DatasetRole::kPubRef);
    const DenoiserModel denoiser = stage.ReadDenoiser(artifacts::kDenoiser);
    Rng rng(config_.seeds.extractor);
    DenseNet h0 = MakeExtractor(ref.dim(), config_.extractor, rng);
    ExtractorTrainingResult r = TrainExtractor(denoiser, config_.Schedule(), ref.points,
                                               std::move(h0), config_.contrastive,
                                               config_.augment, rng);
    Checkpoint ckpt = ExtractorCheckpoint(r.extractor, config_.k_timestep);
    SetCheckpointProvenance(ckpt, stage.Provenance());
    stage.Write(artifacts::kExtractor, EncodeCheckpoint(ckpt));
    Json m{{"key_timestep", config_.k_timestep}};
    if (!r.epoch_losses.empty()) {
      m["loss_first_epoch"] = r.epoch_losses.front();
      m["loss_final_epoch"] = r.epoch_losses.back();
    }
    stage.Finish(std::move(m));
  }

  void BuildKb() {
    Stage stage(*this, "build-kb");
    const Dataset ref = stage.ReadDataset(artifacts::kPubRef);
    RequireRole(ref, DatasetRole::kPubRef);
    const DenoiserModel denoiser = stage.ReadDenoiser(artifacts::kDenoiser);
    const DenseNet extractor = stage.ReadExtractor(artifacts::kExtractor);
    const VarianceSchedule schedule = config_.Schedule();
    KbManifest man;
    man.denoiser_checksum = ModelChecksum(denoiser);
    man.extractor_checksum = ExtractorChecksum(extractor, config_.k_timestep);
    man.schedule_hash = schedule.Hash();
    man.seed = config_.seeds.kb;
    const KbBuild build = BuildKnowledgeBase(
        ref.points, ref.labels, denoiser, extractor, schedule, config_.k_timestep,
        config_.v_timestep, man, KbBuildOptions{config_.entries_per_example});
    stage.Write(artifacts::kKb, EncodeKnowledgeBase(build.kb));
    stage.Finish({{"entries", build.kb.entries.size()},
                  {"denoiser_calls", build.denoiser_calls},
                  {"k_timestep", config_.k_timestep},
                  {"v_timestep", config_.v_timestep}});
  }

  void DpFinetuneStage() {
    Stage stage(*this, "dp-finetune");
    const Dataset prv = stage.ReadDataset(artifacts::kPrv);
    RequireRole(prv, DatasetRole::kPrv);
    const DenoiserModel denoiser = stage.ReadDenoiser(artifacts::kDenoiser);
    const DenseNet extractor = stage.ReadExtractor(artifacts::kExtractor);
    const KnowledgeBase kb = stage.ReadKb(denoiser, extractor);
    const VarianceSchedule schedule = config_.Schedule();

    DpConfig dp = config_.dp;
    if (config_.dp_noise_scale) {
      dp.noise_scale = *config_.dp_noise_scale;
    } else if (dp.iterations > 0) {
      dp.noise_scale = CalibrateSigma(config_.dp_epsilon, dp.delta, dp.iterations);
      dp.epsilon_budget = config_.dp_epsilon;
    }
    PrivacyLedger ledger;
    DpFinetuneResult r =
        DpFinetune(denoiser, denoiser, prv.points, prv.labels, kb, extractor, schedule, dp,
                   ledger);

    Checkpoint ckpt = DenoiserCheckpoint(r.model);
    ckpt.adam = r.adam;
    SetCheckpointProvenance(ckpt, stage.Provenance());
    stage.Write(artifacts::kFinetuned, EncodeCheckpoint(ckpt));

    std::optional<DpGuarantee> guarantee;
    if (ledger.steps > 0) guarantee = ToDp(ledger, dp.delta);
    Json ledger_json = LedgerToJson(ledger, guarantee ? &*guarantee : nullptr);
    ledger_json["sigma"] = dp.noise_scale;
    ledger_json["clip_norm"] = dp.clip_norm;
    ledger_json["expected_batch"] = dp.expected_batch;
    ledger_json["privatized"] = dp.noise_scale > 0;
    ledger_json["provenance"] = ProvenanceJson(stage.Provenance());
    stage.Write(artifacts::kLedger, ledger_json.dump(2) + "\n");

    Json m{{"sigma", dp.noise_scale},
           {"iterations", dp.iterations},
           {"checksum_before", ToHex(r.record.checksum_before)},
           {"checksum_after", ToHex(r.record.checksum_after)},
           {"ledger", ledger_json}};
    if (guarantee) m["epsilon"] = guarantee->epsilon;
    if (!r.record.iterations.empty()) {
      m["loss_first_iteration"] = r.record.iterations.front().loss_mean;
      m["loss_final_iteration"] = r.record.iterations.back().loss_mean;
    }
    stage.Finish(std::move(m));
  }

  void Sample(SampleModel model, SampleMode mode) {
    const std::string name = SampleSetName(model, mode);
    Stage stage(*this, "sample/" + name);
    const DenoiserModel pretrained = stage.ReadDenoiser(artifacts::kDenoiser);
    std::optional<DenoiserModel> tuned;
    if (model == SampleModel::kFinetuned) tuned = stage.ReadDenoiser(artifacts::kFinetuned);
    const DenoiserModel& net = tuned ? *tuned : pretrained;
    const VarianceSchedule schedule = config_.Schedule();
    const std::vector<int> labels = config_.SampleLabels();

    Dataset out;
    out.role = DatasetRole::kSynthetic;
    out.generator = config_.generator;
    out.params = config_.prv_params;
    out.seed = config_.seeds.sample;
    out.labels = labels;
    std::int64_t calls = 0;
    if (mode == SampleMode::kFull) {
      for (int i = 0; i < config_.num_samples; ++i) {
        Rng rng = Substream(config_.seeds.sample, {static_cast<std::uint64_t>(i)});
        const std::optional<int> label =
            labels.empty() ? std::nullopt : std::optional<int>(labels[i]);
        const Trajectory traj = SampleFull(net, config_.denoiser.data_dim, config_.steps_full,
                                           schedule, rng, label);
        calls += traj.denoiser_calls;
        out.points.push_back(traj.final_latent());
      }
    } else {
      const DenseNet extractor = stage.ReadExtractor(artifacts::kExtractor);
      const KnowledgeBase kb = stage.ReadKb(pretrained, extractor);
      RagSamples r = RagInference(net, pretrained, kb, extractor, schedule, config_.num_samples,
                                  config_.rag, config_.seeds.sample, labels);
      calls = r.denoiser_calls;
      out.points = std::move(r.samples);
    }
    out.provenance = stage.Provenance();
    stage.Write("samples/" + name + ".rpds", EncodeDataset(out));
    Json m{{"mode", mode == SampleMode::kFull ? "full" : "rag"},
           {"samples", config_.num_samples},
           {"denoiser_calls", calls},
           {"calls_per_sample",
            static_cast<double>(calls) / static_cast<double>(config_.num_samples)}};
    if (mode == SampleMode::kFull) {
      m["timesteps"] = TimestepGrid(config_.horizon, 0, config_.steps_full);
    } else {
      m["timesteps_early"] = TimestepGrid(config_.horizon, config_.k_timestep,
                                          config_.rag.steps_early);
      m["timesteps_late"] = TimestepGrid(config_.v_timestep, 0, config_.rag.steps_late);
    }
    stage.Finish(std::move(m));
  }

  Json Evaluate() {
    Stage stage(*this, "evaluate");
    const Dataset prv = stage.ReadDataset(artifacts::kPrv);
    Json sets = Json::object();
    for (const auto& [sname, rec] : manifest_.at("stages").items()) {
      if (!sname.starts_with("sample/")) continue;
      const std::string set = sname.substr(7);
      const Dataset syn = stage.ReadDataset("samples/" + set + ".rpds");
      Json m = EvaluateSampleSet(prv, syn, config_.coverage);
      m["calls_per_sample"] = rec.at("metrics").at("calls_per_sample");
      sets[set] = std::move(m);
    }
    {
      // N(0, I) reference point, with the same label layout as the samples.
      Dataset gauss;
      gauss.role = DatasetRole::kSynthetic;
      gauss.labels = config_.SampleLabels();
      for (int i = 0; i < config_.num_samples; ++i) {
        Rng rng = Substream(config_.seeds.eval, {0, static_cast<std::uint64_t>(i)});
        gauss.points.push_back(StandardNormal(rng, prv.dim()));
      }
      sets["gaussian_baseline"] = EvaluateSampleSet(prv, gauss, config_.coverage);
    }

    Json out{{"sample_sets", sets}};
    if (HasArtifact(artifacts::kKb)) {
      const Dataset holdout = stage.ReadDataset(artifacts::kHoldout);
      const DenoiserModel denoiser = stage.ReadDenoiser(artifacts::kDenoiser);
      const DenseNet extractor = stage.ReadExtractor(artifacts::kExtractor);
      const KnowledgeBase kb = stage.ReadKb(denoiser, extractor);
      if (kb.labeled() && holdout.labeled()) {
        const VarianceSchedule schedule = config_.Schedule();
        std::vector<Vec> queries;
        for (std::size_t i = 0; i < holdout.size(); ++i) {
          Rng rng = Substream(config_.seeds.eval, {1, i});
          const Vec x_k = ForwardDiffuse(holdout.points[i], config_.k_timestep,
                                         StandardNormal(rng, holdout.dim()), schedule);
          queries.push_back(ExtractFeature(extractor, denoiser, x_k, config_.k_timestep,
                                           schedule));
        }
        Json acc = Json::object();
        for (int k : config_.retrieval_topk) {
          acc["top" + std::to_string(k)] =
              RetrievalLabelAccuracy(kb, queries, holdout.labels, k);
        }
        acc["chance"] = 1.0 / static_cast<double>(holdout.num_classes());
        out["retrieval"] = std::move(acc);
      }
    }
    if (HasArtifact(artifacts::kLedger)) {
      const Json ledger = Json::parse(stage.Read(artifacts::kLedger));
      Json p{{"sigma", ledger.at("sigma")}, {"steps", ledger.at("steps")}};
      if (ledger.contains("epsilon")) {
        p["epsilon"] = ledger.at("epsilon");
        p["delta"] = ledger.at("delta");
      }
      out["privacy"] = std::move(p);
    }
    out["provenance"] = ProvenanceJson(stage.Provenance());
    stage.Write(artifacts::kMetrics, out.dump(2) + "\n");
    stage.Finish({{"metrics_sha256", manifest_["artifacts"][std::string(artifacts::kMetrics)]
                                         ["sha256"]}});
    return out;
  }

  // Every stage in order, including the three standard sample sets.
  Json RunAll() {
    GenerateData();
    Pretrain();
    TrainExtractorStage();
    BuildKb();
    DpFinetuneStage();
    Sample(SampleModel::kPretrained, SampleMode::kFull);
    Sample(SampleModel::kPretrained, SampleMode::kRag);
    Sample(SampleModel::kFinetuned, SampleMode::kRag);
    return Evaluate();
  }

  bool HasArtifact(std::string_view name) const {
    return manifest_.at("artifacts").contains(std::string(name));
  }

  // Reads and checksum-validates an artifact recorded in the manifest.
  std::string ReadValidated(std::string_view name) const {
    const std::string key(name);
    if (!HasArtifact(name)) {
      throw Error(ErrorCode::kMissingArtifact, "missing artifact " + key + " (run stage " +
                                                   ProducerOf(name) + " first)");
    }
    const std::filesystem::path path = dir_ / key;
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::kMissingArtifact, "artifact file " + path.string() +
                                                   " is recorded but missing on disk");
    }
    std::string bytes = ReadFileBytes(path.string());
    const std::string expected = manifest_.at("artifacts").at(key).at("sha256");
    if (Sha256Hex(bytes) != expected) {
      throw Error(ErrorCode::kChecksumMismatch,
                  "artifact " + key + " does not match its manifest checksum");
    }
    return bytes;
  }

 private:
  class Stage {
   public:
    Stage(Pipeline& p, std::string name)
        : p_(p), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {
      if (p_.progress_) p_.progress_("stage " + name_);
      inputs_.emplace_back("config", FromHex(p_.config_sha_));
    }

    std::string Read(std::string_view name) {
      std::string bytes = p_.ReadValidated(name);
      const Digest d = Sha256(bytes);
      const auto known = std::find_if(inputs_.begin(), inputs_.end(),
                                      [&](const auto& e) { return e.first == name; });
      if (known == inputs_.end()) inputs_.emplace_back(std::string(name), d);
      return bytes;
    }

    Dataset ReadDataset(std::string_view name) { return DecodeDataset(Read(name)); }

    DenoiserModel ReadDenoiser(std::string_view name) {
      return DenoiserFromCheckpoint(DecodeCheckpoint(Read(name)));
    }

    DenseNet ReadExtractor(std::string_view name) {
      return ExtractorFromCheckpoint(DecodeCheckpoint(Read(name)), p_.config_.k_timestep);
    }

    KnowledgeBase ReadKb(const DenoiserModel& denoiser, const DenseNet& extractor) {
      KnowledgeBase kb = DecodeKnowledgeBase(Read(artifacts::kKb));
      kb.CheckModels(ModelChecksum(denoiser),
                     ExtractorChecksum(extractor, p_.config_.k_timestep),
                     p_.config_.Schedule().Hash());
      return kb;
    }

    ragdp::Provenance Provenance() const { return inputs_; }

    void Write(std::string_view name, const std::string& bytes) {
      const std::filesystem::path path = p_.dir_ / std::string(name);
      std::filesystem::create_directories(path.parent_path());
      WriteFileBytes(path.string(), bytes);
      const std::string hex = Sha256Hex(bytes);
      p_.manifest_["artifacts"][std::string(name)] = {{"sha256", hex}, {"stage", name_}};
      outputs_[std::string(name)] = hex;
    }

    void Finish(Json metrics) {
      Json inputs = Json::object();
      for (const auto& [n, d] : inputs_) inputs[n] = ToHex(d);
      p_.manifest_["stages"][name_] = {
          {"inputs", inputs}, {"outputs", outputs_}, {"metrics", std::move(metrics)}};
      p_.SaveManifest();
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      p_.RecordTiming(name_, secs);
    }

   private:
    Pipeline& p_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
    ragdp::Provenance inputs_;
    Json outputs_ = Json::object();
  };

  static Json ProvenanceJson(const Provenance& prov) {
    Json j = Json::object();
    for (const auto& [n, d] : prov) j[n] = ToHex(d);
    return j;
  }

  void SaveManifest() const {
    WriteFileBytes((dir_ / "manifest.json").string(), manifest_.dump(2) + "\n");
  }

  void RecordTiming(const std::string& stage, double seconds) const {
    const std::filesystem::path path = dir_ / "timings.json";
    Json t = Json::object();
    if (std::filesystem::exists(path)) {
      t = Json::parse(ReadFileBytes(path.string()), nullptr, false);
      if (t.is_discarded() || !t.is_object()) t = Json::object();
    }
    t[stage] = {{"wall_seconds", seconds}};
    WriteFileBytes(path.string(), t.dump(2) + "\n");
  }

  std::filesystem::path dir_;
  ExperimentConfig config_;
  ProgressFn progress_;
  std::string config_sha_;
  Json manifest_;
};

// ---------------------------------------------------------------------------
// Sweeps: one full run per value of one config key, each in its own directory
// with its own manifest.

struct SweepCell {
  Json value;
  std::filesystem::path dir;
  Json metrics;
};

inline std::string SweepCellName(const std::string& key, const Json& value) {
  std::string v = value.is_string() ? value.get<std::string>() : value.dump();
  for (char& ch : v) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
  }
  return key + "=" + v;
}

inline std::vector<SweepCell> RunSweep(const std::filesystem::path& out_dir, const Json& config,
                                       const std::string& key, const Json& values,
                                       const ProgressFn& progress = {}) {
  internal::Require(values.is_array() && !values.empty(), ErrorCode::kInvalidArgument,
                    "sweep values must be a non-empty array");
  std::vector<SweepCell> cells;
  Json summary{{"key", key}, {"cells", Json::array()}};
  for (const Json& v : values) {
    Json cfg = config;
    ApplyOverride(cfg, key + "=" + v.dump());
    SweepCell cell{v, out_dir / "sweep" / SweepCellName(key, v), {}};
    if (progress) progress("sweep cell " + cell.dir.filename().string());
    Pipeline p(cell.dir, cfg, progress);
    cell.metrics = p.RunAll();
    summary["cells"].push_back({{"value", v},
                                {"dir", std::filesystem::relative(cell.dir, out_dir).string()},
                                {"sample_sets", cell.metrics.at("sample_sets")}});
    cells.push_back(std::move(cell));
  }
  std::filesystem::create_directories(out_dir);
  WriteFileBytes((out_dir / "sweep.json").string(), summary.dump(2) + "\n");
  return cells;
}

}  // namespace ragdp
