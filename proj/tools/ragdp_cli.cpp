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

// Command-line front end for the ragdp pipeline.
//
//   ragdp [--config f.json] [--seed N] [--out DIR] [--override k=v ...] <command>
//
// On success the command prints a JSON summary on stdout and exits 0. On
// failure it prints {"error": {...}} on stderr and exits nonzero.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ragdp/ragdp.hpp"

namespace {

int ExitCodeFor(ragdp::ErrorCode code) {
  switch (code) {
    case ragdp::ErrorCode::kMissingArtifact:
      return 3;
    case ragdp::ErrorCode::kChecksumMismatch:
      return 4;
    case ragdp::ErrorCode::kBudgetExceeded:
      return 5;
    case ragdp::ErrorCode::kIo:
      return 6;
    case ragdp::ErrorCode::kInvalidArgument:
    case ragdp::ErrorCode::kDimensionMismatch:
    case ragdp::ErrorCode::kOutOfRange:
    case ragdp::ErrorCode::kFormat:
      return 2;
    default:
      return 1;
  }
}

int ReportError(const std::string& command, const std::string& code, const std::string& message,
                int exit_code) {
  ragdp::Json err{{"error",
                   {{"command", command},
                    {"code", code},
                    {"message", message},
                    {"exit_code", exit_code}}}};
  std::cerr << err.dump() << "\n";
  return exit_code;
}

void PrintEfficiency(const ragdp::Pipeline& p) {
  ragdp::Json timings = ragdp::Json::object();
  const auto tpath = p.dir() / "timings.json";
  if (std::filesystem::exists(tpath)) {
    timings = ragdp::Json::parse(ragdp::ReadFileBytes(tpath.string()), nullptr, false);
  }
  std::vector<ragdp::EfficiencyRecord> records;
  for (const auto& [name, rec] : p.manifest().at("stages").items()) {
    if (!name.starts_with("sample/")) continue;
    ragdp::EfficiencyRecord r;
    r.mode = name.substr(7);
    r.samples = rec.at("metrics").at("samples").get<std::int64_t>();
    r.denoiser_calls = rec.at("metrics").at("denoiser_calls").get<std::int64_t>();
    if (timings.is_object() && timings.contains(name)) {
      r.wall_seconds = timings[name].value("wall_seconds", 0.0);
    }
    records.push_back(r);
  }
  if (records.empty()) return;
  const auto rows = ragdp::EfficiencyReport(records);
  std::cerr << ragdp::FormatEfficiencyTable(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented DP fine-tuning of diffusion models on toy data"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "ragdp_out";
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file (merged over the defaults)");
  app.add_option("--seed", seed, "Top-level seed");
  app.add_option("--out", out_dir, "Experiment directory")->capture_default_str();
  app.add_option("--override", overrides, "key=value, dotted keys; repeatable")
      ->allow_extra_args(false);

  auto* c_gen = app.add_subcommand("generate-data", "Generate pub_pre, pub_ref, prv, holdout");
  auto* c_pre = app.add_subcommand("pretrain", "Pretrain the denoiser on pub_pre");
  auto* c_ext = app.add_subcommand("train-extractor", "Contrastive training of the extractor");
  auto* c_kb = app.add_subcommand("build-kb", "Build the knowledge base from pub_ref");
  auto* c_dp = app.add_subcommand("dp-finetune", "Retrieval-augmented DP fine-tuning on prv");
  auto* c_sample = app.add_subcommand("sample", "Draw synthetic samples");
  std::string sample_mode = "rag";
  std::string sample_model = "finetuned";
  c_sample->add_option("--mode", sample_mode, "full or rag")->capture_default_str();
  c_sample->add_option("--model", sample_model, "pretrained or finetuned")
      ->capture_default_str();
  auto* c_eval = app.add_subcommand("evaluate", "Frechet, coverage, retrieval, efficiency");
  auto* c_sweep = app.add_subcommand("sweep", "One full run per value of a config key");
  std::optional<std::string> sweep_key;
  std::optional<std::string> sweep_values;
  c_sweep->add_option("--key", sweep_key, "Dotted config key (default: sweep.key)");
  c_sweep->add_option("--values", sweep_values, "JSON array (default: sweep.values)");
  auto* c_run = app.add_subcommand("run", "All stages in order");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return ReportError("", "usage", e.what(), 64);
  }

  std::string command = app.get_subcommands().front()->get_name();
  try {
    const ragdp::Json config = ragdp::ResolveConfig(config_path, seed, overrides);
    auto progress = [](std::string_view msg) { std::cerr << "[ragdp] " << msg << "\n"; };
    ragdp::Json result;

    if (*c_sweep) {
      const ragdp::ExperimentConfig parsed = ragdp::ParseConfig(config);
      const std::string key = sweep_key.value_or(parsed.sweep_key);
      ragdp::Json values = parsed.sweep_values;
      if (sweep_values) {
        values = ragdp::Json::parse(*sweep_values, nullptr, false);
        if (values.is_discarded()) {
          throw ragdp::Error(ragdp::ErrorCode::kInvalidArgument, "--values is not JSON");
        }
      }
      const auto cells = ragdp::RunSweep(out_dir, config, key, values, progress);
      result = ragdp::Json::parse(
          ragdp::ReadFileBytes((std::filesystem::path(out_dir) / "sweep.json").string()));
    } else {
      ragdp::Pipeline p(out_dir, config, progress);
      if (*c_gen) {
        p.GenerateData();
      } else if (*c_pre) {
        p.Pretrain();
      } else if (*c_ext) {
        p.TrainExtractorStage();
      } else if (*c_kb) {
        p.BuildKb();
      } else if (*c_dp) {
        p.DpFinetuneStage();
      } else if (*c_sample) {
        p.Sample(ragdp::ParseSampleModel(sample_model), ragdp::ParseSampleMode(sample_mode));
        command += "/" + ragdp::SampleSetName(ragdp::ParseSampleModel(sample_model),
                                              ragdp::ParseSampleMode(sample_mode));
      } else if (*c_eval) {
        p.Evaluate();
        PrintEfficiency(p);
      } else if (*c_run) {
        p.RunAll();
        PrintEfficiency(p);
      }
      const auto& stages = p.manifest().at("stages");
      if (*c_run || *c_eval) {
        result = ragdp::Json::parse(
            ragdp::ReadFileBytes((p.dir() / "eval/metrics.json").string()));
      } else {
        result = stages.at(command);
      }
    }
    std::cout << ragdp::Json{{"command", command}, {"out", out_dir}, {"result", result}}.dump(2)
              << "\n";
    return 0;
  } catch (const ragdp::Error& e) {
    return ReportError(command, std::string(ragdp::ErrorCodeName(e.code())), e.what(),
                       ExitCodeFor(e.code()));
  } catch (const std::exception& e) {
    return ReportError(command, "internal", e.what(), 1);
  }
}
