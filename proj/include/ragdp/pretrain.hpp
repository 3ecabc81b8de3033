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

#include <algorithm>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

struct PretrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double learning_rate = 2e-3;
  // Cosine decay from learning_rate to final_lr_fraction * learning_rate over
  // the run. 1 keeps the rate constant.
  double final_lr_fraction = 0.05;
  // Probability of replacing the label with the null class during training,
  // so conditional models also learn the label-free path.
  double label_dropout = 0.05;
};

struct PretrainResult {
  DenoiserModel model;
  std::vector<double> epoch_losses;
};

// Non-private denoiser training on the DDPM objective with Adam.
inline PretrainResult PretrainDenoiser(DenoiserModel model, std::span<const Vec> data,
                                       std::span<const int> labels,
                                       const VarianceSchedule& schedule,
                                       const PretrainConfig& cfg, Rng& rng) {
  internal::Require(!data.empty(), ErrorCode::kInvalidArgument, "pretraining data is empty");
  internal::Require(labels.empty() || labels.size() == data.size(),
                    ErrorCode::kDimensionMismatch, "labels do not match data");
  internal::Require(cfg.batch_size >= 1 && cfg.epochs >= 0, ErrorCode::kInvalidArgument,
                    "bad pretraining config");
  internal::Require(cfg.final_lr_fraction > 0 && cfg.final_lr_fraction <= 1,
                    ErrorCode::kInvalidArgument, "final_lr_fraction must lie in (0, 1]");
  PretrainResult out{std::move(model), {}};
  AdamState adam = AdamState::Fresh(out.model.parameter_count(), cfg.learning_rate);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const bool use_labels = out.model.conditional() && !labels.empty();
  std::bernoulli_distribution drop(std::clamp(cfg.label_dropout, 0.0, 1.0));
  GradientVector grad, g;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    adam.learning_rate =
        cfg.learning_rate * (cfg.final_lr_fraction +
                             (1 - cfg.final_lr_fraction) * 0.5 *
                                 (1 + std::cos(std::numbers::pi * progress)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      grad = GradientVector(out.model.parameter_count());
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        std::optional<int> label;
        if (use_labels && !drop(rng)) label = labels[idx];
        total += DdpmLossAndGradient(out.model, data[idx], label, schedule, rng, &g,
                                     static_cast<long long>(b - start))
                     .loss;
        grad += g;
      }
      grad *= 1.0 / static_cast<double>(end - start);
      Vec params = out.model.Parameters();
      AdamUpdate(params, adam, grad);
      out.model.SetParameters(params);
    }
    out.epoch_losses.push_back(total / static_cast<double>(data.size()));
  }
  return out;
}

}  // namespace ragdp
