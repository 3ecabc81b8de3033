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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ragdp/accountant.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/contrastive.hpp"
#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/error.hpp"
#include "ragdp/knowledge_base.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

struct DpConfig {
  double clip_norm = 1.0;
  // sigma. Zero selects the non-private testing mode: no noise is added and
  // nothing is recorded in the privacy ledger.
  double noise_scale = 1.0;
  int expected_batch = 64;
  int iterations = 100;
  int k_timestep = 80;
  int v_timestep = 20;
  double delta = 1e-5;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  int v_prime_draws = 1;
  int retrieval_topk = 1;  // > 1 averages the retrieved values
  std::optional<double> epsilon_budget;

  void Validate(std::size_t private_size) const {
    internal::Require(clip_norm > 0, ErrorCode::kInvalidArgument, "clip norm must be positive");
    internal::Require(noise_scale >= 0, ErrorCode::kInvalidArgument, "sigma must be >= 0");
    internal::Require(expected_batch >= 1 &&
                          static_cast<std::size_t>(expected_batch) <= private_size,
                      ErrorCode::kInvalidArgument, "need 1 <= B <= |D_prv|");
    internal::Require(iterations >= 0, ErrorCode::kInvalidArgument, "iterations must be >= 0");
    internal::Require(0 < v_timestep && v_timestep < k_timestep, ErrorCode::kInvalidArgument,
                      "need 0 < v < k");
    internal::Require(delta > 0 && delta < 1, ErrorCode::kInvalidArgument,
                      "delta must lie in (0, 1)");
    internal::Require(v_prime_draws >= 1 && retrieval_topk >= 1, ErrorCode::kInvalidArgument,
                      "draw counts must be >= 1");
  }

  // Standard advice: delta below 1 / |D_prv|.
  bool DeltaAdvised(std::size_t private_size) const {
    return delta < 1.0 / static_cast<double>(private_size);
  }
};

// Each index is kept independently with probability B / n.
inline std::vector<std::size_t> PoissonSample(std::size_t n, int expected_batch, Rng& rng) {
  internal::Require(n > 0 && expected_batch >= 1 &&
                        static_cast<std::size_t>(expected_batch) <= n,
                    ErrorCode::kInvalidArgument, "need 1 <= B <= |D|");
  const double q = static_cast<double>(expected_batch) / static_cast<double>(n);
  std::bernoulli_distribution keep(q);
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep(rng)) batch.push_back(i);
  }
  return batch;
}

// Target and model input of the retrieval-augmented loss at timestep v'.
//   noise  n = (x_hat_v - sqrt(abar_v) x) / sqrt(1 - abar_v)
//   input  m = sqrt(abar_v') x + sqrt(1 - abar_v') n
struct RagTerms {
  Vec target_noise;
  Vec model_input;
};

inline RagTerms ComputeRagTerms(const Vec& x, const Vec& x_hat_v, int v, int v_prime,
                                const VarianceSchedule& schedule) {
  internal::Require(v >= 1 && v <= schedule.horizon, ErrorCode::kOutOfRange,
                    "v out of [1, T]");
  internal::Require(v_prime >= 1 && v_prime <= v, ErrorCode::kOutOfRange,
                    "v' out of [1, v]");
  internal::Require(x.size() == x_hat_v.size(), ErrorCode::kDimensionMismatch,
                    "private example and retrieved value differ in dim");
  const double ab_v = schedule.AlphaBar(v);
  const double ab_vp = schedule.AlphaBar(v_prime);
  const Vec residual = x_hat_v - std::sqrt(ab_v) * x;
  RagTerms terms;
  terms.target_noise = residual / std::sqrt(1.0 - ab_v);
  terms.model_input =
      std::sqrt(ab_vp) * x + (std::sqrt(1.0 - ab_vp) / std::sqrt(1.0 - ab_v)) * residual;
  return terms;
}

struct RagLossDraw {
  double loss = 0.0;
  int v_prime = 0;
};

// ||n - eps_theta(m, v')||^2 for v' ~ U{1..v}.
template <NoisePredictor P>
RagLossDraw RagDiffusionLoss(const P& net, const Vec& x, const Vec& x_hat_v,
                             std::optional<int> label, const VarianceSchedule& schedule, int v,
                             Rng& rng) {
  internal::Require(v >= 1 && v <= schedule.horizon, ErrorCode::kOutOfRange, "v out of [1, T]");
  const int v_prime = UniformInt(rng, 1, v);
  const RagTerms terms = ComputeRagTerms(x, x_hat_v, v, v_prime, schedule);
  return {(terms.target_noise - net.Predict(terms.model_input, v_prime, label)).squaredNorm(),
          v_prime};
}

// Mean over `draws` independent v' samples of the loss and its gradient.
inline double RagLossAndGradient(const DenoiserModel& net, const Vec& x, const Vec& x_hat_v,
                                 std::optional<int> label, const VarianceSchedule& schedule,
                                 int v, int draws, Rng& rng, GradientVector& grad,
                                 long long example_index = -1) {
  internal::Require(v >= 1 && v <= schedule.horizon, ErrorCode::kOutOfRange, "v out of [1, T]");
  grad = GradientVector(net.parameter_count());
  double total = 0.0;
  GradientVector g;
  for (int d = 0; d < draws; ++d) {
    const int v_prime = UniformInt(rng, 1, v);
    const RagTerms terms = ComputeRagTerms(x, x_hat_v, v, v_prime, schedule);
    total += net.LossAndGradient(terms.model_input, v_prime, label, terms.target_noise, &g,
                                 example_index);
    grad += g;
  }
  grad *= 1.0 / draws;
  return total / draws;
}

// g / max(1, ||g|| / C)
inline GradientVector ClipGradient(const GradientVector& g, double clip_norm) {
  internal::Require(clip_norm > 0, ErrorCode::kInvalidArgument, "clip norm must be positive");
  const double norm = g.Norm();
  // A rescaled gradient can land a few ulps above C; treat that as clipped so
  // clipping is idempotent.
  if (norm <= clip_norm * (1.0 + 8 * std::numeric_limits<double>::epsilon())) return g;
  GradientVector out = g;
  out *= 1.0 / (norm / clip_norm);
  return out;
}

// (1/B) sum of clipped gradients + (C/B) N(0, sigma^2 I). B is the expected
// batch size, not the realized count.
inline GradientVector SanitizeBatchGradient(std::span<const GradientVector> clipped,
                                            double clip_norm, double sigma, int expected_batch,
                                            Rng& rng) {
  internal::Require(!clipped.empty(), ErrorCode::kInvalidArgument,
                    "sanitize needs at least one gradient");
  internal::Require(expected_batch >= 1 && clip_norm > 0 && sigma >= 0,
                    ErrorCode::kInvalidArgument, "bad sanitization parameters");
  GradientVector sum(clipped[0].size());
  for (std::size_t i = 0; i < clipped.size(); ++i) {
    if (clipped[i].Norm() > clip_norm + 1e-9) {
      throw Error(ErrorCode::kInvariantViolation,
                  "gradient " + std::to_string(i) + " exceeds the clip norm");
    }
    sum += clipped[i];
  }
  sum *= 1.0 / expected_batch;
  if (sigma > 0) {
    sum.values += (clip_norm * sigma / expected_batch) * StandardNormal(rng, sum.size());
  }
  return sum;
}

struct IterationRecord {
  int batch_size = 0;
  double grad_norm_min = 0.0;
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;
  double loss_mean = 0.0;
};

struct TrainingRunRecord {
  std::vector<IterationRecord> iterations;
  Digest checksum_before{};
  Digest checksum_after{};
  double wall_seconds = 0.0;
};

struct DpFinetuneResult {
  DenoiserModel model;
  TrainingRunRecord record;
  AdamState adam;
};

namespace internal {

// Retrieved surrogate latent at timestep v: the top-1 value, or the mean of
// the top-k values when topk > 1.
inline Vec RetrieveValue(const KnowledgeBase& kb, const Vec& feature, int topk) {
  const std::vector<KbHit> hits = QueryKnowledgeBase(kb, feature, topk);
  Vec out = kb.entries[hits[0].index].value;
  for (std::size_t i = 1; i < hits.size(); ++i) out += kb.entries[hits[i].index].value;
  return out / static_cast<double>(hits.size());
}

}  // namespace internal

// Retrieval-augmented DP fine-tuning. `key_denoiser` is the frozen model the
// knowledge base keys were computed with; `initial` is the model being tuned
// (usually a copy of the same weights). Only the tuned model's parameters
// change.
inline DpFinetuneResult DpFinetune(DenoiserModel initial, const DenoiserModel& key_denoiser,
                                   std::span<const Vec> private_data,
                                   std::span<const int> private_labels,
                                   const KnowledgeBase& kb, const DenseNet& extractor,
                                   const VarianceSchedule& schedule, const DpConfig& cfg,
                                   PrivacyLedger& ledger,
                                   std::optional<AdamState> resume = std::nullopt) {
  const auto start_time = std::chrono::steady_clock::now();
  internal::Require(!private_data.empty(), ErrorCode::kInvalidArgument,
                    "private dataset is empty");
  cfg.Validate(private_data.size());
  internal::Require(kb.k_timestep == cfg.k_timestep && kb.v_timestep == cfg.v_timestep,
                    ErrorCode::kInvalidArgument,
                    "knowledge base timesteps do not match the DP config");
  internal::Require(private_labels.empty() || private_labels.size() == private_data.size(),
                    ErrorCode::kDimensionMismatch, "labels do not match private data");
  internal::Require(cfg.v_timestep < schedule.horizon && cfg.k_timestep < schedule.horizon,
                    ErrorCode::kOutOfRange, "timesteps must be below T");
  const bool privatized = cfg.noise_scale > 0;

  DpFinetuneResult out;
  out.model = std::move(initial);
  out.record.checksum_before = ModelChecksum(out.model);
  out.adam = resume ? std::move(*resume)
                    : AdamState::Fresh(out.model.parameter_count(), cfg.learning_rate);
  if (privatized) {
    ledger.sampling_rate =
        static_cast<double>(cfg.expected_batch) / static_cast<double>(private_data.size());
  }

  const bool use_labels = out.model.conditional() && !private_labels.empty();
  std::vector<GradientVector> clipped;
  for (int it = 0; it < cfg.iterations; ++it) {
    if (privatized && cfg.epsilon_budget && ledger.steps > 0 &&
        ToDp(ledger, cfg.delta).epsilon > *cfg.epsilon_budget) {
      throw Error(ErrorCode::kBudgetExceeded, "privacy ledger already exceeds the budget");
    }
    Rng batch_rng = Substream(cfg.seed, {0, static_cast<std::uint64_t>(it)});
    const std::vector<std::size_t> batch =
        PoissonSample(private_data.size(), cfg.expected_batch, batch_rng);

    IterationRecord rec;
    rec.batch_size = static_cast<int>(batch.size());
    rec.grad_norm_min = std::numeric_limits<double>::infinity();
    clipped.clear();
    double loss_sum = 0.0;
    double norm_sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t idx = batch[b];
      Rng ex_rng = Substream(cfg.seed, {1, static_cast<std::uint64_t>(it), idx});
      const Vec& x = private_data[idx];
      const Vec x_k = ForwardDiffuse(x, cfg.k_timestep, StandardNormal(ex_rng, x.size()),
                                     schedule);
      const Vec z = ExtractFeature(extractor, key_denoiser, x_k, cfg.k_timestep, schedule);
      const Vec x_hat_v = internal::RetrieveValue(kb, z, cfg.retrieval_topk);
      const std::optional<int> label =
          use_labels ? std::optional<int>(private_labels[idx]) : std::nullopt;
      GradientVector g;
      loss_sum += RagLossAndGradient(out.model, x, x_hat_v, label, schedule, cfg.v_timestep,
                                     cfg.v_prime_draws, ex_rng, g,
                                     static_cast<long long>(b));
      const double n = g.Norm();
      norm_sum += n;
      rec.grad_norm_min = std::min(rec.grad_norm_min, n);
      rec.grad_norm_max = std::max(rec.grad_norm_max, n);
      clipped.push_back(ClipGradient(g, cfg.clip_norm));
    }
    if (!batch.empty()) {
      rec.grad_norm_mean = norm_sum / static_cast<double>(batch.size());
      rec.loss_mean = loss_sum / static_cast<double>(batch.size());
      Rng noise_rng = Substream(cfg.seed, {2, static_cast<std::uint64_t>(it)});
      const GradientVector sanitized = SanitizeBatchGradient(
          clipped, cfg.clip_norm, cfg.noise_scale, cfg.expected_batch, noise_rng);
      Vec params = out.model.Parameters();
      AdamUpdate(params, out.adam, sanitized);
      out.model.SetParameters(params);
    } else {
      rec.grad_norm_min = 0.0;
    }
    if (privatized) RecordStep(ledger, cfg.noise_scale);
    out.record.iterations.push_back(rec);
  }
  out.record.checksum_after = ModelChecksum(out.model);
  out.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return out;
}

struct RagSamples {
  std::vector<Vec> samples;
  std::vector<std::size_t> retrieved;  // KB entry index per sample
  std::int64_t denoiser_calls = 0;
};

struct RagInferenceConfig {
  int k_timestep = 80;
  int v_timestep = 20;
  int steps_early = 20;
  int steps_late = 20;
  int retrieval_topk = 1;
};

// Per sample: x_T ~ N(0, I); DDIM T -> k with the key denoiser; extract the
// feature (one more key-denoiser call); retrieve x_hat_v; DDIM v -> 0 with
// `net`. Sample i draws from Substream(seed, {i}).
template <NoisePredictor P, NoisePredictor K>
RagSamples RagInference(const P& net, const K& key_denoiser, const KnowledgeBase& kb,
                        const DenseNet& extractor, const VarianceSchedule& schedule,
                        int n_samples, const RagInferenceConfig& cfg, std::uint64_t seed,
                        std::span<const int> labels = {}) {
  internal::Require(kb.k_timestep == cfg.k_timestep && kb.v_timestep == cfg.v_timestep,
                    ErrorCode::kInvalidArgument, "knowledge base timesteps do not match");
  internal::Require(n_samples >= 0, ErrorCode::kInvalidArgument, "n_samples must be >= 0");
  internal::Require(labels.empty() || labels.size() == static_cast<std::size_t>(n_samples),
                    ErrorCode::kDimensionMismatch, "one label per sample expected");
  RagSamples out;
  CountingPredictor<P> counted_net(net);
  CountingPredictor<K> counted_key(key_denoiser);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = Substream(seed, {static_cast<std::uint64_t>(i)});
    const std::optional<int> label =
        labels.empty() ? std::nullopt : std::optional<int>(labels[i]);
    const Vec x_T = StandardNormal(rng, kb.d_data);
    const Trajectory early = SamplePartial(counted_key, x_T, schedule.horizon, cfg.k_timestep,
                                           cfg.steps_early, schedule, label);
    const Vec z =
        ExtractFeature(extractor, counted_key, early.final_latent(), cfg.k_timestep, schedule);
    const std::vector<KbHit> hits = QueryKnowledgeBase(kb, z, cfg.retrieval_topk);
    Vec x_hat_v = kb.entries[hits[0].index].value;
    for (std::size_t h = 1; h < hits.size(); ++h) x_hat_v += kb.entries[hits[h].index].value;
    x_hat_v /= static_cast<double>(hits.size());
    const Trajectory late =
        SamplePartial(counted_net, x_hat_v, cfg.v_timestep, 0, cfg.steps_late, schedule, label);
    out.samples.push_back(late.final_latent());
    out.retrieved.push_back(hits[0].index);
  }
  out.denoiser_calls = counted_net.calls() + counted_key.calls();
  return out;
}

template <NoisePredictor P>
RagSamples RagInference(const P& net, const KnowledgeBase& kb, const DenseNet& extractor,
                        const VarianceSchedule& schedule, int n_samples,
                        const RagInferenceConfig& cfg, std::uint64_t seed,
                        std::span<const int> labels = {}) {
  return RagInference(net, net, kb, extractor, schedule, n_samples, cfg, seed, labels);
}

}  // namespace ragdp
