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
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/error.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

// Augmentations applied as flip(rotate(scale(x + jitter))). Rotation only
// applies to 2-D data. The default-constructed config is the identity.
struct AugmentConfig {
  double jitter_sigma = 0.0;
  double scale_lo = 1.0;
  double scale_hi = 1.0;
  double rotation_max_radians = 0.0;
  std::vector<bool> flip_axes;  // empty = no flips

  void Validate() const {
    internal::Require(jitter_sigma >= 0 && std::isfinite(jitter_sigma) &&
                          std::isfinite(scale_lo) && std::isfinite(scale_hi) &&
                          scale_lo <= scale_hi && rotation_max_radians >= 0 &&
                          std::isfinite(rotation_max_radians),
                      ErrorCode::kInvalidArgument, "invalid augmentation config");
  }
};

// One concrete draw of the random augmentation parameters.
struct AugmentDraw {
  Vec jitter;  // empty = none
  double scale = 1.0;
  double angle = 0.0;
  std::vector<bool> flips;
};

inline Vec ApplyAugmentation(const Vec& x, const AugmentDraw& draw) {
  Vec y = x;
  if (draw.jitter.size() > 0) y += draw.jitter;
  y *= draw.scale;
  if (draw.angle != 0.0 && y.size() == 2) {
    const double c = std::cos(draw.angle);
    const double s = std::sin(draw.angle);
    const double a = y[0];
    const double b = y[1];
    y[0] = c * a - s * b;
    y[1] = s * a + c * b;
  }
  for (std::size_t i = 0; i < draw.flips.size() && i < static_cast<std::size_t>(y.size()); ++i) {
    if (draw.flips[i]) y[static_cast<Eigen::Index>(i)] = -y[static_cast<Eigen::Index>(i)];
  }
  return y;
}

inline AugmentDraw DrawAugmentation(Eigen::Index dim, const AugmentConfig& cfg, Rng& rng) {
  AugmentDraw d;
  if (cfg.jitter_sigma > 0) d.jitter = cfg.jitter_sigma * StandardNormal(rng, dim);
  if (cfg.scale_lo < cfg.scale_hi) {
    d.scale = Uniform(rng, cfg.scale_lo, cfg.scale_hi);
  } else {
    d.scale = cfg.scale_lo;
  }
  if (cfg.rotation_max_radians > 0 && dim == 2) {
    d.angle = Uniform(rng, -cfg.rotation_max_radians, cfg.rotation_max_radians);
  }
  std::bernoulli_distribution coin(0.5);
  for (bool enabled : cfg.flip_axes) d.flips.push_back(enabled && coin(rng));
  return d;
}

inline Vec Augment(const Vec& x, const AugmentConfig& cfg, Rng& rng) {
  return ApplyAugmentation(x, DrawAugmentation(x.size(), cfg, rng));
}

inline double CosineSimilarity(const Vec& a, const Vec& b) {
  internal::Require(a.size() == b.size(), ErrorCode::kDimensionMismatch,
                    "similarity of vectors with different dimensions");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "cosine similarity of a zero-norm feature");
  }
  return a.dot(b) / (na * nb);
}

namespace internal {

inline double LogSumExp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace internal

// -log( exp(s_p / tau) / (exp(s_p / tau) + sum_n exp(s_n / tau)) ) with cosine
// similarities s.
inline double InfoNceLoss(const Vec& anchor, const Vec& positive,
                          std::span<const Vec> negatives, double temperature) {
  internal::Require(temperature > 0, ErrorCode::kInvalidArgument,
                    "temperature must be positive");
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(CosineSimilarity(anchor, positive) / temperature);
  for (const Vec& n : negatives) logits.push_back(CosineSimilarity(anchor, n) / temperature);
  return internal::LogSumExp(logits) - logits[0];
}

struct InfoNceGradient {
  double loss = 0.0;
  Vec d_anchor;
  Vec d_positive;
  std::vector<Vec> d_negatives;
};

// InfoNCE over unit-norm features, where cosine similarity is the dot
// product. Gradients are with respect to the unit features themselves.
inline InfoNceGradient InfoNceOnUnitFeatures(const Vec& anchor, const Vec& positive,
                                             std::span<const Vec* const> negatives,
                                             double temperature) {
  std::vector<double> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(anchor.dot(positive) / temperature);
  for (const Vec* n : negatives) logits.push_back(anchor.dot(*n) / temperature);
  const double lse = internal::LogSumExp(logits);
  InfoNceGradient g;
  g.loss = lse - logits[0];
  // d loss / d logit_j = softmax_j - [j == positive]
  const double w_pos = std::exp(logits[0] - lse) - 1.0;
  g.d_anchor = (w_pos / temperature) * positive;
  g.d_positive = (w_pos / temperature) * anchor;
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const double w = std::exp(logits[j + 1] - lse);
    g.d_anchor += (w / temperature) * *negatives[j];
    g.d_negatives.push_back((w / temperature) * anchor);
  }
  return g;
}

// One-step denoising projection of x_k to the input space:
// x0_hat = (x_k - sqrt(1 - abar_k) eps_theta(x_k, k)) / sqrt(abar_k).
// Queried without a class label.
template <NoisePredictor P>
Vec ProjectToData(const P& denoiser, const Vec& x_k, int k,
                  const VarianceSchedule& schedule) {
  return PredictX0(x_k, k, denoiser.Predict(x_k, k, std::nullopt), schedule);
}

inline Vec NormalizeFeature(const Vec& u) {
  const double n = u.norm();
  if (n == 0.0 || !std::isfinite(n)) {
    throw Error(ErrorCode::kInvalidArgument, "feature has zero or non-finite norm");
  }
  return u / n;
}

// z_k = normalize(h(x0_hat(x_k, k))).
template <NoisePredictor P>
Vec ExtractFeature(const DenseNet& extractor, const P& denoiser, const Vec& x_k, int k,
                   const VarianceSchedule& schedule) {
  return NormalizeFeature(Forward(extractor, ProjectToData(denoiser, x_k, k, schedule)));
}

struct ExtractorSpec {
  std::vector<int> hidden = {64, 64};
  int feature_dim = 16;
  Activation hidden_activation = Activation::kRelu;
};

inline DenseNet MakeExtractor(int data_dim, const ExtractorSpec& spec, Rng& rng) {
  std::vector<int> widths{data_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.feature_dim);
  return DenseNet::Random(widths, spec.hidden_activation, Activation::kIdentity, rng);
}

struct ContrastiveConfig {
  double temperature = 0.5;
  int negatives_per_anchor = 0;  // 0 = every other anchor in the batch
  int key_timestep = 80;
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 1e-3;
};

struct ExtractorTrainingResult {
  DenseNet extractor;
  std::vector<double> epoch_losses;
};

namespace internal {

struct View {
  ForwardTrace trace;
  Vec unit;
  double norm = 0.0;
};

// Mean InfoNCE over one batch of anchors, optionally accumulating the mean
// gradient with respect to the extractor's parameters. Each anchor gets two
// augmented views diffused to timestep k with independent noise; negatives
// are the second views of other anchors.
template <NoisePredictor P>
double ContrastiveBatch(const DenseNet& h, const P& denoiser,
                        const VarianceSchedule& schedule, std::span<const Vec> points,
                        std::span<const std::size_t> batch, const ContrastiveConfig& cfg,
                        const AugmentConfig& aug, Rng& rng, GradientVector* grad) {
  const std::size_t n = batch.size();
  std::vector<View> first(n), second(n);
  auto make_view = [&](const Vec& x, View& view) {
    const Vec augmented = Augment(x, aug, rng);
    const Vec eps = StandardNormal(rng, x.size());
    const Vec x_k = ForwardDiffuse(augmented, cfg.key_timestep, eps, schedule);
    const Vec u = Forward(h, ProjectToData(denoiser, x_k, cfg.key_timestep, schedule),
                          &view.trace);
    view.norm = u.norm();
    view.unit = NormalizeFeature(u);
  };
  for (std::size_t i = 0; i < n; ++i) {
    make_view(points[batch[i]], first[i]);
    make_view(points[batch[i]], second[i]);
  }
  const std::size_t max_neg =
      cfg.negatives_per_anchor > 0
          ? std::min<std::size_t>(cfg.negatives_per_anchor, n - 1)
          : n - 1;
  std::vector<Vec> d_first(n, Vec::Zero(h.output_dim()));
  std::vector<Vec> d_second(n, Vec::Zero(h.output_dim()));
  double total = 0.0;
  std::vector<const Vec*> negs;
  std::vector<std::size_t> neg_idx;
  for (std::size_t i = 0; i < n; ++i) {
    negs.clear();
    neg_idx.clear();
    for (std::size_t off = 1; off <= max_neg; ++off) {
      const std::size_t j = (i + off) % n;
      negs.push_back(&second[j].unit);
      neg_idx.push_back(j);
    }
    InfoNceGradient g =
        InfoNceOnUnitFeatures(first[i].unit, second[i].unit, negs, cfg.temperature);
    total += g.loss;
    if (grad) {
      d_first[i] += g.d_anchor;
      d_second[i] += g.d_positive;
      for (std::size_t m = 0; m < neg_idx.size(); ++m) d_second[neg_idx[m]] += g.d_negatives[m];
    }
  }
  if (grad) {
    *grad = GradientVector(h.parameter_count());
    auto backprop = [&](const View& view, const Vec& dz) {
      // Through z = u / ||u||.
      const Vec du = (dz - view.unit * view.unit.dot(dz)) / view.norm;
      *grad += Backward(h, view.trace, du).params;
    };
    for (std::size_t i = 0; i < n; ++i) {
      backprop(first[i], d_first[i]);
      backprop(second[i], d_second[i]);
    }
    *grad *= 1.0 / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

}  // namespace internal

// Mean contrastive loss of `h` over `points` without updating it.
template <NoisePredictor P>
double EvaluateContrastiveLoss(const DenseNet& h, const P& denoiser,
                               const VarianceSchedule& schedule, std::span<const Vec> points,
                               const ContrastiveConfig& cfg, const AugmentConfig& aug,
                               Rng& rng) {
  internal::Require(points.size() >= 2, ErrorCode::kInvalidArgument,
                    "contrastive loss needs at least two points");
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t batches = 0;
  const std::size_t bs = static_cast<std::size_t>(std::max(cfg.batch_size, 2));
  for (std::size_t start = 0; start + 1 < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < 2) break;
    total += internal::ContrastiveBatch(h, denoiser, schedule, points,
                                        std::span(order).subspan(start, end - start), cfg,
                                        aug, rng, nullptr);
    ++batches;
  }
  return total / static_cast<double>(batches);
}

// Contrastive training of the latent feature extractor with Adam. The
// denoiser is frozen; only h's parameters move.
template <NoisePredictor P>
ExtractorTrainingResult TrainExtractor(const P& denoiser, const VarianceSchedule& schedule,
                                       std::span<const Vec> reference, DenseNet initial,
                                       const ContrastiveConfig& cfg, const AugmentConfig& aug,
                                       Rng& rng) {
  internal::Require(!reference.empty(), ErrorCode::kInvalidArgument,
                    "reference dataset is empty");
  internal::Require(cfg.temperature > 0, ErrorCode::kInvalidArgument,
                    "temperature must be positive");
  internal::Require(cfg.key_timestep >= 1 && cfg.key_timestep <= schedule.horizon,
                    ErrorCode::kOutOfRange, "key timestep out of [1, T]");
  aug.Validate();
  ExtractorTrainingResult result{std::move(initial), {}};
  AdamState adam = AdamState::Fresh(result.extractor.parameter_count(), cfg.learning_rate);
  std::vector<std::size_t> order(reference.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(std::max(cfg.batch_size, 2));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) break;
      GradientVector grad;
      total += internal::ContrastiveBatch(result.extractor, denoiser, schedule, reference,
                                          std::span(order).subspan(start, end - start),
                                          cfg, aug, rng, &grad);
      AdamStep(result.extractor, adam, grad);
      ++batches;
    }
    result.epoch_losses.push_back(batches ? total / static_cast<double>(batches) : 0.0);
  }
  return result;
}

inline Checkpoint ExtractorCheckpoint(const DenseNet& extractor, int key_timestep) {
  Checkpoint ckpt;
  ckpt.role = "extractor";
  ckpt.key_timestep = static_cast<std::uint32_t>(key_timestep);
  ckpt.net = extractor;
  return ckpt;
}

// Rejects checkpoints with the wrong role or a key timestep other than the
// one the caller is about to use.
inline DenseNet ExtractorFromCheckpoint(const Checkpoint& ckpt, int expected_key_timestep) {
  if (ckpt.role != "extractor") {
    throw Error(ErrorCode::kFormat,
                "checkpoint role is \"" + ckpt.role + "\", expected \"extractor\"");
  }
  if (!ckpt.key_timestep ||
      static_cast<int>(*ckpt.key_timestep) != expected_key_timestep) {
    throw Error(ErrorCode::kInvalidArgument,
                "extractor was trained for key timestep " +
                    (ckpt.key_timestep ? std::to_string(*ckpt.key_timestep) : "none") +
                    ", expected " + std::to_string(expected_key_timestep));
  }
  return ckpt.net;
}

inline Digest ExtractorChecksum(const DenseNet& extractor, int key_timestep) {
  return Sha256(EncodeCheckpoint(ExtractorCheckpoint(extractor, key_timestep)));
}

}  // namespace ragdp
