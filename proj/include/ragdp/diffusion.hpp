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
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/denoiser.hpp"
#include "ragdp/error.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

enum class ScheduleKind : std::uint8_t { kLinear = 0, kCosine = 1 };

inline ScheduleKind ParseScheduleKind(std::string_view name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown schedule kind \"" + std::string(name) + "\"");
}

// beta/alpha/alpha_bar are stored 0-based: entry [t - 1] belongs to timestep t.
// alpha_bar at t = 0 is defined as 1 and served by AlphaBar(0).
struct VarianceSchedule {
  int horizon = 0;
  ScheduleKind kind = ScheduleKind::kLinear;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double AlphaBar(int t) const {
    if (t == 0) return 1.0;
    internal::Require(t >= 1 && t <= horizon, ErrorCode::kOutOfRange,
                      "timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(horizon) + "]");
    return alpha_bar[t - 1];
  }

  // Hash of the exact beta table; ties knowledge bases to their schedule.
  Digest Hash() const {
    ByteWriter w;
    w.PutU32(static_cast<std::uint32_t>(horizon));
    w.PutU8(static_cast<std::uint8_t>(kind));
    w.PutF64s(beta);
    return Sha256(w.bytes());
  }
};

inline VarianceSchedule ScheduleFromBetas(std::vector<double> betas, ScheduleKind kind) {
  VarianceSchedule s;
  s.horizon = static_cast<int>(betas.size());
  s.kind = kind;
  s.beta = std::move(betas);
  double running = 1.0;
  for (double b : s.beta) {
    internal::Require(b > 0.0 && b < 1.0, ErrorCode::kInvalidArgument,
                      "every beta must lie in the open interval (0, 1)");
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  return s;
}

// Linear: beta interpolates beta_start..beta_end. Cosine: betas follow the
// squared-cosine alpha_bar curve (offset 0.008), clamped into
// [beta_start, beta_end].
inline VarianceSchedule MakeSchedule(int horizon, double beta_start, double beta_end,
                                     ScheduleKind kind) {
  internal::Require(horizon >= 2, ErrorCode::kInvalidArgument, "horizon must be >= 2");
  internal::Require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
                    ErrorCode::kInvalidArgument,
                    "need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(horizon);
  if (kind == ScheduleKind::kLinear) {
    for (int i = 0; i < horizon; ++i) {
      betas[i] = beta_start + (beta_end - beta_start) * i / (horizon - 1);
    }
  } else {
    constexpr double kOffset = 0.008;
    auto f = [&](int t) {
      const double u = (static_cast<double>(t) / horizon + kOffset) / (1.0 + kOffset);
      const double c = std::cos(u * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= horizon; ++t) {
      const double b = 1.0 - f(t) / f(t - 1);
      betas[t - 1] = std::clamp(b, beta_start, beta_end);
    }
  }
  return ScheduleFromBetas(std::move(betas), kind);
}

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
inline Vec ForwardDiffuse(const Vec& x0, int t, const Vec& eps,
                          const VarianceSchedule& schedule) {
  internal::Require(t >= 1 && t <= schedule.horizon, ErrorCode::kOutOfRange,
                    "forward diffusion timestep out of [1, T]");
  internal::Require(eps.size() == x0.size(), ErrorCode::kDimensionMismatch,
                    "noise and data dimensions differ");
  const double ab = schedule.AlphaBar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// One-step reconstruction of x0 from x_t and a noise estimate.
inline Vec PredictX0(const Vec& x_t, int t, const Vec& eps_hat,
                     const VarianceSchedule& schedule) {
  const double ab = schedule.AlphaBar(t);
  return (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

struct DdpmDraw {
  double loss = 0.0;
  int t = 0;
  Vec eps;
};

namespace internal {

inline std::pair<int, Vec> DrawTimestepAndNoise(Rng& rng, int horizon, Eigen::Index dim) {
  const int t = UniformInt(rng, 1, horizon);
  Vec eps = StandardNormal(rng, dim);
  return {t, std::move(eps)};
}

}  // namespace internal

// ||eps - eps_theta(forward_diffuse(x0, t, eps), t)||^2 with t ~ U{1..T},
// eps ~ N(0, I). The draw is returned alongside the loss.
template <NoisePredictor P>
DdpmDraw DdpmLoss(const P& net, const Vec& x0, std::optional<int> label,
                  const VarianceSchedule& schedule, Rng& rng) {
  auto [t, eps] = internal::DrawTimestepAndNoise(rng, schedule.horizon, x0.size());
  const Vec x_t = ForwardDiffuse(x0, t, eps, schedule);
  const double loss = (eps - net.Predict(x_t, t, label)).squaredNorm();
  return {loss, t, std::move(eps)};
}

// Same draw order as DdpmLoss, plus the parameter gradient.
inline DdpmDraw DdpmLossAndGradient(const DenoiserModel& net, const Vec& x0,
                                    std::optional<int> label,
                                    const VarianceSchedule& schedule, Rng& rng,
                                    GradientVector* grad, long long example_index = -1) {
  auto [t, eps] = internal::DrawTimestepAndNoise(rng, schedule.horizon, x0.size());
  const Vec x_t = ForwardDiffuse(x0, t, eps, schedule);
  const double loss = net.LossAndGradient(x_t, t, label, eps, grad, example_index);
  return {loss, t, std::move(eps)};
}

// Deterministic DDIM (eta = 0) update from t to t_next. t_next = 0 returns the
// x0 prediction.
template <NoisePredictor P>
Vec DdimStep(const P& net, const Vec& x_t, int t, int t_next,
             const VarianceSchedule& schedule, std::optional<int> label = std::nullopt) {
  if (!(t_next >= 0 && t_next < t && t <= schedule.horizon)) {
    throw Error(ErrorCode::kOutOfRange, "DDIM step needs 0 <= t_next < t <= T (got t=" +
                                            std::to_string(t) + ", t_next=" +
                                            std::to_string(t_next) + ")");
  }
  const Vec eps_hat = net.Predict(x_t, t, label);
  const Vec x0_pred = PredictX0(x_t, t, eps_hat, schedule);
  const double ab_next = schedule.AlphaBar(t_next);
  return std::sqrt(ab_next) * x0_pred + std::sqrt(1.0 - ab_next) * eps_hat;
}

// n_steps + 1 strictly decreasing timesteps from t_start to t_end, spaced as
// evenly as integer division allows.
inline std::vector<int> TimestepGrid(int t_start, int t_end, int n_steps) {
  internal::Require(t_start > t_end && t_end >= 0, ErrorCode::kOutOfRange,
                    "need t_start > t_end >= 0");
  internal::Require(n_steps >= 1 && n_steps <= t_start - t_end,
                    ErrorCode::kInvalidArgument,
                    "n_steps must be in [1, t_start - t_end]");
  std::vector<int> grid(n_steps + 1);
  const long long span = t_start - t_end;
  for (int i = 0; i <= n_steps; ++i) {
    grid[i] = t_start - static_cast<int>(i * span / n_steps);
  }
  return grid;
}

enum class TrajectoryDirection : std::uint8_t { kForward = 0, kReverse = 1 };

struct Trajectory {
  std::vector<std::pair<int, Vec>> latents;
  TrajectoryDirection direction = TrajectoryDirection::kReverse;
  std::int64_t denoiser_calls = 0;

  const Vec& final_latent() const { return latents.back().second; }
};

// Reverse DDIM trajectory from (x_start, t_start) to t_end in n_steps.
template <NoisePredictor P>
Trajectory SamplePartial(const P& net, const Vec& x_start, int t_start, int t_end,
                         int n_steps, const VarianceSchedule& schedule,
                         std::optional<int> label = std::nullopt) {
  const std::vector<int> grid = TimestepGrid(t_start, t_end, n_steps);
  CountingPredictor<P> counted(net);
  Trajectory traj;
  traj.direction = TrajectoryDirection::kReverse;
  traj.latents.reserve(grid.size());
  traj.latents.emplace_back(grid[0], x_start);
  Vec x = x_start;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    x = DdimStep(counted, x, grid[i], grid[i + 1], schedule, label);
    traj.latents.emplace_back(grid[i + 1], x);
  }
  traj.denoiser_calls = counted.calls();
  return traj;
}

// Full reverse sampling from x_T ~ N(0, I).
template <NoisePredictor P>
Trajectory SampleFull(const P& net, int data_dim, int n_steps,
                      const VarianceSchedule& schedule, Rng& rng,
                      std::optional<int> label = std::nullopt) {
  const Vec x_T = StandardNormal(rng, data_dim);
  return SamplePartial(net, x_T, schedule.horizon, 0, n_steps, schedule, label);
}

// ---------------------------------------------------------------------------
// Trajectory dump ("RPTJ"): magic | u32 dim | u64 count | count x (u32 t,
// f64[dim] latent), little-endian. The direction is implied by the t order.

inline std::string EncodeTrajectory(const Trajectory& traj) {
  ByteWriter w;
  w.PutBytes("RPTJ");
  const std::uint32_t dim =
      traj.latents.empty() ? 0 : static_cast<std::uint32_t>(traj.latents[0].second.size());
  w.PutU32(dim);
  w.PutU64(traj.latents.size());
  for (const auto& [t, x] : traj.latents) {
    internal::Require(static_cast<std::uint32_t>(x.size()) == dim,
                      ErrorCode::kDimensionMismatch, "ragged trajectory");
    w.PutU32(static_cast<std::uint32_t>(t));
    w.PutF64s(std::span<const double>(x.data(), x.size()));
  }
  return w.Release();
}

inline Trajectory DecodeTrajectory(std::string_view bytes) {
  ByteReader r(bytes);
  r.ExpectMagic("RPTJ");
  const std::uint32_t dim = r.GetU32();
  const std::uint64_t count = r.GetU64();
  Trajectory traj;
  for (std::uint64_t i = 0; i < count; ++i) {
    const int t = static_cast<int>(r.GetU32());
    Vec x(dim);
    r.GetF64s(std::span<double>(x.data(), dim));
    traj.latents.emplace_back(t, std::move(x));
  }
  internal::Require(r.AtEnd(), ErrorCode::kFormat, "trailing bytes after trajectory");
  if (traj.latents.size() >= 2 && traj.latents[0].first < traj.latents[1].first) {
    traj.direction = TrajectoryDirection::kForward;
  }
  return traj;
}

}  // namespace ragdp
