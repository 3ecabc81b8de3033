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
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "ragdp/error.hpp"

namespace ragdp {

inline const std::vector<double>& DefaultAlphaGrid() {
  static const std::vector<double> kGrid = {1.25, 1.5, 1.75, 2,  2.5, 3,  4,   5,   6,
                                            8,    10,  12,   16, 20,  32, 64, 128, 256};
  return kGrid;
}

// RDP of one release of the sanitized batch gradient: (alpha, 2 alpha / sigma^2).
// This is the Gaussian mechanism's alpha * Delta^2 / (2 s^2) with sensitivity
// Delta = 2C/B and noise std s = C sigma / B; C and B cancel.
inline double RdpPerStep(double sigma, double alpha) {
  internal::Require(sigma > 0, ErrorCode::kInvalidArgument, "sigma must be positive");
  internal::Require(alpha > 1, ErrorCode::kInvalidArgument, "RDP order alpha must exceed 1");
  return 2.0 * alpha / (sigma * sigma);
}

// Gaussian-mechanism RDP for an arbitrary sensitivity and noise std.
inline double GaussianMechanismRdp(double alpha, double sensitivity, double noise_std) {
  return alpha * sensitivity * sensitivity / (2.0 * noise_std * noise_std);
}

// Accumulated RDP over a fixed alpha grid under plain (non-amplified)
// composition. The sampling rate is recorded for auditing only.
struct PrivacyLedger {
  std::vector<double> alpha_grid = DefaultAlphaGrid();
  std::vector<double> accumulated_rdp = std::vector<double>(DefaultAlphaGrid().size(), 0.0);
  std::int64_t steps = 0;
  // Run-length history of sigma: (sigma, number of consecutive steps).
  std::vector<std::pair<double, std::int64_t>> sigma_history;
  double sampling_rate = 0.0;

  static PrivacyLedger WithGrid(std::vector<double> grid) {
    internal::Require(!grid.empty(), ErrorCode::kInvalidArgument, "alpha grid is empty");
    internal::Require(std::is_sorted(grid.begin(), grid.end()) && grid.front() > 1,
                      ErrorCode::kInvalidArgument, "alpha grid must be sorted and > 1");
    PrivacyLedger l;
    l.accumulated_rdp.assign(grid.size(), 0.0);
    l.alpha_grid = std::move(grid);
    return l;
  }

  friend bool operator==(const PrivacyLedger&, const PrivacyLedger&) = default;
};

inline void RecordStep(PrivacyLedger& ledger, double sigma) {
  for (std::size_t i = 0; i < ledger.alpha_grid.size(); ++i) {
    ledger.accumulated_rdp[i] += RdpPerStep(sigma, ledger.alpha_grid[i]);
  }
  ledger.steps += 1;
  if (!ledger.sigma_history.empty() && ledger.sigma_history.back().first == sigma) {
    ledger.sigma_history.back().second += 1;
  } else {
    ledger.sigma_history.emplace_back(sigma, 1);
  }
}

struct DpGuarantee {
  double epsilon = 0.0;
  double delta = 0.0;
  double best_alpha = 0.0;
  std::vector<std::pair<double, double>> curve;  // (alpha, epsilon(alpha))
};

// eps = min over alpha of rdp(alpha) + ln(1/delta) / (alpha - 1).
inline DpGuarantee ToDp(const PrivacyLedger& ledger, double delta) {
  internal::Require(delta > 0 && delta < 1, ErrorCode::kInvalidArgument,
                    "delta must lie in (0, 1)");
  internal::Require(ledger.steps >= 1, ErrorCode::kInvalidArgument,
                    "cannot convert an empty privacy ledger");
  DpGuarantee g;
  g.delta = delta;
  g.epsilon = std::numeric_limits<double>::infinity();
  const double log_inv_delta = std::log(1.0 / delta);
  for (std::size_t i = 0; i < ledger.alpha_grid.size(); ++i) {
    const double a = ledger.alpha_grid[i];
    const double eps = ledger.accumulated_rdp[i] + log_inv_delta / (a - 1.0);
    g.curve.emplace_back(a, eps);
    if (eps < g.epsilon) {
      g.epsilon = eps;
      g.best_alpha = a;
    }
  }
  return g;
}

// Epsilon after `steps` identical releases at noise scale sigma.
inline double EpsilonForSigma(double sigma, double delta, std::int64_t steps,
                              const std::vector<double>& alpha_grid) {
  PrivacyLedger l = PrivacyLedger::WithGrid(alpha_grid);
  for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
    l.accumulated_rdp[i] = static_cast<double>(steps) * RdpPerStep(sigma, alpha_grid[i]);
  }
  l.steps = steps;
  return ToDp(l, delta).epsilon;
}

// Smallest sigma (to 1e-6 relative) whose accounted epsilon after `steps`
// steps is <= target_epsilon.
inline double CalibrateSigma(double target_epsilon, double delta, std::int64_t steps,
                             const std::vector<double>& alpha_grid = DefaultAlphaGrid()) {
  internal::Require(target_epsilon > 0, ErrorCode::kInvalidArgument,
                    "target epsilon must be positive");
  internal::Require(steps >= 1, ErrorCode::kInvalidArgument, "steps must be >= 1");
  constexpr double kMaxSigma = 1e6;
  auto eps = [&](double s) { return EpsilonForSigma(s, delta, steps, alpha_grid); };
  double hi = 1.0;
  while (eps(hi) > target_epsilon) {
    hi *= 2.0;
    if (hi > kMaxSigma) {
      throw Error(ErrorCode::kBudgetExceeded,
                  "no sigma below 1e6 meets the requested epsilon");
    }
  }
  double lo = hi / 2.0;
  while (lo > 1e-12 && eps(lo) <= target_epsilon) {
    hi = lo;
    lo /= 2.0;
  }
  while ((hi - lo) > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps(mid) <= target_epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  // Forward accounting check of the returned value.
  if (eps(hi) > target_epsilon) {
    throw Error(ErrorCode::kInvariantViolation, "sigma calibration failed verification");
  }
  return hi;
}

// Structured-text form of the ledger, optionally with a conversion result.
inline nlohmann::json LedgerToJson(const PrivacyLedger& ledger,
                                   const DpGuarantee* guarantee = nullptr) {
  nlohmann::json j;
  j["steps"] = ledger.steps;
  j["alpha_grid"] = ledger.alpha_grid;
  j["accumulated_rdp"] = ledger.accumulated_rdp;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [s, n] : ledger.sigma_history) hist.push_back({{"sigma", s}, {"steps", n}});
  j["sigma_history"] = hist;
  j["sampling_rate"] = ledger.sampling_rate;
  j["amplification"] = "none";
  if (guarantee) {
    j["epsilon"] = guarantee->epsilon;
    j["delta"] = guarantee->delta;
    j["best_alpha"] = guarantee->best_alpha;
  }
  return j;
}

inline PrivacyLedger LedgerFromJson(const nlohmann::json& j) {
  PrivacyLedger l = PrivacyLedger::WithGrid(j.at("alpha_grid").get<std::vector<double>>());
  l.accumulated_rdp = j.at("accumulated_rdp").get<std::vector<double>>();
  internal::Require(l.accumulated_rdp.size() == l.alpha_grid.size(), ErrorCode::kFormat,
                    "ledger grid and values differ in length");
  l.steps = j.at("steps").get<std::int64_t>();
  for (const auto& h : j.at("sigma_history")) {
    l.sigma_history.emplace_back(h.at("sigma").get<double>(), h.at("steps").get<std::int64_t>());
  }
  l.sampling_rate = j.value("sampling_rate", 0.0);
  return l;
}

}  // namespace ragdp
