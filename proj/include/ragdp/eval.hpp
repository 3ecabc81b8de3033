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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ragdp/error.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

struct GaussianFit {
  Vec mean;
  Eigen::MatrixXd covariance;
  std::int64_t n_samples = 0;
};

// Sample mean and unbiased sample covariance.
inline GaussianFit FitGaussian(std::span<const Vec> samples) {
  internal::Require(samples.size() >= 2, ErrorCode::kInvalidArgument,
                    "a Gaussian fit needs at least two samples");
  const Eigen::Index d = samples[0].size();
  GaussianFit fit;
  fit.n_samples = static_cast<std::int64_t>(samples.size());
  fit.mean = Vec::Zero(d);
  for (const Vec& x : samples) {
    internal::Require(x.size() == d, ErrorCode::kDimensionMismatch, "ragged sample set");
    fit.mean += x;
  }
  fit.mean /= static_cast<double>(samples.size());
  fit.covariance = Eigen::MatrixXd::Zero(d, d);
  for (const Vec& x : samples) {
    const Vec c = x - fit.mean;
    fit.covariance.noalias() += c * c.transpose();
  }
  fit.covariance /= static_cast<double>(samples.size() - 1);
  return fit;
}

namespace internal {

// Symmetric PSD square root via eigendecomposition. Eigenvalues below
// -tolerance are rejected; the rest are clamped at zero.
inline Eigen::MatrixXd PsdSqrt(const Eigen::MatrixXd& m, double tolerance) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Vec ev = eig.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -tolerance) {
    throw Error(ErrorCode::kInvalidArgument, "covariance is not positive semi-definite");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace internal

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the
// product root is taken from the symmetrized form S_a^{1/2} S_b S_a^{1/2},
// which has the same eigenvalues as S_a S_b.
inline double FrechetDistanceSquared(const GaussianFit& a, const GaussianFit& b) {
  internal::Require(a.mean.size() == b.mean.size() &&
                        a.covariance.rows() == b.covariance.rows(),
                    ErrorCode::kDimensionMismatch, "Gaussian fits differ in dimension");
  const Eigen::MatrixXd root_a = internal::PsdSqrt(a.covariance, 1e-10);
  internal::PsdSqrt(b.covariance, 1e-10);  // PSD check only
  const Eigen::MatrixXd inner = root_a * b.covariance * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()),
                                                     Eigen::EigenvaluesOnly);
  const Vec ev = eig.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-8) {
    throw Error(ErrorCode::kInvalidArgument, "covariance product is not PSD");
  }
  const double trace_root = ev.cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                    b.covariance.trace() - 2.0 * trace_root;
  return std::max(d2, 0.0);
}

inline double FrechetDistance(const GaussianFit& a, const GaussianFit& b) {
  return std::sqrt(FrechetDistanceSquared(a, b));
}

inline double FrechetDistance(std::span<const Vec> a, std::span<const Vec> b) {
  return FrechetDistance(FitGaussian(a), FitGaussian(b));
}

// Mean over classes present in both sets of the per-class Frechet distance.
// Used for class-conditional generation, where a per-mode comparison is what
// distinguishes a shifted mixture from the original.
inline double ClassConditionalFrechet(std::span<const Vec> real, std::span<const int> real_labels,
                                      std::span<const Vec> syn, std::span<const int> syn_labels) {
  internal::Require(real.size() == real_labels.size() && syn.size() == syn_labels.size(),
                    ErrorCode::kDimensionMismatch, "labels do not match samples");
  std::map<int, std::vector<Vec>> r, s;
  for (std::size_t i = 0; i < real.size(); ++i) r[real_labels[i]].push_back(real[i]);
  for (std::size_t i = 0; i < syn.size(); ++i) s[syn_labels[i]].push_back(syn[i]);
  double total = 0.0;
  int classes = 0;
  for (const auto& [label, pts] : r) {
    auto it = s.find(label);
    if (it == s.end() || it->second.size() < 2 || pts.size() < 2) continue;
    total += FrechetDistance(pts, it->second);
    ++classes;
  }
  internal::Require(classes > 0, ErrorCode::kInvalidArgument,
                    "no class has at least two real and two synthetic samples");
  return total / classes;
}

struct CoverageConfig {
  int nn_size = 5;
};

// Fraction of real points x whose closed ball of radius (distance to the
// nn_size-th nearest other real point) contains at least one synthetic point.
inline double Coverage(std::span<const Vec> real, std::span<const Vec> syn,
                       const CoverageConfig& cfg = {}) {
  internal::Require(cfg.nn_size >= 1, ErrorCode::kInvalidArgument, "nn_size must be >= 1");
  internal::Require(real.size() > static_cast<std::size_t>(cfg.nn_size),
                    ErrorCode::kInvalidArgument, "need more real points than nn_size");
  if (syn.empty()) return 0.0;
  std::size_t covered = 0;
  std::vector<double> dists(real.size() - 1);
  for (std::size_t i = 0; i < real.size(); ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < real.size(); ++j) {
      if (j != i) dists[m++] = (real[i] - real[j]).squaredNorm();
    }
    std::nth_element(dists.begin(), dists.begin() + (cfg.nn_size - 1), dists.end());
    const double radius2 = dists[cfg.nn_size - 1];
    for (const Vec& y : syn) {
      if ((real[i] - y).squaredNorm() <= radius2) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(real.size());
}

struct EfficiencyRecord {
  std::string mode;  // e.g. "full", "rag", "kb_build"
  std::int64_t samples = 0;
  std::int64_t denoiser_calls = 0;
  double wall_seconds = 0.0;
};

struct EfficiencyRow {
  std::string mode;
  std::int64_t samples = 0;
  std::int64_t denoiser_calls = 0;
  double calls_per_sample = 0.0;
  double wall_seconds = 0.0;
};

// Aggregates run records by mode, in first-seen order.
inline std::vector<EfficiencyRow> EfficiencyReport(std::span<const EfficiencyRecord> records) {
  std::vector<EfficiencyRow> rows;
  for (const EfficiencyRecord& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const EfficiencyRow& row) { return row.mode == r.mode; });
    if (it == rows.end()) {
      rows.push_back({r.mode, 0, 0, 0.0, 0.0});
      it = rows.end() - 1;
    }
    it->samples += r.samples;
    it->denoiser_calls += r.denoiser_calls;
    it->wall_seconds += r.wall_seconds;
  }
  for (EfficiencyRow& row : rows) {
    row.calls_per_sample = row.samples > 0 ? static_cast<double>(row.denoiser_calls) /
                                                 static_cast<double>(row.samples)
                                           : 0.0;
  }
  return rows;
}

inline std::string FormatEfficiencyTable(std::span<const EfficiencyRow> rows) {
  std::ostringstream os;
  os << "mode        samples  denoiser_calls  calls/sample  wall_s\n";
  for (const EfficiencyRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %8lld %15lld %13.2f %7.3f\n", r.mode.c_str(),
                  static_cast<long long>(r.samples), static_cast<long long>(r.denoiser_calls),
                  r.calls_per_sample, r.wall_seconds);
    os << line;
  }
  return os.str();
}

}  // namespace ragdp
