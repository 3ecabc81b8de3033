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

#include <cmath>
#include <vector>

#include "ragdp/eval.hpp"
#include "test_util.hpp"

namespace ragdp {
namespace {

using testing::V;

std::vector<Vec> Gaussian(Rng& rng, int n, const Vec& mean, double sd) {
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) out.push_back(mean + sd * StandardNormal(rng, mean.size()));
  return out;
}

GaussianFit Fit(Vec mean, Eigen::MatrixXd cov) {
  GaussianFit g;
  g.mean = std::move(mean);
  g.covariance = std::move(cov);
  g.n_samples = 100;
  return g;
}

// Brute-force coverage written from the definition with a full sort.
double NaiveCoverage(const std::vector<Vec>& real, const std::vector<Vec>& syn, int k) {
  if (syn.empty()) return 0.0;
  int covered = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < real.size(); ++j) {
      if (j != i) d.push_back((real[i] - real[j]).norm());
    }
    std::sort(d.begin(), d.end());
    const double r = d[k - 1];
    bool hit = false;
    for (const Vec& y : syn) hit = hit || (real[i] - y).norm() <= r;
    covered += hit;
  }
  return static_cast<double>(covered) / real.size();
}

TEST(FitGaussian, TwoPointFormula) {
  const std::vector<Vec> pts{V({0, 0}), V({2, 0})};
  const GaussianFit g = FitGaussian(pts);
  EXPECT_EQ(g.mean, V({1, 0}));
  Eigen::MatrixXd want(2, 2);
  want << 2, 0, 0, 0;
  EXPECT_EQ(g.covariance, want);
  EXPECT_EQ(g.n_samples, 2);
}

TEST(FitGaussian, RepeatedSamplesHaveZeroCovariance) {
  const std::vector<Vec> pts(5, V({3, -1, 2}));
  EXPECT_EQ(FitGaussian(pts).covariance, Eigen::MatrixXd::Zero(3, 3));
}

TEST(FitGaussian, MonteCarloMomentsOfStandardNormal) {
  Rng rng(1);
  const int n = 100000;
  const GaussianFit g = FitGaussian(Gaussian(rng, n, Vec::Zero(2), 1.0));
  const double se_mean = 1 / std::sqrt(n);
  const double se_var = std::sqrt(2.0 / n);
  const double se_cov = 1 / std::sqrt(n);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(g.mean[i], 0.0, 5 * se_mean);
    EXPECT_NEAR(g.covariance(i, i), 1.0, 5 * se_var);
  }
  EXPECT_NEAR(g.covariance(0, 1), 0.0, 5 * se_cov);
  EXPECT_EQ(g.covariance(0, 1), g.covariance(1, 0));
}

TEST(FitGaussian, RejectsTooFewOrRaggedSamples) {
  EXPECT_THROW(FitGaussian(std::vector<Vec>{V({1, 2})}), Error);
  EXPECT_THROW(FitGaussian(std::vector<Vec>{V({1, 2}), V({1})}), Error);
}

TEST(Frechet, IdenticalFitsGiveZero) {
  Rng rng(2);
  const GaussianFit g = FitGaussian(Gaussian(rng, 200, V({1, 2, 3}), 0.7));
  EXPECT_NEAR(FrechetDistanceSquared(g, g), 0.0, 1e-12);
}

TEST(Frechet, EqualCovarianceGivesMeanOffset) {
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 0.3, 0.3, 0.5;
  const GaussianFit a = Fit(V({0, 0}), cov);
  const GaussianFit b = Fit(V({3, -4}), cov);
  EXPECT_NEAR(FrechetDistanceSquared(a, b), 25.0, 1e-10);
  EXPECT_NEAR(FrechetDistance(a, b), 5.0, 1e-10);
}

TEST(Frechet, IdentityVersusFourIdentity) {
  const GaussianFit a = Fit(V({0, 0}), Eigen::MatrixXd::Identity(2, 2));
  const GaussianFit b = Fit(V({0, 0}), 4 * Eigen::MatrixXd::Identity(2, 2));
  EXPECT_NEAR(FrechetDistanceSquared(a, b), 2.0, 1e-12);
  EXPECT_NEAR(FrechetDistance(a, b), std::sqrt(2.0), 1e-12);
}

TEST(Frechet, SymmetricOnRandomFits) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Eigen::MatrixXd la = Eigen::MatrixXd::Random(3, 3), lb = Eigen::MatrixXd::Random(3, 3);
    const GaussianFit a = Fit(StandardNormal(rng, 3), la * la.transpose());
    const GaussianFit b = Fit(StandardNormal(rng, 3), lb * lb.transpose());
    EXPECT_NEAR(FrechetDistance(a, b), FrechetDistance(b, a), 1e-10);
    EXPECT_GT(FrechetDistance(a, b), 0.0);
  }
}

TEST(Frechet, MatchesCommutingDiagonalClosedForm) {
  // Diagonal covariances commute: d^2 = |dm|^2 + sum (sqrt(a_i) - sqrt(b_i))^2.
  const Vec da = V({0.5, 2.0, 9.0});
  const Vec db = V({4.0, 0.1, 1.0});
  const GaussianFit a = Fit(V({1, 1, 1}), da.asDiagonal());
  const GaussianFit b = Fit(V({0, 1, 3}), db.asDiagonal());
  double want = 1 + 4;
  for (int i = 0; i < 3; ++i) want += std::pow(std::sqrt(da[i]) - std::sqrt(db[i]), 2);
  EXPECT_NEAR(FrechetDistanceSquared(a, b), want, 1e-12);
}

TEST(Frechet, RejectsNonPsdAndDimensionMismatch) {
  Eigen::MatrixXd bad(2, 2);
  bad << 1, 0, 0, -1;
  const GaussianFit a = Fit(V({0, 0}), Eigen::MatrixXd::Identity(2, 2));
  EXPECT_THROW(FrechetDistance(a, Fit(V({0, 0}), bad)), Error);
  EXPECT_THROW(FrechetDistance(a, Fit(V({0}), Eigen::MatrixXd::Identity(1, 1))), Error);
}

TEST(ClassConditionalFrechet, DetectsPerModeShiftThatPooledFitMisses) {
  // Two symmetric modes swapped between labels: pooled fits match, per-class
  // fits do not.
  Rng rng(3);
  std::vector<Vec> real, syn;
  std::vector<int> rl, sl;
  for (int i = 0; i < 2000; ++i) {
    const int c = i % 2;
    real.push_back(V({c ? 2.0 : -2.0, 0}) + 0.1 * StandardNormal(rng, 2));
    rl.push_back(c);
    syn.push_back(V({c ? -2.0 : 2.0, 0}) + 0.1 * StandardNormal(rng, 2));
    sl.push_back(c);
  }
  EXPECT_LT(FrechetDistance(real, syn), 0.1);
  EXPECT_NEAR(ClassConditionalFrechet(real, rl, syn, sl), 4.0, 0.05);
  EXPECT_NEAR(ClassConditionalFrechet(real, rl, real, rl), 0.0, 1e-6);
}

TEST(Coverage, HandEnumeratedOneDimensionalFixture) {
  std::vector<Vec> real;
  for (int i = 0; i <= 5; ++i) real.push_back(V({static_cast<double>(i)}));
  const std::vector<Vec> syn{V({1.5})};
  // Radii with nn_size = 2: {2, 1, 1, 1, 1, 2}. Balls containing 1.5: around
  // 0 ([-2, 2]), 1 ([0, 2]) and 2 ([1, 3]); the ball around 3 is [2, 4].
  EXPECT_DOUBLE_EQ(Coverage(real, syn, CoverageConfig{2}), 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(NaiveCoverage(real, syn, 2), 3.0 / 6.0);
}

TEST(Coverage, SelfCoverageIsOne) {
  Rng rng(4);
  const auto real = Gaussian(rng, 300, V({0, 0}), 1.0);
  EXPECT_EQ(Coverage(real, real), 1.0);
}

TEST(Coverage, FarAwaySyntheticIsZero) {
  Rng rng(5);
  const auto real = Gaussian(rng, 100, V({0, 0}), 1.0);
  const auto syn = Gaussian(rng, 100, V({1e6, 1e6}), 1.0);
  EXPECT_EQ(Coverage(real, syn), 0.0);
  EXPECT_EQ(Coverage(real, std::vector<Vec>{}), 0.0);
}

TEST(Coverage, MatchesBruteForce) {
  for (int trial = 0; trial < 30; ++trial) {
    Rng rng(100 + trial);
    const int n_real = 10 + 33 * trial;
    const auto real = Gaussian(rng, std::min(n_real, 1000), V({0, 0}), 1.0);
    const auto syn = Gaussian(rng, 5 + 7 * trial, V({0.5, 0}), 1.3);
    const int k = 1 + trial % 6;
    EXPECT_EQ(Coverage(real, syn, CoverageConfig{k}), NaiveCoverage(real, syn, k)) << trial;
  }
}

TEST(Coverage, MonotoneInNeighborhoodAndSyntheticSet) {
  Rng rng(6);
  const auto real = Gaussian(rng, 200, V({0, 0}), 1.0);
  const auto syn = Gaussian(rng, 60, V({1, 0}), 0.5);
  double prev = 0;
  for (int k = 1; k <= 10; ++k) {
    const double c = Coverage(real, syn, CoverageConfig{k});
    EXPECT_GE(c, prev);
    prev = c;
  }
  prev = 0;
  for (std::size_t m = 1; m <= syn.size(); m += 7) {
    const double c = Coverage(real, std::span(syn).first(m));
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(Coverage, RejectsTooFewRealPoints) {
  const std::vector<Vec> real{V({0}), V({1})};
  EXPECT_THROW(Coverage(real, real, CoverageConfig{2}), Error);
  EXPECT_THROW(Coverage(real, real, CoverageConfig{0}), Error);
}

TEST(Efficiency, CallsPerSampleAggregation) {
  const std::vector<EfficiencyRecord> records{
      {"full", 10, 1000, 0.5}, {"rag", 10, 410, 0.2}, {"rag", 30, 1230, 0.6}};
  const auto rows = EfficiencyReport(records);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].mode, "full");
  EXPECT_DOUBLE_EQ(rows[0].calls_per_sample, 100.0);
  EXPECT_EQ(rows[1].samples, 40);
  EXPECT_DOUBLE_EQ(rows[1].calls_per_sample, 41.0);
  EXPECT_NEAR(rows[1].wall_seconds, 0.8, 1e-12);
  const std::string table = FormatEfficiencyTable(rows);
  EXPECT_NE(table.find("41.00"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
}

TEST(Efficiency, EmptyRunGivesEmptyTable) {
  EXPECT_TRUE(EfficiencyReport(std::vector<EfficiencyRecord>{}).empty());
}

}  // namespace
}  // namespace ragdp
