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
#include <numbers>
#include <vector>

#include "ragdp/dataset.hpp"
#include "test_util.hpp"

namespace ragdp {
namespace {

TEST(GenerateDataset, StratifiedLabels) {
  const Dataset d = GenerateDataset(Generator::kGaussianRing, {}, 8000, 1, DatasetRole::kPubPre);
  ASSERT_EQ(d.size(), 8000u);
  std::vector<int> count(8, 0);
  for (int l : d.labels) ++count.at(l);
  for (int c : count) EXPECT_EQ(c, 1000);
  EXPECT_EQ(d.num_classes(), 8);
  EXPECT_EQ(d.dim(), 2);
}

TEST(GenerateDataset, SameSeedSameBytesDifferentSeedDiffers) {
  for (Generator g : {Generator::kGaussianRing, Generator::kSwissRoll, Generator::kCheckerboard,
                      Generator::kBlobs}) {
    const Dataset a = GenerateDataset(g, {}, 500, 7, DatasetRole::kPrv);
    const Dataset b = GenerateDataset(g, {}, 500, 7, DatasetRole::kPrv);
    const Dataset c = GenerateDataset(g, {}, 500, 8, DatasetRole::kPrv);
    EXPECT_EQ(EncodeDataset(a), EncodeDataset(b)) << GeneratorName(g);
    EXPECT_EQ(DatasetChecksum(a), DatasetChecksum(b));
    EXPECT_NE(DatasetChecksum(a), DatasetChecksum(c));
  }
}

TEST(GenerateDataset, RotatedRingCentersRecovered) {
  GeneratorParams p;
  p.rotation = std::numbers::pi / 8;
  p.translate_x = 0.5;
  p.translate_y = -0.25;
  const int n = 16000;
  const Dataset d = GenerateDataset(Generator::kGaussianRing, p, n, 3, DatasetRole::kPrv);
  const auto centers = RingCenters(p);
  std::vector<Vec> sum(8, Vec::Zero(2));
  for (std::size_t i = 0; i < d.size(); ++i) sum[d.labels[i]] += d.points[i];
  const double se = p.mode_std / std::sqrt(n / 8.0);
  for (int c = 0; c < 8; ++c) {
    const Vec mean = sum[c] / (n / 8.0);
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(mean[k], centers[c][k], 5 * se) << c;
  }
  // Rotation preserves the distance to the translation point.
  const Vec origin = testing::V({0.5, -0.25});
  for (const Vec& c : centers) EXPECT_NEAR((c - origin).norm(), p.radius, 1e-12);
}

TEST(GenerateDataset, BlobsHonorDimension) {
  GeneratorParams p;
  p.dim = 5;
  const Dataset d = GenerateDataset(Generator::kBlobs, p, 40, 2, DatasetRole::kPubRef);
  EXPECT_EQ(d.dim(), 5);
}

TEST(GenerateDataset, CheckerboardStaysOnDarkCells) {
  const Dataset d = GenerateDataset(Generator::kCheckerboard, {}, 4000, 4, DatasetRole::kPubPre);
  const double r = GeneratorParams{}.radius;
  for (const Vec& x : d.points) {
    ASSERT_GE(x[0], -r);
    ASSERT_LE(x[0], r);
    const int col = static_cast<int>(std::floor((x[0] + r) / (r / 2)));
    const int row = static_cast<int>(std::floor((x[1] + r) / (r / 2)));
    EXPECT_EQ((col + row) % 2, 0);
  }
}

TEST(GenerateDataset, RejectsBadArguments) {
  EXPECT_THROW(GenerateDataset(Generator::kGaussianRing, {}, 0, 1, DatasetRole::kPrv), Error);
  GeneratorParams p;
  p.num_modes = 0;
  EXPECT_THROW(GenerateDataset(Generator::kGaussianRing, p, 10, 1, DatasetRole::kPrv), Error);
}

TEST(ParseGenerator, NamesRoundTripAndUnknownFails) {
  for (Generator g : {Generator::kGaussianRing, Generator::kSwissRoll, Generator::kCheckerboard,
                      Generator::kBlobs}) {
    EXPECT_EQ(ParseGenerator(GeneratorName(g)), g);
  }
  EXPECT_THROW(ParseGenerator("moons"), Error);
}

TEST(RequireRole, MismatchNamesBothRoles) {
  const Dataset d = GenerateDataset(Generator::kGaussianRing, {}, 8, 1, DatasetRole::kPubRef);
  EXPECT_NO_THROW(RequireRole(d, DatasetRole::kPubRef));
  try {
    RequireRole(d, DatasetRole::kPrv);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(RoleName(DatasetRole::kPubRef)), std::string::npos);
  }
}

TEST(DatasetFile, RoundTripWithProvenance) {
  Dataset d = GenerateDataset(Generator::kSwissRoll, {}, 123, 9, DatasetRole::kSynthetic);
  d.provenance = {{"model", Sha256("m")}, {"kb", Sha256("k")}};
  const std::string bytes = EncodeDataset(d);
  const Dataset back = DecodeDataset(bytes);
  EXPECT_EQ(back.points, d.points);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.role, d.role);
  EXPECT_EQ(back.params, d.params);
  EXPECT_EQ(back.provenance, d.provenance);
  EXPECT_EQ(EncodeDataset(back), bytes);
}

TEST(DatasetFile, UnlabeledRoundTrip) {
  Dataset d = GenerateDataset(Generator::kBlobs, {}, 10, 1, DatasetRole::kSynthetic);
  d.labels.clear();
  const Dataset back = DecodeDataset(EncodeDataset(d));
  EXPECT_FALSE(back.labeled());
  EXPECT_EQ(back.points, d.points);
}

TEST(DatasetFile, CorruptionRejected) {
  const Dataset d = GenerateDataset(Generator::kGaussianRing, {}, 16, 1, DatasetRole::kPrv);
  std::string bytes = EncodeDataset(d);
  EXPECT_THROW(DecodeDataset(bytes.substr(0, bytes.size() - 3)), Error);
  EXPECT_THROW(DecodeDataset(bytes + "x"), Error);
  bytes[0] = 'X';
  EXPECT_THROW(DecodeDataset(bytes), Error);
}

}  // namespace
}  // namespace ragdp
