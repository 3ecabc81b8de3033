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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ragdp/knowledge_base.hpp"
#include "test_util.hpp"

namespace ragdp {
namespace {

using testing::V;

struct ZeroNet {
  Vec Predict(const Vec& x, int, std::optional<int>) const { return Vec::Zero(x.size()); }
};

KnowledgeBase RandomKb(Rng& rng, int n, int d_feat, int classes) {
  KnowledgeBase kb;
  kb.k_timestep = 80;
  kb.v_timestep = 20;
  kb.d_feat = d_feat;
  kb.d_data = 2;
  for (int i = 0; i < n; ++i) {
    KbEntry e;
    e.key = NormalizeFeature(StandardNormal(rng, d_feat));
    e.value = StandardNormal(rng, 2);
    e.label = classes > 0 ? i % classes : -1;
    e.source_index = static_cast<std::uint64_t>(i);
    kb.entries.push_back(e);
  }
  return kb;
}

// Naive double loop: repeatedly pick the best remaining entry.
std::vector<std::size_t> NaiveTopK(const KnowledgeBase& kb, const Vec& z, int topk) {
  std::vector<bool> used(kb.entries.size(), false);
  std::vector<std::size_t> out;
  for (int r = 0; r < topk && r < static_cast<int>(kb.entries.size()); ++r) {
    std::size_t best = kb.entries.size();
    double best_sim = -2;
    for (std::size_t i = 0; i < kb.entries.size(); ++i) {
      if (used[i]) continue;
      double s = 0;
      for (int d = 0; d < kb.d_feat; ++d) s += kb.entries[i].key[d] * z[d];
      const bool better =
          best == kb.entries.size() || s > best_sim ||
          (s == best_sim && kb.entries[i].source_index < kb.entries[best].source_index);
      if (better) {
        best = i;
        best_sim = s;
      }
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

struct Fixture {
  VarianceSchedule schedule = MakeSchedule(100, 1e-4, 0.02, ScheduleKind::kLinear);
  DenseNet extractor;
  std::vector<Vec> ref;
  std::vector<int> labels;
  KbManifest manifest;

  explicit Fixture(int n, std::uint64_t seed = 1) {
    Rng rng(seed);
    extractor = MakeExtractor(2, ExtractorSpec{{16}, 6, Activation::kTanh}, rng);
    for (int i = 0; i < n; ++i) {
      ref.push_back(StandardNormal(rng, 2));
      labels.push_back(i % 4);
    }
    manifest.seed = 1234;
    manifest.schedule_hash = schedule.Hash();
    manifest.extractor_checksum = ExtractorChecksum(extractor, 80);
  }

  KbBuild Build(int per_example = 1) const {
    return BuildKnowledgeBase(ref, labels, ZeroNet{}, extractor, schedule, 80, 20, manifest,
                              KbBuildOptions{per_example});
  }
};

TEST(BuildKb, OneEntryAndOneDenoiserCallPerExample) {
  const Fixture f(100);
  const KbBuild b = f.Build();
  EXPECT_EQ(b.kb.entries.size(), 100u);
  EXPECT_EQ(b.denoiser_calls, 100);
  EXPECT_NO_THROW(b.kb.Validate());
  EXPECT_TRUE(b.kb.labeled());
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(b.kb.entries[i].source_index, i);
    EXPECT_EQ(b.kb.entries[i].label, f.labels[i]);
  }
}

TEST(BuildKb, ReplicasMultiplyEntries) {
  const Fixture f(30);
  const KbBuild b = f.Build(3);
  EXPECT_EQ(b.kb.entries.size(), 90u);
  EXPECT_EQ(b.denoiser_calls, 90);
  // Different replicas of one example use different noise.
  EXPECT_NE(b.kb.entries[0].value, b.kb.entries[1].value);
}

TEST(BuildKb, SameSeedGivesIdenticalFile) {
  const Fixture f(50);
  EXPECT_EQ(EncodeKnowledgeBase(f.Build().kb), EncodeKnowledgeBase(f.Build().kb));
  Fixture g(50);
  g.manifest.seed = 999;
  EXPECT_NE(EncodeKnowledgeBase(f.Build().kb), EncodeKnowledgeBase(g.Build().kb));
}

TEST(BuildKb, EntriesRecomputableFromProvenance) {
  const Fixture f(40);
  const KnowledgeBase kb = f.Build(2).kb;
  const double ab_v = f.schedule.AlphaBar(20);
  const double ab_k = f.schedule.AlphaBar(80);
  for (std::size_t i = 0; i < kb.entries.size(); ++i) {
    const KbEntry& e = kb.entries[i];
    const Vec eps = KbNoise(f.manifest.seed, e.source_index, i % 2, 2);
    const Vec& x = f.ref[e.source_index];
    EXPECT_EQ(e.value, Vec(std::sqrt(ab_v) * x + std::sqrt(1 - ab_v) * eps));
    // The key comes from the same noise draw at timestep k.
    const Vec xk = std::sqrt(ab_k) * x + std::sqrt(1 - ab_k) * eps;
    EXPECT_LT((e.key - ExtractFeature(f.extractor, ZeroNet{}, xk, 80, f.schedule))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
  }
}

TEST(BuildKb, RejectsBadTimestepsAndDims) {
  const Fixture f(5);
  EXPECT_THROW(BuildKnowledgeBase(f.ref, f.labels, ZeroNet{}, f.extractor, f.schedule, 20, 80,
                                  f.manifest),
               Error);
  EXPECT_THROW(BuildKnowledgeBase(f.ref, f.labels, ZeroNet{}, f.extractor, f.schedule, 100, 20,
                                  f.manifest),
               Error);
  const std::vector<Vec> bad{V({1, 2, 3})};
  EXPECT_THROW(BuildKnowledgeBase(bad, std::vector<int>{}, ZeroNet{}, f.extractor, f.schedule,
                                  80, 20, f.manifest),
               Error);
  const std::vector<int> short_labels{0};
  EXPECT_THROW(BuildKnowledgeBase(f.ref, short_labels, ZeroNet{}, f.extractor, f.schedule, 80,
                                  20, f.manifest),
               Error);
}

TEST(Query, ExactAgainstNaiveScan) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const int n = 1 + trial % 37;
    const KnowledgeBase kb = RandomKb(rng, n, 1 + trial % 5, 3);
    const Vec z = NormalizeFeature(StandardNormal(rng, kb.d_feat));
    const int topk = 1 + trial % 7;
    const auto hits = QueryKnowledgeBase(kb, z, topk);
    const auto want = NaiveTopK(kb, z, topk);
    ASSERT_EQ(hits.size(), want.size());
    for (std::size_t i = 0; i < hits.size(); ++i) EXPECT_EQ(hits[i].index, want[i]) << trial;
  }
}

TEST(Query, OwnKeyComesFirst) {
  Rng rng(2);
  const KnowledgeBase kb = RandomKb(rng, 50, 8, 0);
  for (std::size_t i = 0; i < kb.entries.size(); ++i) {
    const auto hits = QueryKnowledgeBase(kb, kb.entries[i].key, 1);
    EXPECT_EQ(hits[0].index, i);
    EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
  }
}

TEST(Query, OrthogonalKeysSlightRotation) {
  KnowledgeBase kb;
  kb.k_timestep = 80;
  kb.v_timestep = 20;
  kb.d_feat = 3;
  kb.d_data = 1;
  for (int i = 0; i < 3; ++i) {
    KbEntry e;
    e.key = Vec::Unit(3, i);
    e.value = V({static_cast<double>(i)});
    e.source_index = static_cast<std::uint64_t>(i);
    kb.entries.push_back(e);
  }
  const Vec z = NormalizeFeature(V({0.05, 1.0, -0.03}));
  const auto hits = QueryKnowledgeBase(kb, z, 3);
  EXPECT_EQ(hits[0].index, 1u);
  EXPECT_EQ(hits[1].index, 0u);
  EXPECT_EQ(hits[2].index, 2u);
}

TEST(Query, FullTopKIsSortedDescending) {
  Rng rng(3);
  const KnowledgeBase kb = RandomKb(rng, 40, 4, 0);
  const auto hits = QueryKnowledgeBase(kb, NormalizeFeature(StandardNormal(rng, 4)), 40);
  ASSERT_EQ(hits.size(), 40u);
  for (std::size_t i = 0; i + 1 < hits.size(); ++i) {
    EXPECT_GE(hits[i].similarity, hits[i + 1].similarity);
  }
  EXPECT_EQ(QueryKnowledgeBase(kb, NormalizeFeature(StandardNormal(rng, 4)), 100).size(), 40u);
}

TEST(Query, TiesBrokenByLowerSourceIndex) {
  KnowledgeBase kb;
  kb.k_timestep = 80;
  kb.v_timestep = 20;
  kb.d_feat = 2;
  kb.d_data = 1;
  for (std::uint64_t src : {7u, 3u, 5u}) {
    kb.entries.push_back({V({1, 0}), V({0}), -1, src});
  }
  const auto hits = QueryKnowledgeBase(kb, V({1, 0}), 3);
  EXPECT_EQ(hits[0].index, 1u);
  EXPECT_EQ(hits[1].index, 2u);
  EXPECT_EQ(hits[2].index, 0u);
}

TEST(Query, ErrorsOnEmptyKbAndBadArgs) {
  KnowledgeBase kb;
  kb.d_feat = 2;
  EXPECT_THROW(QueryKnowledgeBase(kb, V({1, 0}), 1), Error);
  Rng rng(4);
  const KnowledgeBase full = RandomKb(rng, 3, 2, 0);
  EXPECT_THROW(QueryKnowledgeBase(full, V({1, 0}), 0), Error);
  EXPECT_THROW(QueryKnowledgeBase(full, V({1, 0, 0}), 1), Error);
}

TEST(Query, GrowingKbNeverLowersTopSimilarity) {
  Rng rng(5);
  const KnowledgeBase big = RandomKb(rng, 200, 5, 0);
  for (int q = 0; q < 20; ++q) {
    const Vec z = NormalizeFeature(StandardNormal(rng, 5));
    double prev = -2;
    KnowledgeBase kb = big;
    for (std::size_t n = 1; n <= big.entries.size(); n += 13) {
      kb.entries.assign(big.entries.begin(), big.entries.begin() + n);
      const double top = QueryKnowledgeBase(kb, z, 1)[0].similarity;
      EXPECT_GE(top, prev);
      prev = top;
    }
  }
}

TEST(Persistence, SaveLoadQueryIsBitExact) {
  const Fixture f(60);
  const KnowledgeBase kb = f.Build().kb;
  const std::string bytes = EncodeKnowledgeBase(kb);
  EXPECT_EQ(bytes.substr(0, 4), "RPKB");
  const KnowledgeBase back = DecodeKnowledgeBase(bytes);
  EXPECT_EQ(EncodeKnowledgeBase(back), bytes);
  EXPECT_EQ(back.manifest, kb.manifest);
  Rng rng(6);
  for (int q = 0; q < 30; ++q) {
    const Vec z = NormalizeFeature(StandardNormal(rng, kb.d_feat));
    const auto a = QueryKnowledgeBase(kb, z, 5);
    const auto b = QueryKnowledgeBase(back, z, 5);
    for (int i = 0; i < 5; ++i) {
      EXPECT_EQ(a[i].index, b[i].index);
      EXPECT_EQ(a[i].similarity, b[i].similarity);
    }
  }
}

TEST(Persistence, RejectsCorruptFiles) {
  const Fixture f(5);
  const std::string bytes = EncodeKnowledgeBase(f.Build().kb);
  EXPECT_THROW(DecodeKnowledgeBase(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(DecodeKnowledgeBase(bytes + "z"), Error);
  std::string bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(DecodeKnowledgeBase(bad), Error);
}

TEST(Manifest, ModelMismatchDetected) {
  const Fixture f(5);
  const KnowledgeBase kb = f.Build().kb;
  EXPECT_NO_THROW(kb.CheckModels(f.manifest.denoiser_checksum, f.manifest.extractor_checksum,
                                 f.manifest.schedule_hash));
  const auto other_schedule = MakeSchedule(100, 1e-4, 0.03, ScheduleKind::kLinear).Hash();
  try {
    kb.CheckModels(f.manifest.denoiser_checksum, f.manifest.extractor_checksum, other_schedule);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChecksumMismatch);
  }
  EXPECT_THROW(kb.CheckModels(f.manifest.denoiser_checksum, other_schedule,
                              f.manifest.schedule_hash),
               Error);
}

TEST(RetrievalAccuracy, SelfQueriesArePerfect) {
  Rng rng(7);
  const KnowledgeBase kb = RandomKb(rng, 80, 6, 4);
  std::vector<Vec> queries;
  std::vector<int> labels;
  for (const KbEntry& e : kb.entries) {
    queries.push_back(e.key);
    labels.push_back(e.label);
  }
  EXPECT_EQ(RetrievalLabelAccuracy(kb, queries, labels, 1), 1.0);
}

TEST(RetrievalAccuracy, ShuffledLabelsGiveChance) {
  const int classes = 5;
  double total = 0;
  const int seeds = 40;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    KnowledgeBase kb = RandomKb(rng, 200, 4, classes);
    std::vector<Vec> queries;
    std::vector<int> labels;
    for (int q = 0; q < 200; ++q) {
      queries.push_back(NormalizeFeature(StandardNormal(rng, 4)));
      labels.push_back(q % classes);
    }
    std::vector<int> perm(kb.entries.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = kb.entries[i].label;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i) kb.entries[i].label = perm[i];
    total += RetrievalLabelAccuracy(kb, queries, labels, 1);
  }
  // 8000 Bernoulli(0.2) trials in total.
  EXPECT_NEAR(total / seeds, 1.0 / classes, 5 * std::sqrt(0.2 * 0.8 / 8000.0));
}

TEST(RetrievalAccuracy, UnlabeledKbRejected) {
  Rng rng(8);
  const KnowledgeBase kb = RandomKb(rng, 10, 3, 0);
  const std::vector<Vec> queries{kb.entries[0].key};
  const std::vector<int> labels{0};
  EXPECT_THROW(RetrievalLabelAccuracy(kb, queries, labels, 1), Error);
}

}  // namespace
}  // namespace ragdp
