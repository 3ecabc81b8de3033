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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/contrastive.hpp"
#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/error.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

struct KbEntry {
  Vec key;    // unit-norm feature of the timestep-k latent
  Vec value;  // timestep-v latent
  std::int32_t label = -1;
  std::uint64_t source_index = 0;
};

enum class KbMetric : std::uint8_t { kCosine = 0 };

struct KbManifest {
  Digest denoiser_checksum{};
  Digest extractor_checksum{};
  Digest schedule_hash{};
  std::uint64_t seed = 0;

  friend bool operator==(const KbManifest&, const KbManifest&) = default;
};

struct KnowledgeBase {
  std::vector<KbEntry> entries;
  int k_timestep = 0;
  int v_timestep = 0;
  int d_feat = 0;
  int d_data = 0;
  KbMetric metric = KbMetric::kCosine;
  KbManifest manifest;

  bool labeled() const {
    return !entries.empty() &&
           std::all_of(entries.begin(), entries.end(),
                       [](const KbEntry& e) { return e.label >= 0; });
  }

  void Validate() const {
    internal::Require(k_timestep > v_timestep && v_timestep > 0,
                      ErrorCode::kInvariantViolation, "knowledge base needs k > v > 0");
    for (const KbEntry& e : entries) {
      internal::Require(e.key.size() == d_feat && e.value.size() == d_data,
                        ErrorCode::kDimensionMismatch, "knowledge base entry has wrong dims");
      internal::Require(std::abs(e.key.norm() - 1.0) <= 1e-9, ErrorCode::kInvariantViolation,
                        "knowledge base key is not unit norm");
      internal::Require(e.value.allFinite(), ErrorCode::kNonFinite,
                        "knowledge base value is not finite");
    }
  }

  // The models used at query time must be the ones the KB was built with.
  void CheckModels(const Digest& denoiser, const Digest& extractor,
                   const Digest& schedule) const {
    if (denoiser != manifest.denoiser_checksum) {
      throw Error(ErrorCode::kChecksumMismatch,
                  "knowledge base was built with a different denoiser");
    }
    if (extractor != manifest.extractor_checksum) {
      throw Error(ErrorCode::kChecksumMismatch,
                  "knowledge base was built with a different extractor");
    }
    if (schedule != manifest.schedule_hash) {
      throw Error(ErrorCode::kChecksumMismatch,
                  "knowledge base was built with a different variance schedule");
    }
  }
};

// Forward noise shared by the key and value of one entry. Keyed by
// (seed, source_index, replica) so any entry can be recomputed in isolation.
inline Vec KbNoise(std::uint64_t seed, std::uint64_t source_index, std::uint64_t replica,
                   Eigen::Index dim) {
  Rng rng = Substream(seed, {source_index, replica});
  return StandardNormal(rng, dim);
}

struct KbBuildOptions {
  int entries_per_example = 1;
};

struct KbBuild {
  KnowledgeBase kb;
  std::int64_t denoiser_calls = 0;
};

// One forward pass per reference example: x_k and x_v share a single noise
// draw, the key is the extracted feature of x_k and the value is x_v.
template <NoisePredictor P>
KbBuild BuildKnowledgeBase(std::span<const Vec> reference, std::span<const int> labels,
                           const P& denoiser, const DenseNet& extractor,
                           const VarianceSchedule& schedule, int k, int v,
                           const KbManifest& manifest, const KbBuildOptions& options = {}) {
  internal::Require(0 < v && v < k && k < schedule.horizon, ErrorCode::kOutOfRange,
                    "need 0 < v < k < T");
  internal::Require(labels.empty() || labels.size() == reference.size(),
                    ErrorCode::kDimensionMismatch, "labels do not match reference data");
  internal::Require(options.entries_per_example >= 1, ErrorCode::kInvalidArgument,
                    "entries_per_example must be >= 1");
  KbBuild out;
  KnowledgeBase& kb = out.kb;
  kb.k_timestep = k;
  kb.v_timestep = v;
  kb.d_feat = static_cast<int>(extractor.output_dim());
  kb.d_data = reference.empty() ? static_cast<int>(extractor.input_dim())
                                : static_cast<int>(reference[0].size());
  internal::Require(kb.d_data == extractor.input_dim(), ErrorCode::kDimensionMismatch,
                    "extractor input dim does not match data dim");
  kb.manifest = manifest;
  CountingPredictor<P> counted(denoiser);
  kb.entries.reserve(reference.size() * options.entries_per_example);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const Vec& x = reference[i];
    internal::Require(x.size() == kb.d_data, ErrorCode::kDimensionMismatch,
                      "reference example " + std::to_string(i) + " has wrong dim");
    for (int rep = 0; rep < options.entries_per_example; ++rep) {
      const Vec eps = KbNoise(manifest.seed, i, static_cast<std::uint64_t>(rep), x.size());
      KbEntry e;
      e.key = ExtractFeature(extractor, counted, ForwardDiffuse(x, k, eps, schedule), k,
                             schedule);
      e.value = ForwardDiffuse(x, v, eps, schedule);
      e.label = labels.empty() ? -1 : labels[i];
      e.source_index = i;
      kb.entries.push_back(std::move(e));
    }
  }
  out.denoiser_calls = counted.calls();
  return out;
}

struct KbHit {
  std::size_t index = 0;
  double similarity = 0.0;
};

// Exact top-k by cosine similarity (dot product of unit vectors), descending,
// ties broken by lower source_index then lower position.
inline std::vector<KbHit> QueryKnowledgeBase(const KnowledgeBase& kb, const Vec& z, int topk) {
  internal::Require(!kb.entries.empty(), ErrorCode::kInvalidArgument,
                    "query on an empty knowledge base");
  internal::Require(topk >= 1, ErrorCode::kInvalidArgument, "topk must be >= 1");
  internal::Require(z.size() == kb.d_feat, ErrorCode::kDimensionMismatch,
                    "query feature has wrong dim");
  std::vector<KbHit> hits(kb.entries.size());
  for (std::size_t i = 0; i < kb.entries.size(); ++i) {
    hits[i] = {i, kb.entries[i].key.dot(z)};
  }
  auto better = [&](const KbHit& a, const KbHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    const auto sa = kb.entries[a.index].source_index;
    const auto sb = kb.entries[b.index].source_index;
    if (sa != sb) return sa < sb;
    return a.index < b.index;
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(topk), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                    better);
  hits.resize(n);
  return hits;
}

// Fraction of queries whose top-k hits contain at least one entry carrying the
// query's true label.
inline double RetrievalLabelAccuracy(const KnowledgeBase& kb, std::span<const Vec> queries,
                                     std::span<const int> true_labels, int topk) {
  internal::Require(kb.labeled(), ErrorCode::kInvalidArgument,
                    "retrieval accuracy needs a labeled knowledge base");
  internal::Require(queries.size() == true_labels.size() && !queries.empty(),
                    ErrorCode::kDimensionMismatch, "queries and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (const KbHit& h : QueryKnowledgeBase(kb, queries[q], topk)) {
      if (kb.entries[h.index].label == true_labels[q]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

// ---------------------------------------------------------------------------
// "RPKB" file: magic | u16 version | u8 metric | u32 k | u32 v | u32 d_feat
// | u32 d_data | u64 count | 3 x 32-byte checksums (denoiser, extractor,
// schedule) | u64 seed | entries: f64[d_feat] key, f64[d_data] value,
// i32 label (-1 = none), u64 source_index. Little-endian.

inline constexpr std::uint16_t kKbVersion = 1;

inline std::string EncodeKnowledgeBase(const KnowledgeBase& kb) {
  ByteWriter w;
  w.PutBytes("RPKB");
  w.PutU16(kKbVersion);
  w.PutU8(static_cast<std::uint8_t>(kb.metric));
  w.PutU32(static_cast<std::uint32_t>(kb.k_timestep));
  w.PutU32(static_cast<std::uint32_t>(kb.v_timestep));
  w.PutU32(static_cast<std::uint32_t>(kb.d_feat));
  w.PutU32(static_cast<std::uint32_t>(kb.d_data));
  w.PutU64(kb.entries.size());
  for (const Digest* d : {&kb.manifest.denoiser_checksum, &kb.manifest.extractor_checksum,
                          &kb.manifest.schedule_hash}) {
    w.PutBytes(std::string_view(reinterpret_cast<const char*>(d->data()), d->size()));
  }
  w.PutU64(kb.manifest.seed);
  for (const KbEntry& e : kb.entries) {
    internal::Require(e.key.size() == kb.d_feat && e.value.size() == kb.d_data,
                      ErrorCode::kDimensionMismatch, "entry dims differ from header");
    w.PutF64s(std::span<const double>(e.key.data(), e.key.size()));
    w.PutF64s(std::span<const double>(e.value.data(), e.value.size()));
    w.PutI32(e.label);
    w.PutU64(e.source_index);
  }
  return w.Release();
}

inline KnowledgeBase DecodeKnowledgeBase(std::string_view bytes) {
  ByteReader r(bytes);
  r.ExpectMagic("RPKB");
  const std::uint16_t version = r.GetU16();
  if (version != kKbVersion) {
    throw Error(ErrorCode::kFormat, "unsupported RPKB version " + std::to_string(version));
  }
  KnowledgeBase kb;
  const std::uint8_t metric = r.GetU8();
  internal::Require(metric == 0, ErrorCode::kFormat, "unknown knowledge base metric");
  kb.metric = KbMetric::kCosine;
  kb.k_timestep = static_cast<int>(r.GetU32());
  kb.v_timestep = static_cast<int>(r.GetU32());
  kb.d_feat = static_cast<int>(r.GetU32());
  kb.d_data = static_cast<int>(r.GetU32());
  const std::uint64_t count = r.GetU64();
  for (Digest* d : {&kb.manifest.denoiser_checksum, &kb.manifest.extractor_checksum,
                    &kb.manifest.schedule_hash}) {
    std::string_view raw = r.GetBytes(32);
    std::copy(raw.begin(), raw.end(), d->begin());
  }
  kb.manifest.seed = r.GetU64();
  const std::size_t record = 8u * (kb.d_feat + kb.d_data) + 4 + 8;
  internal::Require(r.remaining() == count * record, ErrorCode::kFormat,
                    "knowledge base entry table has the wrong length");
  kb.entries.resize(count);
  for (KbEntry& e : kb.entries) {
    e.key.resize(kb.d_feat);
    e.value.resize(kb.d_data);
    r.GetF64s(std::span<double>(e.key.data(), kb.d_feat));
    r.GetF64s(std::span<double>(e.value.data(), kb.d_data));
    e.label = r.GetI32();
    e.source_index = r.GetU64();
  }
  return kb;
}

}  // namespace ragdp
