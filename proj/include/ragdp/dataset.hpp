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
#include <string>
#include <string_view>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/error.hpp"
#include "ragdp/provenance.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

enum class DatasetRole : std::uint8_t { kPubPre = 0, kPubRef = 1, kPrv = 2, kSynthetic = 3 };
enum class Generator : std::uint8_t {
  kGaussianRing = 0,
  kSwissRoll = 1,
  kCheckerboard = 2,
  kBlobs = 3,
};

inline std::string_view RoleName(DatasetRole r) {
  switch (r) {
    case DatasetRole::kPubPre:
      return "pub_pre";
    case DatasetRole::kPubRef:
      return "pub_ref";
    case DatasetRole::kPrv:
      return "prv";
    case DatasetRole::kSynthetic:
      return "synthetic";
  }
  return "unknown";
}

inline Generator ParseGenerator(std::string_view name) {
  if (name == "gaussian_ring") return Generator::kGaussianRing;
  if (name == "swiss_roll") return Generator::kSwissRoll;
  if (name == "checkerboard") return Generator::kCheckerboard;
  if (name == "blobs") return Generator::kBlobs;
  throw Error(ErrorCode::kInvalidArgument, "unknown generator \"" + std::string(name) + "\"");
}

inline std::string_view GeneratorName(Generator g) {
  switch (g) {
    case Generator::kGaussianRing:
      return "gaussian_ring";
    case Generator::kSwissRoll:
      return "swiss_roll";
    case Generator::kCheckerboard:
      return "checkerboard";
    case Generator::kBlobs:
      return "blobs";
  }
  return "unknown";
}

// Shared knobs; each generator reads the subset it needs. `rotation` (radians,
// about the origin) and `translation` are applied last and model the domain
// gap between public and private data. Only 2-D generators honor them.
struct GeneratorParams {
  int num_modes = 8;
  double radius = 2.0;
  double mode_std = 0.05;
  double noise = 0.05;
  int dim = 2;  // blobs only
  double rotation = 0.0;
  double translate_x = 0.0;
  double translate_y = 0.0;

  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

struct Dataset {
  std::vector<Vec> points;
  std::vector<int> labels;  // empty = unlabeled
  DatasetRole role = DatasetRole::kPubPre;
  Generator generator = Generator::kGaussianRing;
  GeneratorParams params;
  std::uint64_t seed = 0;
  Provenance provenance;  // inputs of derived sets such as samples

  std::size_t size() const { return points.size(); }
  int dim() const { return points.empty() ? 0 : static_cast<int>(points[0].size()); }
  bool labeled() const { return !labels.empty(); }

  int num_classes() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
  }
};

inline void RequireRole(const Dataset& d, DatasetRole expected) {
  if (d.role != expected) {
    throw Error(ErrorCode::kInvalidArgument,
                "dataset role is " + std::string(RoleName(d.role)) + ", expected " +
                    std::string(RoleName(expected)));
  }
}

namespace internal {

inline Vec ShiftPoint(Vec p, const GeneratorParams& params) {
  if (p.size() != 2) return p;
  const double c = std::cos(params.rotation);
  const double s = std::sin(params.rotation);
  const double x = p[0];
  const double y = p[1];
  p[0] = c * x - s * y + params.translate_x;
  p[1] = s * x + c * y + params.translate_y;
  return p;
}

}  // namespace internal

// Ring mode centers after the configured shift; mode j sits at angle 2 pi j / C.
inline std::vector<Vec> RingCenters(const GeneratorParams& params) {
  std::vector<Vec> centers;
  for (int j = 0; j < params.num_modes; ++j) {
    const double theta = 2.0 * std::numbers::pi * j / params.num_modes;
    Vec c(2);
    c << params.radius * std::cos(theta), params.radius * std::sin(theta);
    centers.push_back(internal::ShiftPoint(c, params));
  }
  return centers;
}

// Deterministic in (generator, params, n, seed). Labelled generators use a
// stratified allocation: example i belongs to class i mod C.
inline Dataset GenerateDataset(Generator generator, const GeneratorParams& params, std::size_t n,
                               std::uint64_t seed, DatasetRole role) {
  internal::Require(n >= 1, ErrorCode::kInvalidArgument, "dataset size must be >= 1");
  Dataset d;
  d.role = role;
  d.generator = generator;
  d.params = params;
  d.seed = seed;
  Rng rng(DeriveSeed(seed, {static_cast<std::uint64_t>(generator)}));
  std::normal_distribution<double> normal(0.0, 1.0);
  switch (generator) {
    case Generator::kGaussianRing: {
      internal::Require(params.num_modes >= 1 && params.mode_std >= 0,
                        ErrorCode::kInvalidArgument, "bad gaussian_ring params");
      GeneratorParams unshifted = params;
      unshifted.rotation = 0.0;
      unshifted.translate_x = unshifted.translate_y = 0.0;
      const std::vector<Vec> centers = RingCenters(unshifted);
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % params.num_modes);
        Vec p = centers[label];
        p[0] += params.mode_std * normal(rng);
        p[1] += params.mode_std * normal(rng);
        d.points.push_back(internal::ShiftPoint(std::move(p), params));
        d.labels.push_back(label);
      }
      break;
    }
    case Generator::kSwissRoll: {
      internal::Require(params.num_modes >= 1, ErrorCode::kInvalidArgument,
                        "bad swiss_roll params");
      // t in [1.5 pi, 4.5 pi], scaled so the roll spans roughly the ring's extent.
      const double lo = 1.5 * std::numbers::pi;
      const double hi = 4.5 * std::numbers::pi;
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % params.num_modes);
        const double seg = (hi - lo) / params.num_modes;
        const double t = lo + seg * (label + Uniform(rng, 0.0, 1.0));
        Vec p(2);
        p << t * std::cos(t), t * std::sin(t);
        p *= params.radius / hi;
        p[0] += params.noise * normal(rng);
        p[1] += params.noise * normal(rng);
        d.points.push_back(internal::ShiftPoint(std::move(p), params));
        d.labels.push_back(label);
      }
      break;
    }
    case Generator::kCheckerboard: {
      // 4 x 4 board on [-radius, radius]^2; the 8 dark cells are the classes.
      const double cell = params.radius / 2.0;
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 8);
        const int row = label / 2;
        const int col = 2 * (label % 2) + (row % 2);
        Vec p(2);
        p << -params.radius + cell * (col + Uniform(rng, 0.0, 1.0)),
            -params.radius + cell * (row + Uniform(rng, 0.0, 1.0));
        d.points.push_back(internal::ShiftPoint(std::move(p), params));
        d.labels.push_back(label);
      }
      break;
    }
    case Generator::kBlobs: {
      internal::Require(params.num_modes >= 1 && params.dim >= 1, ErrorCode::kInvalidArgument,
                        "bad blobs params");
      std::vector<Vec> centers;
      for (int j = 0; j < params.num_modes; ++j) {
        Vec c(params.dim);
        for (int k = 0; k < params.dim; ++k) c[k] = Uniform(rng, -params.radius, params.radius);
        centers.push_back(std::move(c));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % params.num_modes);
        Vec p = centers[label];
        for (int k = 0; k < params.dim; ++k) p[k] += params.mode_std * normal(rng);
        d.points.push_back(internal::ShiftPoint(std::move(p), params));
        d.labels.push_back(label);
      }
      break;
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// "RPDS" file: magic | u16 version | u8 role | u8 generator | params | u64 seed
// | u64 n | u32 dim | u8 labeled | f64[n x dim] points | i32[n] labels
// | u32 m | m x (string name, 32-byte digest) provenance.

inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::string EncodeDataset(const Dataset& d) {
  ByteWriter w;
  w.PutBytes("RPDS");
  w.PutU16(kDatasetVersion);
  w.PutU8(static_cast<std::uint8_t>(d.role));
  w.PutU8(static_cast<std::uint8_t>(d.generator));
  const GeneratorParams& p = d.params;
  w.PutU32(static_cast<std::uint32_t>(p.num_modes));
  w.PutF64(p.radius);
  w.PutF64(p.mode_std);
  w.PutF64(p.noise);
  w.PutU32(static_cast<std::uint32_t>(p.dim));
  w.PutF64(p.rotation);
  w.PutF64(p.translate_x);
  w.PutF64(p.translate_y);
  w.PutU64(d.seed);
  w.PutU64(d.points.size());
  const std::uint32_t dim = static_cast<std::uint32_t>(d.dim());
  w.PutU32(dim);
  w.PutU8(d.labeled() ? 1 : 0);
  for (const Vec& x : d.points) {
    internal::Require(static_cast<std::uint32_t>(x.size()) == dim,
                      ErrorCode::kDimensionMismatch, "ragged dataset");
    w.PutF64s(std::span<const double>(x.data(), x.size()));
  }
  if (d.labeled()) {
    internal::Require(d.labels.size() == d.points.size(), ErrorCode::kDimensionMismatch,
                      "labels do not match points");
    for (int l : d.labels) w.PutI32(l);
  }
  PutProvenance(w, d.provenance);
  return w.Release();
}

inline Dataset DecodeDataset(std::string_view bytes) {
  ByteReader r(bytes);
  r.ExpectMagic("RPDS");
  const std::uint16_t version = r.GetU16();
  if (version != kDatasetVersion) {
    throw Error(ErrorCode::kFormat, "unsupported RPDS version " + std::to_string(version));
  }
  Dataset d;
  const std::uint8_t role = r.GetU8();
  const std::uint8_t gen = r.GetU8();
  internal::Require(role <= 3 && gen <= 3, ErrorCode::kFormat, "bad dataset header");
  d.role = static_cast<DatasetRole>(role);
  d.generator = static_cast<Generator>(gen);
  GeneratorParams& p = d.params;
  p.num_modes = static_cast<int>(r.GetU32());
  p.radius = r.GetF64();
  p.mode_std = r.GetF64();
  p.noise = r.GetF64();
  p.dim = static_cast<int>(r.GetU32());
  p.rotation = r.GetF64();
  p.translate_x = r.GetF64();
  p.translate_y = r.GetF64();
  d.seed = r.GetU64();
  const std::uint64_t n = r.GetU64();
  const std::uint32_t dim = r.GetU32();
  const bool labeled = r.GetU8() != 0;
  d.points.resize(n);
  for (Vec& x : d.points) {
    x.resize(dim);
    r.GetF64s(std::span<double>(x.data(), dim));
  }
  if (labeled) {
    d.labels.resize(n);
    for (int& l : d.labels) l = r.GetI32();
  }
  d.provenance = GetProvenance(r);
  internal::Require(r.AtEnd(), ErrorCode::kFormat, "trailing bytes after dataset");
  return d;
}

inline Digest DatasetChecksum(const Dataset& d) { return Sha256(EncodeDataset(d)); }

}  // namespace ragdp
