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

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ragdp {

using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent substream seed for (seed, tag0, tag1, ...). Used wherever work
// is keyed by an index so results do not depend on evaluation order.
inline std::uint64_t DeriveSeed(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = SplitMix64(seed);
  for (std::uint64_t t : tags) h = SplitMix64(h ^ SplitMix64(t + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng Substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  return Rng(DeriveSeed(seed, tags));
}

inline Vec StandardNormal(Rng& rng, Eigen::Index dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
  return v;
}

inline double Uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int UniformInt(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace ragdp
