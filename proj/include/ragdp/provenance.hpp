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

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/error.hpp"
#include "ragdp/nn.hpp"

namespace ragdp {

// Named checksums of the artifacts an output was derived from.
using Provenance = std::vector<std::pair<std::string, Digest>>;

inline void PutProvenance(ByteWriter& w, const Provenance& prov) {
  w.PutU32(static_cast<std::uint32_t>(prov.size()));
  for (const auto& [name, digest] : prov) {
    w.PutString(name);
    w.PutBytes(std::string_view(reinterpret_cast<const char*>(digest.data()), digest.size()));
  }
}

inline Provenance GetProvenance(ByteReader& r) {
  Provenance prov;
  const std::uint32_t n = r.GetU32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.GetString();
    const std::string_view raw = r.GetBytes(32);
    Digest d;
    std::copy(raw.begin(), raw.end(), d.begin());
    prov.emplace_back(std::move(name), d);
  }
  return prov;
}

inline constexpr std::string_view kProvenanceTag = "PROV";

// Replaces any existing PROV section.
inline void SetCheckpointProvenance(Checkpoint& ckpt, const Provenance& prov) {
  std::erase_if(ckpt.sections,
                [](const CheckpointSection& s) { return s.tag == kProvenanceTag; });
  ByteWriter w;
  PutProvenance(w, prov);
  ckpt.sections.push_back({std::string(kProvenanceTag), w.Release()});
}

inline Provenance CheckpointProvenance(const Checkpoint& ckpt) {
  const CheckpointSection* sec = ckpt.FindSection(kProvenanceTag);
  if (!sec) return {};
  ByteReader r(sec->payload);
  Provenance prov = GetProvenance(r);
  internal::Require(r.AtEnd(), ErrorCode::kFormat, "trailing bytes in PROV section");
  return prov;
}

}  // namespace ragdp
