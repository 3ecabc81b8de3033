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

#include "ragdp/accountant.hpp"
#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/contrastive.hpp"
#include "ragdp/dataset.hpp"
#include "ragdp/denoiser.hpp"
#include "ragdp/diffusion.hpp"
#include "ragdp/dp_trainer.hpp"
#include "ragdp/error.hpp"
#include "ragdp/eval.hpp"
#include "ragdp/knowledge_base.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/pipeline.hpp"
#include "ragdp/pretrain.hpp"
#include "ragdp/provenance.hpp"
#include "ragdp/rng.hpp"
