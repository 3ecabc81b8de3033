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

#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/checksum.hpp"
#include "ragdp/error.hpp"
#include "ragdp/nn.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

// Anything that maps (x_t, t, optional class) to a noise estimate. The
// trained DenoiserModel satisfies this, and so do test doubles.
template <typename P>
concept NoisePredictor = requires(const P& p, const Vec& x, int t,
                                  std::optional<int> label) {
  { p.Predict(x, t, label) } -> std::convertible_to<Vec>;
};

struct DenoiserSpec {
  int data_dim = 2;
  int time_embed_dim = 16;
  int horizon = 100;
  int num_classes = 0;  // 0 = unconditional
  int class_embed_dim = 4;
  std::vector<int> hidden = {64, 64};
  Activation hidden_activation = Activation::kTanh;

  int input_dim() const {
    return data_dim + time_embed_dim + (num_classes > 0 ? class_embed_dim : 0);
  }

  friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

// Noise predictor eps_theta(x_t, t[, y]). The network sees the concatenation
// [x_t, timestep embedding, class embedding]. Conditional models keep one
// extra "null" embedding row (index num_classes) used when no label is given,
// which is how label-agnostic callers such as feature extraction query a
// conditional denoiser.
//
// Parameter layout: network parameters in canonical order, then the class
// embedding table row-major.
class DenoiserModel {
 public:
  DenoiserModel() = default;

  DenoiserModel(DenoiserSpec spec, DenseNet net, RowMatrix class_table)
      : spec_(std::move(spec)), net_(std::move(net)), class_table_(std::move(class_table)) {
    internal::Require(spec_.data_dim > 0 && spec_.horizon > 0 && spec_.num_classes >= 0,
                      ErrorCode::kInvalidArgument, "bad denoiser spec");
    internal::Require(net_.input_dim() == spec_.input_dim() &&
                          net_.output_dim() == spec_.data_dim,
                      ErrorCode::kDimensionMismatch,
                      "network shape does not match denoiser spec");
    const Eigen::Index rows = spec_.num_classes > 0 ? spec_.num_classes + 1 : 0;
    const Eigen::Index cols = spec_.num_classes > 0 ? spec_.class_embed_dim : 0;
    internal::Require(class_table_.rows() == rows && class_table_.cols() == cols,
                      ErrorCode::kDimensionMismatch,
                      "class embedding table has the wrong shape");
  }

  static DenoiserModel Create(const DenoiserSpec& spec, Rng& rng) {
    std::vector<int> widths;
    widths.push_back(spec.input_dim());
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(spec.data_dim);
    DenseNet net = DenseNet::Random(widths, spec.hidden_activation,
                                    Activation::kIdentity, rng);
    RowMatrix table;
    if (spec.num_classes > 0) {
      table.resize(spec.num_classes + 1, spec.class_embed_dim);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = normal(rng);
    }
    return DenoiserModel(spec, std::move(net), std::move(table));
  }

  const DenoiserSpec& spec() const { return spec_; }
  const DenseNet& net() const { return net_; }
  const RowMatrix& class_table() const { return class_table_; }
  bool conditional() const { return spec_.num_classes > 0; }
  int data_dim() const { return spec_.data_dim; }
  int horizon() const { return spec_.horizon; }

  Eigen::Index parameter_count() const {
    return net_.parameter_count() + class_table_.size();
  }

  Vec Parameters() const {
    Vec p(parameter_count());
    p.head(net_.parameter_count()) = net_.Parameters();
    p.tail(class_table_.size()) =
        Eigen::Map<const Vec>(class_table_.data(), class_table_.size());
    return p;
  }

  void SetParameters(const Vec& p) {
    internal::Require(p.size() == parameter_count(), ErrorCode::kDimensionMismatch,
                      "parameter vector length does not match denoiser");
    net_.SetParameters(p.head(net_.parameter_count()));
    Eigen::Map<Vec>(class_table_.data(), class_table_.size()) =
        p.tail(class_table_.size());
  }

  Vec Predict(const Vec& x, int t, std::optional<int> label) const {
    return Forward(net_, Input(x, t, label));
  }

  // loss = ||target - eps_theta(x, t, y)||^2 and, if requested, its gradient
  // with respect to all denoiser parameters.
  double LossAndGradient(const Vec& x, int t, std::optional<int> label,
                         const Vec& target, GradientVector* grad,
                         long long example_index = -1) const {
    internal::Require(target.size() == spec_.data_dim, ErrorCode::kDimensionMismatch,
                      "target noise has the wrong dimension");
    ForwardTrace trace;
    const Vec out = Forward(net_, Input(x, t, label), &trace);
    const LossEval eval = SquaredErrorLoss{}(out, target);
    if (!std::isfinite(eval.value)) throw NonFiniteLossError(example_index);
    if (grad) {
      BackwardResult back = Backward(net_, trace, eval.output_grad);
      *grad = GradientVector(parameter_count());
      grad->values.head(net_.parameter_count()) = back.params.values;
      if (conditional()) {
        const Eigen::Index row = ClassRow(label);
        const Eigen::Index in_off = spec_.data_dim + spec_.time_embed_dim;
        grad->values.segment(net_.parameter_count() + row * spec_.class_embed_dim,
                             spec_.class_embed_dim) =
            back.input.segment(in_off, spec_.class_embed_dim);
      }
    }
    return eval.value;
  }

  friend bool operator==(const DenoiserModel& a, const DenoiserModel& b) {
    return a.spec_ == b.spec_ && a.net_ == b.net_ &&
           a.class_table_.rows() == b.class_table_.rows() &&
           a.class_table_.cols() == b.class_table_.cols() &&
           a.class_table_ == b.class_table_;
  }

 private:
  Eigen::Index ClassRow(std::optional<int> label) const {
    if (!label) return spec_.num_classes;
    internal::Require(*label >= 0 && *label < spec_.num_classes, ErrorCode::kOutOfRange,
                      "class label " + std::to_string(*label) + " out of range");
    return *label;
  }

  Vec Input(const Vec& x, int t, std::optional<int> label) const {
    if (x.size() != spec_.data_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "denoiser expects data dim " + std::to_string(spec_.data_dim) +
                      ", got " + std::to_string(x.size()));
    }
    Vec in(spec_.input_dim());
    in.head(spec_.data_dim) = x;
    in.segment(spec_.data_dim, spec_.time_embed_dim) =
        TimestepEmbedding(t, spec_.time_embed_dim, spec_.horizon);
    if (conditional()) {
      in.tail(spec_.class_embed_dim) = class_table_.row(ClassRow(label)).transpose();
    }
    return in;
  }

  DenoiserSpec spec_;
  DenseNet net_;
  RowMatrix class_table_;
};

// Wraps a predictor and counts invocations. The count lives in the wrapper,
// so each sampling call owns its own counter.
template <NoisePredictor P>
class CountingPredictor {
 public:
  explicit CountingPredictor(const P& inner) : inner_(&inner) {}

  Vec Predict(const Vec& x, int t, std::optional<int> label) const {
    ++calls_;
    return inner_->Predict(x, t, label);
  }

  std::int64_t calls() const { return calls_; }

 private:
  const P* inner_;
  mutable std::int64_t calls_ = 0;
};

// Denoiser checkpoint: an RPDN container with role "denoiser" and a "DNSR"
// section holding the conditioning layout plus the class embedding table.
inline Checkpoint DenoiserCheckpoint(const DenoiserModel& model) {
  Checkpoint ckpt;
  ckpt.role = "denoiser";
  ckpt.net = model.net();
  const DenoiserSpec& s = model.spec();
  ByteWriter w;
  w.PutU32(static_cast<std::uint32_t>(s.data_dim));
  w.PutU32(static_cast<std::uint32_t>(s.time_embed_dim));
  w.PutU32(static_cast<std::uint32_t>(s.horizon));
  w.PutU32(static_cast<std::uint32_t>(s.num_classes));
  w.PutU32(static_cast<std::uint32_t>(s.class_embed_dim));
  w.PutU8(static_cast<std::uint8_t>(s.hidden_activation));
  const RowMatrix& table = model.class_table();
  w.PutF64s(std::span<const double>(table.data(), table.size()));
  ckpt.sections.push_back({"DNSR", w.Release()});
  return ckpt;
}

inline DenoiserModel DenoiserFromCheckpoint(const Checkpoint& ckpt) {
  if (ckpt.role != "denoiser") {
    throw Error(ErrorCode::kFormat,
                "checkpoint role is \"" + ckpt.role + "\", expected \"denoiser\"");
  }
  const CheckpointSection* sec = ckpt.FindSection("DNSR");
  if (!sec) throw Error(ErrorCode::kFormat, "denoiser checkpoint lacks DNSR section");
  ByteReader r(sec->payload);
  DenoiserSpec s;
  s.data_dim = static_cast<int>(r.GetU32());
  s.time_embed_dim = static_cast<int>(r.GetU32());
  s.horizon = static_cast<int>(r.GetU32());
  s.num_classes = static_cast<int>(r.GetU32());
  s.class_embed_dim = static_cast<int>(r.GetU32());
  s.hidden_activation = static_cast<Activation>(r.GetU8());
  s.hidden.clear();
  const auto& layers = ckpt.net.layers();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    s.hidden.push_back(static_cast<int>(layers[i].weight.rows()));
  }
  RowMatrix table;
  if (s.num_classes > 0) {
    table.resize(s.num_classes + 1, s.class_embed_dim);
    r.GetF64s(std::span<double>(table.data(), table.size()));
  }
  internal::Require(r.AtEnd(), ErrorCode::kFormat, "trailing bytes in DNSR section");
  return DenoiserModel(s, ckpt.net, std::move(table));
}

// Identity of the model weights, independent of optimizer state or
// provenance sections. Used in knowledge-base build manifests.
inline Digest ModelChecksum(const DenoiserModel& model) {
  return Sha256(EncodeCheckpoint(DenoiserCheckpoint(model)));
}

}  // namespace ragdp
