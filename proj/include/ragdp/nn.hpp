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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragdp/binary_io.hpp"
#include "ragdp/error.hpp"
#include "ragdp/rng.hpp"

namespace ragdp {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kTanh = 2 };

inline std::string_view ActivationName(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
  }
  return "unknown";
}

inline Activation ParseActivation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown activation \"" + std::string(name) + "\"");
}

struct DenseLayer {
  RowMatrix weight;  // out x in
  Vec bias;          // out
  Activation activation = Activation::kIdentity;
};

// Flat gradient in the canonical parameter order: layer-major, the weight
// matrix (row-major) before the bias within each layer.
struct GradientVector {
  Vec values;

  GradientVector() = default;
  explicit GradientVector(Eigen::Index n) : values(Vec::Zero(n)) {}
  explicit GradientVector(Vec v) : values(std::move(v)) {}

  Eigen::Index size() const { return values.size(); }
  double Norm() const { return values.norm(); }
  bool AllFinite() const { return values.allFinite(); }

  GradientVector& operator+=(const GradientVector& other) {
    values += other.values;
    return *this;
  }
  GradientVector& operator*=(double s) {
    values *= s;
    return *this;
  }
};

class DenseNet {
 public:
  DenseNet() = default;

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    internal::Require(!layers_.empty(), ErrorCode::kInvalidArgument,
                      "DenseNet needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const DenseLayer& l = layers_[i];
      if (l.bias.size() != l.weight.rows()) {
        throw LayerError(i, "bias length does not match weight rows");
      }
      if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
        throw LayerError(i, "input dim " + std::to_string(l.weight.cols()) +
                                " does not chain with previous output dim " +
                                std::to_string(layers_[i - 1].weight.rows()));
      }
      if (!l.weight.allFinite() || !l.bias.allFinite()) {
        throw Error(ErrorCode::kNonFinite,
                    "layer " + std::to_string(i) + " has non-finite weights");
      }
    }
  }

  // widths = {in, hidden..., out}. Weights ~ N(0, gain / fan_in) with gain 2
  // for relu layers and 1 otherwise; biases start at zero.
  static DenseNet Random(std::span<const int> widths, Activation hidden,
                         Activation output, Rng& rng) {
    internal::Require(widths.size() >= 2, ErrorCode::kInvalidArgument,
                      "need at least input and output widths");
    std::vector<DenseLayer> layers;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      internal::Require(widths[i] > 0 && widths[i + 1] > 0,
                        ErrorCode::kInvalidArgument, "widths must be positive");
      DenseLayer l;
      l.activation = (i + 2 == widths.size()) ? output : hidden;
      const double gain = l.activation == Activation::kRelu ? 2.0 : 1.0;
      const double scale = std::sqrt(gain / widths[i]);
      l.weight.resize(widths[i + 1], widths[i]);
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
          l.weight(r, c) = scale * normal(rng);
        }
      }
      l.bias = Vec::Zero(widths[i + 1]);
      layers.push_back(std::move(l));
    }
    return DenseNet(std::move(layers));
  }

  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers_.back().weight.rows(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const DenseLayer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }

  Vec Parameters() const {
    Vec out(parameter_count());
    Eigen::Index off = 0;
    for (const DenseLayer& l : layers_) {
      out.segment(off, l.weight.size()) =
          Eigen::Map<const Vec>(l.weight.data(), l.weight.size());
      off += l.weight.size();
      out.segment(off, l.bias.size()) = l.bias;
      off += l.bias.size();
    }
    return out;
  }

  void SetParameters(const Vec& params) {
    internal::Require(params.size() == parameter_count(),
                      ErrorCode::kDimensionMismatch,
                      "parameter vector length does not match network");
    Eigen::Index off = 0;
    for (DenseLayer& l : layers_) {
      Eigen::Map<Vec>(l.weight.data(), l.weight.size()) =
          params.segment(off, l.weight.size());
      off += l.weight.size();
      l.bias = params.segment(off, l.bias.size());
      off += l.bias.size();
    }
  }

  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const DenseLayer& x = a.layers_[i];
      const DenseLayer& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
          x.weight.cols() != y.weight.cols() || x.weight != y.weight ||
          x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
};

namespace internal {

inline Vec Activate(Activation a, const Vec& pre) {
  switch (a) {
    case Activation::kIdentity:
      return pre;
    case Activation::kRelu:
      return pre.cwiseMax(0.0);
    case Activation::kTanh:
      return pre.array().tanh().matrix();
  }
  return pre;
}

// d(activation)/d(pre), expressed through pre- and post-activation values.
inline Vec ActivationDerivative(Activation a, const Vec& pre, const Vec& post) {
  switch (a) {
    case Activation::kIdentity:
      return Vec::Ones(pre.size());
    case Activation::kRelu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh:
      return (1.0 - post.array().square()).matrix();
  }
  return Vec::Ones(pre.size());
}

}  // namespace internal

// Per-layer values recorded during a forward pass for reverse-mode use.
// activations[0] is the input; activations[i + 1] is layer i's output.
struct ForwardTrace {
  std::vector<Vec> pre_activations;
  std::vector<Vec> activations;
};

inline Vec Forward(const DenseNet& net, const Vec& input, ForwardTrace* trace) {
  if (input.size() != net.input_dim()) {
    throw LayerError(0, "expected input of length " +
                            std::to_string(net.input_dim()) + ", got " +
                            std::to_string(input.size()));
  }
  if (!input.allFinite()) {
    throw Error(ErrorCode::kNonFinite, "non-finite network input");
  }
  if (trace) {
    trace->pre_activations.clear();
    trace->activations.clear();
    trace->activations.push_back(input);
  }
  Vec h = input;
  for (const DenseLayer& l : net.layers()) {
    Vec pre = l.weight * h + l.bias;
    h = internal::Activate(l.activation, pre);
    if (trace) {
      trace->pre_activations.push_back(std::move(pre));
      trace->activations.push_back(h);
    }
  }
  return h;
}

inline Vec Forward(const DenseNet& net, const Vec& input) {
  return Forward(net, input, nullptr);
}

struct BackwardResult {
  GradientVector params;
  Vec input;  // d(loss)/d(input)
};

// Reverse pass for one example given d(loss)/d(output).
inline BackwardResult Backward(const DenseNet& net, const ForwardTrace& trace,
                               const Vec& output_grad) {
  const auto& layers = net.layers();
  internal::Require(trace.activations.size() == layers.size() + 1,
                    ErrorCode::kInvalidArgument,
                    "forward trace does not belong to this network");
  internal::Require(output_grad.size() == net.output_dim(),
                    ErrorCode::kDimensionMismatch,
                    "output gradient length does not match network output");
  BackwardResult result{GradientVector(net.parameter_count()), Vec()};

  // Offsets of each layer's block in the flat layout.
  std::vector<Eigen::Index> offsets(layers.size());
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    offsets[i] = off;
    off += layers[i].weight.size() + layers[i].bias.size();
  }

  Vec upstream = output_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const DenseLayer& l = layers[i];
    const Vec delta =
        upstream.cwiseProduct(internal::ActivationDerivative(
            l.activation, trace.pre_activations[i], trace.activations[i + 1]));
    const Vec& a_in = trace.activations[i];
    Eigen::Map<RowMatrix> dw(result.params.values.data() + offsets[i],
                             l.weight.rows(), l.weight.cols());
    dw.noalias() = delta * a_in.transpose();
    result.params.values.segment(offsets[i] + l.weight.size(), l.bias.size()) =
        delta;
    upstream = l.weight.transpose() * delta;
  }
  result.input = std::move(upstream);
  return result;
}

struct LossEval {
  double value = 0.0;
  Vec output_grad;
};

// ||output - target||^2
struct SquaredErrorLoss {
  LossEval operator()(const Vec& output, const Vec& target) const {
    const Vec diff = output - target;
    return {diff.squaredNorm(), 2.0 * diff};
  }
};

// 0.5 * ||output - target||^2
struct HalfSquaredErrorLoss {
  LossEval operator()(const Vec& output, const Vec& target) const {
    const Vec diff = output - target;
    return {0.5 * diff.squaredNorm(), diff};
  }
};

// Loss and d(loss)/d(theta) for a single example. Loss is any callable
// (output, target) -> LossEval.
template <typename Loss>
std::pair<double, GradientVector> PerExampleGradient(const DenseNet& net,
                                                     const Loss& loss,
                                                     const Vec& input,
                                                     const Vec& target,
                                                     long long example_index = -1) {
  ForwardTrace trace;
  const Vec out = Forward(net, input, &trace);
  LossEval eval = loss(out, target);
  if (!std::isfinite(eval.value) || !eval.output_grad.allFinite()) {
    throw NonFiniteLossError(example_index);
  }
  BackwardResult back = Backward(net, trace, eval.output_grad);
  return {eval.value, std::move(back.params)};
}

struct AdamState {
  Vec first_moment;
  Vec second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState Fresh(Eigen::Index parameter_count, double learning_rate,
                         double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8) {
    internal::Require(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
                      ErrorCode::kInvalidArgument,
                      "Adam betas must lie in (0, 1)");
    AdamState s;
    s.first_moment = Vec::Zero(parameter_count);
    s.second_moment = Vec::Zero(parameter_count);
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam on a flat parameter vector. Validates the gradient
// before touching either params or state.
inline void AdamUpdate(Vec& params, AdamState& state, const GradientVector& grad) {
  internal::Require(grad.size() == params.size() &&
                        state.first_moment.size() == params.size() &&
                        state.second_moment.size() == params.size(),
                    ErrorCode::kDimensionMismatch,
                    "Adam gradient/state length does not match parameters");
  if (!grad.AllFinite()) {
    throw Error(ErrorCode::kNonFinite, "Adam rejected a non-finite gradient");
  }
  const auto& g = grad.values;
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

inline void AdamStep(DenseNet& net, AdamState& state, const GradientVector& grad) {
  Vec params = net.Parameters();
  AdamUpdate(params, state, grad);
  net.SetParameters(params);
}

// Sinusoidal embedding: first half sines, second half cosines, with angular
// frequencies pi/(2T) * 2^i. The lowest frequency keeps the map injective on
// [0, T].
inline Vec TimestepEmbedding(int t, int dim, int horizon) {
  internal::Require(dim > 0 && dim % 2 == 0, ErrorCode::kInvalidArgument,
                    "timestep embedding dim must be even and positive");
  internal::Require(horizon > 0 && t >= 0 && t <= horizon, ErrorCode::kOutOfRange,
                    "timestep out of [0, T]");
  const int half = dim / 2;
  Vec e(dim);
  const double base = std::numbers::pi / (2.0 * horizon);
  for (int i = 0; i < half; ++i) {
    const double angle = t * base * std::ldexp(1.0, i);
    e[i] = std::sin(angle);
    e[half + i] = std::cos(angle);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoint container ("RPDN").
//
//   magic "RPDN" | u16 version | role (u16 len + bytes) | u8 has_key_timestep
//   | u32 key_timestep | u32 layer_count | per layer: u32 in, u32 out,
//   u8 activation | u64 parameter_count | f64 parameters (canonical order)
//   | sections: 4-byte tag, u64 payload length, payload ... until EOF
//
// The "ADAM" section carries an AdamState (its moment length may exceed the
// net's parameter count when a caller owns extra parameters); other tags are
// owned by callers.
// All integers and floats are little-endian.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointSection {
  std::string tag;  // exactly 4 bytes
  std::string payload;

  friend bool operator==(const CheckpointSection&, const CheckpointSection&) = default;
};

struct Checkpoint {
  std::string role;
  std::optional<std::uint32_t> key_timestep;
  DenseNet net;
  std::optional<AdamState> adam;
  std::vector<CheckpointSection> sections;

  const CheckpointSection* FindSection(std::string_view tag) const {
    for (const auto& s : sections) {
      if (s.tag == tag) return &s;
    }
    return nullptr;
  }
};

inline std::string EncodeCheckpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.PutBytes("RPDN");
  w.PutU16(kCheckpointVersion);
  w.PutString(ckpt.role);
  w.PutU8(ckpt.key_timestep.has_value() ? 1 : 0);
  w.PutU32(ckpt.key_timestep.value_or(0));
  const auto& layers = ckpt.net.layers();
  w.PutU32(static_cast<std::uint32_t>(layers.size()));
  for (const DenseLayer& l : layers) {
    w.PutU32(static_cast<std::uint32_t>(l.weight.cols()));
    w.PutU32(static_cast<std::uint32_t>(l.weight.rows()));
    w.PutU8(static_cast<std::uint8_t>(l.activation));
  }
  const Vec params = ckpt.net.Parameters();
  w.PutU64(static_cast<std::uint64_t>(params.size()));
  w.PutF64s(std::span<const double>(params.data(), params.size()));
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    ByteWriter s;
    s.PutU64(static_cast<std::uint64_t>(a.step_count));
    s.PutF64(a.learning_rate);
    s.PutF64(a.beta1);
    s.PutF64(a.beta2);
    s.PutF64(a.epsilon);
    s.PutU64(static_cast<std::uint64_t>(a.first_moment.size()));
    s.PutF64s(std::span<const double>(a.first_moment.data(), a.first_moment.size()));
    s.PutF64s(std::span<const double>(a.second_moment.data(), a.second_moment.size()));
    w.PutBytes("ADAM");
    w.PutU64(s.bytes().size());
    w.PutBytes(s.bytes());
  }
  for (const CheckpointSection& sec : ckpt.sections) {
    internal::Require(sec.tag.size() == 4 && sec.tag != "ADAM",
                      ErrorCode::kInvalidArgument,
                      "section tags are 4 bytes and ADAM is reserved");
    w.PutBytes(sec.tag);
    w.PutU64(sec.payload.size());
    w.PutBytes(sec.payload);
  }
  return w.Release();
}

inline Checkpoint DecodeCheckpoint(std::string_view bytes) {
  ByteReader r(bytes);
  r.ExpectMagic("RPDN");
  const std::uint16_t version = r.GetU16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat,
                "unsupported RPDN version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.role = r.GetString();
  const bool has_key = r.GetU8() != 0;
  const std::uint32_t key = r.GetU32();
  if (has_key) ckpt.key_timestep = key;
  const std::uint32_t n_layers = r.GetU32();
  internal::Require(n_layers >= 1, ErrorCode::kFormat, "checkpoint has no layers");
  std::vector<DenseLayer> layers(n_layers);
  for (DenseLayer& l : layers) {
    const std::uint32_t in = r.GetU32();
    const std::uint32_t out = r.GetU32();
    const std::uint8_t act = r.GetU8();
    internal::Require(act <= 2, ErrorCode::kFormat, "unknown activation tag");
    l.weight = RowMatrix::Zero(out, in);
    l.bias = Vec::Zero(out);
    l.activation = static_cast<Activation>(act);
  }
  ckpt.net = DenseNet(std::move(layers));
  const std::uint64_t n_params = r.GetU64();
  internal::Require(n_params == static_cast<std::uint64_t>(ckpt.net.parameter_count()),
                    ErrorCode::kFormat, "parameter count does not match topology");
  Vec params(static_cast<Eigen::Index>(n_params));
  r.GetF64s(std::span<double>(params.data(), params.size()));
  ckpt.net.SetParameters(params);
  while (!r.AtEnd()) {
    std::string tag(r.GetBytes(4));
    const std::uint64_t len = r.GetU64();
    std::string_view payload = r.GetBytes(len);
    if (tag == "ADAM") {
      ByteReader s(payload);
      AdamState a;
      a.step_count = static_cast<std::int64_t>(s.GetU64());
      a.learning_rate = s.GetF64();
      a.beta1 = s.GetF64();
      a.beta2 = s.GetF64();
      a.epsilon = s.GetF64();
      const auto n = static_cast<Eigen::Index>(s.GetU64());
      a.first_moment.resize(n);
      a.second_moment.resize(n);
      s.GetF64s(std::span<double>(a.first_moment.data(), n));
      s.GetF64s(std::span<double>(a.second_moment.data(), n));
      internal::Require(s.AtEnd(), ErrorCode::kFormat, "trailing bytes in ADAM section");
      ckpt.adam = std::move(a);
    } else {
      ckpt.sections.push_back({std::move(tag), std::string(payload)});
    }
  }
  return ckpt;
}

}  // namespace ragdp
