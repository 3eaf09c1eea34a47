#pragma once

// Toy-scale gated recurrent pointmap predictor.
//
// Per frame: image -> patch tokens F; reset/update gates computed from
// (M_{t-1}, F); reset memory R * M_{t-1}; a two-stream decoder lets memory and
// (pose ⊕ image) tokens cross-attend; the new memory is the gated blend
// U * M_hat + (1 - U) * M_{t-1}; linear per-patch heads emit self- and
// world-frame pointmaps with confidences, and an MLP head emits the pose.
//
// Weights are drawn once from a seeded normal distribution and never change.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "grs/errors.hpp"
#include "grs/frame.hpp"
#include "grs/geometry.hpp"
#include "grs/tensor_io.hpp"

namespace grs::predictor {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct ModelConfig {
  int height = 32;
  int width = 32;
  int patch = 8;
  int dim = 32;
  int state_tokens = 16;
  int heads = 4;
  int blocks = 2;
  std::uint64_t seed = 42;

  void validate() const {
    if (height < 1 || width < 1 || patch < 1 || dim < 1 || state_tokens < 1 || heads < 1 || blocks < 1) {
      throw InputError("ModelConfig: all dimensions must be >= 1");
    }
    if (height % patch != 0 || width % patch != 0) {
      throw InputError("ModelConfig: image size must be divisible by the patch size");
    }
    if (dim % heads != 0) throw InputError("ModelConfig: token dim must be divisible by head count");
  }
  int patch_rows() const { return height / patch; }
  int patch_cols() const { return width / patch; }
  int num_patches() const { return patch_rows() * patch_cols(); }
};

/// H x W x 3 image, values in [0, 1], row-major with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}
  double& at(int row, int col, int channel) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  double at(int row, int col, int channel) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
};

struct ImageTokens {
  Matrix tokens;  // N x D
};

struct LatentState {
  Matrix tokens;  // S x D
  std::int64_t frame_count = 0;
};

struct PoseToken {
  RowVector value;  // 1 x D
};

using GateValues = Matrix;  // S x D, entries in (0, 1)

struct DecoderOutput {
  LatentState memory;
  PoseToken pose_token;
  ImageTokens image_tokens;
};

struct HeadOutput {
  PointMap points;
  ConfidenceMap confidence;
};

/// Test-harness overrides that pin a gate to a constant value.
struct StepOverrides {
  std::optional<double> reset_gate;
  std::optional<double> update_gate;
};

struct StepResult {
  LatentState state;
  FramePrediction prediction;
  GateValues reset;
  GateValues update;
  LatentState decoded_memory;  // M_hat
};

// ---------------------------------------------------------------------------
// Layers

struct Linear {
  Matrix weight;  // in x out
  RowVector bias;

  Linear() = default;
  Linear(int in, int out) : weight(Matrix::Zero(in, out)), bias(RowVector::Zero(out)) {}
  Matrix operator()(const Matrix& x) const {
    Matrix y = x * weight;
    y.rowwise() += bias;
    return y;
  }
};

struct Attention {
  Linear query, key, value, out;
  int heads = 1;

  Attention() = default;
  Attention(int dim, int h) : query(dim, dim), key(dim, dim), value(dim, dim), out(dim, dim), heads(h) {}

  /// Multi-head scaled dot-product attention of `queries` over `context`.
  Matrix operator()(const Matrix& queries, const Matrix& context) const {
    const Matrix q = query(queries);
    const Matrix k = key(context);
    const Matrix v = value(context);
    const int dim = static_cast<int>(q.cols());
    const int head_dim = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Matrix mixed(q.rows(), dim);
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * head_dim, head_dim);
      const auto kh = k.middleCols(h * head_dim, head_dim);
      const auto vh = v.middleCols(h * head_dim, head_dim);
      Matrix scores = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      mixed.middleCols(h * head_dim, head_dim) = scores * vh;
    }
    return out(mixed);
  }
};

inline Matrix gelu(const Matrix& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); });
}

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(int in, int hidden, int out) : fc1(in, hidden), fc2(hidden, out) {}
  Matrix operator()(const Matrix& x) const { return fc2(gelu(fc1(x))); }
};

/// Row-wise layer normalization without learned affine parameters.
inline Matrix layer_norm(const Matrix& x) {
  constexpr double eps = 1e-6;
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    y.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return y;
}

inline double sigmoid(double v) {
  // Clamped so the result stays strictly inside (0, 1) in double precision.
  v = std::clamp(v, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-v));
}

inline double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

struct GateWeights {
  Attention self_attention;
  Attention cross_attention;
  Mlp mlp;
};

struct DecoderBlock {
  Attention memory_from_frame;
  Attention frame_from_memory;
  Mlp memory_ffn;
  Mlp frame_ffn;
};

struct ModelWeights {
  Linear patch_embed;
  Matrix initial_state;
  RowVector pose_token;
  GateWeights reset_gate;
  GateWeights update_gate;
  std::vector<DecoderBlock> decoder;
  Linear head_self;
  Linear head_world;
  Mlp head_pose;
};

// Visits every tensor with a stable name, in a fixed order. Used for seeded
// initialization and snapshot save/load.
template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, Fn&& fn) {
  auto linear = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight, false);
    fn(name + ".bias", l.bias, true);
  };
  auto attention = [&](const std::string& name, auto& a) {
    linear(name + ".query", a.query);
    linear(name + ".key", a.key);
    linear(name + ".value", a.value);
    linear(name + ".out", a.out);
  };
  auto mlp = [&](const std::string& name, auto& m) {
    linear(name + ".fc1", m.fc1);
    linear(name + ".fc2", m.fc2);
  };
  auto gate = [&](const std::string& name, auto& g) {
    attention(name + ".self_attention", g.self_attention);
    attention(name + ".cross_attention", g.cross_attention);
    mlp(name + ".mlp", g.mlp);
  };
  linear("encoder.patch_embed", w.patch_embed);
  fn(std::string("state.initial"), w.initial_state, false);
  fn(std::string("pose_token.initial"), w.pose_token, false);
  gate("reset_gate", w.reset_gate);
  gate("update_gate", w.update_gate);
  for (std::size_t b = 0; b < w.decoder.size(); ++b) {
    const std::string p = "decoder." + std::to_string(b);
    attention(p + ".memory_from_frame", w.decoder[b].memory_from_frame);
    attention(p + ".frame_from_memory", w.decoder[b].frame_from_memory);
    mlp(p + ".memory_ffn", w.decoder[b].memory_ffn);
    mlp(p + ".frame_ffn", w.decoder[b].frame_ffn);
  }
  linear("head_self", w.head_self);
  linear("head_world", w.head_world);
  mlp("head_pose", w.head_pose);
}

/// Portable N(0, 1) samples from mt19937_64 (Box-Muller), so seeded weights
/// are identical across standard library implementations.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    constexpr double two_pi = 6.283185307179586;
    const double u1 = (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr double kInitScale = 0.02;

inline ModelWeights make_weights(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim;
  const int h = cfg.heads;
  const int p2 = cfg.patch * cfg.patch;
  ModelWeights w;
  w.patch_embed = Linear(p2 * 3, d);
  w.initial_state = Matrix::Zero(cfg.state_tokens, d);
  w.pose_token = RowVector::Zero(d);
  for (GateWeights* g : {&w.reset_gate, &w.update_gate}) {
    g->self_attention = Attention(d, h);
    g->cross_attention = Attention(d, h);
    g->mlp = Mlp(d, 2 * d, d);
  }
  w.decoder.resize(static_cast<std::size_t>(cfg.blocks));
  for (auto& b : w.decoder) {
    b.memory_from_frame = Attention(d, h);
    b.frame_from_memory = Attention(d, h);
    b.memory_ffn = Mlp(d, 2 * d, d);
    b.frame_ffn = Mlp(d, 2 * d, d);
  }
  w.head_self = Linear(d, p2 * 4);
  w.head_world = Linear(2 * d, p2 * 4);
  w.head_pose = Mlp(d, d, 7);

  NormalSampler normal(cfg.seed);
  for_each_tensor(w, [&](const std::string&, auto& tensor, bool is_bias) {
    if (is_bias) return;  // biases start at zero
    for (Eigen::Index i = 0; i < tensor.size(); ++i) tensor.data()[i] = kInitScale * normal();
  });
  // The pose head starts at the identity rotation (qw is the last output).
  w.head_pose.fc2.bias(6) = 1.0;
  return w;
}

inline TensorList to_tensor_list(const ModelWeights& w) {
  TensorList out;
  for_each_tensor(w, [&](const std::string& name, const auto& tensor, bool) {
    out.push_back({name, Matrix(tensor)});
  });
  return out;
}

inline void load_tensor_list(ModelWeights& w, const TensorList& tensors) {
  std::size_t i = 0;
  for_each_tensor(w, [&](const std::string& name, auto& tensor, bool) {
    if (i >= tensors.size() || tensors[i].name != name) {
      throw InputError("weight snapshot: expected tensor '" + name + "'");
    }
    const auto& src = tensors[i].value;
    if (src.rows() != tensor.rows() || src.cols() != tensor.cols()) {
      throw InputError("weight snapshot: shape mismatch for '" + name + "'");
    }
    tensor = src;
    ++i;
  });
  if (i != tensors.size()) throw InputError("weight snapshot: unexpected extra tensors");
}

/// Zeros every weight and bias of a gate, so that it outputs sigmoid(0) = 0.5.
inline void zero_gate(GateWeights& g) {
  auto zero_linear = [](Linear& l) {
    l.weight.setZero();
    l.bias.setZero();
  };
  for (Attention* a : {&g.self_attention, &g.cross_attention}) {
    zero_linear(a->query);
    zero_linear(a->key);
    zero_linear(a->value);
    zero_linear(a->out);
  }
  zero_linear(g.mlp.fc1);
  zero_linear(g.mlp.fc2);
}

// ---------------------------------------------------------------------------
// Model

class GatedRecurrentModel {
 public:
  explicit GatedRecurrentModel(const ModelConfig& cfg) : cfg_(cfg), weights_(make_weights(cfg)) {
    positional_ = sinusoidal_encoding(cfg_.num_patches(), cfg_.dim);
  }
  GatedRecurrentModel(const ModelConfig& cfg, ModelWeights weights) : cfg_(cfg), weights_(std::move(weights)) {
    cfg_.validate();
    positional_ = sinusoidal_encoding(cfg_.num_patches(), cfg_.dim);
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelWeights& weights() const { return weights_; }
  ModelWeights& mutable_weights() { return weights_; }

  LatentState initial_state() const { return {weights_.initial_state, 0}; }
  PoseToken initial_pose_token() const { return {weights_.pose_token}; }

  static Matrix sinusoidal_encoding(int n, int d) {
    Matrix pe(n, d);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / d);
        pe(i, k) = (k % 2 == 0) ? std::sin(i * freq) : std::cos(i * freq);
      }
    }
    return pe;
  }
  const Matrix& positional_encoding() const { return positional_; }

  ImageTokens encode(const Image& image) const {
    if (image.height != cfg_.height || image.width != cfg_.width ||
        image.rgb.size() != static_cast<std::size_t>(cfg_.height) * cfg_.width * 3) {
      throw InputError("encode: image shape does not match the model config");
    }
    const int p = cfg_.patch;
    Matrix patches(cfg_.num_patches(), p * p * 3);
    for (int pr = 0; pr < cfg_.patch_rows(); ++pr) {
      for (int pc = 0; pc < cfg_.patch_cols(); ++pc) {
        const int n = pr * cfg_.patch_cols() + pc;
        int k = 0;
        for (int i = 0; i < p; ++i) {
          for (int j = 0; j < p; ++j) {
            for (int c = 0; c < 3; ++c) patches(n, k++) = image.at(pr * p + i, pc * p + j, c);
          }
        }
      }
    }
    return {weights_.patch_embed(patches) + positional_};
  }

  GateValues reset_gate(const LatentState& prev, const ImageTokens& frame) const {
    return gate(weights_.reset_gate, prev.tokens, frame.tokens);
  }
  GateValues update_gate(const LatentState& prev, const ImageTokens& frame) const {
    return gate(weights_.update_gate, prev.tokens, frame.tokens);
  }

  static LatentState apply_reset(const GateValues& reset, const LatentState& prev) {
    check_same_shape(reset, prev.tokens, "apply_reset");
    return {reset.cwiseProduct(prev.tokens), prev.frame_count};
  }

  static LatentState gated_update(const GateValues& update, const LatentState& decoded, const LatentState& prev) {
    check_same_shape(update, decoded.tokens, "gated_update");
    check_same_shape(update, prev.tokens, "gated_update");
    const Matrix keep = (1.0 - update.array()).matrix();
    return {update.cwiseProduct(decoded.tokens) + keep.cwiseProduct(prev.tokens), prev.frame_count + 1};
  }

  DecoderOutput decode(const LatentState& memory_in, const PoseToken& pose, const ImageTokens& frame) const {
    const auto n = frame.tokens.rows();
    Matrix memory = memory_in.tokens;
    Matrix stream(n + 1, cfg_.dim);
    stream.row(0) = pose.value;
    stream.bottomRows(n) = frame.tokens;
    for (const auto& block : weights_.decoder) {
      const Matrix m_norm = layer_norm(memory);
      const Matrix s_norm = layer_norm(stream);
      memory += block.memory_from_frame(m_norm, s_norm);
      stream += block.frame_from_memory(s_norm, m_norm);
      memory += block.memory_ffn(layer_norm(memory));
      stream += block.frame_ffn(layer_norm(stream));
    }
    return {{memory, memory_in.frame_count}, {stream.row(0)}, {stream.bottomRows(n)}};
  }

  HeadOutput head_self(const ImageTokens& frame) const { return unpatchify(weights_.head_self(frame.tokens)); }

  HeadOutput head_world(const ImageTokens& frame, const PoseToken& pose) const {
    Matrix input(frame.tokens.rows(), 2 * cfg_.dim);
    input.leftCols(cfg_.dim) = frame.tokens;
    input.rightCols(cfg_.dim) = pose.value.replicate(frame.tokens.rows(), 1);
    return unpatchify(weights_.head_world(input));
  }

  SE3Pose head_pose(const PoseToken& pose) const {
    const Matrix raw = weights_.head_pose(Matrix(pose.value));
    const Vec3 t(raw(0, 0), raw(0, 1), raw(0, 2));
    Quaternion q(raw(0, 6), raw(0, 3), raw(0, 4), raw(0, 5));
    if (q.norm() < 1e-12) q = Quaternion::Identity();
    return {q, t};
  }

  StepResult step(const LatentState& state, const PoseToken& pose, const Image& image,
                  const StepOverrides& overrides = {}) const {
    const ImageTokens frame = encode(image);
    GateValues r = overrides.reset_gate ? constant_gate(*overrides.reset_gate) : reset_gate(state, frame);
    GateValues u = overrides.update_gate ? constant_gate(*overrides.update_gate) : update_gate(state, frame);
    const LatentState reset_memory = apply_reset(r, state);
    DecoderOutput dec = decode(reset_memory, pose, frame);
    LatentState next = gated_update(u, dec.memory, state);

    StepResult out;
    auto self = head_self(dec.image_tokens);
    auto world = head_world(dec.image_tokens, dec.pose_token);
    out.prediction.x_self = std::move(self.points);
    out.prediction.c_self = std::move(self.confidence);
    out.prediction.x_world = std::move(world.points);
    out.prediction.c_world = std::move(world.confidence);
    out.prediction.pose = head_pose(dec.pose_token);
    out.state = std::move(next);
    out.reset = std::move(r);
    out.update = std::move(u);
    out.decoded_memory = std::move(dec.memory);
    return out;
  }

  /// Pose token re-initialized from the learned constant for every frame.
  StepResult step(const LatentState& state, const Image& image, const StepOverrides& overrides = {}) const {
    return step(state, initial_pose_token(), image, overrides);
  }

 private:
  GateValues gate(const GateWeights& g, const Matrix& memory, const Matrix& frame) const {
    const Matrix m_norm = layer_norm(memory);
    Matrix x = memory + g.self_attention(m_norm, m_norm);
    x += g.cross_attention(layer_norm(x), layer_norm(frame));
    return g.mlp(layer_norm(x)).unaryExpr([](double v) { return sigmoid(v); });
  }

  GateValues constant_gate(double v) const { return GateValues::Constant(cfg_.state_tokens, cfg_.dim, v); }

  static void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError(std::string(op) + ": shape mismatch");
  }

  // Per-patch rows of [P*P*3 point coords | P*P raw confidences] -> H x W maps.
  HeadOutput unpatchify(const Matrix& raw) const {
    const int p = cfg_.patch;
    const int p2 = p * p;
    HeadOutput out{PointMap(cfg_.width, cfg_.height), ConfidenceMap(cfg_.width, cfg_.height)};
    for (int pr = 0; pr < cfg_.patch_rows(); ++pr) {
      for (int pc = 0; pc < cfg_.patch_cols(); ++pc) {
        const int n = pr * cfg_.patch_cols() + pc;
        for (int i = 0; i < p; ++i) {
          for (int j = 0; j < p; ++j) {
            const int k = i * p + j;
            const std::size_t idx = out.points.index(pr * p + i, pc * p + j);
            out.points.points[idx] = Vec3(raw(n, 3 * k), raw(n, 3 * k + 1), raw(n, 3 * k + 2));
            out.confidence.values[idx] = 1.0 + softplus(raw(n, 3 * p2 + k));
          }
        }
      }
    }
    return out;
  }

  ModelConfig cfg_;
  ModelWeights weights_;
  Matrix positional_;
};

/// Adapts the model to the SequencePredictor interface over a fixed image
/// sequence. The latent state is owned here and advanced by step().
class ToyPredictor : public SequencePredictor {
 public:
  ToyPredictor(const GatedRecurrentModel& model, std::vector<Image> images, std::vector<double> timestamps)
      : ToyPredictor(model, std::make_shared<const std::vector<Image>>(std::move(images)),
                     std::make_shared<const std::vector<double>>(std::move(timestamps))) {}
  ToyPredictor(const GatedRecurrentModel& model, std::shared_ptr<const std::vector<Image>> images,
               std::shared_ptr<const std::vector<double>> timestamps)
      : model_(model), images_(std::move(images)), timestamps_(std::move(timestamps)),
        state_(model_.initial_state()) {
    if (images_->size() != timestamps_->size()) throw InputError("ToyPredictor: images/timestamps size mismatch");
  }

  std::size_t frame_count() const override { return images_->size(); }
  double timestamp(std::size_t frame) const override { return timestamps_->at(frame); }

  FramePrediction step(std::size_t frame) override {
    if (frame >= images_->size()) throw InputError("ToyPredictor: frame index out of range");
    auto result = model_.step(state_, (*images_)[frame]);
    state_ = std::move(result.state);
    return std::move(result.prediction);
  }

  void reset() override { state_ = model_.initial_state(); }

  std::unique_ptr<SequencePredictor> clone_fresh() const override {
    return std::make_unique<ToyPredictor>(model_, images_, timestamps_);
  }

  const LatentState& state() const { return state_; }

 private:
  const GatedRecurrentModel& model_;
  std::shared_ptr<const std::vector<Image>> images_;
  std::shared_ptr<const std::vector<double>> timestamps_;
  LatentState state_;
};

}  // namespace grs::predictor
