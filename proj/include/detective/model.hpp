#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detective/geometry.hpp"
#include "detective/ops.hpp"
#include "detective/tensor.hpp"

namespace detective {

/// Small trainable backbone: `stage_channels.size()` stages, each a same-padded
/// convolution, an ELU and a 2x2 average pool.
struct EncoderConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t in_channels = 3;
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t kernel = 3;

  std::size_t downsample_factor() const { return std::size_t{1} << stage_channels.size(); }
  std::size_t feature_height() const { return image_height >> stage_channels.size(); }
  std::size_t feature_width() const { return image_width >> stage_channels.size(); }
  std::size_t feature_channels() const {
    return stage_channels.empty() ? in_channels : stage_channels.back();
  }

  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t hidden_channels = 64;  // d
  std::size_t kernel = 3;
  std::size_t num_classes = 3;
  bool attention = true;
  bool positional = true;
  bool background_class = true;

  // Output layout: object classes, then background (if enabled), then EoS.
  std::size_t num_outputs() const { return num_classes + (background_class ? 2 : 1); }
  std::optional<std::size_t> background_index() const {
    return background_class ? std::optional<std::size_t>(num_classes) : std::nullopt;
  }
  std::size_t eos_index() const { return num_outputs() - 1; }
  std::size_t decoder_input_channels() const {
    return encoder.feature_channels() + (positional ? 2 : 0);
  }

  void validate() const {
    if (encoder.feature_height() < 2 || encoder.feature_width() < 2) {
      throw std::invalid_argument(
          "encoder output must be at least 2x2, got " + std::to_string(encoder.feature_height()) +
          "x" + std::to_string(encoder.feature_width()) + " for a " +
          std::to_string(encoder.image_height) + "x" + std::to_string(encoder.image_width) +
          " image");
    }
    if (encoder.kernel % 2 == 0 || kernel % 2 == 0) {
      throw std::invalid_argument("kernel sizes must be odd");
    }
    if (hidden_channels == 0 || num_classes == 0 || encoder.in_channels == 0) {
      throw std::invalid_argument("channel and class counts must be positive");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

struct EncoderParams {
  std::vector<Tensor> kernels;
  std::vector<Tensor> biases;
};

/// Gate weights of the convolutional LSTM. w_x* and w_h* are k x k kernels,
/// w_c* are h x w x d peephole tensors applied elementwise.
struct ConvLSTMParams {
  Tensor w_xi, w_hi, w_ci, b_i;
  Tensor w_xf, w_hf, w_cf, b_f;
  Tensor w_xc, w_hc, b_c;
  Tensor w_xo, w_ho, w_co, b_o;
};

/// Two pointwise convolutions: d -> d (tanh) -> 1. The output layer has no
/// bias: a constant score offset cancels in the softmax over locations.
struct AttentionParams {
  Tensor w_hidden, b_hidden;
  Tensor w_out;
};

struct HeadParams {
  Tensor w_cls, b_cls;
  Tensor w_loc, b_loc;
};

struct DecoderState {
  Var hidden;
  Var cell;
  bool zero = false;  // H = C = 0, lets the first step skip the recurrent convolutions
};

/// W_x* * X + b_* for the four gates; constant over decoder iterations.
struct InputProjection {
  Var i, f, c, o;
};

struct AttentionOutput {
  Var pooled;  // length d
  Var map;     // h x w, sums to 1
};

/// One decoder step on the tape.
struct PredictionNode {
  Var logits;
  Var probabilities;
  Var offsets;
  Var attention;
};

/// Detached values of one decoder step.
struct Prediction {
  std::vector<double> p_cls;
  BoxOffsets p_loc;
  Tensor attention;

  std::size_t argmax() const {
    return static_cast<std::size_t>(
        std::distance(p_cls.begin(), std::max_element(p_cls.begin(), p_cls.end())));
  }
};

inline Prediction detach(const PredictionNode& node) {
  const Tensor& loc = node.offsets.value();
  return Prediction{node.probabilities.value().values(),
                    BoxOffsets{loc[0], loc[1], loc[2], loc[3]}, node.attention.value()};
}

struct InferenceResult {
  std::vector<Detection> detections;
  std::vector<Prediction> sequence;  // every step run, including a final EoS step
  bool stopped_by_eos = false;
};

/// Appends x and y coordinate channels: channel c holds the column index j,
/// channel c+1 the row index i.
inline Var fuse_positional(Var features) {
  const Tensor& f = features.value();
  detail::require_rank(f, 3, "fuse_positional", "features");
  const std::size_t h = f.dim(0), w = f.dim(1);
  Tensor pos(Shape{h, w, 2});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      pos.at(i, j, 0) = static_cast<double>(j);
      pos.at(i, j, 1) = static_cast<double>(i);
    }
  }
  return concat_channels(features, features.tape->constant(std::move(pos)));
}

class Detective {
 public:
  explicit Detective(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t k = config_.encoder.kernel;
    std::size_t c_in = config_.encoder.in_channels;
    for (std::size_t c_out : config_.encoder.stage_channels) {
      encoder_.kernels.push_back(uniform(rng, Shape{k, k, c_in, c_out}, k * k * c_in));
      encoder_.biases.emplace_back(Shape{c_out});
      c_in = c_out;
    }

    const std::size_t d = config_.hidden_channels, kd = config_.kernel;
    const std::size_t cx = config_.decoder_input_channels();
    const std::size_t h = config_.encoder.feature_height(), w = config_.encoder.feature_width();
    auto x_kernel = [&] { return uniform(rng, Shape{kd, kd, cx, d}, kd * kd * cx); };
    auto h_kernel = [&] { return uniform(rng, Shape{kd, kd, d, d}, kd * kd * d); };
    auto peephole = [&] { return Tensor(Shape{h, w, d}); };
    auto bias = [&](double v) { return Tensor(Shape{d}, v); };
    lstm_ = ConvLSTMParams{x_kernel(), h_kernel(), peephole(), bias(0.0),
                           x_kernel(), h_kernel(), peephole(), bias(1.0),
                           x_kernel(), h_kernel(), bias(0.0),
                           x_kernel(), h_kernel(), peephole(), bias(0.0)};

    attention_ = AttentionParams{uniform(rng, Shape{1, 1, d, d}, d), Tensor(Shape{d}),
                                 uniform(rng, Shape{1, 1, d, 1}, d)};
    const std::size_t q = config_.num_outputs();
    heads_ = HeadParams{uniform(rng, Shape{d, q}, d), Tensor(Shape{q}),
                        uniform(rng, Shape{d, 4}, d), Tensor(Shape{4})};
  }

  const ModelConfig& config() const { return config_; }
  const ConvLSTMParams& lstm() const { return lstm_; }
  ConvLSTMParams& lstm() { return lstm_; }
  AttentionParams& attention_params() { return attention_; }
  HeadParams& heads() { return heads_; }
  EncoderParams& encoder_params() { return encoder_; }

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t s = 0; s < encoder_.kernels.size(); ++s) {
      out.emplace_back("encoder." + std::to_string(s) + ".kernel", &encoder_.kernels[s]);
      out.emplace_back("encoder." + std::to_string(s) + ".bias", &encoder_.biases[s]);
    }
    ConvLSTMParams& p = lstm_;
    for (auto& [name, t] : std::vector<std::pair<const char*, Tensor*>>{
             {"lstm.w_xi", &p.w_xi}, {"lstm.w_hi", &p.w_hi}, {"lstm.w_ci", &p.w_ci},
             {"lstm.b_i", &p.b_i},   {"lstm.w_xf", &p.w_xf}, {"lstm.w_hf", &p.w_hf},
             {"lstm.w_cf", &p.w_cf}, {"lstm.b_f", &p.b_f},   {"lstm.w_xc", &p.w_xc},
             {"lstm.w_hc", &p.w_hc}, {"lstm.b_c", &p.b_c},   {"lstm.w_xo", &p.w_xo},
             {"lstm.w_ho", &p.w_ho}, {"lstm.w_co", &p.w_co}, {"lstm.b_o", &p.b_o}}) {
      out.emplace_back(name, t);
    }
    out.emplace_back("attention.w_hidden", &attention_.w_hidden);
    out.emplace_back("attention.b_hidden", &attention_.b_hidden);
    out.emplace_back("attention.w_out", &attention_.w_out);
    out.emplace_back("head.w_cls", &heads_.w_cls);
    out.emplace_back("head.b_cls", &heads_.b_cls);
    out.emplace_back("head.w_loc", &heads_.w_loc);
    out.emplace_back("head.b_loc", &heads_.b_loc);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<Detective*>(this)->named_parameters()) {
      out.emplace_back(std::move(name), t);
    }
    return out;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& entry : named_parameters()) out.push_back(entry.second);
    return out;
  }

  Var encode(Tape& tape, Var image) const {
    const Tensor& img = image.value();
    detail::require_rank(img, 3, "encode", "image");
    const std::size_t factor = config_.encoder.downsample_factor();
    if (img.dim(0) < factor || img.dim(1) < factor) {
      throw std::invalid_argument("encode: image " + shape_string(img.shape()) +
                                  " is smaller than the downsample factor " +
                                  std::to_string(factor));
    }
    Var x = image;
    for (std::size_t s = 0; s < encoder_.kernels.size(); ++s) {
      x = conv2d(x, tape.parameter(encoder_.kernels[s]), tape.parameter(encoder_.biases[s]));
      x = avg_pool2(elu(x));
    }
    return x;
  }

  /// Encoder output, with positional channels appended when enabled.
  Var decoder_input(Tape& tape, const Tensor& image) const {
    Var features = encode(tape, tape.constant(image));
    return config_.positional ? fuse_positional(features) : features;
  }

  DecoderState initial_state(Tape& tape) const {
    const Shape s{config_.encoder.feature_height(), config_.encoder.feature_width(),
                  config_.hidden_channels};
    return DecoderState{tape.constant(Tensor(s)), tape.constant(Tensor(s)), true};
  }

  InputProjection project_input(Tape& tape, Var x) const {
    auto proj = [&](const Tensor& w, const Tensor& b) {
      return conv2d(x, tape.parameter(w), tape.parameter(b));
    };
    return InputProjection{proj(lstm_.w_xi, lstm_.b_i), proj(lstm_.w_xf, lstm_.b_f),
                           proj(lstm_.w_xc, lstm_.b_c), proj(lstm_.w_xo, lstm_.b_o)};
  }

  /// One ConvLSTM update with peephole connections:
  ///   i = sigmoid(Wxi*X + Whi*H + Wci.C + bi)
  ///   f = sigmoid(Wxf*X + Whf*H + Wcf.C + bf)
  ///   C' = f.C + i.tanh(Wxc*X + Whc*H + bc)
  ///   o = sigmoid(Wxo*X + Who*H + Wco.C' + bo)
  ///   H' = o.tanh(C')
  DecoderState convlstm_step(Tape& tape, const DecoderState& state,
                             const InputProjection& x) const {
    auto recurrent = [&](Var input_term, const Tensor& w_h, const Tensor* peep) {
      if (state.zero) return input_term;
      Var v = add(input_term, conv2d(state.hidden, tape.parameter(w_h)));
      if (peep) v = add(v, hadamard(tape.parameter(*peep), state.cell));
      return v;
    };
    Var i = sigmoid(recurrent(x.i, lstm_.w_hi, &lstm_.w_ci));
    Var f = sigmoid(recurrent(x.f, lstm_.w_hf, &lstm_.w_cf));
    Var g = tanh(recurrent(x.c, lstm_.w_hc, nullptr));
    Var cell = state.zero ? hadamard(i, g) : add(hadamard(f, state.cell), hadamard(i, g));
    Var o_pre = recurrent(x.o, lstm_.w_ho, nullptr);
    Var o = sigmoid(add(o_pre, hadamard(tape.parameter(lstm_.w_co), cell)));
    return DecoderState{hadamard(o, tanh(cell)), cell, false};
  }

  DecoderState convlstm_step(Tape& tape, const DecoderState& state, Var x) const {
    return convlstm_step(tape, state, project_input(tape, x));
  }

  /// Soft spatial attention over H, or plain spatial averaging when attention
  /// is disabled.
  AttentionOutput attend(Tape& tape, Var hidden) const {
    const Shape& s = hidden.shape();
    const std::size_t pixels = s[0] * s[1];
    if (!config_.attention) {
      Var uniform_map = tape.constant(Tensor(Shape{s[0], s[1]}, 1.0 / static_cast<double>(pixels)));
      return AttentionOutput{spatial_weighted_sum(hidden, uniform_map), uniform_map};
    }
    Var a = tanh(conv2d(hidden, tape.parameter(attention_.w_hidden),
                        tape.parameter(attention_.b_hidden)));
    a = conv2d(a, tape.parameter(attention_.w_out));
    Var map = reshape(softmax(reshape(a, Shape{pixels})), Shape{s[0], s[1]});
    return AttentionOutput{spatial_weighted_sum(hidden, map), map};
  }

  Var class_logits(Tape& tape, Var pooled) const {
    return linear(pooled, tape.parameter(heads_.w_cls), tape.parameter(heads_.b_cls));
  }
  Var classify(Tape& tape, Var pooled) const { return softmax(class_logits(tape, pooled)); }
  Var localize(Tape& tape, Var pooled) const {
    return sigmoid(linear(pooled, tape.parameter(heads_.w_loc), tape.parameter(heads_.b_loc)));
  }

  /// Fixed-length decoding from a zero state (training mode).
  std::vector<PredictionNode> decode_sequence(Tape& tape, const Tensor& image,
                                              std::size_t steps) const {
    if (steps == 0) throw std::invalid_argument("decode_sequence: need at least one step");
    const InputProjection x = project_input(tape, decoder_input(tape, image));
    DecoderState state = initial_state(tape);
    std::vector<PredictionNode> out;
    out.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      state = convlstm_step(tape, state, x);
      out.push_back(head(tape, attend(tape, state.hidden)));
    }
    return out;
  }

  /// EoS-terminated decoding. Background and EoS predictions are dropped from
  /// the detections; each detection's score is its winning class probability.
  InferenceResult infer(const Tensor& image, std::size_t max_iters = 16) const {
    if (max_iters == 0) throw std::invalid_argument("infer: max_iters must be at least 1");
    return run(image, max_iters, true);
  }

  /// Runs exactly `steps` iterations ignoring EoS; every non-background,
  /// non-EoS prediction becomes a detection.
  InferenceResult run_fixed(const Tensor& image, std::size_t steps) const {
    if (steps == 0) throw std::invalid_argument("run_fixed: need at least one step");
    return run(image, steps, false);
  }

  /// Maps an argmax class to a detection, or nullopt for background/EoS.
  std::optional<Detection> to_detection(const Prediction& p) const {
    const std::size_t cls = p.argmax();
    if (cls >= config_.num_classes) return std::nullopt;
    return Detection{static_cast<int>(cls), p.p_cls[cls], decode_offsets(p.p_loc)};
  }

 private:
  static Tensor uniform(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
  }

  PredictionNode head(Tape& tape, const AttentionOutput& att) const {
    Var logits = class_logits(tape, att.pooled);
    return PredictionNode{logits, softmax(logits), localize(tape, att.pooled), att.map};
  }

  InferenceResult run(const Tensor& image, std::size_t steps, bool stop_at_eos) const {
    Tape tape(false);
    const InputProjection x = project_input(tape, decoder_input(tape, image));
    DecoderState state = initial_state(tape);
    InferenceResult result;
    for (std::size_t t = 0; t < steps; ++t) {
      state = convlstm_step(tape, state, x);
      Prediction p = detach(head(tape, attend(tape, state.hidden)));
      const bool eos = p.argmax() == config_.eos_index();
      if (auto det = to_detection(p)) result.detections.push_back(*det);
      result.sequence.push_back(std::move(p));
      if (eos && stop_at_eos) {
        result.stopped_by_eos = true;
        break;
      }
    }
    return result;
  }

  ModelConfig config_;
  EncoderParams encoder_;
  ConvLSTMParams lstm_;
  AttentionParams attention_;
  HeadParams heads_;
};

}  // namespace detective
