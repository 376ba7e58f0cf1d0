#pragma once
// The three encoder-decoder networks: PretrainNet (trunk + dose classifier),
// CPNet (same trunk, no head) and the shallower two-input RefineNet.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdpet/nn/checkpoint.hpp"
#include "mdpet/nn/conv.hpp"
#include "mdpet/nn/layers.hpp"
#include "mdpet/tensor.hpp"

namespace mdpet::models {

using nn::Mode;
using nn::ModelParams;

inline constexpr double kInitStd = 0.02;

struct EncoderDecoderConfig {
  std::size_t in_channels = 1;
  std::size_t base_channels = 8;
  std::size_t depth = 4;
  bool with_classifier = false;
  std::size_t num_classes = 3;
  std::size_t input_size = 32;

  static EncoderDecoderConfig pretrain_net(std::size_t base, std::size_t size) {
    return {1, base, 4, true, 3, size};
  }
  static EncoderDecoderConfig cp_net(std::size_t base, std::size_t size) {
    return {1, base, 4, false, 3, size};
  }
  static EncoderDecoderConfig refine_net(std::size_t base, std::size_t size) {
    return {2, base, 2, false, 3, size};
  }

  /// Throws ValidationError unless depth is 2 or 4 and input_size divides by 2^depth.
  void validate() const;

  /// Encoder width after down-sampling block i: base * 2^i.
  std::size_t width(std::size_t level) const { return base_channels << level; }

  friend bool operator==(const EncoderDecoderConfig&, const EncoderDecoderConfig&) = default;
};

/// Convolution or transposed convolution with cached input.
template <typename T>
class Conv2d {
 public:
  explicit Conv2d(const nn::ConvSpec& spec);

  Tensor<T> forward(const Tensor<T>& input);
  /// Accumulates into weight/bias gradients, returns the input gradient.
  Tensor<T> backward(const Tensor<T>& grad_out);

  void init(std::mt19937_64& rng, double stddev);
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params);

  nn::ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

 private:
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  explicit BatchNorm2d(std::size_t channels) : state(channels) {}

  Tensor<T> forward(const Tensor<T>& input, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params);
  void collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& buffers);

  nn::BatchNormState<T> state;

 private:
  nn::BatchNormCache<T> cache_;
};

/// y = ReLU(x + conv2(ReLU(conv1(x)))) with channel-preserving 3x3 convolutions.
template <typename T>
class ResidualBlock {
 public:
  explicit ResidualBlock(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out);

  void init(std::mt19937_64& rng, double stddev);
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params);

  Conv2d<T> conv1;
  Conv2d<T> conv2;

 private:
  Tensor<T> pre_act_;  // conv1 output
  Tensor<T> sum_;      // x + conv2(...)
};

/// ResidualBlock -> 4x4 stride-2 (de)convolution -> BatchNorm -> (Leaky)ReLU.
template <typename T>
class SamplingBlock {
 public:
  SamplingBlock(std::size_t in, std::size_t out, bool up);

  Tensor<T> forward(const Tensor<T>& input, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);

  void init(std::mt19937_64& rng, double stddev);
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params);
  void collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& buffers);

  bool up;
  ResidualBlock<T> res;
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

 private:
  T slope() const { return up ? T{0} : static_cast<T>(nn::kLeakySlope); }
  Tensor<T> normalized_;  // BatchNorm output, pre-activation
};

template <typename T>
class Linear {
 public:
  Linear(std::size_t in, std::size_t out) : weight({in, out}), bias({out}) {}

  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out);

  void init(std::mt19937_64& rng, double stddev);
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params);

  Tensor<T> weight;
  Tensor<T> bias;

 private:
  Tensor<T> input_;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;                 // reconstruction / prediction, [N, 1, H, W]
  std::optional<Tensor<T>> logits;  // [N, classes] when the classifier is present
};

/// Encoder-decoder trunk without skip connections, a linear 3x3 output
/// convolution, and an optional fully connected classifier on the flattened
/// bottleneck.
template <typename T>
class EncoderDecoder {
 public:
  /// Weights ~ N(0, 0.02^2), biases 0, BatchNorm gamma 1 / beta 0. The
  /// classifier draws last, so the trunk does not depend on its presence.
  EncoderDecoder(const EncoderDecoderConfig& config, std::uint64_t seed);

  const EncoderDecoderConfig& config() const { return config_; }

  ForwardResult<T> forward(const Tensor<T>& input, Mode mode);
  Tensor<T> encode(const Tensor<T>& input, Mode mode);
  Tensor<T> decode(const Tensor<T>& bottleneck, Mode mode);
  Tensor<T> classify(const Tensor<T>& bottleneck);

  /// Backward through the last forward(). grad_logits may be null (or the
  /// classifier absent). Returns the input gradient.
  Tensor<T> backward(const Tensor<T>& grad_output, const Tensor<T>* grad_logits);

  /// Trainable tensors in checkpoint order.
  std::vector<ParamRef<T>> parameters();
  /// Trainable tensors followed by BatchNorm running statistics.
  std::vector<ParamRef<T>> state_refs();

  void zero_grad();

  /// Snapshot of parameters and running statistics as float32.
  ModelParams state() const;
  /// Strict load: names and shapes must match exactly.
  void load_state(const ModelParams& params);

  /// Number of trainable scalars.
  std::size_t parameter_count();

  std::vector<SamplingBlock<T>> encoder;
  std::vector<SamplingBlock<T>> decoder;
  Conv2d<T> head;
  std::optional<Linear<T>> classifier;

 private:
  void check_input(const Tensor<T>& input) const;

  EncoderDecoderConfig config_;
  Shape bottleneck_shape_;
};

/// Two-input wrapper: concatenates [coarse, lpet] along channels.
template <typename T>
class RefineNet {
 public:
  RefineNet(std::size_t base_channels, std::size_t input_size, std::uint64_t seed)
      : net(EncoderDecoderConfig::refine_net(base_channels, input_size), seed) {}

  Tensor<T> forward(const Tensor<T>& coarse, const Tensor<T>& lpet, Mode mode);

  struct InputGrads {
    Tensor<T> coarse;
    Tensor<T> lpet;
  };
  InputGrads backward(const Tensor<T>& grad_residual);

  EncoderDecoder<T> net;
};

template <typename T>
using PretrainNet = EncoderDecoder<T>;
template <typename T>
using CPNet = EncoderDecoder<T>;

/// coarse + residual, clamped to [0, 1].
template <typename T>
Tensor<T> compose_rpet(const Tensor<T>& coarse, const Tensor<T>& residual);

/// Channel concatenation of equally shaped NCHW tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Copies every `enc.*` entry (weights and running statistics) of source into
/// dest. Throws ValidationError listing missing or mis-shaped entries;
/// dest is untouched on error.
void transfer_encoder(const ModelParams& source, ModelParams& dest);

template <typename T>
void transfer_encoder(const EncoderDecoder<T>& source, EncoderDecoder<T>& dest);

}  // namespace mdpet::models
