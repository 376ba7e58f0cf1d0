#include "mdpet/models.hpp"

#include <algorithm>
#include <string>

namespace mdpet::models {
namespace {

template <typename T>
void accumulate(Tensor<T>& param, const Tensor<T>& grad) {
  param.ensure_grad();
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : t.data()) x = static_cast<T>(dist(rng));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

void EncoderDecoderConfig::validate() const {
  if (depth != 2 && depth != 4) {
    throw ValidationError("encoder-decoder depth must be 2 or 4, got " + std::to_string(depth));
  }
  if (in_channels == 0 || base_channels == 0 || num_classes == 0) {
    throw ValidationError("encoder-decoder channel and class counts must be positive");
  }
  const std::size_t factor = std::size_t{1} << depth;
  if (input_size == 0 || input_size % factor != 0) {
    throw ShapeError("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                     std::to_string(depth) + " = " + std::to_string(factor));
  }
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const nn::ConvSpec& s) : spec(s), weight(nn::weight_shape(s)), bias({s.out_channels}) {
  nn::validate(spec);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input) {
  input_ = input;
  return spec.transposed ? nn::deconv2d(input, spec, weight, bias) : nn::conv2d(input, spec, weight, bias);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  auto grads = spec.transposed ? nn::deconv2d_backward(input_, spec, weight, grad_out)
                               : nn::conv2d_backward(input_, spec, weight, grad_out);
  accumulate(weight, grads.weight);
  accumulate(bias, grads.bias);
  return std::move(grads.input);
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng, double stddev) {
  fill_normal(weight, rng, stddev);
  bias.fill(T{0});
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
  params.push_back({prefix + ".weight", &weight});
  params.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& input, Mode mode) {
  return nn::batchnorm2d(input, state, mode, &cache_);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  auto grads = nn::batchnorm2d_backward(cache_, state, grad_out);
  accumulate(state.gamma, grads.gamma);
  accumulate(state.beta, grads.beta);
  return std::move(grads.input);
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
  params.push_back({prefix + ".gamma", &state.gamma});
  params.push_back({prefix + ".beta", &state.beta});
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& buffers) {
  buffers.push_back({prefix + ".running_mean", &state.running_mean});
  buffers.push_back({prefix + ".running_var", &state.running_var});
}

// ---------------------------------------------------------------------------
// ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t channels)
    : conv1(nn::ConvSpec::same(channels, channels)), conv2(nn::ConvSpec::same(channels, channels)) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& input) {
  if (input.rank() != 4 || input.dim(1) != conv1.spec.in_channels) {
    throw ShapeError("residual block: expected " + std::to_string(conv1.spec.in_channels) +
                     " channels, input " + format_shape(input.shape()));
  }
  pre_act_ = conv1.forward(input);
  sum_ = conv2.forward(nn::relu(pre_act_));
  add_into(sum_, input);
  return nn::relu(sum_);
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> grad_sum = nn::relu_backward(sum_, grad_out);
  Tensor<T> grad_x = conv1.backward(nn::relu_backward(pre_act_, conv2.backward(grad_sum)));
  add_into(grad_x, grad_sum);
  return grad_x;
}

template <typename T>
void ResidualBlock<T>::init(std::mt19937_64& rng, double stddev) {
  conv1.init(rng, stddev);
  conv2.init(rng, stddev);
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
  conv1.collect(prefix + ".conv1", params);
  conv2.collect(prefix + ".conv2", params);
}

// ---------------------------------------------------------------------------
// SamplingBlock

template <typename T>
SamplingBlock<T>::SamplingBlock(std::size_t in, std::size_t out, bool is_up)
    : up(is_up),
      res(in),
      conv(is_up ? nn::ConvSpec::up(in, out) : nn::ConvSpec::down(in, out)),
      bn(out) {}

template <typename T>
Tensor<T> SamplingBlock<T>::forward(const Tensor<T>& input, Mode mode) {
  normalized_ = bn.forward(conv.forward(res.forward(input)), mode);
  return nn::leaky_relu(normalized_, slope());
}

template <typename T>
Tensor<T> SamplingBlock<T>::backward(const Tensor<T>& grad_out) {
  return res.backward(conv.backward(bn.backward(nn::leaky_relu_backward(normalized_, slope(), grad_out))));
}

template <typename T>
void SamplingBlock<T>::init(std::mt19937_64& rng, double stddev) {
  res.init(rng, stddev);
  conv.init(rng, stddev);
}

template <typename T>
void SamplingBlock<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
  res.collect(prefix + ".res", params);
  conv.collect(prefix + (up ? ".deconv" : ".conv"), params);
  bn.collect(prefix + ".bn", params);
}

template <typename T>
void SamplingBlock<T>::collect_buffers(const std::string& prefix, std::vector<ParamRef<T>>& buffers) {
  bn.collect_buffers(prefix + ".bn", buffers);
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& input) {
  input_ = input;
  return nn::fully_connected(input, weight, bias);
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  auto grads = nn::fully_connected_backward(input_, weight, grad_out);
  accumulate(weight, grads.weight);
  accumulate(bias, grads.bias);
  return std::move(grads.input);
}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng, double stddev) {
  fill_normal(weight, rng, stddev);
  bias.fill(T{0});
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
  params.push_back({prefix + ".weight", &weight});
  params.push_back({prefix + ".bias", &bias});
}

// ---------------------------------------------------------------------------
// EncoderDecoder

template <typename T>
EncoderDecoder<T>::EncoderDecoder(const EncoderDecoderConfig& config, std::uint64_t seed)
    : head(nn::ConvSpec::same(config.base_channels, 1)), config_(config) {
  config_.validate();
  const std::size_t d = config_.depth;
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t in = i == 0 ? config_.in_channels : config_.width(i - 1);
    encoder.emplace_back(in, config_.width(i), false);
  }
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t in = config_.width(d - 1 - j);
    const std::size_t out = j + 1 == d ? config_.base_channels : config_.width(d - 2 - j);
    decoder.emplace_back(in, out, true);
  }
  const std::size_t side = config_.input_size >> d;
  bottleneck_shape_ = {config_.width(d - 1), side, side};
  if (config_.with_classifier) {
    classifier.emplace(config_.width(d - 1) * side * side, config_.num_classes);
  }

  std::mt19937_64 rng(seed);
  for (auto& b : encoder) b.init(rng, kInitStd);
  for (auto& b : decoder) b.init(rng, kInitStd);
  head.init(rng, kInitStd);
  if (classifier) classifier->init(rng, kInitStd);
}

template <typename T>
void EncoderDecoder<T>::check_input(const Tensor<T>& input) const {
  const Shape expected{input.rank() == 4 ? input.dim(0) : 1, config_.in_channels, config_.input_size,
                       config_.input_size};
  if (input.rank() != 4 || input.shape() != expected) {
    throw ShapeError("encoder-decoder input: expected [N, " + std::to_string(config_.in_channels) +
                     ", " + std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + "], got " + format_shape(input.shape()));
  }
}

template <typename T>
Tensor<T> EncoderDecoder<T>::encode(const Tensor<T>& input, Mode mode) {
  check_input(input);
  Tensor<T> h = input;
  for (auto& b : encoder) h = b.forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> EncoderDecoder<T>::decode(const Tensor<T>& bottleneck, Mode mode) {
  if (bottleneck.rank() != 4 ||
      Shape(bottleneck.shape().begin() + 1, bottleneck.shape().end()) != bottleneck_shape_) {
    throw ShapeError("decoder input: expected [N, " + format_shape(bottleneck_shape_).substr(1) +
                     ", got " + format_shape(bottleneck.shape()));
  }
  Tensor<T> h = bottleneck;
  for (auto& b : decoder) h = b.forward(h, mode);
  return head.forward(h);
}

template <typename T>
Tensor<T> EncoderDecoder<T>::classify(const Tensor<T>& bottleneck) {
  if (!classifier) throw ValidationError("network has no classifier head");
  const std::size_t n = bottleneck.dim(0);
  return classifier->forward(bottleneck.reshaped({n, bottleneck.size() / n}));
}

template <typename T>
ForwardResult<T> EncoderDecoder<T>::forward(const Tensor<T>& input, Mode mode) {
  Tensor<T> bottleneck = encode(input, mode);
  ForwardResult<T> result;
  if (classifier) result.logits = classify(bottleneck);
  result.output = decode(bottleneck, mode);
  return result;
}

template <typename T>
Tensor<T> EncoderDecoder<T>::backward(const Tensor<T>& grad_output, const Tensor<T>* grad_logits) {
  Tensor<T> g = head.backward(grad_output);
  for (auto it = decoder.rbegin(); it != decoder.rend(); ++it) g = it->backward(g);
  if (grad_logits && classifier) {
    const Tensor<T> gflat = classifier->backward(*grad_logits);
    add_into(g, gflat);
  }
  for (auto it = encoder.rbegin(); it != encoder.rend(); ++it) g = it->backward(g);
  return g;
}

template <typename T>
std::vector<ParamRef<T>> EncoderDecoder<T>::parameters() {
  std::vector<ParamRef<T>> params;
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect("enc." + std::to_string(i), params);
  for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect("dec." + std::to_string(i), params);
  head.collect("dec.out", params);
  if (classifier) classifier->collect("cls.fc", params);
  return params;
}

template <typename T>
std::vector<ParamRef<T>> EncoderDecoder<T>::state_refs() {
  auto refs = parameters();
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    encoder[i].collect_buffers("enc." + std::to_string(i), refs);
  }
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    decoder[i].collect_buffers("dec." + std::to_string(i), refs);
  }
  return refs;
}

template <typename T>
void EncoderDecoder<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
ModelParams EncoderDecoder<T>::state() const {
  ModelParams out;
  for (const auto& ref : const_cast<EncoderDecoder*>(this)->state_refs()) {
    out.add(ref.name, ref.tensor->template cast<float>());
  }
  return out;
}

template <typename T>
void EncoderDecoder<T>::load_state(const ModelParams& params) {
  auto refs = state_refs();
  std::string problems;
  for (const auto& ref : refs) {
    const auto* src = params.find(ref.name);
    if (!src) {
      problems += " missing '" + ref.name + "';";
    } else if (src->shape() != ref.tensor->shape()) {
      problems += " '" + ref.name + "' has shape " + format_shape(src->shape()) + ", expected " +
                  format_shape(ref.tensor->shape()) + ";";
    }
  }
  if (params.size() != refs.size()) {
    problems += " checkpoint has " + std::to_string(params.size()) + " entries, network has " +
                std::to_string(refs.size()) + ";";
  }
  if (!problems.empty()) throw ValidationError("load_state:" + problems);
  for (auto& ref : refs) {
    const auto& src = *params.find(ref.name);
    std::copy(src.data().begin(), src.data().end(), ref.tensor->data().begin());
  }
}

template <typename T>
std::size_t EncoderDecoder<T>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

// ---------------------------------------------------------------------------
// RefineNet and composition

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("concat_channels", a.shape(), b.shape());
  if (a.rank() != 4) throw ShapeError("concat_channels: expected NCHW, got " + format_shape(a.shape()));
  const std::size_t n = a.dim(0), c = a.dim(1), l = a.dim(2) * a.dim(3);
  Tensor<T> out({n, 2 * c, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * c * l, c * l, out.data().data() + i * 2 * c * l);
    std::copy_n(b.data().data() + i * c * l, c * l, out.data().data() + (i * 2 + 1) * c * l);
  }
  return out;
}

template <typename T>
Tensor<T> RefineNet<T>::forward(const Tensor<T>& coarse, const Tensor<T>& lpet, Mode mode) {
  require_same_shape("refinenet inputs", coarse.shape(), lpet.shape());
  return net.forward(concat_channels(coarse, lpet), mode).output;
}

template <typename T>
typename RefineNet<T>::InputGrads RefineNet<T>::backward(const Tensor<T>& grad_residual) {
  const Tensor<T> g = net.backward(grad_residual, nullptr);
  const std::size_t n = g.dim(0), l = g.dim(2) * g.dim(3);
  InputGrads out{Tensor<T>({n, 1, g.dim(2), g.dim(3)}), Tensor<T>({n, 1, g.dim(2), g.dim(3)})};
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(g.data().data() + i * 2 * l, l, out.coarse.data().data() + i * l);
    std::copy_n(g.data().data() + (i * 2 + 1) * l, l, out.lpet.data().data() + i * l);
  }
  return out;
}

template <typename T>
Tensor<T> compose_rpet(const Tensor<T>& coarse, const Tensor<T>& residual) {
  require_same_shape("compose_rpet", coarse.shape(), residual.shape());
  Tensor<T> out(coarse.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(coarse[i] + residual[i], T{0}, T{1});
  return out;
}

void transfer_encoder(const ModelParams& source, ModelParams& dest) {
  std::string problems;
  const auto dst_enc = dest.with_prefix("enc.");
  const auto src_enc = source.with_prefix("enc.");
  if (dst_enc.size() == 0) problems += " destination has no enc.* entries;";
  for (const auto& e : dst_enc.entries()) {
    const auto* src = source.find(e.name);
    if (!src) {
      problems += " '" + e.name + "' missing from source;";
    } else if (src->shape() != e.tensor.shape()) {
      problems += " '" + e.name + "' shape " + format_shape(src->shape()) + " vs " +
                  format_shape(e.tensor.shape()) + ";";
    }
  }
  for (const auto& e : src_enc.entries()) {
    if (!dest.find(e.name)) problems += " '" + e.name + "' missing from destination;";
  }
  if (!problems.empty()) throw ValidationError("transfer_encoder:" + problems);
  for (auto& e : dest.entries()) {
    if (e.name.starts_with("enc.")) e.tensor = source.at(e.name);
  }
}

template <typename T>
void transfer_encoder(const EncoderDecoder<T>& source, EncoderDecoder<T>& dest) {
  ModelParams dst = dest.state();
  transfer_encoder(source.state(), dst);
  dest.load_state(dst);
}

#define MDPET_INSTANTIATE_MODELS(T)                                                 \
  template class Conv2d<T>;                                                         \
  template class BatchNorm2d<T>;                                                    \
  template class ResidualBlock<T>;                                                  \
  template class SamplingBlock<T>;                                                  \
  template class Linear<T>;                                                         \
  template class EncoderDecoder<T>;                                                 \
  template class RefineNet<T>;                                                      \
  template Tensor<T> compose_rpet<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);        \
  template void transfer_encoder<T>(const EncoderDecoder<T>&, EncoderDecoder<T>&);

MDPET_INSTANTIATE_MODELS(float)
MDPET_INSTANTIATE_MODELS(double)

#undef MDPET_INSTANTIATE_MODELS

}  // namespace mdpet::models
