#include "mdpet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mdpet/metrics.hpp"
#include "mdpet/nn/loss.hpp"

namespace mdpet::train {
namespace {

using models::Mode;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed streams for the networks and batch orders of one run.
constexpr std::uint64_t kPretrainInit = 1;
constexpr std::uint64_t kCpnetInit = 2;
constexpr std::uint64_t kRefineInit = 3;
constexpr std::uint64_t kOrderBase = 1000;

std::size_t common_size(std::span<const SliceSample> data) {
  if (data.empty()) throw ValidationError("training dataset is empty");
  const std::size_t n = data.front().size;
  for (const auto& s : data) {
    if (s.size != n || s.lpet.size() != n * n || s.spet.size() != n * n) {
      throw ShapeError("training samples must share one square image size");
    }
  }
  return n;
}

Tensor<float> stack(std::span<const SliceSample> samples, std::span<const std::size_t> indices,
                    bool lpet) {
  const std::size_t n = samples[indices.front()].size;
  Tensor<float> out({indices.size(), 1, n, n});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& src = lpet ? samples[indices[b]].lpet : samples[indices[b]].spet;
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * n * n));
  }
  return out;
}

template <typename T>
void require_finite(T value, const char* what, int epoch, std::size_t batch) {
  if (!std::isfinite(static_cast<double>(value))) {
    throw std::runtime_error(std::string("non-finite ") + what + " loss at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

std::vector<ParamRef<float>> prefixed(std::vector<ParamRef<float>> refs, const std::string& prefix) {
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(beta >= 0.0)) throw ValidationError("beta must be >= 0");
  if (base_channels < 1) throw ValidationError("base channels must be >= 1");
  if (lambda_override && !(*lambda_override >= 0.0 && *lambda_override <= 1.0)) {
    throw ValidationError("lambda override must lie in [0, 1]");
  }
}

double lambda_schedule(int epoch, int total_epochs) {
  if (total_epochs < 1) throw ValidationError("lambda_schedule: total_epochs must be >= 1");
  if (epoch < 0 || epoch >= total_epochs) {
    throw ValidationError("lambda_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(total_epochs) + ")");
  }
  if (total_epochs == 1) return 1.0;
  return static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
}

template <typename T>
PretrainLoss<T> pretrain_loss(const Tensor<T>& recon, const Tensor<T>& lpet, const Tensor<T>& logits,
                              const Tensor<T>& labels, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("pretrain_loss: lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  auto mse = nn::mse_loss(recon, lpet);
  auto ce = nn::softmax_cross_entropy(logits, labels);
  const T w = static_cast<T>(lambda);
  const T wc = static_cast<T>(1.0 - lambda);
  PretrainLoss<T> out;
  out.mse = mse.value;
  out.ce = ce.value;
  if (lambda == 1.0) {
    out.total = mse.value;
  } else if (lambda == 0.0) {
    out.total = ce.value;
  } else {
    out.total = w * mse.value + wc * ce.value;
  }
  out.grad_recon = std::move(mse.grad);
  for (auto& g : out.grad_recon.data()) g *= w;
  out.grad_logits = std::move(ce.grad);
  for (auto& g : out.grad_logits.data()) g *= wc;
  return out;
}

template <typename T>
PredictionLoss<T> prediction_losses(const Tensor<T>& coarse, const Tensor<T>& spet,
                                    const Tensor<T>& residual_hat, double beta,
                                    bool detach_residual_target) {
  if (!(beta >= 0.0)) throw ValidationError("prediction_losses: beta must be >= 0");
  require_same_shape("prediction_losses residual", coarse.shape(), residual_hat.shape());
  auto cp = nn::l1_loss(coarse, spet);
  Tensor<T> target(spet.shape());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = spet[i] - coarse[i];
  auto ref = nn::l1_loss(residual_hat, target);

  const T b = static_cast<T>(beta);
  PredictionLoss<T> out;
  out.cpnet = cp.value;
  out.refinenet = ref.value;
  out.total = beta == 0.0 ? cp.value : cp.value + b * ref.value;
  out.grad_coarse = std::move(cp.grad);
  out.grad_residual = std::move(ref.grad);
  for (auto& g : out.grad_residual.data()) g *= b;
  if (!detach_residual_target) {
    // d|r_hat - (s - c)| / dc = sign(r_hat - r)
    for (std::size_t i = 0; i < out.grad_coarse.size(); ++i) out.grad_coarse[i] += out.grad_residual[i];
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch, bool shuffle) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(stream_seed(seed, kOrderBase + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

Tensor<float> stack_lpet(std::span<const SliceSample> samples, std::span<const std::size_t> indices) {
  return stack(samples, indices, true);
}

Tensor<float> stack_spet(std::span<const SliceSample> samples, std::span<const std::size_t> indices) {
  return stack(samples, indices, false);
}

PretrainResult run_pretrain(std::span<const SliceSample> dataset, const TrainConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t size = common_size(dataset);
  std::set<int> classes;
  for (const auto& s : dataset) classes.insert(s.drf_class);
  if (classes.size() != phantom::kDoseReductionFactors.size()) {
    throw ValidationError("pre-training needs samples of every DRF class in the training split");
  }

  models::PretrainNet<float> net(models::EncoderDecoderConfig::pretrain_net(config.base_channels, size),
                                 stream_seed(config.seed, kPretrainInit));
  const auto params = net.parameters();
  nn::AdamState<float> adam(nn::AdamConfig{config.lr});
  const auto bs = static_cast<std::size_t>(config.batch_size);

  PretrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lambda = config.lambda_override ? *config.lambda_override : lambda_schedule(epoch, config.epochs);
    const auto order = epoch_order(dataset.size(), config.seed, epoch, config.shuffle);
    std::size_t correct = 0;
    for (std::size_t first = 0, batch = 0; first < order.size(); first += bs, ++batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(bs, order.size() - first));
      const auto x = stack_lpet(dataset, idx);
      std::vector<int> cls;
      for (const auto i : idx) cls.push_back(dataset[i].drf_class);
      const auto labels = nn::one_hot<float>(cls, phantom::kDoseReductionFactors.size());

      net.zero_grad();
      auto fwd = net.forward(x, Mode::Train);
      const auto loss = pretrain_loss(fwd.output, x, *fwd.logits, labels, log.lambda);
      require_finite(loss.total, "pre-training", epoch, batch);
      net.backward(loss.grad_recon, &loss.grad_logits);
      nn::adam_step<float>(params, adam);

      const double w = static_cast<double>(idx.size());
      log.mse += w * loss.mse;
      log.ce += w * loss.ce;
      log.total += w * loss.total;
      correct += static_cast<std::size_t>(std::lround(metrics::accuracy(*fwd.logits, cls) * w));
    }
    const double n = static_cast<double>(dataset.size());
    log.mse /= n;
    log.ce /= n;
    log.total /= n;
    log.accuracy = static_cast<double>(correct) / n;
    log.seconds = seconds_since(start);
    result.logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.params = net.state();
  return result;
}

PredictionResult run_prediction_phase(std::span<const SliceSample> dataset,
                                      const ModelParams* pretrained, const TrainConfig& config,
                                      const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t size = common_size(dataset);

  models::CPNet<float> cpnet(models::EncoderDecoderConfig::cp_net(config.base_channels, size),
                             stream_seed(config.seed, kCpnetInit));
  if (pretrained) {
    auto state = cpnet.state();
    models::transfer_encoder(*pretrained, state);
    cpnet.load_state(state);
  }
  std::optional<models::RefineNet<float>> refine;
  if (config.use_refinenet) refine.emplace(config.base_channels, size, stream_seed(config.seed, kRefineInit));

  std::vector<ParamRef<float>> params;
  for (auto& p : prefixed(cpnet.parameters(), "cpnet.")) {
    if (config.freeze_encoder && p.name.starts_with("cpnet.enc.")) continue;
    params.push_back(p);
  }
  if (refine) {
    for (auto& p : prefixed(refine->net.parameters(), "refinenet.")) params.push_back(p);
  }
  nn::AdamState<float> adam(nn::AdamConfig{config.lr});
  const auto bs = static_cast<std::size_t>(config.batch_size);

  PredictionResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    const auto order = epoch_order(dataset.size(), config.seed, epoch, config.shuffle);
    for (std::size_t first = 0, batch = 0; first < order.size(); first += bs, ++batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(bs, order.size() - first));
      const auto x = stack_lpet(dataset, idx);
      const auto s = stack_spet(dataset, idx);

      cpnet.zero_grad();
      const auto coarse = cpnet.forward(x, Mode::Train).output;
      PredictionLoss<float> loss;
      Tensor<float> grad_coarse;
      if (refine) {
        refine->net.zero_grad();
        const auto residual = refine->forward(coarse, x, Mode::Train);
        loss = prediction_losses(coarse, s, residual, config.beta, config.detach_residual_target);
        require_finite(loss.total, "prediction", epoch, batch);
        grad_coarse = std::move(loss.grad_coarse);
        const auto through_refine = refine->backward(loss.grad_residual);
        for (std::size_t i = 0; i < grad_coarse.size(); ++i) grad_coarse[i] += through_refine.coarse[i];
      } else {
        auto l1 = nn::l1_loss(coarse, s);
        loss.cpnet = l1.value;
        loss.total = l1.value;
        require_finite(loss.total, "prediction", epoch, batch);
        grad_coarse = std::move(l1.grad);
      }
      cpnet.backward(grad_coarse, nullptr);
      nn::adam_step<float>(params, adam);

      const double w = static_cast<double>(idx.size());
      log.cpnet_l1 += w * loss.cpnet;
      log.refinenet_l1 += w * loss.refinenet;
      log.total += w * loss.total;
    }
    const double n = static_cast<double>(dataset.size());
    log.cpnet_l1 /= n;
    log.refinenet_l1 /= n;
    log.total /= n;
    log.seconds = seconds_since(start);
    result.logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.cpnet = cpnet.state();
  if (refine) result.refinenet = refine->net.state();
  return result;
}

models::EncoderDecoderConfig infer_config(const ModelParams& params, std::size_t input_size) {
  const auto* first = params.find("enc.0.conv.weight");
  if (!first || first->rank() != 4) {
    throw ValidationError("checkpoint has no enc.0.conv.weight; not an encoder-decoder");
  }
  models::EncoderDecoderConfig cfg;
  cfg.base_channels = first->dim(0);
  cfg.in_channels = first->dim(1);
  cfg.depth = 0;
  while (params.find("enc." + std::to_string(cfg.depth) + ".conv.weight")) ++cfg.depth;
  cfg.input_size = input_size;
  if (const auto* fc = params.find("cls.fc.weight")) {
    cfg.with_classifier = true;
    cfg.num_classes = fc->dim(1);
  }
  cfg.validate();
  return cfg;
}

double classification_accuracy(const ModelParams& pretrain, std::span<const SliceSample> samples) {
  const std::size_t size = common_size(samples);
  const auto cfg = infer_config(pretrain, size);
  if (!cfg.with_classifier) throw ValidationError("checkpoint has no classifier head");
  models::PretrainNet<float> net(cfg, 0);
  net.load_state(pretrain);
  constexpr std::size_t kBatch = 16;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < samples.size(); first += kBatch) {
    std::vector<std::size_t> idx(std::min(kBatch, samples.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    std::vector<int> cls;
    for (const auto i : idx) cls.push_back(samples[i].drf_class);
    const auto logits = net.classify(net.encode(stack_lpet(samples, idx), Mode::Eval));
    correct += static_cast<std::size_t>(std::lround(metrics::accuracy(logits, cls) * static_cast<double>(idx.size())));
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::string logs_to_csv(std::span<const EpochLog> logs) {
  std::ostringstream out;
  out << "epoch,lambda,mse,ce,acc,l_cp,l_refine,total,seconds\n" << std::setprecision(9);
  for (const auto& l : logs) {
    out << l.epoch << ',' << l.lambda << ',' << l.mse << ',' << l.ce << ',' << l.accuracy << ','
        << l.cpnet_l1 << ',' << l.refinenet_l1 << ',' << l.total << ',' << l.seconds << "\n";
  }
  return out.str();
}

template PretrainLoss<float> pretrain_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                                  const Tensor<float>&, const Tensor<float>&, double);
template PretrainLoss<double> pretrain_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                    const Tensor<double>&, const Tensor<double>&, double);
template PredictionLoss<float> prediction_losses<float>(const Tensor<float>&, const Tensor<float>&,
                                                        const Tensor<float>&, double, bool);
template PredictionLoss<double> prediction_losses<double>(const Tensor<double>&, const Tensor<double>&,
                                                          const Tensor<double>&, double, bool);

}  // namespace mdpet::train
