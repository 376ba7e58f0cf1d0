#pragma once
// Pre-training (dose classification + self-reconstruction) and the joint
// CPNet + RefineNet prediction phase.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdpet/models.hpp"
#include "mdpet/nn/adam.hpp"
#include "mdpet/phantom.hpp"

namespace mdpet::train {

using models::ModelParams;
using phantom::SliceSample;

struct TrainConfig {
  int epochs = 30;
  double lr = 2e-4;
  int batch_size = 8;
  double beta = 1.0;
  std::uint64_t seed = 1;
  bool shuffle = true;
  bool detach_residual_target = true;
  std::size_t base_channels = 8;
  /// Fixed lambda for every epoch instead of the ramp (1.0 = reconstruction only).
  std::optional<double> lambda_override;
  /// Phase 2: leave CPNet's encoder out of the optimizer.
  bool freeze_encoder = false;
  /// Phase 2: train and apply RefineNet; false trains CPNet alone.
  bool use_refinenet = true;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double lambda = 0;
  double mse = 0;
  double ce = 0;
  double accuracy = 0;
  double cpnet_l1 = 0;
  double refinenet_l1 = 0;
  double total = 0;
  double seconds = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// epoch / (total_epochs - 1), or 1 when there is a single epoch.
double lambda_schedule(int epoch, int total_epochs);

template <typename T>
struct PretrainLoss {
  T total{};
  T mse{};
  T ce{};
  Tensor<T> grad_recon;
  Tensor<T> grad_logits;
};

/// lambda * mse(lpet, recon) + (1 - lambda) * CE(logits, labels).
template <typename T>
PretrainLoss<T> pretrain_loss(const Tensor<T>& recon, const Tensor<T>& lpet, const Tensor<T>& logits,
                              const Tensor<T>& labels, double lambda);

template <typename T>
struct PredictionLoss {
  T total{};
  T cpnet{};
  T refinenet{};
  Tensor<T> grad_coarse;    // from both terms (the second only without detaching)
  Tensor<T> grad_residual;
};

/// l_cp = L1(coarse, spet); r = spet - coarse; l_ref = L1(residual_hat, r);
/// total = l_cp + beta * l_ref. With detach_residual_target, r is a constant.
template <typename T>
PredictionLoss<T> prediction_losses(const Tensor<T>& coarse, const Tensor<T>& spet,
                                    const Tensor<T>& residual_hat, double beta,
                                    bool detach_residual_target);

/// Seeded sample order for one epoch; identity when shuffle is off.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch, bool shuffle);

/// Stacks samples[indices] into [B, 1, H, W] tensors.
Tensor<float> stack_lpet(std::span<const SliceSample> samples, std::span<const std::size_t> indices);
Tensor<float> stack_spet(std::span<const SliceSample> samples, std::span<const std::size_t> indices);

struct PretrainResult {
  ModelParams params;
  std::vector<EpochLog> logs;
};

/// Trains PretrainNet on LPET self-reconstruction plus DRF classification.
PretrainResult run_pretrain(std::span<const SliceSample> dataset, const TrainConfig& config,
                            const EpochCallback& on_epoch = {});

struct PredictionResult {
  ModelParams cpnet;
  std::optional<ModelParams> refinenet;
  std::vector<EpochLog> logs;
};

/// Trains CPNet (optionally warm-started from a PretrainNet encoder) jointly
/// with RefineNet under one Adam state.
PredictionResult run_prediction_phase(std::span<const SliceSample> dataset,
                                      const ModelParams* pretrained, const TrainConfig& config,
                                      const EpochCallback& on_epoch = {});

/// Eval-mode DRF classification accuracy of a PretrainNet checkpoint.
double classification_accuracy(const ModelParams& pretrain, std::span<const SliceSample> samples);

/// epoch,lambda,mse,ce,acc,l_cp,l_refine,total,seconds
std::string logs_to_csv(std::span<const EpochLog> logs);

/// Rebuilds the network configuration a checkpoint was saved from.
models::EncoderDecoderConfig infer_config(const ModelParams& params, std::size_t input_size);

}  // namespace mdpet::train
