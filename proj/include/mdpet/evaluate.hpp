#pragma once
// Eval-mode inference with trained CPNet (+ RefineNet) checkpoints and
// per-DRF scoring on the test split.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdpet/metrics.hpp"
#include "mdpet/models.hpp"
#include "mdpet/phantom.hpp"

namespace mdpet::evaluate {

using metrics::MetricsReport;
using metrics::SliceMetrics;
using models::ModelParams;
using phantom::SliceSample;

struct Prediction {
  Tensor<float> coarse;
  Tensor<float> residual;  // zeros without RefineNet
  Tensor<float> rpet;      // clamp(coarse + residual)
};

/// CPNet and optional RefineNet rebuilt from checkpoints, run in eval mode.
class Predictor {
 public:
  Predictor(const ModelParams& cpnet, const ModelParams* refinenet, std::size_t input_size);

  /// lpet: [N, 1, H, W].
  Prediction predict(const Tensor<float>& lpet);

  std::size_t input_size() const { return size_; }
  bool has_refinenet() const { return refine_.has_value(); }

 private:
  std::size_t size_;
  models::CPNet<float> cpnet_;
  std::optional<models::RefineNet<float>> refine_;
};

/// Maps one sample to a predicted image of the same size.
using ImageFn = std::function<std::vector<float>(const SliceSample&)>;

/// PSNR/SSIM/NMSE of predict(sample) against each sample's SPET.
std::vector<SliceMetrics> score_slices(std::span<const SliceSample> samples, const ImageFn& predict);

/// Scores RPET for every sample, batching through the predictor.
std::vector<SliceMetrics> score_predictor(Predictor& predictor, std::span<const SliceSample> samples);

/// The raw LPET input scored as if it were a prediction.
std::vector<SliceMetrics> score_lpet(std::span<const SliceSample> samples);

struct Evaluation {
  MetricsReport report;
  std::vector<SliceMetrics> slices;
};

/// Runs the model over the test samples and aggregates per DRF. With a
/// baseline per-slice list, p-values are attached.
Evaluation evaluate_model(const std::string& name, const ModelParams& cpnet,
                          const ModelParams* refinenet, std::span<const SliceSample> test,
                          const std::vector<SliceMetrics>* baseline = nullptr,
                          const std::string& baseline_name = {});

}  // namespace mdpet::evaluate
