#include "mdpet/evaluate.hpp"

#include <algorithm>
#include <numeric>

#include "mdpet/train.hpp"

namespace mdpet::evaluate {
namespace {

constexpr std::size_t kEvalBatch = 16;

models::EncoderDecoderConfig checked_config(const ModelParams& params, std::size_t size,
                                            std::size_t in_channels, std::size_t depth,
                                            const char* what) {
  auto cfg = train::infer_config(params, size);
  if (cfg.in_channels != in_channels || cfg.depth != depth || cfg.with_classifier) {
    throw ValidationError(std::string("checkpoint is not a ") + what + " (in_channels " +
                          std::to_string(cfg.in_channels) + ", depth " + std::to_string(cfg.depth) +
                          (cfg.with_classifier ? ", has classifier)" : ")"));
  }
  return cfg;
}

SliceMetrics score_one(const SliceSample& s, std::span<const float> pred) {
  SliceMetrics m;
  m.subject_id = s.subject_id;
  m.slice_index = s.slice_index;
  m.drf = s.drf;
  m.psnr = metrics::psnr(pred, s.spet);
  m.ssim = metrics::ssim(pred, s.spet, s.size, s.size);
  m.nmse = metrics::nmse(pred, s.spet);
  return m;
}

}  // namespace

Predictor::Predictor(const ModelParams& cpnet, const ModelParams* refinenet, std::size_t input_size)
    : size_(input_size), cpnet_(checked_config(cpnet, input_size, 1, 4, "CPNet"), 0) {
  cpnet_.load_state(cpnet);
  if (refinenet) {
    const auto cfg = checked_config(*refinenet, input_size, 2, 2, "RefineNet");
    refine_.emplace(cfg.base_channels, input_size, 0);
    refine_->net.load_state(*refinenet);
  }
}

Prediction Predictor::predict(const Tensor<float>& lpet) {
  if (lpet.rank() != 4 || lpet.dim(1) != 1 || lpet.dim(2) != size_ || lpet.dim(3) != size_) {
    throw ShapeError("predict: expected [N, 1, " + std::to_string(size_) + ", " + std::to_string(size_) +
                     "], got " + format_shape(lpet.shape()));
  }
  Prediction out;
  out.coarse = cpnet_.forward(lpet, models::Mode::Eval).output;
  out.residual = refine_ ? refine_->forward(out.coarse, lpet, models::Mode::Eval) : Tensor<float>(lpet.shape());
  out.rpet = models::compose_rpet(out.coarse, out.residual);
  return out;
}

std::vector<SliceMetrics> score_slices(std::span<const SliceSample> samples, const ImageFn& predict) {
  std::vector<SliceMetrics> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto pred = predict(s);
    out.push_back(score_one(s, pred));
  }
  return out;
}

std::vector<SliceMetrics> score_predictor(Predictor& predictor, std::span<const SliceSample> samples) {
  std::vector<SliceMetrics> out;
  out.reserve(samples.size());
  for (std::size_t first = 0; first < samples.size(); first += kEvalBatch) {
    std::vector<std::size_t> idx(std::min(kEvalBatch, samples.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    const auto pred = predictor.predict(train::stack_lpet(samples, idx));
    const std::size_t pixels = predictor.input_size() * predictor.input_size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.push_back(score_one(samples[idx[b]], pred.rpet.data().subspan(b * pixels, pixels)));
    }
  }
  return out;
}

std::vector<SliceMetrics> score_lpet(std::span<const SliceSample> samples) {
  return score_slices(samples, [](const SliceSample& s) { return s.lpet; });
}

Evaluation evaluate_model(const std::string& name, const ModelParams& cpnet,
                          const ModelParams* refinenet, std::span<const SliceSample> test,
                          const std::vector<SliceMetrics>* baseline, const std::string& baseline_name) {
  if (test.empty()) throw ValidationError("evaluation needs a nonempty test split");
  Predictor predictor(cpnet, refinenet, test.front().size);
  Evaluation ev;
  ev.slices = score_predictor(predictor, test);
  ev.report = metrics::aggregate(name, ev.slices, baseline, baseline_name);
  return ev;
}

}  // namespace mdpet::evaluate
