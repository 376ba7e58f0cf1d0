#pragma once
// Command-line workflow: run configuration, the pipeline steps behind each
// subcommand, and the argument parser.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdpet/evaluate.hpp"
#include "mdpet/phantom.hpp"
#include "mdpet/train.hpp"

namespace mdpet::cli {

/// Everything a training or evaluation command needs. Serialized as JSON;
/// unknown keys are rejected.
struct RunConfig {
  std::string data;
  std::string out;
  std::string pretrained;  // checkpoint stem for `train`; empty = no pre-training
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};  // ablate only
  int pretrain_epochs = 30;
  int epochs = 30;
  double lr = 2e-4;
  int batch_size = 8;
  double beta = 1.0;
  std::size_t base_channels = 8;
  bool shuffle = true;
  bool detach_residual_target = true;
  bool freeze_encoder = false;
  bool use_refinenet = true;
  std::optional<double> lambda;  // fixed pre-training lambda instead of the ramp

  std::string to_json() const;
  /// Throws ValidationError on malformed JSON, unknown keys or wrong types.
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  train::TrainConfig pretrain_config() const;
  train::TrainConfig train_config() const;
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct PretrainOutcome {
  train::PretrainResult result;
  double train_accuracy = 0;
  double test_accuracy = 0;
};

/// run_pretrain on the train split plus eval-mode accuracy on both splits.
PretrainOutcome pretrain(const phantom::Dataset& data, const train::TrainConfig& config,
                         const train::EpochCallback& on_epoch = {});

struct TrainOutcome {
  train::PredictionResult result;
  evaluate::Evaluation evaluation;
};

/// Prediction phase followed by evaluation on the test split.
TrainOutcome train_and_evaluate(const phantom::Dataset& data, const models::ModelParams* pretrained,
                                const train::TrainConfig& config, const std::string& name,
                                const train::EpochCallback& on_epoch = {});

inline constexpr std::array<const char*, 4> kVariantNames{
    "(a) CPNet", "(b) +recon pretrain", "(c) +full pretrain", "(d) +RefineNet"};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  /// One report per variant (a)-(d), per-slice metrics pooled over seeds.
  std::vector<evaluate::MetricsReport> variants;
  evaluate::MetricsReport lpet;
  /// Test-split accuracy of variant (c)'s pre-trained classifier, per seed.
  std::vector<double> accuracy_c;
  /// Per-variant per-seed pooled slices, same order as variants.
  std::vector<std::vector<evaluate::SliceMetrics>> slices;
};

/// Runs variants (a)-(d) for every seed on identical data. Variants (c) and
/// (d) share one pre-training run per seed. Artifacts go under out_dir when
/// it is non-null.
AblationResult run_ablation(const phantom::Dataset& data, const RunConfig& config, bool parallel,
                            const std::filesystem::path* out_dir, std::ostream* progress = nullptr);

/// Plain-text summary: LPET row, four variant rows, classification accuracy.
std::string format_ablation(const AblationResult& result);

/// Entry point; args exclude the program name. Returns 0 on success, 1 on
/// runtime failure and 2 on usage or validation errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdpet::cli
