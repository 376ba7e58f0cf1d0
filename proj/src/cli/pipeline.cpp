#include <future>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mdpet/cli.hpp"
#include "mdpet/io.hpp"

namespace mdpet::cli {
namespace {

struct VariantRun {
  TrainOutcome outcome;
  std::string dir;
};

void save_pretrain(const PretrainOutcome& p, const std::filesystem::path& stem) {
  nn::save_checkpoint(p.result.params, stem);
  io::write_text(stem.string() + "_log.csv", train::logs_to_csv(p.result.logs));
}

void save_variant(const TrainOutcome& t, const std::filesystem::path& dir) {
  nn::save_checkpoint(t.result.cpnet, dir / "cpnet");
  if (t.result.refinenet) nn::save_checkpoint(*t.result.refinenet, dir / "refinenet");
  io::write_text(dir / "train_log.csv", train::logs_to_csv(t.result.logs));
  io::write_text(dir / "slices.csv", metrics::slices_to_csv(t.evaluation.slices));
}

}  // namespace

PretrainOutcome pretrain(const phantom::Dataset& data, const train::TrainConfig& config,
                         const train::EpochCallback& on_epoch) {
  PretrainOutcome out;
  out.result = train::run_pretrain(data.train, config, on_epoch);
  out.train_accuracy = train::classification_accuracy(out.result.params, data.train);
  if (!data.test.empty()) out.test_accuracy = train::classification_accuracy(out.result.params, data.test);
  return out;
}

TrainOutcome train_and_evaluate(const phantom::Dataset& data, const models::ModelParams* pretrained,
                                const train::TrainConfig& config, const std::string& name,
                                const train::EpochCallback& on_epoch) {
  TrainOutcome out;
  out.result = train::run_prediction_phase(data.train, pretrained, config, on_epoch);
  out.evaluation = evaluate::evaluate_model(
      name, out.result.cpnet, out.result.refinenet ? &*out.result.refinenet : nullptr, data.test);
  return out;
}

AblationResult run_ablation(const phantom::Dataset& data, const RunConfig& config, bool parallel,
                            const std::filesystem::path* out_dir, std::ostream* progress) {
  config.validate();
  if (data.test.empty()) throw ValidationError("ablation needs a nonempty test split");
  const auto policy = parallel ? std::launch::async : std::launch::deferred;

  AblationResult result;
  result.seeds = config.seeds;
  result.slices.resize(kVariantNames.size());
  result.lpet = metrics::aggregate("LPET", evaluate::score_lpet(data.test));

  for (const auto seed : config.seeds) {
    RunConfig cfg = config;
    cfg.seed = seed;
    auto full_cfg = cfg.pretrain_config();
    full_cfg.lambda_override.reset();
    auto recon_cfg = full_cfg;
    recon_cfg.lambda_override = 1.0;

    auto full_f = std::async(policy, [&] { return pretrain(data, full_cfg); });
    auto recon_f = std::async(policy, [&] { return pretrain(data, recon_cfg); });
    const auto full = full_f.get();
    const auto recon = recon_f.get();
    if (progress) {
      *progress << "seed " << seed << ": pre-training done, (c) test accuracy " << full.test_accuracy
                << std::endl;
    }

    auto cp_only = cfg.train_config();
    cp_only.use_refinenet = false;
    auto with_refine = cfg.train_config();
    with_refine.use_refinenet = true;

    std::array<std::future<TrainOutcome>, 4> runs{
        std::async(policy, [&] { return train_and_evaluate(data, nullptr, cp_only, kVariantNames[0]); }),
        std::async(policy, [&] { return train_and_evaluate(data, &recon.result.params, cp_only, kVariantNames[1]); }),
        std::async(policy, [&] { return train_and_evaluate(data, &full.result.params, cp_only, kVariantNames[2]); }),
        std::async(policy, [&] { return train_and_evaluate(data, &full.result.params, with_refine, kVariantNames[3]); }),
    };

    const std::filesystem::path seed_dir =
        out_dir ? *out_dir / ("seed" + std::to_string(seed)) : std::filesystem::path();
    if (out_dir) {
      save_pretrain(full, seed_dir / "pretrain_full");
      save_pretrain(recon, seed_dir / "pretrain_recon");
    }
    for (std::size_t v = 0; v < runs.size(); ++v) {
      const auto outcome = runs[v].get();
      if (out_dir) save_variant(outcome, seed_dir / std::string(1, static_cast<char>('a' + v)));
      auto& pool = result.slices[v];
      pool.insert(pool.end(), outcome.evaluation.slices.begin(), outcome.evaluation.slices.end());
      if (progress) {
        *progress << "seed " << seed << ": " << kVariantNames[v] << " mean PSNR "
                  << outcome.evaluation.report.mean_psnr() << " dB" << std::endl;
      }
    }
    result.accuracy_c.push_back(full.test_accuracy);
  }

  for (std::size_t v = 0; v < kVariantNames.size(); ++v) {
    result.variants.push_back(metrics::aggregate(kVariantNames[v], result.slices[v]));
  }
  return result;
}

std::string format_ablation(const AblationResult& result) {
  std::vector<evaluate::MetricsReport> rows{result.lpet};
  rows.insert(rows.end(), result.variants.begin(), result.variants.end());
  std::ostringstream out;
  out << "Ablation over seeds";
  for (const auto s : result.seeds) out << ' ' << s;
  out << " (test slices pooled across seeds)\n\n" << metrics::format_table(rows) << "\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& r : rows) out << "mean PSNR over DRFs  " << std::setw(22) << std::left << r.model << r.mean_psnr() << " dB\n";
  double acc = 0.0;
  for (const auto a : result.accuracy_c) acc += a;
  if (!result.accuracy_c.empty()) acc /= static_cast<double>(result.accuracy_c.size());
  out << "\ndose classification accuracy of (c) on the test split: " << acc << " (per seed:";
  for (const auto a : result.accuracy_c) out << ' ' << a;
  out << ")\n";
  return out.str();
}

}  // namespace mdpet::cli
