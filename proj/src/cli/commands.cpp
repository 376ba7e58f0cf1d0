#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "mdpet/cli.hpp"
#include "mdpet/io.hpp"
#include "mdpet/png.hpp"
#include "mdpet/simd/kernels.hpp"

namespace mdpet::cli {
namespace {

namespace fs = std::filesystem;

// Flag values that override the config file only when given.
struct Overrides {
  std::string config_path;
  RunConfig v;
  std::vector<std::pair<CLI::Option*, void (*)(RunConfig&, const RunConfig&)>> opts;
  bool no_shuffle = false, freeze = false, no_refine = false, attach = false;

  void add_common(CLI::App& app, bool with_training) {
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    reg(app.add_option("--data", v.data, "dataset directory"), [](RunConfig& c, const RunConfig& o) { c.data = o.data; });
    reg(app.add_option("--out", v.out, "output directory"), [](RunConfig& c, const RunConfig& o) { c.out = o.out; });
    if (!with_training) return;
    reg(app.add_option("--seed", v.seed), [](RunConfig& c, const RunConfig& o) { c.seed = o.seed; });
    reg(app.add_option("--epochs", v.epochs, "prediction-phase epochs"),
        [](RunConfig& c, const RunConfig& o) { c.epochs = o.epochs; });
    reg(app.add_option("--pretrain-epochs", v.pretrain_epochs),
        [](RunConfig& c, const RunConfig& o) { c.pretrain_epochs = o.pretrain_epochs; });
    reg(app.add_option("--lr", v.lr), [](RunConfig& c, const RunConfig& o) { c.lr = o.lr; });
    reg(app.add_option("--batch-size", v.batch_size),
        [](RunConfig& c, const RunConfig& o) { c.batch_size = o.batch_size; });
    reg(app.add_option("--beta", v.beta), [](RunConfig& c, const RunConfig& o) { c.beta = o.beta; });
    reg(app.add_option("--base-channels", v.base_channels),
        [](RunConfig& c, const RunConfig& o) { c.base_channels = o.base_channels; });
    reg(app.add_option_function<double>("--lambda", [this](double x) { v.lambda = x; },
                                        "fixed pre-training lambda"),
        [](RunConfig& c, const RunConfig& o) { c.lambda = o.lambda; });
    reg(app.add_flag("--no-shuffle", no_shuffle), [](RunConfig& c, const RunConfig&) { c.shuffle = false; });
    reg(app.add_flag("--freeze-encoder", freeze), [](RunConfig& c, const RunConfig&) { c.freeze_encoder = true; });
    reg(app.add_flag("--no-refinenet", no_refine), [](RunConfig& c, const RunConfig&) { c.use_refinenet = false; });
    reg(app.add_flag("--attach-residual-target", attach, "let the RefineNet target backpropagate into CPNet"),
        [](RunConfig& c, const RunConfig&) { c.detach_residual_target = false; });
  }

  void reg(CLI::Option* opt, void (*apply)(RunConfig&, const RunConfig&)) { opts.emplace_back(opt, apply); }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& [opt, apply] : opts) {
      if (opt->count() > 0) apply(c, v);
    }
    c.validate();
    return c;
  }
};

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required (flag or config key)");
  return value;
}

phantom::Dataset open_dataset(const RunConfig& c) {
  const fs::path root = require(c.data, "--data");
  if (!fs::exists(root / phantom::kManifestName)) {
    throw ValidationError("no dataset manifest at " + (root / phantom::kManifestName).string());
  }
  return phantom::load_dataset(root);
}

models::ModelParams open_checkpoint(const fs::path& stem) {
  const auto index = nn::checkpoint_index_path(stem);
  if (!fs::exists(index)) throw ValidationError("checkpoint not found: " + index.string());
  return nn::load_checkpoint(stem);
}

fs::path prepare_run_dir(const RunConfig& c) {
  const fs::path dir = require(c.out, "--out");
  fs::create_directories(dir);
  io::write_text(dir / "config.json", c.to_json());
  return dir;
}

train::EpochCallback printer(std::ostream& out, bool quiet, const char* phase, int total) {
  if (quiet) return {};
  return [&out, phase, total](const train::EpochLog& l) {
    out << phase << " epoch " << (l.epoch + 1) << "/" << total << std::fixed << std::setprecision(4);
    if (std::string(phase) == "pretrain") {
      out << " lambda=" << l.lambda << " mse=" << l.mse << " ce=" << l.ce << " acc=" << l.accuracy;
    } else {
      out << " l_cp=" << l.cpnet_l1 << " l_refine=" << l.refinenet_l1;
    }
    out << " total=" << l.total << " (" << std::setprecision(1) << l.seconds << "s)" << std::defaultfloat
        << std::endl;
  };
}

void write_reports(const fs::path& dir, const std::vector<metrics::MetricsReport>& reports,
                   const std::vector<metrics::SliceMetrics>& slices) {
  io::write_text(dir / "report.txt", metrics::format_table(reports));
  io::write_text(dir / "report.csv", metrics::to_csv(reports));
  io::write_text(dir / "slices.csv", metrics::slices_to_csv(slices));
}

int cmd_generate(const phantom::DatasetOptions& opt, const std::string& out_dir, std::ostream& out) {
  const auto manifest = phantom::build_dataset(opt, out_dir);
  out << "wrote " << manifest.files.size() << " slice files and " << (fs::path(out_dir) / phantom::kManifestName).string()
      << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& c, bool quiet, std::ostream& out) {
  const auto data = open_dataset(c);
  const auto dir = prepare_run_dir(c);
  const auto cfg = c.pretrain_config();
  const auto p = pretrain(data, cfg, printer(out, quiet, "pretrain", cfg.epochs));
  nn::save_checkpoint(p.result.params, dir / "pretrain");
  io::write_text(dir / "pretrain_log.csv", train::logs_to_csv(p.result.logs));
  std::ostringstream acc;
  acc << std::setprecision(10) << "{\n  \"train_accuracy\": " << p.train_accuracy
      << ",\n  \"test_accuracy\": " << p.test_accuracy << "\n}\n";
  io::write_text(dir / "pretrain_accuracy.json", acc.str());
  out << "dose classification accuracy: train " << p.train_accuracy << ", test " << p.test_accuracy << "\n"
      << "checkpoint: " << nn::checkpoint_index_path(dir / "pretrain").string() << "\n";
  return 0;
}

int cmd_train(RunConfig c, const std::string& pretrained_flag, bool no_pretrain, bool quiet, std::ostream& out) {
  if (!pretrained_flag.empty()) c.pretrained = pretrained_flag;
  if (no_pretrain) c.pretrained.clear();
  if (c.pretrained.empty() && !no_pretrain) {
    throw ValidationError("train needs --pretrained <checkpoint> or --no-pretrain");
  }
  const auto data = open_dataset(c);
  std::optional<models::ModelParams> pre;
  if (!c.pretrained.empty()) pre = open_checkpoint(c.pretrained);
  const auto dir = prepare_run_dir(c);
  const auto cfg = c.train_config();
  const auto t = train_and_evaluate(data, pre ? &*pre : nullptr, cfg, c.use_refinenet ? "RPET" : "CPNet",
                                    printer(out, quiet, "train", cfg.epochs));
  nn::save_checkpoint(t.result.cpnet, dir / "cpnet");
  if (t.result.refinenet) nn::save_checkpoint(*t.result.refinenet, dir / "refinenet");
  io::write_text(dir / "train_log.csv", train::logs_to_csv(t.result.logs));
  const auto lpet = metrics::aggregate("LPET", evaluate::score_lpet(data.test));
  write_reports(dir, {lpet, t.evaluation.report}, t.evaluation.slices);
  out << metrics::format_table(std::vector{lpet, t.evaluation.report}) << "run directory: " << dir.string() << "\n";
  return 0;
}

struct ModelPaths {
  std::string run, cpnet, refinenet;
  bool no_refinenet = false;

  void add(CLI::App& app) {
    app.add_option("--run", run, "run directory holding cpnet/refinenet checkpoints");
    app.add_option("--cpnet", cpnet, "CPNet checkpoint stem");
    app.add_option("--refinenet", refinenet, "RefineNet checkpoint stem");
  }

  std::pair<models::ModelParams, std::optional<models::ModelParams>> load() const {
    fs::path cp = cpnet, rf = refinenet;
    if (!run.empty()) {
      if (cp.empty()) cp = fs::path(run) / "cpnet";
      if (rf.empty() && fs::exists(nn::checkpoint_index_path(fs::path(run) / "refinenet"))) rf = fs::path(run) / "refinenet";
    }
    if (cp.empty()) throw ValidationError("give --run or --cpnet");
    std::optional<models::ModelParams> r;
    if (!rf.empty()) r = open_checkpoint(rf);
    return {open_checkpoint(cp), std::move(r)};
  }
};

int cmd_evaluate(const RunConfig& c, const ModelPaths& paths, const std::string& baseline_path,
                 const std::string& name, std::ostream& out) {
  const auto data = open_dataset(c);
  const auto [cp, rf] = paths.load();
  std::optional<std::vector<metrics::SliceMetrics>> baseline;
  std::string baseline_name;
  if (!baseline_path.empty()) {
    if (!fs::exists(baseline_path)) throw ValidationError("baseline dump not found: " + baseline_path);
    baseline = metrics::slices_from_csv(io::read_text(baseline_path));
    baseline_name = fs::path(baseline_path).parent_path().filename().string();
    if (baseline_name.empty()) baseline_name = "baseline";
  }
  const auto ev = evaluate::evaluate_model(name, cp, rf ? &*rf : nullptr, data.test,
                                           baseline ? &*baseline : nullptr, baseline_name);
  const auto lpet = metrics::aggregate("LPET", evaluate::score_lpet(data.test));
  const fs::path dir = require(c.out, "--out");
  fs::create_directories(dir);
  write_reports(dir, {lpet, ev.report}, ev.slices);
  out << metrics::format_table(std::vector{lpet, ev.report}) << "reports: " << (dir / "report.txt").string() << "\n";
  return 0;
}

void save_panel(const fs::path& path, std::size_t n, std::span<const std::uint8_t> px) {
  png::write_gray8(path, n, n, px);
}

int cmd_infer(const ModelPaths& paths, const std::string& lpet_path, const std::string& spet_path,
              const std::string& out_dir, std::ostream& out) {
  if (!fs::exists(lpet_path)) throw ValidationError("LPET file not found: " + lpet_path);
  const auto bytes = fs::file_size(lpet_path);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(bytes / 4))));
  if (bytes % 4 != 0 || side * side * 4 != bytes) {
    throw ShapeError(lpet_path + ": " + std::to_string(bytes) + " bytes is not a square float32 image");
  }
  const auto [cp, rf] = paths.load();
  const auto lpet = io::read_f32(lpet_path, side * side);
  std::optional<std::vector<float>> spet;
  if (!spet_path.empty()) {
    if (!fs::exists(spet_path)) throw ValidationError("SPET file not found: " + spet_path);
    spet = io::read_f32(spet_path, side * side);
  }

  evaluate::Predictor predictor(cp, rf ? &*rf : nullptr, side);
  const auto pred = predictor.predict(Tensor<float>({1, 1, side, side}, lpet));
  const fs::path dir = require(out_dir, "--out");
  fs::create_directories(dir);
  io::write_f32(dir / "rpet.f32", pred.rpet.data());
  io::write_f32(dir / "coarse.f32", pred.coarse.data());
  io::write_f32(dir / "residual.f32", pred.residual.data());

  const auto window = png::window_of(spet ? std::span<const float>(*spet) : std::span<const float>(lpet));
  save_panel(dir / "lpet.png", side, png::to_gray8(lpet, window));
  save_panel(dir / "coarse.png", side, png::to_gray8(pred.coarse.data(), window));
  save_panel(dir / "residual.png", side, png::signed_to_gray8(pred.residual.data(), window));
  save_panel(dir / "rpet.png", side, png::to_gray8(pred.rpet.data(), window));
  if (spet) {
    std::vector<float> err(spet->size());
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::abs(pred.rpet[i] - (*spet)[i]);
    save_panel(dir / "spet.png", side, png::to_gray8(*spet, window));
    save_panel(dir / "error.png", side, png::to_gray8(err, png::Window{0.0, window.high - window.low}));
    out << "PSNR " << metrics::psnr(pred.rpet.data(), *spet) << " dB (LPET " << metrics::psnr(lpet, *spet)
        << " dB)\n";
  }
  out << "outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& c, bool parallel, bool quiet, std::ostream& out) {
  const auto data = open_dataset(c);
  const auto dir = prepare_run_dir(c);
  const auto result = run_ablation(data, c, parallel, &dir, quiet ? nullptr : &out);
  std::vector<metrics::MetricsReport> rows{result.lpet};
  rows.insert(rows.end(), result.variants.begin(), result.variants.end());
  const auto text = format_ablation(result);
  io::write_text(dir / "ablation.txt", text);
  io::write_text(dir / "ablation.csv", metrics::to_csv(rows));
  out << text << "run directory: " << dir.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-dose-level low-dose PET reconstruction at desk scale"};
  app.fallthrough();  // global flags may follow the subcommand
  app.require_subcommand(1);
  bool quiet = false;
  std::string simd;
  app.add_flag("-q,--quiet", quiet, "suppress per-epoch progress");
  app.add_option("--simd", simd, "kernel backend (scalar or avx2)")->check(CLI::IsMember({"scalar", "avx2"}));

  phantom::DatasetOptions gen;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "write a synthetic multi-dose dataset");
  generate->add_option("--seed", gen.seed)->capture_default_str();
  generate->add_option("--train-subjects", gen.train_subjects)->capture_default_str();
  generate->add_option("--test-subjects", gen.test_subjects)->capture_default_str();
  generate->add_option("--slices", gen.slices_per_subject)->capture_default_str();
  generate->add_option("--size", gen.size)->capture_default_str();
  generate->add_option("--counts", gen.total_counts, "SPET count scale per slice")->capture_default_str();
  generate->add_option("--out", gen_out)->required();

  Overrides pre_o, train_o, eval_o, ablate_o;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "pre-train PretrainNet (reconstruction + DRF classification)");
  pre_o.add_common(*pretrain_cmd, true);

  std::string pretrained;
  bool no_pretrain = false;
  auto* train_cmd = app.add_subcommand("train", "train CPNet + RefineNet, then evaluate on the test split");
  train_o.add_common(*train_cmd, true);
  auto* pre_opt = train_cmd->add_option("--pretrained", pretrained, "PretrainNet checkpoint stem");
  train_cmd->add_flag("--no-pretrain", no_pretrain, "start CPNet from random weights")->excludes(pre_opt);

  ModelPaths eval_paths;
  std::string baseline, eval_name = "RPET";
  auto* eval_cmd = app.add_subcommand("evaluate", "score checkpoints on the test split");
  eval_o.add_common(*eval_cmd, false);
  eval_paths.add(*eval_cmd);
  eval_cmd->add_option("--baseline", baseline, "per-slice metrics CSV of a baseline model");
  eval_cmd->add_option("--name", eval_name, "model name in the report");

  ModelPaths infer_paths;
  std::string lpet_file, spet_file, infer_out;
  auto* infer_cmd = app.add_subcommand("infer", "predict RPET for one LPET slice and export PNG panels");
  infer_paths.add(*infer_cmd);
  infer_cmd->add_option("--lpet", lpet_file, "raw float32 LPET slice")->required();
  infer_cmd->add_option("--spet", spet_file, "raw float32 SPET slice for the error map");
  infer_cmd->add_option("--out", infer_out)->required();

  bool parallel = false;
  std::vector<std::uint64_t> seeds;
  auto* ablate_cmd = app.add_subcommand("ablate", "run ablation variants (a)-(d)");
  ablate_o.add_common(*ablate_cmd, true);
  ablate_o.reg(ablate_cmd->add_option("--seeds", seeds, "seed set")->delimiter(','),
               [](RunConfig&, const RunConfig&) {});
  ablate_cmd->add_flag("--parallel", parallel, "run independent variants concurrently");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    // Help for the subcommand that failed is more useful than the top level.
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return 2;
  }

  try {
    std::optional<simd::ScopedBackend> backend;
    if (!simd.empty()) backend.emplace(simd == "avx2" ? simd::Backend::Avx2 : simd::Backend::Scalar);
    if (generate->parsed()) return cmd_generate(gen, gen_out, out);
    if (pretrain_cmd->parsed()) return cmd_pretrain(pre_o.resolve(), quiet, out);
    if (train_cmd->parsed()) return cmd_train(train_o.resolve(), pretrained, no_pretrain, quiet, out);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_o.resolve(), eval_paths, baseline, eval_name, out);
    if (infer_cmd->parsed()) return cmd_infer(infer_paths, lpet_file, spet_file, infer_out, out);
    if (ablate_cmd->parsed()) {
      auto c = ablate_o.resolve();
      if (!seeds.empty()) c.seeds = seeds;
      c.validate();
      return cmd_ablate(c, parallel, quiet, out);
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mdpet::cli
