#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "mdpet/cli.hpp"
#include "mdpet/io.hpp"
#include "mdpet/phantom.hpp"
#include "mdpet/png.hpp"

using namespace mdpet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh(const char* name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

// 2 train / 1 test subjects of 16x16 slices: seconds, not minutes.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    auto d = fresh("mdpet_cli_data");
    const auto r = run({"generate", "--out", d.string(), "--train-subjects", "2", "--test-subjects", "1",
                        "--slices", "2", "--size", "16", "--seed", "3"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::vector<std::string> tiny_flags() {
  return {"-q", "--data", tiny_data().string(), "--epochs", "2", "--pretrain-epochs", "2", "--base-channels", "2",
          "--batch-size", "4", "--lr", "1e-3"};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("generate writes a manifest") {
  CHECK(fs::exists(tiny_data() / "manifest.json"));
  CHECK(fs::exists(tiny_data() / "sub2" / "slice1_lpet_drf100.f32"));
}

TEST_CASE("bad arguments exit with 2") {
  CHECK(run({"generate", "--out", fresh("mdpet_cli_bad").string(), "--size", "20"}).code == 2);
  CHECK(run({"generate"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"train", "--data", tiny_data().string(), "--out", "x"}).code == 2);  // no pretrain choice
  CHECK(run({"pretrain", "--data", fresh("mdpet_cli_nodata").string(), "--out", "x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("run configuration JSON") {
  cli::RunConfig c;
  c.seed = 7;
  c.lambda = 0.5;
  c.use_refinenet = false;
  CHECK(cli::RunConfig::from_json(c.to_json()) == c);
  CHECK_THROWS_AS(cli::RunConfig::from_json(R"({"sede": 3})"), ValidationError);
  CHECK_THROWS_AS(cli::RunConfig::from_json(R"({"seed": "three"})"), ValidationError);

  const auto path = fresh("mdpet_cli_cfg.json");
  io::write_text(path, R"({"epochs": 0})");
  CHECK(run({"pretrain", "--config", path.string(), "--data", tiny_data().string(), "--out", "x"}).code == 2);
  fs::remove(path);
}

TEST_CASE("pretrain, train, evaluate and infer on a tiny dataset") {
  const auto root = fresh("mdpet_cli_run");
  const auto pre_dir = root / "pre", train_dir = root / "train", eval_dir = root / "eval";
  CHECK(run(with(tiny_flags(), {"--out", pre_dir.string()})).code == 2);  // no subcommand
  auto r = run(with({"pretrain"}, with(tiny_flags(), {"--out", pre_dir.string()})));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"config.json", "pretrain.json", "pretrain.f32", "pretrain_log.csv", "pretrain_accuracy.json"}) {
    CHECK(fs::exists(pre_dir / f));
  }

  r = run(with({"train"}, with(tiny_flags(), {"--out", train_dir.string(), "--pretrained", (pre_dir / "pretrain").string()})));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"cpnet.json", "refinenet.json", "train_log.csv", "report.txt", "report.csv", "slices.csv"}) {
    CHECK(fs::exists(train_dir / f));
  }
  const auto report = io::read_text(train_dir / "report.csv");
  CHECK(report.find("LPET,") != std::string::npos);
  CHECK(report.find("RPET,") != std::string::npos);

  // Evaluating the same checkpoints reproduces the training-time slice metrics.
  r = run({"evaluate", "--data", tiny_data().string(), "--run", train_dir.string(), "--out", eval_dir.string(),
           "--baseline", (train_dir / "slices.csv").string(), "--name", "again"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(io::read_text(eval_dir / "slices.csv") == io::read_text(train_dir / "slices.csv"));
  CHECK(io::read_text(eval_dir / "report.csv").find("p_psnr") != std::string::npos);

  const auto infer_dir = root / "infer";
  const auto lpet = tiny_data() / "sub2" / "slice0_lpet_drf100.f32";
  r = run({"infer", "--run", train_dir.string(), "--lpet", lpet.string(), "--spet",
           (tiny_data() / "sub2" / "slice0_spet.f32").string(), "--out", infer_dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"rpet.f32", "lpet.png", "coarse.png", "residual.png", "rpet.png", "spet.png", "error.png"}) {
    CHECK(fs::exists(infer_dir / f));
  }
  std::size_t w = 0, h = 0;
  CHECK(png::read_gray8(infer_dir / "rpet.png", w, h).size() == 256);
  CHECK(w == 16);

  // Without RefineNet the residual is zero and renders as mid-gray.
  const auto solo = root / "solo";
  r = run({"infer", "--cpnet", (train_dir / "cpnet").string(), "--lpet", lpet.string(), "--out", solo.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const auto v : png::read_gray8(solo / "residual.png", w, h)) CHECK(v == 128);
  CHECK(io::read_f32(solo / "rpet.f32", 256) == io::read_f32(solo / "coarse.f32", 256));

  const auto odd = root / "odd.f32";
  io::write_f32(odd, std::vector<float>(3, 0.5f));
  CHECK(run({"infer", "--run", train_dir.string(), "--lpet", odd.string(), "--out", solo.string()}).code == 2);
  fs::remove_all(root);
}

TEST_CASE("train from scratch without RefineNet") {
  const auto dir = fresh("mdpet_cli_scratch");
  const auto r = run(with({"train"}, with(tiny_flags(), {"--out", dir.string(), "--no-pretrain", "--no-refinenet"})));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(dir / "cpnet.json"));
  CHECK_FALSE(fs::exists(dir / "refinenet.json"));
  CHECK(io::read_text(dir / "report.csv").find("CPNet,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("generate is reproducible byte for byte") {
  const auto a = fresh("mdpet_cli_gen_a"), b = fresh("mdpet_cli_gen_b");
  const std::vector<std::string> flags{"--train-subjects", "1", "--test-subjects", "1", "--slices", "2", "--size", "16"};
  REQUIRE(run(with({"generate", "--out", a.string()}, flags)).code == 0);
  REQUIRE(run(with({"generate", "--out", b.string()}, flags)).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(io::file_hash(e.path()) == io::file_hash(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 1 + 2 * 2 * 4);
  CHECK_NOTHROW(phantom::load_dataset(a));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("ablate writes the four-variant table") {
  const auto dir = fresh("mdpet_cli_ablate");
  const auto r = run(with({"ablate"}, with(tiny_flags(), {"--out", dir.string(), "--seeds", "1"})));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto table = io::read_text(dir / "ablation.txt");
  for (const auto* name : cli::kVariantNames) CHECK(table.find(name) != std::string::npos);
  for (const char* group : {"DRF=100", "DRF=50", "DRF=20"}) CHECK(table.find(group) != std::string::npos);
  const auto csv = io::read_text(dir / "ablation.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 5 * 3);  // header, LPET + 4 variants per DRF

  // Variant (b) pre-trains on reconstruction only: lambda is 1 at every epoch.
  std::istringstream log(io::read_text(dir / "seed1" / "pretrain_recon_log.csv"));
  std::string line;
  std::getline(log, line);
  int epochs = 0;
  while (std::getline(log, line)) {
    ++epochs;
    CHECK(line.substr(line.find(',') + 1, 2) == "1,");
  }
  CHECK(epochs == 2);
  CHECK(fs::exists(dir / "seed1" / "d" / "refinenet.json"));
  fs::remove_all(dir);
}
