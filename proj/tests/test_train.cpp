#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mdpet/evaluate.hpp"
#include "mdpet/nn/loss.hpp"
#include "mdpet/train.hpp"

using namespace mdpet;
using namespace mdpet::train;

namespace {

std::vector<SliceSample> tiny_dataset() {
  phantom::DatasetOptions opt;
  opt.train_subjects = 2;
  opt.test_subjects = 1;
  opt.slices_per_subject = 2;
  opt.size = 16;
  return phantom::generate_samples(opt);
}

TrainConfig tiny_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.base_channels = 2;
  c.batch_size = 4;
  c.lr = 1e-2;
  return c;
}

Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(b), 1e-300); }

}  // namespace

TEST_CASE("lambda schedule endpoints and ramp") {
  CHECK(lambda_schedule(0, 30) == 0.0);
  CHECK(lambda_schedule(29, 30) == 1.0);
  CHECK(lambda_schedule(0, 1) == 1.0);
  CHECK(lambda_schedule(1, 3) == 0.5);
  for (int e = 1; e < 30; ++e) CHECK(lambda_schedule(e, 30) > lambda_schedule(e - 1, 30));
  CHECK_THROWS_AS(lambda_schedule(30, 30), ValidationError);
  CHECK_THROWS_AS(lambda_schedule(-1, 30), ValidationError);
  CHECK_THROWS_AS(lambda_schedule(0, 0), ValidationError);
}

TEST_CASE("pretrain loss endpoints") {
  std::mt19937_64 rng(1);
  const auto recon = random_tensor({2, 1, 4, 4}, rng), lpet = random_tensor({2, 1, 4, 4}, rng);
  const auto logits = random_tensor({2, 3}, rng);
  const auto labels = nn::one_hot<double>(std::vector<int>{0, 2}, 3);
  const double mse = nn::mse_loss(recon, lpet).value;
  const double ce = nn::softmax_cross_entropy(logits, labels).value;

  const auto only_ce = pretrain_loss(recon, lpet, logits, labels, 0.0);
  CHECK(rel_close(only_ce.total, ce, 1e-12));
  for (const auto g : only_ce.grad_recon.data()) CHECK(g == 0.0);
  const auto only_mse = pretrain_loss(recon, lpet, logits, labels, 1.0);
  CHECK(rel_close(only_mse.total, mse, 1e-12));
  for (const auto g : only_mse.grad_logits.data()) CHECK(g == 0.0);
  const auto mid = pretrain_loss(recon, lpet, logits, labels, 0.25);
  CHECK(rel_close(mid.total, 0.25 * mse + 0.75 * ce, 1e-12));
  CHECK_THROWS_AS(pretrain_loss(recon, lpet, logits, labels, 1.5), ValidationError);
}

TEST_CASE("prediction loss is additive in beta") {
  std::mt19937_64 rng(2);
  const auto coarse = random_tensor({2, 1, 4, 4}, rng), spet = random_tensor({2, 1, 4, 4}, rng);
  const auto residual = random_tensor({2, 1, 4, 4}, rng);
  Tensor<double> r(spet.shape());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = spet[i] - coarse[i];
  const double l_cp = nn::l1_loss(coarse, spet).value, l_ref = nn::l1_loss(residual, r).value;
  for (const double beta : {0.0, 0.5, 1.0, 3.0}) {
    const auto l = prediction_losses(coarse, spet, residual, beta, true);
    CHECK(rel_close(l.cpnet, l_cp, 1e-12));
    CHECK(rel_close(l.refinenet, l_ref, 1e-12));
    CHECK(rel_close(l.total, l.cpnet + beta * l.refinenet, 1e-12));
  }
  CHECK(prediction_losses(coarse, spet, residual, 0.0, true).total == l_cp);
}

TEST_CASE("detaching the residual target isolates CPNet's gradient") {
  std::mt19937_64 rng(3);
  const auto coarse = random_tensor({1, 1, 4, 4}, rng), spet = random_tensor({1, 1, 4, 4}, rng);
  const auto residual = random_tensor({1, 1, 4, 4}, rng);
  const auto detached = prediction_losses(coarse, spet, residual, 1.0, true);
  const auto attached = prediction_losses(coarse, spet, residual, 1.0, false);
  const auto cp_only = nn::l1_loss(coarse, spet).grad;
  CHECK(detached.grad_coarse == cp_only);
  CHECK_FALSE(attached.grad_coarse == cp_only);
  CHECK(detached.grad_residual == attached.grad_residual);
  CHECK(detached.total == attached.total);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(10, 1, 0, true);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  CHECK(epoch_order(10, 1, 0, true) == a);
  CHECK_FALSE(epoch_order(10, 1, 1, true) == a);
  CHECK(epoch_order(4, 1, 3, false) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("stacking samples") {
  const auto data = tiny_dataset();
  const std::vector<std::size_t> idx{3, 0};
  const auto t = stack_lpet(data, idx);
  CHECK(t.shape() == Shape{2, 1, 16, 16});
  CHECK(std::equal(data[3].lpet.begin(), data[3].lpet.end(), t.data().begin()));
  CHECK(std::equal(data[0].spet.begin(), data[0].spet.end(), stack_spet(data, idx).data().begin() + 256));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.beta = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = TrainConfig{};
  c.lambda_override = 2.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("pretraining fits a tiny set and is reproducible") {
  const auto data = tiny_dataset();
  auto cfg = tiny_config(15);
  cfg.lambda_override = 1.0;
  const auto a = run_pretrain(data, cfg);
  REQUIRE(a.logs.size() == 15);
  CHECK(a.logs.back().mse < 0.5 * a.logs.front().mse);
  const auto b = run_pretrain(data, cfg);
  CHECK(a.params == b.params);
  CHECK(infer_config(a.params, 16) == models::EncoderDecoderConfig::pretrain_net(2, 16));

  cfg.epochs = 20;
  cfg.lambda_override = 0.0;
  cfg.lr = 3e-3;  // 1e-2 is too noisy for the classifier at batch 4
  const auto cls = run_pretrain(data, cfg);
  CHECK(cls.logs.back().ce < cls.logs.front().ce);
  CHECK(logs_to_csv(cls.logs).starts_with("epoch,lambda,mse,ce,acc,l_cp,l_refine,total,seconds\n"));
}

TEST_CASE("pretraining needs every dose class") {
  auto data = tiny_dataset();
  std::erase_if(data, [](const SliceSample& s) { return s.drf == 50; });
  CHECK_THROWS_AS(run_pretrain(data, tiny_config(1)), ValidationError);
}

TEST_CASE("phase two starts from the pretrained encoder and moves it") {
  const auto data = tiny_dataset();
  const auto pre = run_pretrain(data, tiny_config(2));
  auto cfg = tiny_config(1);
  cfg.batch_size = static_cast<int>(data.size());  // exactly one optimizer step

  cfg.lr = 1e-30;  // a step this small cannot change a float32 weight
  const auto still = run_prediction_phase(data, &pre.params, cfg);
  const auto still_enc = still.cpnet.with_prefix("enc.");
  for (const auto& e : still_enc.entries()) {
    if (e.name.find("running_") == std::string::npos) CHECK(e.tensor == pre.params.at(e.name));
  }

  cfg.lr = 1e-2;
  const auto moved = run_prediction_phase(data, &pre.params, cfg);
  REQUIRE(moved.refinenet.has_value());
  std::size_t changed = 0;
  const auto moved_enc = moved.cpnet.with_prefix("enc.");
  for (const auto& e : moved_enc.entries()) changed += e.tensor != pre.params.at(e.name);
  CHECK(changed > 0);

  cfg.freeze_encoder = true;
  const auto frozen = run_prediction_phase(data, &pre.params, cfg);
  const auto frozen_enc = frozen.cpnet.with_prefix("enc.");
  for (const auto& e : frozen_enc.entries()) {
    if (e.name.find("running_") == std::string::npos) CHECK(e.tensor == pre.params.at(e.name));
  }
}

TEST_CASE("phase two learns and is reproducible") {
  const auto data = tiny_dataset();
  auto cfg = tiny_config(12);
  const auto a = run_prediction_phase(data, nullptr, cfg);
  CHECK(a.logs.back().cpnet_l1 < a.logs.front().cpnet_l1);
  const auto b = run_prediction_phase(data, nullptr, cfg);
  CHECK(a.cpnet == b.cpnet);
  CHECK(*a.refinenet == *b.refinenet);

  cfg.use_refinenet = false;
  cfg.epochs = 1;
  const auto solo = run_prediction_phase(data, nullptr, cfg);
  CHECK_FALSE(solo.refinenet.has_value());
  CHECK(solo.logs[0].refinenet_l1 == 0.0);
}

TEST_CASE("prediction loss worked values") {
  Tensor<double> spet({1, 1, 2, 2}, std::vector<double>{0.2, 0.4, 0.6, 0.8});
  const Tensor<double> zero(spet.shape());
  CHECK(prediction_losses(spet, spet, zero, 1.0, true).total == 0.0);
  Tensor<double> off(spet);
  for (auto& v : off.data()) v += 0.1;
  CHECK(prediction_losses(off, spet, zero, 1.0, true).total == doctest::Approx(0.2).epsilon(1e-12));
}

namespace {

// Eight samples of one subject covering all three dose classes.
std::vector<SliceSample> eight_samples() {
  phantom::DatasetOptions opt;
  opt.train_subjects = 1;
  opt.test_subjects = 1;
  opt.slices_per_subject = 3;
  opt.size = 32;
  auto s = phantom::generate_samples(opt);
  s.resize(8);
  return s;
}

}  // namespace

TEST_CASE("pretraining overfits eight samples with the ramped lambda") {
  const auto s = eight_samples();
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.base_channels = 8;
  cfg.lr = 1e-3;
  const auto r = run_pretrain(s, cfg);
  CHECK(r.logs.front().lambda == 0.0);
  CHECK(r.logs.back().lambda == 1.0);
  double best = 0;
  for (const auto& l : r.logs) best = std::max(best, l.accuracy);
  CHECK(best >= 0.9);
  const auto again = run_pretrain(s, cfg);
  for (std::size_t i = 0; i < r.logs.size(); ++i) CHECK(r.logs[i].total == again.logs[i].total);
}

TEST_CASE("phase two overfits eight samples") {
  const auto s = eight_samples();
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.base_channels = 16;
  const auto r = run_prediction_phase(s, nullptr, cfg);
  CHECK(r.logs.back().total < 0.1 * r.logs.front().total);
}

TEST_CASE("after fitting, RPET beats the LPET input on the training samples") {
  const auto s = eight_samples();
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 4;
  cfg.base_channels = 16;
  const auto r = run_prediction_phase(s, nullptr, cfg);
  const auto e = evaluate::evaluate_model("fit", r.cpnet, &*r.refinenet, s);
  const auto lpet = metrics::aggregate("LPET", evaluate::score_lpet(s));
  for (const auto& row : e.report.rows) CHECK(row.psnr_mean > lpet.row(row.drf).psnr_mean);
}
