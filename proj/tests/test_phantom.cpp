#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "mdpet/io.hpp"
#include "mdpet/metrics.hpp"
#include "mdpet/phantom.hpp"

using namespace mdpet;
using namespace mdpet::phantom;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::file_hash(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("generate_activity is a deterministic function of the seed") {
  const auto a = generate_activity(7, 32);
  const auto b = generate_activity(7, 32);
  CHECK(a.pixels() == b.pixels());
  CHECK(a.height() == 32);
  CHECK(a.width() == 32);
  CHECK(generate_activity(8, 32).pixels() != a.pixels());
  for (const auto v : a.pixels()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(a.max() > 0.0);
}

TEST_CASE("generate_activity rejects sizes that do not halve four times") {
  CHECK_THROWS_AS(generate_activity(1, 20), ShapeError);
  CHECK_THROWS_AS(generate_activity(1, 8), ShapeError);
  CHECK_NOTHROW(generate_activity(1, 16));
  CHECK_NOTHROW(generate_activity(1, 64));
}

TEST_CASE("activity maps must be nonnegative with some activity") {
  CHECK_THROWS_AS(ActivityMap(2, 2, std::vector<double>(4, 0.0)), ValidationError);
  CHECK_THROWS_AS(ActivityMap(2, 2, std::vector<double>{1, -1, 0, 0}), ValidationError);
  CHECK_THROWS_AS(ActivityMap(2, 2, std::vector<double>{1, 1, 1}), ValidationError);
}

TEST_CASE("DRF labels map bijectively") {
  for (int c = 0; c < 3; ++c) CHECK(drf_class(drf_from_class(c)) == c);
  CHECK(drf_class(20) == 0);
  CHECK(drf_class(100) == 2);
  CHECK_THROWS_WITH_AS(drf_class(30), doctest::Contains("20, 50, 100"), ValidationError);
}

TEST_CASE("simulate_pair produces a valid sample") {
  const auto act = generate_activity(3, 32);
  const auto s = simulate_pair(act, 50, kDefaultTotalCounts, 99);
  CHECK(s.drf == 50);
  CHECK(s.drf_class == 1);
  CHECK(s.lpet.size() == s.spet.size());
  CHECK(*std::max_element(s.spet.begin(), s.spet.end()) == 1.0f);
  for (std::size_t i = 0; i < s.lpet.size(); ++i) {
    CHECK(s.lpet[i] >= 0.0f);
    CHECK(s.lpet[i] <= 1.0f);
  }
  CHECK(simulate_pair(act, 50, kDefaultTotalCounts, 99).lpet == s.lpet);
  CHECK_THROWS_AS(simulate_pair(act, 25, kDefaultTotalCounts, 1), ValidationError);
  CHECK_THROWS_AS(simulate_pair(act, 20, 0.0, 1), ValidationError);
}

TEST_CASE("huge count budgets make LPET converge to SPET") {
  const auto s = simulate_pair(generate_activity(5, 32), 100, 1e9, 1);
  float worst = 0;
  for (std::size_t i = 0; i < s.lpet.size(); ++i) worst = std::max(worst, std::abs(s.lpet[i] - s.spet[i]));
  CHECK(worst < 0.01f);
}

TEST_CASE("low-dose sampling is unbiased before clamping") {
  const std::vector<double> spet{0.05, 0.3, 0.7, 1.0};
  const std::size_t trials = 2000;
  for (const int drf : kDoseReductionFactors) {
    std::vector<double> mean(spet.size(), 0.0);
    for (std::size_t t = 0; t < trials; ++t) {
      const auto l = sample_low_dose(spet, drf, kDefaultTotalCounts, 1000 + t);
      for (std::size_t i = 0; i < spet.size(); ++i) mean[i] += l[i] / trials;
    }
    for (std::size_t i = 0; i < spet.size(); ++i) {
      const double sigma = std::sqrt(spet[i] * drf / kDefaultTotalCounts);
      INFO("drf " << drf << " v " << spet[i]);
      CHECK(std::abs(mean[i] - spet[i]) < 4.0 * sigma / std::sqrt(static_cast<double>(trials)));
    }
  }
}

TEST_CASE("noise grows with the dose reduction factor") {
  const auto act = generate_activity(12, 32);
  std::vector<double> mean_nmse;
  for (const int drf : kDoseReductionFactors) {
    double acc = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto s = simulate_pair(act, drf, kDefaultTotalCounts, seed);
      acc += metrics::nmse(s.lpet, s.spet);
    }
    mean_nmse.push_back(acc / 100);
  }
  CHECK(mean_nmse[0] < mean_nmse[1]);
  CHECK(mean_nmse[1] < mean_nmse[2]);
}

TEST_CASE("build_dataset writes the expected tree, deterministically") {
  DatasetOptions opt;
  opt.train_subjects = 2;
  opt.test_subjects = 1;
  opt.slices_per_subject = 4;
  opt.size = 32;
  const auto a = scratch_dir("mdpet_test_ds_a");
  const auto b = scratch_dir("mdpet_test_ds_b");
  const auto m = build_dataset(opt, a);
  build_dataset(opt, b);

  CHECK(m.subjects.size() == 3);
  const auto lpet = std::count_if(m.files.begin(), m.files.end(), [](const auto& f) { return f.kind == "lpet"; });
  const auto spet = std::count_if(m.files.begin(), m.files.end(), [](const auto& f) { return f.kind == "spet"; });
  CHECK(lpet == 36);
  CHECK(spet == 12);
  CHECK(fs::exists(a / "sub0" / "slice0_spet.f32"));
  CHECK(fs::exists(a / "sub2" / "slice3_lpet_drf100.f32"));
  CHECK(fs::file_size(a / "sub1" / "slice2_lpet_drf50.f32") == 32 * 32 * 4);
  CHECK(tree_hashes(a) == tree_hashes(b));
  CHECK_NOTHROW(validate_dataset(a, m));

  const auto loaded = load_dataset(a);
  CHECK(loaded.train.size() == 2 * 4 * 3);
  CHECK(loaded.test.size() == 1 * 4 * 3);
  const auto mem = generate_samples(opt);
  REQUIRE(mem.size() == 36);
  CHECK(mem[0].lpet == loaded.train[0].lpet);
  CHECK(mem.back().spet == loaded.test.back().spet);
  for (const auto& s : loaded.test) CHECK(s.subject_id == 2);

  fs::remove(a / "sub0" / "slice0_spet.f32");
  CHECK_THROWS(validate_dataset(a, m));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("build_dataset preconditions") {
  DatasetOptions opt;
  opt.train_subjects = 0;
  CHECK_THROWS_AS(build_dataset(opt, scratch_dir("mdpet_test_ds_c")), ValidationError);
  opt.train_subjects = 1;
  opt.size = 24;
  CHECK_THROWS_AS(build_dataset(opt, scratch_dir("mdpet_test_ds_c")), ShapeError);
}

TEST_CASE("manifest JSON round trip and split disjointness") {
  DatasetManifest m;
  m.seed = 42;
  m.image_size = 32;
  m.total_counts = 5000;
  m.drfs = {20, 50, 100};
  m.subjects = {{0, "train", 2}, {1, "test", 2}};
  m.files = {{"sub0/slice0_spet.f32", {32, 32}, "little", "spet", 0, 0, 0}};
  const auto back = DatasetManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.subjects[1].split == "test");
  CHECK_THROWS_AS(DatasetManifest::from_json("{not json"), ValidationError);
}
