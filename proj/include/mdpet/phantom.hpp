#pragma once
// Synthetic brain-like activity maps and count-domain Poisson dose reduction,
// written to disk as raw float32 slices plus a JSON manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mdpet::phantom {

inline constexpr std::array<int, 3> kDoseReductionFactors{20, 50, 100};
inline constexpr double kDefaultTotalCounts = 5.0e3;

/// Index of drf in {20, 50, 100}; throws ValidationError otherwise.
int drf_class(int drf);
int drf_from_class(int cls);

/// Nonnegative 2D activity with at least one positive pixel.
class ActivityMap {
 public:
  /// Throws ValidationError when the invariants do not hold.
  ActivityMap(std::size_t height, std::size_t width, std::vector<double> pixels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const std::vector<double>& pixels() const { return pixels_; }
  double max() const;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> pixels_;
};

struct SliceSample {
  std::size_t size = 0;     // square side
  std::vector<float> lpet;  // [0, 1]
  std::vector<float> spet;  // [0, 1], max 1
  int drf = 20;
  int drf_class = 0;
  int subject_id = 0;
  int slice_index = 0;
};

/// Deterministic in seed: a blurred background ellipse holding 3-8 hot or
/// cold elliptical regions, values in [0, 1]. size must be a positive
/// multiple of 16.
ActivityMap generate_activity(std::uint64_t seed, std::size_t size);

/// SPET = activity / max(activity). Expected counts spet * total_counts / drf
/// per pixel are Poisson-sampled and mapped back as k * drf / total_counts.
/// Without clamping the result is unbiased; simulate_pair clamps to [0, 1].
std::vector<double> sample_low_dose(const std::vector<double>& spet, int drf, double total_counts,
                                    std::uint64_t seed);

SliceSample simulate_pair(const ActivityMap& activity, int drf, double total_counts,
                          std::uint64_t seed);

struct DatasetOptions {
  std::uint64_t seed = 2024;
  int train_subjects = 8;
  int test_subjects = 4;
  int slices_per_subject = 32;
  std::size_t size = 32;
  double total_counts = kDefaultTotalCounts;
};

struct TensorFileEntry {
  std::string path;  // relative to the dataset root
  std::vector<std::size_t> shape;
  std::string byte_order = "little";
  std::string kind;  // "spet" or "lpet"
  int subject_id = 0;
  int slice_index = 0;
  int drf = 0;       // 0 for SPET
};

struct SubjectRecord {
  int id = 0;
  std::string split;  // "train" | "test"
  int slices = 0;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::size_t image_size = 0;
  double total_counts = 0;
  std::vector<int> drfs;
  std::vector<SubjectRecord> subjects;
  std::vector<TensorFileEntry> files;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

inline constexpr const char* kManifestName = "manifest.json";

/// Every (subject, slice, DRF) sample in memory, train subjects first.
/// Subject ids are 0..train+test-1.
std::vector<SliceSample> generate_samples(const DatasetOptions& options);

/// Writes `<out>/sub<id>/slice<k>_spet.f32`, `..._lpet_drf<d>.f32` and
/// `<out>/manifest.json`. Byte-identical for identical options.
DatasetManifest build_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir);

/// Re-checks the manifest invariants against the files on disk.
void validate_dataset(const std::filesystem::path& root, const DatasetManifest& manifest);

struct Dataset {
  DatasetManifest manifest;
  std::vector<SliceSample> train;
  std::vector<SliceSample> test;
};

/// Loads and validates `<root>/manifest.json` and every referenced slice.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace mdpet::phantom
