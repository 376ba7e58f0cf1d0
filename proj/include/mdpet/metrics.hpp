#pragma once
// Image-quality metrics on [0, 1] images, classification accuracy, the
// paired t-test, and per-DRF aggregation into report tables.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdpet/tensor.hpp"

namespace mdpet::metrics {

/// 10 log10(1 / mse) with data range 1. Identical images give +infinity.
double psnr(std::span<const float> pred, std::span<const float> target);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, averaged over all fully contained window positions.
double ssim(std::span<const float> pred, std::span<const float> target, std::size_t height,
            std::size_t width);

/// sum (pred - target)^2 / sum target^2.
double nmse(std::span<const float> pred, std::span<const float> target);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor<float>& logits, std::span<const int> labels);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with dof degrees of freedom.
double student_t_two_sided(double t, double dof);

struct TTestResult {
  double t;
  double p;
};

/// Paired two-sided t-test on a - b. Throws ValidationError for unequal
/// lengths, n < 2 or zero-variance differences.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct SliceMetrics {
  int subject_id = 0;
  int slice_index = 0;
  int drf = 0;
  double psnr = 0;
  double ssim = 0;
  double nmse = 0;
};

struct PValues {
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double nmse = std::numeric_limits<double>::quiet_NaN();
};

struct ReportRow {
  int drf = 0;
  double psnr_mean = 0, psnr_std = 0;
  double ssim_mean = 0, ssim_std = 0;
  double nmse_mean = 0, nmse_std = 0;
  std::size_t n_slices = 0;
  std::size_t psnr_infinite = 0;  // slices left out of the PSNR statistics
  std::optional<PValues> p_values;
};

struct MetricsReport {
  std::string model;
  std::string baseline;  // empty when no t-tests were run
  std::vector<ReportRow> rows;  // descending DRF

  const ReportRow& row(int drf) const;
  /// Mean of psnr_mean over rows.
  double mean_psnr() const;
};

/// Groups per-slice values by DRF. When a baseline is given, slices are
/// paired by (subject, slice, drf) and every metric gets a paired t-test p-value.
MetricsReport aggregate(const std::string& model, std::span<const SliceMetrics> slices,
                        const std::vector<SliceMetrics>* baseline = nullptr,
                        const std::string& baseline_name = {});

/// Aligned plain-text table: one line per model, three metrics per DRF group.
std::string format_table(std::span<const MetricsReport> reports);

/// model,drf,n,psnr_mean,psnr_std,ssim_mean,ssim_std,nmse_mean,nmse_std,psnr_inf[,p_psnr,p_ssim,p_nmse]
std::string to_csv(std::span<const MetricsReport> reports);

/// subject,slice,drf,psnr,ssim,nmse
std::string slices_to_csv(std::span<const SliceMetrics> slices);
std::vector<SliceMetrics> slices_from_csv(const std::string& text);

}  // namespace mdpet::metrics
