#include "mdpet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "mdpet/error.hpp"

namespace mdpet::metrics {
namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const char* what, std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(what) + ": images have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " pixels");
  }
}

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  const double center = (kWindow - 1) / 2.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - center;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// 'valid' separable filtering of an h x w image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& win) {
  const std::size_t ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += win[k] * img[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) acc += win[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "n/a";
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

// Significant differences get the conventional asterisk.
std::string with_marker(double v, int precision, double p) {
  return fmt(v, precision) + (p < 0.05 ? "*" : "");
}

}  // namespace

double psnr(std::span<const float> pred, std::span<const float> target) {
  check_pair("psnr", pred, target);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(pred.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(std::span<const float> pred, std::span<const float> target, std::size_t height,
            std::size_t width) {
  check_pair("ssim", pred, target);
  if (pred.size() != height * width) {
    throw ShapeError("ssim: " + std::to_string(pred.size()) + " pixels for a " + std::to_string(height) +
                     "x" + std::to_string(width) + " image");
  }
  if (height < kWindow || width < kWindow) {
    throw ShapeError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than the 11x11 window");
  }
  const auto win = gaussian_window();
  std::vector<double> x(pred.begin(), pred.end()), y(target.begin(), target.end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, height, width, win);
  const auto my = filter_valid(y, height, width, win);
  const auto exx = filter_valid(xx, height, width, win);
  const auto eyy = filter_valid(yy, height, width, win);
  const auto exy = filter_valid(xy, height, width, win);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = exx[i] - mx[i] * mx[i];
    const double vy = eyy[i] - my[i] * my[i];
    const double cxy = exy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
  }
  return total / static_cast<double>(mx.size());
}

double nmse(std::span<const float> pred, std::span<const float> target) {
  check_pair("nmse", pred, target);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double t = target[i];
    const double d = static_cast<double>(pred[i]) - t;
    num += d * d;
    den += t * t;
  }
  if (den == 0.0) throw ValidationError("nmse: target image has zero energy");
  return num / den;
}

double accuracy(const Tensor<float>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + format_shape(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data().data() + i * m;
    const auto best = static_cast<int>(std::max_element(row, row + m) - row);
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0.0)) throw ValidationError("student_t_two_sided: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("paired_t_test: samples have " + std::to_string(a.size()) + " and " +
                          std::to_string(b.size()) + " values");
  }
  if (a.size() < 2) throw ValidationError("paired_t_test: needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = mean_of(d);
  const double sd = sample_std(d);
  if (sd == 0.0) {
    throw ValidationError("paired_t_test: differences have zero variance, p-value undefined");
  }
  const double n = static_cast<double>(d.size());
  const double t = mean * std::sqrt(n) / sd;
  return {t, student_t_two_sided(t, n - 1.0)};
}

const ReportRow& MetricsReport::row(int drf) const {
  for (const auto& r : rows) {
    if (r.drf == drf) return r;
  }
  throw ValidationError("report has no row for DRF " + std::to_string(drf));
}

double MetricsReport::mean_psnr() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_mean;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

MetricsReport aggregate(const std::string& model, std::span<const SliceMetrics> slices,
                        const std::vector<SliceMetrics>* baseline, const std::string& baseline_name) {
  MetricsReport report;
  report.model = model;
  if (baseline) report.baseline = baseline_name.empty() ? "baseline" : baseline_name;

  std::map<int, std::vector<const SliceMetrics*>, std::greater<>> by_drf;
  for (const auto& s : slices) by_drf[s.drf].push_back(&s);

  std::map<std::tuple<int, int, int>, const SliceMetrics*> base_index;
  if (baseline) {
    for (const auto& s : *baseline) base_index[{s.subject_id, s.slice_index, s.drf}] = &s;
  }

  for (const auto& [drf, group] : by_drf) {
    ReportRow row;
    row.drf = drf;
    row.n_slices = group.size();
    std::vector<double> ps, ss, ns;
    for (const auto* s : group) {
      if (std::isinf(s->psnr)) {
        ++row.psnr_infinite;
      } else {
        ps.push_back(s->psnr);
      }
      ss.push_back(s->ssim);
      ns.push_back(s->nmse);
    }
    row.psnr_mean = ps.empty() ? std::numeric_limits<double>::infinity() : mean_of(ps);
    row.psnr_std = sample_std(ps);
    row.ssim_mean = mean_of(ss);
    row.ssim_std = sample_std(ss);
    row.nmse_mean = mean_of(ns);
    row.nmse_std = sample_std(ns);

    if (baseline) {
      std::vector<double> a_p, b_p, a_s, b_s, a_n, b_n;
      for (const auto* s : group) {
        const auto it = base_index.find({s->subject_id, s->slice_index, s->drf});
        if (it == base_index.end()) continue;
        if (!std::isinf(s->psnr) && !std::isinf(it->second->psnr)) {
          a_p.push_back(s->psnr);
          b_p.push_back(it->second->psnr);
        }
        a_s.push_back(s->ssim);
        b_s.push_back(it->second->ssim);
        a_n.push_back(s->nmse);
        b_n.push_back(it->second->nmse);
      }
      const auto p_or_nan = [](const std::vector<double>& x, const std::vector<double>& y) {
        try {
          return paired_t_test(x, y).p;
        } catch (const ValidationError&) {
          return std::numeric_limits<double>::quiet_NaN();
        }
      };
      row.p_values = PValues{p_or_nan(a_p, b_p), p_or_nan(a_s, b_s), p_or_nan(a_n, b_n)};
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string format_table(std::span<const MetricsReport> reports) {
  std::vector<int> drfs;
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      if (std::find(drfs.begin(), drfs.end(), row.drf) == drfs.end()) drfs.push_back(row.drf);
    }
  }
  std::sort(drfs.begin(), drfs.end(), std::greater<>());

  std::size_t name_w = 12;
  for (const auto& r : reports) name_w = std::max(name_w, r.model.size() + 2);
  constexpr int kCol = 10;

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "Model";
  for (const int drf : drfs) {
    out << "| " << std::left << std::setw(3 * kCol) << ("DRF=" + std::to_string(drf));
  }
  out << "\n" << std::setw(static_cast<int>(name_w)) << "";
  for (std::size_t i = 0; i < drfs.size(); ++i) {
    out << "| " << std::setw(kCol) << "PSNR" << std::setw(kCol) << "SSIM" << std::setw(kCol) << "NMSE";
  }
  out << "\n" << std::string(name_w + drfs.size() * (3 * kCol + 2), '-') << "\n";

  std::vector<std::string> footnotes;
  for (const auto& r : reports) {
    out << std::setw(static_cast<int>(name_w)) << r.model;
    for (const int drf : drfs) {
      const auto it = std::find_if(r.rows.begin(), r.rows.end(), [drf](const ReportRow& x) { return x.drf == drf; });
      if (it == r.rows.end()) {
        out << "| " << std::setw(3 * kCol) << "-";
        continue;
      }
      const double pp = it->p_values ? it->p_values->psnr : 1.0;
      const double sp = it->p_values ? it->p_values->ssim : 1.0;
      const double np = it->p_values ? it->p_values->nmse : 1.0;
      out << "| " << std::setw(kCol) << with_marker(it->psnr_mean, 3, pp)
          << std::setw(kCol) << with_marker(it->ssim_mean, 3, sp) << std::setw(kCol)
          << with_marker(it->nmse_mean, 4, np);
      if (it->psnr_infinite > 0) {
        footnotes.push_back(r.model + " DRF=" + std::to_string(drf) + ": " +
                            std::to_string(it->psnr_infinite) + " slice(s) with infinite PSNR excluded");
      }
    }
    out << "\n";
  }
  bool any_p = false;
  for (const auto& r : reports) any_p = any_p || !r.baseline.empty();
  if (any_p) out << "* p < 0.05 in a paired t-test against the baseline\n";
  for (const auto& f : footnotes) out << "note: " << f << "\n";
  return out.str();
}

std::string to_csv(std::span<const MetricsReport> reports) {
  bool any_p = false;
  for (const auto& r : reports) any_p = any_p || !r.baseline.empty();
  std::ostringstream out;
  out << "model,drf,n,psnr_mean,psnr_std,ssim_mean,ssim_std,nmse_mean,nmse_std,psnr_inf";
  if (any_p) out << ",baseline,p_psnr,p_ssim,p_nmse";
  out << "\n" << std::setprecision(10);
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      out << r.model << ',' << row.drf << ',' << row.n_slices << ',' << row.psnr_mean << ','
          << row.psnr_std << ',' << row.ssim_mean << ',' << row.ssim_std << ',' << row.nmse_mean << ','
          << row.nmse_std << ',' << row.psnr_infinite;
      if (any_p) {
        if (row.p_values) {
          out << ',' << r.baseline << ',' << row.p_values->psnr << ',' << row.p_values->ssim << ','
              << row.p_values->nmse;
        } else {
          out << ",,,,";
        }
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string slices_to_csv(std::span<const SliceMetrics> slices) {
  std::ostringstream out;
  out << "subject,slice,drf,psnr,ssim,nmse\n" << std::setprecision(17);
  for (const auto& s : slices) {
    out << s.subject_id << ',' << s.slice_index << ',' << s.drf << ',' << s.psnr << ',' << s.ssim
        << ',' << s.nmse << "\n";
  }
  return out.str();
}

std::vector<SliceMetrics> slices_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject,slice,drf,psnr,ssim,nmse", 0) != 0) {
    throw ValidationError("per-slice metrics: missing header 'subject,slice,drf,psnr,ssim,nmse'");
  }
  std::vector<SliceMetrics> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string f[6];
    for (auto& s : f) {
      if (!std::getline(fields, s, ',')) {
        throw ValidationError("per-slice metrics line " + std::to_string(lineno) + ": expected 6 fields");
      }
    }
    try {
      out.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]),
                     std::stod(f[5])});
    } catch (const std::exception&) {
      throw ValidationError("per-slice metrics line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace mdpet::metrics
