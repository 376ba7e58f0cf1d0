#include "mdpet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <map>
#include <set>

#include <json.hpp>

#include "mdpet/error.hpp"
#include "mdpet/io.hpp"

namespace mdpet::phantom {
namespace {

using json = nlohmann::ordered_json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t subject, std::uint64_t slice,
                          std::uint64_t stream) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ subject);
  h = splitmix64(h ^ (slice << 20));
  return splitmix64(h ^ (stream << 40));
}

struct Ellipse {
  double cx, cy, a, b, theta;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }
};

std::vector<double> gaussian_blur(const std::vector<double>& img, std::size_t n, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= sum;

  const auto clampi = [n](long i) { return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1)); };
  std::vector<double> tmp(n * n), out(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * img[y * n + clampi(static_cast<long>(x) + k)];
      }
      tmp[y * n + x] = acc;
    }
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[clampi(static_cast<long>(y) + k) * n + x];
      }
      out[y * n + x] = acc;
    }
  }
  return out;
}

void check_size(std::size_t size) {
  if (size < 16 || size % 16 != 0) {
    throw ShapeError("image size " + std::to_string(size) +
                     " is invalid: it must be a positive multiple of 16 so four stride-2 "
                     "halvings are exact");
  }
}

std::string rel_path(int subject, const std::string& leaf) {
  return "sub" + std::to_string(subject) + "/" + leaf;
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

int drf_class(int drf) {
  for (std::size_t i = 0; i < kDoseReductionFactors.size(); ++i) {
    if (kDoseReductionFactors[i] == drf) return static_cast<int>(i);
  }
  throw ValidationError("dose reduction factor " + std::to_string(drf) +
                        " is not one of {20, 50, 100}");
}

int drf_from_class(int cls) {
  if (cls < 0 || cls >= static_cast<int>(kDoseReductionFactors.size())) {
    throw ValidationError("DRF class " + std::to_string(cls) + " is not one of {0, 1, 2}");
  }
  return kDoseReductionFactors[static_cast<std::size_t>(cls)];
}

ActivityMap::ActivityMap(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height_ == 0 || width_ == 0 || pixels_.size() != height_ * width_) {
    throw ShapeError("activity map: " + std::to_string(pixels_.size()) + " pixels for " +
                     std::to_string(height_) + "x" + std::to_string(width_));
  }
  bool positive = false;
  for (const double p : pixels_) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw ValidationError("activity map: pixel values must be finite and nonnegative");
    }
    positive = positive || p > 0.0;
  }
  if (!positive) throw ValidationError("activity map: at least one pixel must be positive");
}

double ActivityMap::max() const { return *std::max_element(pixels_.begin(), pixels_.end()); }

ActivityMap generate_activity(std::uint64_t seed, std::size_t size) {
  check_size(size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const Ellipse head{uniform(-0.05, 0.05), uniform(-0.05, 0.05), uniform(0.70, 0.85),
                     uniform(0.80, 0.92), uniform(-0.3, 0.3)};
  const Ellipse inner{head.cx, head.cy, head.a * 0.86, head.b * 0.88, head.theta};
  const double background = uniform(0.35, 0.5);
  const double cortex = uniform(0.15, 0.3);

  const int regions = 3 + static_cast<int>(rng() % 6);
  std::vector<std::pair<Ellipse, double>> blobs;
  for (int r = 0; r < regions; ++r) {
    const double radius = 0.55 * std::sqrt(unit(rng));
    const double angle = uniform(0.0, 2.0 * std::numbers::pi);
    Ellipse e{head.cx + radius * head.a * std::cos(angle), head.cy + radius * head.b * std::sin(angle),
              uniform(0.06, 0.22), uniform(0.06, 0.22), uniform(0.0, std::numbers::pi)};
    const bool hot = unit(rng) < 0.6;
    const double amplitude = hot ? uniform(0.3, 0.6) : -uniform(0.15, 0.3);
    blobs.emplace_back(e, amplitude);
  }

  std::vector<double> img(size * size, 0.0);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      const double x = (static_cast<double>(px) + 0.5) / static_cast<double>(size) * 2.0 - 1.0;
      const double y = (static_cast<double>(py) + 0.5) / static_cast<double>(size) * 2.0 - 1.0;
      if (!head.contains(x, y)) continue;
      double v = background;
      if (!inner.contains(x, y)) v += cortex;
      for (const auto& [e, amp] : blobs) {
        if (e.contains(x, y)) v += amp;
      }
      img[py * size + px] = std::max(v, 0.0);
    }
  }
  img = gaussian_blur(img, size, 0.8);
  const double mx = *std::max_element(img.begin(), img.end());
  for (auto& v : img) v = std::max(v, 0.0) / mx;
  return ActivityMap(size, size, std::move(img));
}

std::vector<double> sample_low_dose(const std::vector<double>& spet, int drf, double total_counts,
                                    std::uint64_t seed) {
  drf_class(drf);
  if (!(total_counts > 0.0) || !std::isfinite(total_counts)) {
    throw ValidationError("total_counts must be positive and finite");
  }
  std::mt19937_64 rng(seed);
  const double per_count = static_cast<double>(drf) / total_counts;
  std::vector<double> out(spet.size(), 0.0);
  for (std::size_t i = 0; i < spet.size(); ++i) {
    const double expected = spet[i] * total_counts / static_cast<double>(drf);
    if (expected <= 0.0) continue;
    std::poisson_distribution<long long> counts(expected);
    out[i] = static_cast<double>(counts(rng)) * per_count;
  }
  return out;
}

SliceSample simulate_pair(const ActivityMap& activity, int drf, double total_counts,
                          std::uint64_t seed) {
  const int cls = drf_class(drf);
  if (activity.height() != activity.width()) {
    throw ShapeError("simulate_pair: activity map must be square");
  }
  const double mx = activity.max();
  std::vector<double> spet(activity.pixels().size());
  std::transform(activity.pixels().begin(), activity.pixels().end(), spet.begin(),
                 [mx](double v) { return v / mx; });
  auto lpet = sample_low_dose(spet, drf, total_counts, seed);
  for (auto& v : lpet) v = std::clamp(v, 0.0, 1.0);

  SliceSample s;
  s.size = activity.height();
  s.spet = to_float(spet);
  s.lpet = to_float(lpet);
  s.drf = drf;
  s.drf_class = cls;
  return s;
}

std::vector<SliceSample> generate_samples(const DatasetOptions& options) {
  check_size(options.size);
  if (options.train_subjects < 1 || options.test_subjects < 1 || options.slices_per_subject < 1) {
    throw ValidationError("dataset needs at least one train subject, one test subject and one slice");
  }
  if (!(options.total_counts > 0.0)) throw ValidationError("total_counts must be positive");

  std::vector<SliceSample> samples;
  const int subjects = options.train_subjects + options.test_subjects;
  for (int sub = 0; sub < subjects; ++sub) {
    for (int k = 0; k < options.slices_per_subject; ++k) {
      const auto activity = generate_activity(
          derive_seed(options.seed, static_cast<std::uint64_t>(sub), static_cast<std::uint64_t>(k), 0),
          options.size);
      for (const int drf : kDoseReductionFactors) {
        auto s = simulate_pair(activity, drf, options.total_counts,
                               derive_seed(options.seed, static_cast<std::uint64_t>(sub),
                                           static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(drf)));
        s.subject_id = sub;
        s.slice_index = k;
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

std::string DatasetManifest::to_json() const {
  json j;
  j["format"] = "mdpet-dataset";
  j["version"] = version;
  j["seed"] = seed;
  j["image_size"] = image_size;
  j["total_counts"] = total_counts;
  j["drfs"] = drfs;
  json subs = json::array();
  for (const auto& s : subjects) subs.push_back({{"id", s.id}, {"split", s.split}, {"slices", s.slices}});
  j["subjects"] = std::move(subs);
  json fs = json::array();
  for (const auto& f : files) {
    fs.push_back({{"path", f.path},
                  {"shape", f.shape},
                  {"byte_order", f.byte_order},
                  {"kind", f.kind},
                  {"subject", f.subject_id},
                  {"slice", f.slice_index},
                  {"drf", f.drf}});
  }
  j["files"] = std::move(fs);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "mdpet-dataset") throw ValidationError("manifest: unknown format");
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<std::size_t>();
    m.total_counts = j.at("total_counts").get<double>();
    m.drfs = j.at("drfs").get<std::vector<int>>();
    for (const auto& s : j.at("subjects")) {
      m.subjects.push_back({s.at("id").get<int>(), s.at("split").get<std::string>(), s.at("slices").get<int>()});
    }
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("path").get<std::string>(), f.at("shape").get<std::vector<std::size_t>>(),
                         f.at("byte_order").get<std::string>(), f.at("kind").get<std::string>(),
                         f.at("subject").get<int>(), f.at("slice").get<int>(), f.at("drf").get<int>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed dataset manifest: ") + e.what());
  }
  return m;
}

DatasetManifest build_dataset(const DatasetOptions& options, const std::filesystem::path& out_dir) {
  const auto samples = generate_samples(options);

  DatasetManifest m;
  m.seed = options.seed;
  m.image_size = options.size;
  m.total_counts = options.total_counts;
  m.drfs.assign(kDoseReductionFactors.begin(), kDoseReductionFactors.end());
  const int subjects = options.train_subjects + options.test_subjects;
  for (int sub = 0; sub < subjects; ++sub) {
    m.subjects.push_back({sub, sub < options.train_subjects ? "train" : "test", options.slices_per_subject});
  }

  const std::vector<std::size_t> shape{options.size, options.size};
  for (const auto& s : samples) {
    const std::string stem = "slice" + std::to_string(s.slice_index);
    if (s.drf == kDoseReductionFactors.front()) {
      const auto path = rel_path(s.subject_id, stem + "_spet.f32");
      io::write_f32(out_dir / path, s.spet);
      m.files.push_back({path, shape, "little", "spet", s.subject_id, s.slice_index, 0});
    }
    const auto path = rel_path(s.subject_id, stem + "_lpet_drf" + std::to_string(s.drf) + ".f32");
    io::write_f32(out_dir / path, s.lpet);
    m.files.push_back({path, shape, "little", "lpet", s.subject_id, s.slice_index, s.drf});
  }
  io::write_text(out_dir / kManifestName, m.to_json());
  return m;
}

void validate_dataset(const std::filesystem::path& root, const DatasetManifest& manifest) {
  std::set<int> train, test;
  for (const auto& s : manifest.subjects) {
    if (s.split == "train") {
      train.insert(s.id);
    } else if (s.split == "test") {
      test.insert(s.id);
    } else {
      throw ValidationError("manifest: subject " + std::to_string(s.id) + " has unknown split '" + s.split + "'");
    }
  }
  for (const int id : train) {
    if (test.count(id)) {
      throw ValidationError("manifest: subject " + std::to_string(id) + " is in both train and test splits");
    }
  }
  for (const int drf : manifest.drfs) drf_class(drf);
  for (const auto& f : manifest.files) {
    const auto path = root / f.path;
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw std::runtime_error("dataset file missing: " + path.string());
    std::size_t count = 1;
    for (auto d : f.shape) count *= d;
    if (bytes != count * 4) {
      throw ValidationError("dataset file " + path.string() + " has " + std::to_string(bytes) +
                            " bytes, expected " + std::to_string(count * 4));
    }
    if (f.byte_order != "little") {
      throw ValidationError("dataset file " + path.string() + ": unsupported byte order " + f.byte_order);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.manifest = DatasetManifest::from_json(io::read_text(root / kManifestName));
  validate_dataset(root, ds.manifest);
  const std::size_t n = ds.manifest.image_size;
  check_size(n);

  std::map<std::pair<int, int>, std::vector<float>> spets;
  for (const auto& f : ds.manifest.files) {
    if (f.kind == "spet") spets[{f.subject_id, f.slice_index}] = io::read_f32(root / f.path, n * n);
  }
  std::map<int, std::string> split;
  for (const auto& s : ds.manifest.subjects) split[s.id] = s.split;

  for (const auto& f : ds.manifest.files) {
    if (f.kind != "lpet") continue;
    const auto it = spets.find({f.subject_id, f.slice_index});
    if (it == spets.end()) {
      throw ValidationError("manifest: no SPET for subject " + std::to_string(f.subject_id) + " slice " +
                            std::to_string(f.slice_index));
    }
    SliceSample s;
    s.size = n;
    s.lpet = io::read_f32(root / f.path, n * n);
    s.spet = it->second;
    s.drf = f.drf;
    s.drf_class = drf_class(f.drf);
    s.subject_id = f.subject_id;
    s.slice_index = f.slice_index;
    const auto sp = split.find(f.subject_id);
    if (sp == split.end()) {
      throw ValidationError("manifest: file " + f.path + " references unknown subject " +
                            std::to_string(f.subject_id));
    }
    (sp->second == "train" ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

}  // namespace mdpet::phantom
