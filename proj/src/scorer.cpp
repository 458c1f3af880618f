#include "impactscan/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "impactscan/error.hpp"
#include "impactscan/hash.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

RawScore score_window(const BaselineScorerModel& model, const WindowView& window) {
  if (window.size() != model.window_size)
    throw ValidationError("window", "expected " + std::to_string(model.window_size) + " px, got " +
                                        std::to_string(window.size()));
  const FeatureVector f = window_features(window);
  double z = model.intercept;
  for (std::size_t i = 0; i < kFeatureCount; ++i) z += model.weights[i] * f[i];
  return {0.0, z};
}

BaselineScorer::BaselineScorer(BaselineScorerModel model) : model_(std::move(model)) {
  if (model_.feature_set_version != kFeatureSetVersion)
    throw ValidationError("feature_set_version", "model uses version " + std::to_string(model_.feature_set_version) +
                                                     ", this build computes version " +
                                                     std::to_string(kFeatureSetVersion));
  if (model_.window_size < 1) throw ValidationError("window_size", "must be positive");
}

std::string BaselineScorer::fingerprint() const {
  Fnv1a h;
  h.update("baseline").update_pod(model_.feature_set_version).update_pod(model_.window_size);
  for (double w : model_.weights) h.update_pod(w);
  h.update_pod(model_.intercept);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Augmentation

LabeledWindow flip_horizontal(const LabeledWindow& w) {
  LabeledWindow out = w;
  for (int r = 0; r < w.size; ++r) {
    auto row = out.pixels.begin() + static_cast<std::ptrdiff_t>(r) * w.size;
    std::reverse(row, row + w.size);
  }
  return out;
}

LabeledWindow flip_vertical(const LabeledWindow& w) {
  LabeledWindow out = w;
  for (int r = 0; r < w.size; ++r)
    std::copy_n(w.pixels.begin() + static_cast<std::ptrdiff_t>(w.size - 1 - r) * w.size, w.size,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r) * w.size);
  return out;
}

LabeledWindow rotate90(const LabeledWindow& w, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  LabeledWindow out = w;
  const int n = w.size;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      int sr = r, sc = c;  // source of destination (r, c) under counter-clockwise rotation
      switch (q) {
        case 1: sr = c; sc = n - 1 - r; break;
        case 2: sr = n - 1 - r; sc = n - 1 - c; break;
        case 3: sr = n - 1 - c; sc = r; break;
        default: break;
      }
      out.pixels[static_cast<std::size_t>(r) * n + c] = w.pixels[static_cast<std::size_t>(sr) * n + sc];
    }
  }
  return out;
}

LabeledWindow gaussian_blur(const LabeledWindow& w, double sigma, const simd::KernelTable& kernels) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<float> taps(2 * radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    total += taps[i] = static_cast<float>(std::exp(-x * x / (2.0 * sigma * sigma)));
  }
  for (auto& t : taps) t = static_cast<float>(t / total);
  LabeledWindow out = w;
  std::vector<float> tmp(w.pixels.size());
  const auto n = static_cast<std::size_t>(w.size);
  kernels.filter_rows(w.pixels.data(), tmp.data(), n, n, taps.data(), radius);
  kernels.filter_cols(tmp.data(), out.pixels.data(), n, n, taps.data(), radius);
  for (auto& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

void for_each_augmented(std::span<const LabeledWindow> set, std::uint64_t rng_seed,
                        const std::function<void(LabeledWindow&&)>& sink) {
  if (set.empty()) throw ValidationError("set", "must not be empty");
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<int> turns(1, 3);
  std::uniform_real_distribution<float> gain(0.9f, 1.1f);
  std::uniform_real_distribution<float> offset(-0.05f, 0.05f);
  for (const auto& w : set) {
    if (w.pixels.size() != static_cast<std::size_t>(w.size) * w.size)
      throw ValidationError("window", "pixel count does not equal size x size");
    sink(LabeledWindow(w));
    sink(flip_horizontal(w));
    sink(flip_vertical(w));
    sink(rotate90(w, turns(rng)));
    LabeledWindow j = w;
    const float g = gain(rng);
    const float o = offset(rng);
    for (auto& v : j.pixels) v = std::clamp(v * g + o, 0.0f, 1.0f);
    sink(std::move(j));
    sink(gaussian_blur(w, 2.0));
  }
}

std::vector<LabeledWindow> augment(std::span<const LabeledWindow> set, std::uint64_t rng_seed) {
  std::vector<LabeledWindow> out;
  out.reserve(set.size() * kAugmentationFactor);
  for_each_augmented(set, rng_seed, [&](LabeledWindow&& w) { out.push_back(std::move(w)); });
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

constexpr std::size_t kParams = kFeatureCount + 1;
using Vec = std::array<double, kParams>;
using Mat = std::array<Vec, kParams>;

bool cholesky_solve(Mat a, Vec b, Vec& x) {
  for (std::size_t j = 0; j < kParams; ++j) {
    double d = a[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j][k] * a[j][k];
    if (!(d > 0.0)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < kParams; ++i) {
      double s = a[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i][k] * a[j][k];
      a[i][j] = s / a[j][j];
    }
  }
  for (std::size_t i = 0; i < kParams; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i][k] * b[k];
    b[i] = s / a[i][i];
  }
  for (std::size_t i = kParams; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < kParams; ++k) s -= a[k][i] * x[k];
    x[i] = s / a[i][i];
  }
  return true;
}

double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

LogisticFit fit_logistic(std::span<const FeatureVector> x, std::span<const Label> y, const LogisticOptions& opts) {
  if (x.size() != y.size()) throw ValidationError("train", "feature and label counts differ");
  if (x.empty()) throw ValidationError("train", "must not be empty");
  const bool has_pos = std::any_of(y.begin(), y.end(), [](Label l) { return l == Label::positive; });
  const bool has_neg = std::any_of(y.begin(), y.end(), [](Label l) { return l == Label::negative; });
  if (!has_pos || !has_neg) throw ValidationError("train", "both classes must be present");

  const double n = static_cast<double>(x.size());
  FeatureVector mean{}, scale{};
  for (const auto& f : x)
    for (std::size_t i = 0; i < kFeatureCount; ++i) mean[i] += f[i] / n;
  for (const auto& f : x)
    for (std::size_t i = 0; i < kFeatureCount; ++i) scale[i] += (f[i] - mean[i]) * (f[i] - mean[i]) / n;
  for (auto& s : scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;

  auto standardized = [&](const FeatureVector& f) {
    Vec v{};
    for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = (f[i] - mean[i]) / scale[i];
    v[kFeatureCount] = 1.0;
    return v;
  };
  auto objective = [&](const Vec& beta) {
    double loss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const Vec v = standardized(x[k]);
      double m = 0.0;
      for (std::size_t i = 0; i < kParams; ++i) m += beta[i] * v[i];
      loss += y[k] == Label::positive ? log1pexp(-m) : log1pexp(m);
    }
    double reg = 0.0;
    for (std::size_t i = 0; i < kFeatureCount; ++i) reg += beta[i] * beta[i];
    return loss / n + 0.5 * opts.l2 * reg;
  };

  Vec beta{};
  double f_cur = objective(beta);
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    Vec g{};
    Mat h{};
    for (std::size_t k = 0; k < x.size(); ++k) {
      const Vec v = standardized(x[k]);
      double m = 0.0;
      for (std::size_t i = 0; i < kParams; ++i) m += beta[i] * v[i];
      const double p = 1.0 / (1.0 + std::exp(-m));
      const double r = p - (y[k] == Label::positive ? 1.0 : 0.0);
      const double wgt = std::max(p * (1.0 - p), 1e-12);
      for (std::size_t i = 0; i < kParams; ++i) {
        g[i] += r * v[i] / n;
        for (std::size_t j = 0; j <= i; ++j) h[i][j] += wgt * v[i] * v[j] / n;
      }
    }
    for (std::size_t i = 0; i < kParams; ++i)
      for (std::size_t j = 0; j < i; ++j) h[j][i] = h[i][j];
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      g[i] += opts.l2 * beta[i];
      h[i][i] += opts.l2;
    }
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    if (std::sqrt(gnorm) < opts.grad_tol) break;
    for (std::size_t i = 0; i < kParams; ++i) h[i][i] += 1e-12;
    Vec step{};
    Vec neg_g{};
    for (std::size_t i = 0; i < kParams; ++i) neg_g[i] = -g[i];
    if (!cholesky_solve(h, neg_g, step)) break;
    // Backtracking keeps every accepted step a descent step.
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
      Vec trial = beta;
      for (std::size_t i = 0; i < kParams; ++i) trial[i] += t * step[i];
      const double f_trial = objective(trial);
      if (f_trial <= f_cur) {
        moved = f_trial < f_cur;
        beta = trial;
        f_cur = f_trial;
        break;
      }
    }
    if (!moved) break;
  }

  LogisticFit fit;
  fit.iterations = it;
  fit.intercept = beta[kFeatureCount];
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    fit.weights[i] = beta[i] / scale[i];
    fit.intercept -= beta[i] * mean[i] / scale[i];
  }
  return fit;
}

BaselineScorerModel train_baseline(std::span<const LabeledWindow> train, const LogisticOptions& opts) {
  if (train.empty()) throw ValidationError("train", "must not be empty");
  const int size = train.front().size;
  std::vector<FeatureVector> x;
  std::vector<Label> y;
  x.reserve(train.size());
  y.reserve(train.size());
  for (const auto& w : train) {
    if (w.size != size) throw ValidationError("train", "all windows must share one size");
    x.push_back(window_features(w.view()));
    y.push_back(w.label);
  }
  const LogisticFit fit = fit_logistic(x, y, opts);
  BaselineScorerModel m;
  m.window_size = size;
  m.weights = fit.weights;
  m.intercept = fit.intercept;
  return m;
}

BaselineScorerModel train_baseline_augmented(std::span<const LabeledWindow> train, std::uint64_t rng_seed,
                                             const LogisticOptions& opts) {
  if (train.empty()) throw ValidationError("train", "must not be empty");
  const int size = train.front().size;
  std::vector<FeatureVector> x;
  std::vector<Label> y;
  x.reserve(train.size() * kAugmentationFactor);
  y.reserve(train.size() * kAugmentationFactor);
  for_each_augmented(train, rng_seed, [&](LabeledWindow&& w) {
    if (w.size != size) throw ValidationError("train", "all windows must share one size");
    x.push_back(window_features(w.view()));
    y.push_back(w.label);
  });
  const LogisticFit fit = fit_logistic(x, y, opts);
  BaselineScorerModel m;
  m.window_size = size;
  m.weights = fit.weights;
  m.intercept = fit.intercept;
  return m;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction", "must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> tr(idx.begin(), idx.begin() + n_train), ho(idx.begin() + n_train, idx.end());
  std::sort(tr.begin(), tr.end());
  std::sort(ho.begin(), ho.end());
  return {std::move(tr), std::move(ho)};
}

// ---------------------------------------------------------------------------
// Model files

namespace {
constexpr int kModelFileVersion = 1;
}

std::string model_to_json(const ModelFile& m) {
  json j;
  j["format"] = "impactscan-model";
  j["version"] = kModelFileVersion;
  j["kind"] = "baseline-logistic";
  j["feature_set_version"] = m.scorer.feature_set_version;
  j["features"] = json::array();
  for (auto name : kFeatureNames) j["features"].push_back(std::string(name));
  j["window_size"] = m.scorer.window_size;
  j["weights"] = m.scorer.weights;
  j["intercept"] = m.scorer.intercept;
  j["calibration"] = {{"temperature", m.calibration.temperature},
                      {"bias_neg", m.calibration.bias_neg},
                      {"bias_pos", m.calibration.bias_pos}};
  return j.dump(2) + "\n";
}

ModelFile model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("model", std::string("invalid JSON: ") + e.what());
  }
  if (j.value("format", "") != "impactscan-model") throw ValidationError("format", "not an impactscan model file");
  if (j.value("version", 0) != kModelFileVersion)
    throw ValidationError("version", "unsupported model file version");
  ModelFile m;
  try {
    m.scorer.feature_set_version = j.at("feature_set_version").get<int>();
    m.scorer.window_size = j.at("window_size").get<int>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kFeatureCount) throw ValidationError("weights", "expected " + std::to_string(kFeatureCount));
    std::copy(w.begin(), w.end(), m.scorer.weights.begin());
    m.scorer.intercept = j.at("intercept").get<double>();
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      m.calibration = {c.at("temperature").get<double>(), c.at("bias_neg").get<double>(),
                       c.at("bias_pos").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ValidationError("model", e.what());
  }
  if (m.scorer.feature_set_version != kFeatureSetVersion)
    throw ValidationError("feature_set_version", "unsupported feature set version");
  m.calibration.validate();
  return m;
}

void save_model(const fs::path& path, const ModelFile& m) { write_file_atomic(path, model_to_json(m)); }

ModelFile load_model(const fs::path& path) { return model_from_json(read_file(path)); }

// ---------------------------------------------------------------------------
// Labeled sets

std::vector<LabeledPath> read_labels_csv(const fs::path& labels_csv) {
  std::ifstream in(labels_csv);
  if (!in) throw NotFoundError("cannot open " + labels_csv.string());
  std::vector<LabeledPath> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw ValidationError("labels", "line " + std::to_string(lineno) + " lacks a comma");
    std::string path = line.substr(0, comma), label = line.substr(comma + 1);
    if (lineno == 1 && path == "path") continue;
    Label l;
    if (label == "positive" || label == "1")
      l = Label::positive;
    else if (label == "negative" || label == "0")
      l = Label::negative;
    else
      throw ValidationError("label", "line " + std::to_string(lineno) + ": unknown label '" + label + "'");
    rows.push_back({path, l});
  }
  return rows;
}

void write_labels_csv(const fs::path& labels_csv, std::span<const LabeledPath> rows) {
  std::string out = "path,label\n";
  for (const auto& r : rows) out += r.path + "," + (r.label == Label::positive ? "positive" : "negative") + "\n";
  write_file_atomic(labels_csv, out);
}

std::vector<LabeledWindow> load_labeled_set(const fs::path& labels_csv) {
  const auto rows = read_labels_csv(labels_csv);
  const fs::path base = labels_csv.parent_path();
  std::vector<LabeledWindow> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    const GrayImage img = read_gray_image(base / r.path);
    if (img.width != img.height) throw ValidationError("window", r.path + " is not square");
    LabeledWindow w;
    w.size = img.width;
    w.label = r.label;
    w.pixels.resize(img.samples.size());
    for (std::size_t i = 0; i < w.pixels.size(); ++i) w.pixels[i] = dequantize(img.samples[i], img.max_value());
    out.push_back(std::move(w));
  }
  return out;
}

fs::path save_labeled_set(const fs::path& dir, std::span<const LabeledWindow> set, const std::string& csv_name) {
  fs::create_directories(dir);
  std::vector<LabeledPath> rows;
  rows.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& w = set[i];
    char name[64];
    std::snprintf(name, sizeof name, "%s_%06zu.pgm", w.label == Label::positive ? "pos" : "neg", i);
    GrayImage img{w.size, w.size, 16, {}};
    img.samples.reserve(w.pixels.size());
    for (float v : w.pixels) img.samples.push_back(static_cast<std::uint16_t>(std::lround(v * 65535.0)));
    write_pgm(dir / name, img);
    rows.push_back({name, w.label});
  }
  const fs::path csv = dir / csv_name;
  write_labels_csv(csv, rows);
  return csv;
}

}  // namespace impactscan
