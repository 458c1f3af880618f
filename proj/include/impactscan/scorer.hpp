#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "impactscan/calibration.hpp"
#include "impactscan/features.hpp"
#include "impactscan/raster.hpp"

namespace impactscan {

// A square training window that owns its pixels.
struct LabeledWindow {
  int size = kDefaultWindowSize;
  std::vector<float> pixels;  // row-major, size * size
  Label label = Label::negative;

  WindowView view() const { return {pixels.data(), size, size}; }
  bool operator==(const LabeledWindow&) const = default;
};

// Anything that turns a window into two-class logits.
class WindowScorer {
 public:
  virtual ~WindowScorer() = default;
  virtual RawScore score(const WindowView& window) const = 0;
  virtual int window_size() const = 0;
  // Stable identity of the model parameters, used in scan fingerprints.
  virtual std::string fingerprint() const = 0;
};

// Logistic model over the fixed window feature set; emits logits (0, w.x + c).
struct BaselineScorerModel {
  int feature_set_version = kFeatureSetVersion;
  int window_size = kDefaultWindowSize;
  FeatureVector weights{};
  double intercept = 0.0;

  bool operator==(const BaselineScorerModel&) const = default;
};

// Throws ValidationError if the window size does not match the model.
RawScore score_window(const BaselineScorerModel& model, const WindowView& window);

class BaselineScorer final : public WindowScorer {
 public:
  explicit BaselineScorer(BaselineScorerModel model);
  RawScore score(const WindowView& window) const override { return score_window(model_, window); }
  int window_size() const override { return model_.window_size; }
  std::string fingerprint() const override;
  const BaselineScorerModel& model() const { return model_; }

 private:
  BaselineScorerModel model_;
};

// Six variants per input, in this order: original, horizontal flip, vertical
// flip, rotation by a random multiple of 90 degrees, random intensity jitter
// (gain U(0.9, 1.1), offset U(-0.05, 0.05), clamped), Gaussian blur sigma 2.
inline constexpr std::size_t kAugmentationFactor = 6;
std::vector<LabeledWindow> augment(std::span<const LabeledWindow> set, std::uint64_t rng_seed);
// Same sequence as augment, handed over one window at a time.
void for_each_augmented(std::span<const LabeledWindow> set, std::uint64_t rng_seed,
                        const std::function<void(LabeledWindow&&)>& sink);

// Building blocks of augment, exposed for testing.
LabeledWindow flip_horizontal(const LabeledWindow& w);
LabeledWindow flip_vertical(const LabeledWindow& w);
LabeledWindow rotate90(const LabeledWindow& w, int quarter_turns);
LabeledWindow gaussian_blur(const LabeledWindow& w, double sigma,
                            const simd::KernelTable& kernels = simd::active_kernels());

struct LogisticOptions {
  // Ridge penalty on standardized weights (not the intercept), relative to the mean log-loss.
  double l2 = 1e-4;
  int max_iterations = 100;
  double grad_tol = 1e-10;
};

struct LogisticFit {
  FeatureVector weights{};
  double intercept = 0.0;
  int iterations = 0;
};

// Newton iterations on standardized features; weights are reported in raw feature units.
LogisticFit fit_logistic(std::span<const FeatureVector> x, std::span<const Label> y, const LogisticOptions& opts = {});

// Throws ValidationError for empty or single-class input or mixed window sizes.
BaselineScorerModel train_baseline(std::span<const LabeledWindow> train, const LogisticOptions& opts = {});
// Trains on augment(train, rng_seed) without materializing the augmented set.
BaselineScorerModel train_baseline_augmented(std::span<const LabeledWindow> train, std::uint64_t rng_seed,
                                             const LogisticOptions& opts = {});

// Seeded uniform split; returns (train indices, held-out indices), each ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                            std::uint64_t seed);

// Versioned JSON model file: scorer weights plus calibration.
struct ModelFile {
  BaselineScorerModel scorer;
  CalibrationModel calibration;
};
std::string model_to_json(const ModelFile& m);
ModelFile model_from_json(const std::string& text);
void save_model(const std::filesystem::path& path, const ModelFile& m);
ModelFile load_model(const std::filesystem::path& path);

struct LabeledPath {
  std::string path;  // relative to the CSV's directory
  Label label = Label::negative;
};
std::vector<LabeledPath> read_labels_csv(const std::filesystem::path& labels_csv);
void write_labels_csv(const std::filesystem::path& labels_csv, std::span<const LabeledPath> rows);

// Directory of window images with labels.csv ("path,label"; label is positive/negative or 1/0).
std::vector<LabeledWindow> load_labeled_set(const std::filesystem::path& labels_csv);
// Writes window images as 16-bit PGM under dir and returns the labels.csv path.
std::filesystem::path save_labeled_set(const std::filesystem::path& dir, std::span<const LabeledWindow> set,
                                       const std::string& csv_name = "labels.csv");

}  // namespace impactscan
