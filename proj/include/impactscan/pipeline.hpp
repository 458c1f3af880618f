#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "impactscan/analytics.hpp"
#include "impactscan/calibration.hpp"
#include "impactscan/candidates.hpp"
#include "impactscan/scorer.hpp"
#include "impactscan/synthetic.hpp"

namespace impactscan {

struct PipelineConfig {
  std::filesystem::path archive;
  std::filesystem::path basemaps;
  std::filesystem::path model;
  std::filesystem::path output;

  int window_size = kDefaultWindowSize;
  int stride = kDefaultStride;
  double grouping_radius_m = kGroupingRadiusM;
  double nondetect_threshold = kNonDetectionThreshold;
  double detect_threshold = kDetectionThreshold;
  double lat_min = -60.0;
  double lat_max = 60.0;
  std::vector<double> bin_edges = TIBins::uniform().edges;
  std::size_t per_bin = 100;
  std::size_t k = 1000;
  int parallelism = 1;
  std::uint64_t seed = 7;

  // Throws ValidationError naming the offending field.
  void validate() const;
  FilterOptions filter() const { return {lat_min, lat_max, nondetect_threshold, detect_threshold}; }
  TIBins bins() const { return {bin_edges}; }
};

struct TrainedModel {
  ModelFile model;
  BctsFit calibration_fit;
  double ece_uncalibrated = 0.0;
  double ece_calibrated = 0.0;
  std::size_t train_windows = 0;  // after augmentation
  std::size_t heldout_windows = 0;
};

// Splits the labeled set, trains on the augmented training part and fits the
// calibration on the held-out part.
TrainedModel train_and_calibrate(std::span<const LabeledWindow> labeled, double train_fraction, std::uint64_t seed);

std::vector<CalibrationSample> calibration_samples(const WindowScorer& scorer, std::span<const LabeledWindow> set);

// Stand-in for human review against a known truth list: a candidate is
// verified if an impact lies within radius_m of its seed and formed inside
// its (before, after] window. Each impact verifies at most one candidate,
// the most confident one.
std::vector<Candidate> verify_against_truth(const std::vector<Candidate>& selected,
                                            const std::vector<GroundTruthImpact>& truth,
                                            double radius_m = kGroupingRadiusM);

struct BiasExperimentOptions {
  std::size_t k = 150;
  std::size_t per_bin = 15;
  int train_positives = 300;
  int train_negatives = 300;
  double train_fraction = 0.9;
  int parallelism = 1;
};

struct BiasExperimentResult {
  std::uint64_t seed = 0;
  std::size_t windows = 0;
  std::size_t candidates = 0;
  std::size_t dateable = 0;
  std::size_t truth_impacts = 0;
  BiasReport top_k;          // over verified top-K impacts
  BiasReport stratified;     // over verified stratified impacts
  BiasReport top_k_selection;
  BiasReport stratified_selection;
  double seconds = 0.0;
};

// Generates a world from cfg, trains, scans, builds, selects both ways,
// verifies against truth and reports D_KL for each selection.
BiasExperimentResult run_bias_experiment(const SyntheticWorldConfig& cfg, const BiasExperimentOptions& opts = {});

}  // namespace impactscan
