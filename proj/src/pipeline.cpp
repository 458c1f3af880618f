#include "impactscan/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "impactscan/error.hpp"
#include "impactscan/scan.hpp"

namespace impactscan {

void PipelineConfig::validate() const {
  if (window_size < 1) throw ValidationError("window_size", "must be positive");
  if (stride < 1) throw ValidationError("stride", "must be positive");
  if (!(grouping_radius_m > 0.0)) throw ValidationError("grouping_radius_m", "must be positive");
  if (!(nondetect_threshold >= 0.0 && nondetect_threshold <= 1.0))
    throw ValidationError("nondetect_threshold", "must lie in [0, 1]");
  if (!(detect_threshold >= 0.0 && detect_threshold <= 1.0))
    throw ValidationError("detect_threshold", "must lie in [0, 1]");
  if (!(lat_min <= lat_max)) throw ValidationError("lat_min", "must not exceed lat_max");
  bins().validate();
  if (per_bin < 1) throw ValidationError("per_bin", "must be positive");
  if (k < 1) throw ValidationError("k", "must be positive");
  if (parallelism < 1) throw ValidationError("parallelism", "must be positive");
}

std::vector<CalibrationSample> calibration_samples(const WindowScorer& scorer, std::span<const LabeledWindow> set) {
  std::vector<CalibrationSample> out;
  out.reserve(set.size());
  for (const auto& w : set) out.push_back({scorer.score(w.view()), w.label});
  return out;
}

namespace {

std::vector<Prediction> predictions(const CalibrationModel& m, std::span<const CalibrationSample> s) {
  std::vector<Prediction> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back({apply_calibration(m, x.score).p_pos, x.label});
  return out;
}

}  // namespace

TrainedModel train_and_calibrate(std::span<const LabeledWindow> labeled, double train_fraction, std::uint64_t seed) {
  const auto [train_idx, held_idx] = split_indices(labeled.size(), train_fraction, seed);
  if (train_idx.empty() || held_idx.empty()) throw ValidationError("labeled", "too few windows to split");
  std::vector<LabeledWindow> train, held;
  for (auto i : train_idx) train.push_back(labeled[i]);
  for (auto i : held_idx) held.push_back(labeled[i]);

  TrainedModel out;
  out.model.scorer = train_baseline_augmented(train, seed ^ 0x5eedULL);
  out.train_windows = train.size() * kAugmentationFactor;
  out.heldout_windows = held.size();
  const BaselineScorer scorer(out.model.scorer);
  const auto samples = calibration_samples(scorer, held);
  out.calibration_fit = fit_bcts(samples);
  out.model.calibration = out.calibration_fit.model;
  out.ece_uncalibrated = ece(predictions(CalibrationModel{}, samples));
  out.ece_calibrated = ece(predictions(out.model.calibration, samples));
  return out;
}

std::vector<Candidate> verify_against_truth(const std::vector<Candidate>& selected,
                                            const std::vector<GroundTruthImpact>& truth, double radius_m) {
  std::vector<Candidate> order = selected;
  sort_by_confidence(order);
  std::vector<char> claimed(truth.size(), 0);
  std::vector<Candidate> out;
  for (const auto& c : order) {
    const auto fw = formation_window(c);
    if (!fw) continue;
    std::optional<std::size_t> best;
    double best_d = radius_m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (claimed[i] || !(truth[i].time > fw->first && truth[i].time <= fw->second)) continue;
      const double d = great_circle_distance(c.seed, {truth[i].lat, truth[i].lon});
      if (d <= best_d) best = i, best_d = d;
    }
    if (!best) continue;
    claimed[*best] = 1;
    out.push_back(c);
  }
  return out;
}

BiasExperimentResult run_bias_experiment(const SyntheticWorldConfig& cfg, const BiasExperimentOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  BiasExperimentResult r;
  r.seed = cfg.rng_seed;
  const SyntheticArchive world = generate_synthetic_archive(cfg);
  r.truth_impacts = world.ground_truth().size();

  const auto labeled = world.training_windows(opts.train_positives, opts.train_negatives, cfg.rng_seed ^ 0x7a11ULL);
  const TrainedModel trained = train_and_calibrate(labeled, opts.train_fraction, cfg.rng_seed);
  const BaselineScorer scorer(trained.model.scorer);

  ScanOptions so;
  so.parallelism = opts.parallelism;
  const ScanResult scan =
      scan_archive(world, scorer, trained.model.calibration, {cfg.window_size, cfg.stride}, so);
  if (!scan.errors.empty())
    throw std::runtime_error("scan failed on " + scan.errors.front().observation_id + ": " + scan.errors.front().message);
  r.windows = scan.windows;

  auto cands = build_candidates(scan.grids, world);
  r.candidates = cands.size();
  const TIBasemap map{world.primary_ti_map(), world.fallback_ti_map()};
  assign_ti(cands, map);
  auto dateable = apply_filters(cands);
  std::erase_if(dateable, [](const Candidate& c) { return c.ti_source == TISource::missing; });
  r.dateable = dateable.size();

  const TIBins bins = TIBins::uniform();
  const auto expected = expected_distribution(map, bins);
  const auto top = top_k(dateable, opts.k);
  const auto strat = flatten(stratified_top(dateable, bins, opts.per_bin));
  r.top_k_selection = bias_report(top, expected, bins, "top_k");
  r.stratified_selection = bias_report(strat, expected, bins, "stratified");
  r.top_k = bias_report(verify_against_truth(top, world.ground_truth()), expected, bins, "top_k");
  r.stratified = bias_report(verify_against_truth(strat, world.ground_truth()), expected, bins, "stratified");
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace impactscan
