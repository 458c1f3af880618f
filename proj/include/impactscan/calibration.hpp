#pragma once

#include <array>
#include <span>
#include <vector>

namespace impactscan {

enum class Label { negative = 0, positive = 1 };

// Pre-calibration classifier output: one logit per class.
struct RawScore {
  double z_neg = 0.0;
  double z_pos = 0.0;

  bool operator==(const RawScore&) const = default;
};

// Bias-corrected temperature scaling: p = softmax(z / T + b).
struct CalibrationModel {
  double temperature = 1.0;
  double bias_neg = 0.0;
  double bias_pos = 0.0;

  // Throws ValidationError unless T is finite and positive and both biases are finite.
  void validate() const;
  bool operator==(const CalibrationModel&) const = default;
};

struct Posterior {
  double p_neg = 0.5;
  double p_pos = 0.5;
};

Posterior apply_calibration(const CalibrationModel& m, RawScore s);

struct CalibrationSample {
  RawScore score;
  Label label = Label::negative;
};

// Mean negative log-likelihood and its gradient with respect to
// (temperature, bias_neg, bias_pos).
struct NllGradient {
  double nll = 0.0;
  std::array<double, 3> grad{};
};
NllGradient calibration_nll(const CalibrationModel& m, std::span<const CalibrationSample> samples);

struct BctsOptions {
  double grad_tol = 1e-6;
  int max_iterations = 10'000;
};

struct BctsFit {
  CalibrationModel model;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  // Objective after each accepted step, starting at the identity model.
  std::vector<double> objective_trace;
};

// Minimizes calibration_nll with a damped Newton (Levenberg-Marquardt) iteration
// started from T = 1, b = 0. Both biases are free; since the objective only
// depends on bias_pos - bias_neg, the fit leaves bias_neg + bias_pos at zero.
// Throws ValidationError if fewer than two classes are present.
BctsFit fit_bcts(std::span<const CalibrationSample> held_out, const BctsOptions& opts = {});

struct Prediction {
  double p_pos = 0.0;
  Label label = Label::negative;
};

// Expected calibration error over equal-width bins of max-class confidence.
// Throws ValidationError on empty input or probabilities outside [0, 1].
double ece(std::span<const Prediction> preds, int n_bins = 10);

}  // namespace impactscan
