#include "impactscan/calibration.hpp"

#include <cmath>

#include "impactscan/error.hpp"

namespace impactscan {

void CalibrationModel::validate() const {
  if (!std::isfinite(temperature) || !(temperature > 0.0)) throw ValidationError("temperature", "must be positive");
  if (!std::isfinite(bias_neg)) throw ValidationError("bias_neg", "must be finite");
  if (!std::isfinite(bias_pos)) throw ValidationError("bias_pos", "must be finite");
}

Posterior apply_calibration(const CalibrationModel& m, RawScore s) {
  const double u_neg = s.z_neg / m.temperature + m.bias_neg;
  const double u_pos = s.z_pos / m.temperature + m.bias_pos;
  // Two-class softmax as a logistic of the logit gap; stable for any finite gap.
  const double gap = u_pos - u_neg;
  Posterior p;
  if (gap >= 0.0) {
    const double e = std::exp(-gap);
    p.p_pos = 1.0 / (1.0 + e);
    p.p_neg = e / (1.0 + e);
  } else {
    const double e = std::exp(gap);
    p.p_pos = e / (1.0 + e);
    p.p_neg = 1.0 / (1.0 + e);
  }
  return p;
}

namespace {

double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct Derivatives {
  double nll = 0.0;
  std::array<double, 3> g{};
  std::array<std::array<double, 3>, 3> h{};
};

// Full second-order information for the damped Newton step.
Derivatives derivatives(const CalibrationModel& m, std::span<const CalibrationSample> samples, bool with_hessian) {
  Derivatives d;
  const double t = m.temperature;
  for (const auto& s : samples) {
    const double z[2] = {s.score.z_neg, s.score.z_pos};
    const double u_neg = z[0] / t + m.bias_neg;
    const double u_pos = z[1] / t + m.bias_pos;
    const int y = s.label == Label::positive ? 1 : 0;
    const double gap = u_pos - u_neg;
    // -log p_y
    d.nll += y == 1 ? log1pexp(-gap) : log1pexp(gap);
    const Posterior post = apply_calibration(m, s.score);
    const double p[2] = {post.p_neg, post.p_pos};
    const double r[2] = {p[0] - (y == 0), p[1] - (y == 1)};
    const double a[2] = {-z[0] / (t * t), -z[1] / (t * t)};
    d.g[0] += r[0] * a[0] + r[1] * a[1];
    d.g[1] += r[0];
    d.g[2] += r[1];
    if (!with_hessian) continue;
    // S = diag(p) - p p^T
    const double s00 = p[0] * (1 - p[0]), s11 = p[1] * (1 - p[1]), s01 = -p[0] * p[1];
    const double sa0 = s00 * a[0] + s01 * a[1];
    const double sa1 = s01 * a[0] + s11 * a[1];
    d.h[0][0] += a[0] * sa0 + a[1] * sa1 + (r[0] * 2 * z[0] + r[1] * 2 * z[1]) / (t * t * t);
    d.h[0][1] += sa0;
    d.h[0][2] += sa1;
    d.h[1][1] += s00;
    d.h[1][2] += s01;
    d.h[2][2] += s11;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  d.nll *= inv;
  for (auto& v : d.g) v *= inv;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      d.h[i][j] *= inv;
      d.h[j][i] = d.h[i][j];
    }
  return d;
}

// Solves a 3x3 system with partial pivoting; returns false if singular.
bool solve3(std::array<std::array<double, 3>, 3> a, std::array<double, 3> b, std::array<double, 3>& x) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 3; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < 3; ++c) acc -= a[r][c] * x[c];
    x[r] = acc / a[r][r];
  }
  return true;
}

double norm(const std::array<double, 3>& g) { return std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]); }

}  // namespace

NllGradient calibration_nll(const CalibrationModel& m, std::span<const CalibrationSample> samples) {
  m.validate();
  if (samples.empty()) throw ValidationError("held_out", "must not be empty");
  const auto d = derivatives(m, samples, false);
  return {d.nll, d.g};
}

BctsFit fit_bcts(std::span<const CalibrationSample> held_out, const BctsOptions& opts) {
  bool has_pos = false, has_neg = false;
  for (const auto& s : held_out) {
    if (!std::isfinite(s.score.z_neg) || !std::isfinite(s.score.z_pos))
      throw ValidationError("held_out", "raw scores must be finite");
    (s.label == Label::positive ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw ValidationError("held_out", "both classes must be present");

  BctsFit fit;
  CalibrationModel m;
  auto d = derivatives(m, held_out, true);
  fit.objective_trace.push_back(d.nll);
  double mu = 1e-3;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (norm(d.g) < opts.grad_tol) {
      fit.converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted && mu < 1e12) {
      auto h = d.h;
      for (int i = 0; i < 3; ++i) h[i][i] += mu;
      std::array<double, 3> step{};
      if (!solve3(h, {-d.g[0], -d.g[1], -d.g[2]}, step)) {
        mu *= 4.0;
        continue;
      }
      CalibrationModel trial{m.temperature + step[0], m.bias_neg + step[1], m.bias_pos + step[2]};
      if (!(trial.temperature > 0.0)) {
        mu *= 4.0;
        continue;
      }
      const auto td = derivatives(trial, held_out, true);
      if (td.nll < d.nll) {
        m = trial;
        d = td;
        fit.objective_trace.push_back(d.nll);
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
      } else {
        mu *= 4.0;
      }
    }
    // No descent direction left at machine precision.
    if (!accepted) {
      fit.converged = norm(d.g) < opts.grad_tol;
      break;
    }
  }
  if (!fit.converged && norm(d.g) < opts.grad_tol) fit.converged = true;
  fit.model = m;
  fit.iterations = it;
  fit.grad_norm = norm(d.g);
  return fit;
}

double ece(std::span<const Prediction> preds, int n_bins) {
  if (preds.empty()) throw ValidationError("predictions", "must not be empty");
  if (n_bins < 1) throw ValidationError("n_bins", "must be at least 1");
  std::vector<double> conf_sum(n_bins, 0.0), correct(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (const auto& p : preds) {
    if (!(p.p_pos >= 0.0 && p.p_pos <= 1.0)) throw ValidationError("p_pos", "must lie in [0, 1]");
    const bool predict_pos = p.p_pos >= 0.5;
    const double conf = predict_pos ? p.p_pos : 1.0 - p.p_pos;
    const int b = std::min(n_bins - 1, static_cast<int>(conf * n_bins));
    conf_sum[b] += conf;
    correct[b] += predict_pos == (p.label == Label::positive) ? 1.0 : 0.0;
    ++count[b];
  }
  double e = 0.0;
  const double n = static_cast<double>(preds.size());
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    e += (count[b] / n) * std::abs(correct[b] / count[b] - conf_sum[b] / count[b]);
  }
  return e;
}

}  // namespace impactscan
