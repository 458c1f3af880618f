#pragma once

#include <optional>
#include <string>
#include <vector>

#include "impactscan/candidates.hpp"
#include "impactscan/catalog.hpp"

namespace impactscan {

struct TIHistogram {
  TIBins bins;
  std::vector<std::size_t> observed;
  std::vector<double> expected;  // sums to 1

  void validate() const;
};

struct BiasReport {
  std::string label;
  TIHistogram histogram;
  double d_kl = 0.0;
  std::size_t n = 0;
};

// Area fraction of the latitude band in each TI bin. Pixels are weighted by
// cos(latitude); invalid pixels are skipped. Throws if no valid area remains.
std::vector<double> expected_distribution(const ValueGrid& map, const TIBins& bins, double lat_min = -60.0,
                                          double lat_max = 60.0);
// Uses the primary grid when present, else the fallback.
std::vector<double> expected_distribution(const TIBasemap& map, const TIBins& bins, double lat_min = -60.0,
                                          double lat_max = 60.0);

// Counts are normalized; natural log; empty bins contribute nothing.
// Throws ValidationError when a bin with observations has zero expectation.
double kl_divergence(const std::vector<double>& observed, const std::vector<double>& expected);
double kl_divergence(const std::vector<std::size_t>& observed, const std::vector<double>& expected);

// Cube root of the sum of cubed diameters.
double effective_diameter(const std::vector<double>& diameters);

struct SummaryStats {
  std::size_t n = 0;
  double mean_diameter = 0.0;
  std::optional<double> std_diameter;  // absent for n = 1
  double cluster_fraction = 0.0;
  double halo_fraction = 0.0;
  double ray_fraction = 0.0;
  double dark_fraction = 0.0;
  double light_fraction = 0.0;
  double dual_fraction = 0.0;
  double mean_dci = 0.0;
  std::optional<double> std_dci;
  std::optional<double> mean_ti;  // over entries with TI
};
SummaryStats summary_stats(const std::vector<CatalogEntry>& entries);

BiasReport bias_report(const std::vector<double>& ti_values, const std::vector<double>& expected, const TIBins& bins,
                       const std::string& label);
// Throws ValidationError if any candidate lacks a TI value.
BiasReport bias_report(const std::vector<Candidate>& selected, const std::vector<double>& expected,
                       const TIBins& bins, const std::string& label);
BiasReport bias_report(const std::vector<CatalogEntry>& entries, const std::vector<double>& expected,
                       const TIBins& bins, const std::string& label);

std::string bias_report_to_json(const BiasReport& r);
BiasReport bias_report_from_json(const std::string& text);
std::string bias_report_csv(const BiasReport& r);
// Observed (solid black) vs expected (hatched) bars per bin.
std::string bias_report_svg(const BiasReport& r);

}  // namespace impactscan
