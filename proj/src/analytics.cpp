#include "impactscan/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "impactscan/error.hpp"

namespace impactscan {

using nlohmann::json;

void TIHistogram::validate() const {
  bins.validate();
  if (observed.size() != bins.count() || expected.size() != bins.count())
    throw ValidationError("histogram", "bin count mismatch");
  const double s = std::accumulate(expected.begin(), expected.end(), 0.0);
  if (std::abs(s - 1.0) >= 1e-9) throw ValidationError("expected", "must sum to 1");
}

std::vector<double> expected_distribution(const ValueGrid& map, const TIBins& bins, double lat_min, double lat_max) {
  bins.validate();
  validate(map);
  std::vector<double> area(bins.count(), 0.0);
  for (int r = 0; r < map.height; ++r) {
    const double lat = map.geo.pixel_to_geo(r, 0).lat;
    if (lat < lat_min || lat > lat_max) continue;
    const double w = std::cos(lat * std::numbers::pi / 180.0);
    for (int c = 0; c < map.width; ++c) {
      if (!map.valid(r, c)) continue;
      if (auto b = bins.bin(map.at(r, c))) area[*b] += w;
    }
  }
  const double total = std::accumulate(area.begin(), area.end(), 0.0);
  if (!(total > 0.0)) throw ValidationError("map", "no valid area inside the latitude band");
  for (auto& a : area) a /= total;
  return area;
}

std::vector<double> expected_distribution(const TIBasemap& map, const TIBins& bins, double lat_min, double lat_max) {
  map.validate();
  return expected_distribution(map.primary ? *map.primary : *map.fallback, bins, lat_min, lat_max);
}

double kl_divergence(const std::vector<double>& observed, const std::vector<double>& expected) {
  if (observed.size() != expected.size()) throw ValidationError("expected", "length differs from observed");
  double total = 0.0;
  for (double o : observed) {
    if (!(o >= 0.0)) throw ValidationError("observed", "counts must be nonnegative");
    total += o;
  }
  if (!(total > 0.0)) throw ValidationError("observed", "at least one observation is required");
  double d = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] == 0.0) continue;
    if (!(expected[i] > 0.0))
      throw ValidationError("expected", "bin " + std::to_string(i) + " has observations but zero expected probability");
    const double p = observed[i] / total;
    d += p * std::log(p / expected[i]);
  }
  // Rounding can leave tiny negatives when O matches E.
  return std::max(d, 0.0);
}

double kl_divergence(const std::vector<std::size_t>& observed, const std::vector<double>& expected) {
  return kl_divergence(std::vector<double>(observed.begin(), observed.end()), expected);
}

double effective_diameter(const std::vector<double>& diameters) {
  if (diameters.empty()) throw ValidationError("diameters", "must not be empty");
  double s = 0.0;
  for (double d : diameters) {
    if (!(d > 0.0) || !std::isfinite(d)) throw ValidationError("diameters", "must be positive");
    s += d * d * d;
  }
  return std::cbrt(s);
}

namespace {

std::pair<double, std::optional<double>> mean_std(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

SummaryStats summary_stats(const std::vector<CatalogEntry>& entries) {
  if (entries.empty()) throw ValidationError("entries", "must not be empty");
  SummaryStats s;
  s.n = entries.size();
  std::vector<double> diam, dci, ti;
  double clusters = 0, halos = 0, rays = 0, dark = 0, light = 0, dual = 0;
  for (const auto& e : entries) {
    diam.push_back(e.effective_diameter);
    dci.push_back(e.dust_cover_index);
    if (e.thermal_inertia) ti.push_back(*e.thermal_inertia);
    clusters += e.type == CraterType::cluster;
    halos += e.halo;
    rays += e.rays;
    dark += e.tone == Tone::dark;
    light += e.tone == Tone::light;
    dual += e.tone == Tone::dual;
  }
  const double n = static_cast<double>(s.n);
  std::tie(s.mean_diameter, s.std_diameter) = mean_std(diam);
  std::tie(s.mean_dci, s.std_dci) = mean_std(dci);
  if (!ti.empty()) s.mean_ti = mean_std(ti).first;
  s.cluster_fraction = clusters / n;
  s.halo_fraction = halos / n;
  s.ray_fraction = rays / n;
  s.dark_fraction = dark / n;
  s.light_fraction = light / n;
  s.dual_fraction = dual / n;
  return s;
}

BiasReport bias_report(const std::vector<double>& ti_values, const std::vector<double>& expected, const TIBins& bins,
                       const std::string& label) {
  if (ti_values.empty()) throw ValidationError("selection", "is empty");
  BiasReport r;
  r.label = label;
  r.histogram.bins = bins;
  r.histogram.observed.assign(bins.count(), 0);
  r.histogram.expected = expected;
  for (double v : ti_values) {
    const auto b = bins.bin(v);
    if (!b) throw ValidationError("ti_value", "value " + std::to_string(v) + " falls below the first bin");
    ++r.histogram.observed[*b];
  }
  r.histogram.validate();
  r.n = ti_values.size();
  r.d_kl = kl_divergence(r.histogram.observed, expected);
  return r;
}

BiasReport bias_report(const std::vector<Candidate>& selected, const std::vector<double>& expected,
                       const TIBins& bins, const std::string& label) {
  std::vector<double> ti;
  for (const auto& c : selected) {
    if (!c.ti_value) throw ValidationError("ti_value", "candidate " + c.id + " has no thermal inertia");
    ti.push_back(*c.ti_value);
  }
  return bias_report(ti, expected, bins, label);
}

BiasReport bias_report(const std::vector<CatalogEntry>& entries, const std::vector<double>& expected,
                       const TIBins& bins, const std::string& label) {
  std::vector<double> ti;
  for (const auto& e : entries) {
    if (!e.thermal_inertia) throw ValidationError("thermal_inertia", "entry " + e.impact_id + " has no value");
    ti.push_back(*e.thermal_inertia);
  }
  return bias_report(ti, expected, bins, label);
}

std::string bias_report_to_json(const BiasReport& r) {
  json bins = json::array();
  const auto& h = r.histogram;
  for (std::size_t i = 0; i < h.bins.count(); ++i)
    bins.push_back({{"lo", h.bins.edges[i]},
                    {"hi", i + 1 < h.bins.count() ? json(h.bins.edges[i + 1]) : json(nullptr)},
                    {"label", h.bins.label(i)},
                    {"observed", h.observed[i]},
                    {"expected", h.expected[i]}});
  json j{{"schema_version", 1}, {"label", r.label}, {"n", r.n}, {"d_kl", r.d_kl},
         {"bin_edges", h.bins.edges}, {"bins", bins}};
  return j.dump(2) + "\n";
}

BiasReport bias_report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    BiasReport r;
    r.label = j.at("label").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.d_kl = j.at("d_kl").get<double>();
    r.histogram.bins.edges = j.at("bin_edges").get<std::vector<double>>();
    for (const auto& b : j.at("bins")) {
      r.histogram.observed.push_back(b.at("observed").get<std::size_t>());
      r.histogram.expected.push_back(b.at("expected").get<double>());
    }
    r.histogram.validate();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError("report", std::string("malformed bias report: ") + e.what());
  }
}

std::string bias_report_csv(const BiasReport& r) {
  const auto& h = r.histogram;
  std::ostringstream s;
  s.precision(10);
  s << "bin,lo,hi,observed,observed_fraction,expected,ratio\n";
  for (std::size_t i = 0; i < h.bins.count(); ++i) {
    const double frac = r.n ? static_cast<double>(h.observed[i]) / static_cast<double>(r.n) : 0.0;
    s << i << "," << h.bins.edges[i] << ",";
    if (i + 1 < h.bins.count()) s << h.bins.edges[i + 1];
    s << "," << h.observed[i] << "," << frac << "," << h.expected[i] << ",";
    if (h.expected[i] > 0.0) s << frac / h.expected[i];
    s << "\n";
  }
  return s.str();
}

std::string bias_report_svg(const BiasReport& r) {
  const auto& h = r.histogram;
  const int w = 640, hgt = 360, left = 60, right = 20, top = 40, bottom = 60;
  const int plot_w = w - left - right, plot_h = hgt - top - bottom;
  const double n = std::max<double>(1.0, static_cast<double>(r.n));
  double ymax = 0.0;
  for (std::size_t i = 0; i < h.bins.count(); ++i)
    ymax = std::max({ymax, static_cast<double>(h.observed[i]), h.expected[i] * n});
  if (ymax <= 0.0) ymax = 1.0;
  const double slot = static_cast<double>(plot_w) / static_cast<double>(h.bins.count());
  const double bar = slot * 0.38;

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << hgt << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" patternTransform=\"rotate(45)\">"
       "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#555\" stroke-width=\"2\"/></pattern></defs>\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"13\">" << r.label << " (n = " << r.n << ", D_KL = " << r.d_kl
    << ")</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < h.bins.count(); ++i) {
    const double x = left + slot * static_cast<double>(i) + slot * 0.1;
    const double ho = plot_h * static_cast<double>(h.observed[i]) / ymax;
    const double he = plot_h * h.expected[i] * n / ymax;
    s << "<rect x=\"" << x << "\" y=\"" << top + plot_h - ho << "\" width=\"" << bar << "\" height=\"" << ho
      << "\" fill=\"black\"/>\n";
    s << "<rect x=\"" << x + bar << "\" y=\"" << top + plot_h - he << "\" width=\"" << bar << "\" height=\"" << he
      << "\" fill=\"url(#hatch)\" stroke=\"#555\"/>\n";
    s << "<text x=\"" << x + bar << "\" y=\"" << top + plot_h + 16 << "\" text-anchor=\"middle\">" << h.bins.edges[i]
      << "</text>\n";
  }
  s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << hgt - 20 << "\" text-anchor=\"middle\">thermal inertia (tiu)</text>\n";
  s << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 14 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">count</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace impactscan
