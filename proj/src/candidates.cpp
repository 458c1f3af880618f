#include "impactscan/candidates.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "impactscan/error.hpp"
#include "impactscan/hash.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(TISource s) {
  switch (s) {
    case TISource::primary: return "primary";
    case TISource::fallback: return "fallback";
    case TISource::missing: return "missing";
  }
  return "missing";
}

TISource ti_source_from_string(const std::string& s) {
  if (s == "primary") return TISource::primary;
  if (s == "fallback") return TISource::fallback;
  if (s == "missing") return TISource::missing;
  throw ValidationError("ti_source", "unknown value '" + s + "'");
}

std::string candidate_id(const WindowRef& seed) {
  Fnv1a h;
  h.update(seed.observation_id).update(std::string_view("\0", 1));
  h.update_pod(static_cast<std::int32_t>(seed.row_off)).update_pod(static_cast<std::int32_t>(seed.col_off));
  return "c" + h.hex();
}

// ---------------------------------------------------------------------------
// Grouping

namespace {

struct Entry {
  const ObservationInfo* info;
  int row;
  int col;
  const ScoreGrid* grid;
  float p;
  LatLon center;
  std::array<double, 3> xyz;
};

std::array<double, 3> to_xyz(LatLon p) {
  constexpr double d2r = std::numbers::pi / 180.0;
  const double cl = std::cos(p.lat * d2r);
  return {kMarsRadiusM * cl * std::cos(p.lon * d2r), kMarsRadiusM * cl * std::sin(p.lon * d2r),
          kMarsRadiusM * std::sin(p.lat * d2r)};
}

std::uint64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z) {
  return mix64(static_cast<std::uint64_t>(x) ^ mix64(static_cast<std::uint64_t>(y) ^ mix64(static_cast<std::uint64_t>(z))));
}

}  // namespace

std::vector<Candidate> build_candidates(const std::vector<ScoreGrid>& grids, const ObservationSource& source,
                                        double radius_m) {
  return build_candidates(grids, source.observations(), radius_m);
}

std::vector<Candidate> build_candidates(const std::vector<ScoreGrid>& grids,
                                        const std::vector<ObservationInfo>& observations, double radius_m) {
  if (!(radius_m > 0.0)) throw ValidationError("radius_m", "must be positive");
  std::unordered_map<std::string, const ObservationInfo*> by_id;
  for (const auto& o : observations) by_id[o.id] = &o;

  std::vector<Entry> entries;
  for (const auto& g : grids) {
    auto it = by_id.find(g.observation_id);
    if (it == by_id.end()) throw ValidationError("grids", "score grid for unknown observation '" + g.observation_id + "'");
    const ObservationInfo& info = *it->second;
    if (g.rows != window_count(info.height, g.size, g.stride) || g.cols != window_count(info.width, g.size, g.stride) ||
        g.values.size() != static_cast<std::size_t>(g.rows) * g.cols)
      throw ValidationError("grids", "score grid dimensions do not match observation '" + info.id + "'");
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const LatLon center = window_center_geo(info, g.window(r, c));
        entries.push_back({&info, r, c, &g, g.at(r, c), center, to_xyz(center)});
      }
  }

  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Entry& x = entries[a];
    const Entry& y = entries[b];
    if (x.p != y.p) return x.p > y.p;
    if (x.info->id != y.info->id) return x.info->id < y.info->id;
    if (x.row != y.row) return x.row < y.row;
    return x.col < y.col;
  });

  // Chord length never exceeds arc length, so a cube grid of side radius_m
  // over Cartesian positions finds every neighbor in the 27 surrounding cells.
  auto cell_of = [&](const Entry& e) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor(e.xyz[0] / radius_m)),
                                       static_cast<std::int64_t>(std::floor(e.xyz[1] / radius_m)),
                                       static_cast<std::int64_t>(std::floor(e.xyz[2] / radius_m))};
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto c = cell_of(entries[i]);
    cells[cell_key(c[0], c[1], c[2])].push_back(i);
  }

  std::vector<char> assigned(entries.size(), 0);
  std::vector<Candidate> out;
  for (std::size_t seed : order) {
    if (assigned[seed]) continue;
    const Entry& s = entries[seed];
    std::vector<std::size_t> members;
    const auto c = cell_of(s);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells.find(cell_key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells.end()) continue;
          for (std::size_t j : it->second)
            if (!assigned[j] && great_circle_distance(s.center, entries[j].center) <= radius_m) members.push_back(j);
        }
    for (std::size_t j : members) assigned[j] = 1;

    Candidate cand;
    const WindowRef seed_ref = s.grid->window(s.row, s.col);
    cand.id = candidate_id(seed_ref);
    cand.seed = s.center;
    cand.confidence = s.p;
    for (std::size_t j : members) {
      const Entry& e = entries[j];
      cand.members.push_back({e.grid->window(e.row, e.col), e.info->acquired_at, e.p, e.center});
    }
    std::sort(cand.members.begin(), cand.members.end(), [](const CandidateMember& a, const CandidateMember& b) {
      if (a.acquired_at != b.acquired_at) return a.acquired_at < b.acquired_at;
      if (a.window.observation_id != b.window.observation_id) return a.window.observation_id < b.window.observation_id;
      if (a.window.row_off != b.window.row_off) return a.window.row_off < b.window.row_off;
      return a.window.col_off < b.window.col_off;
    });
    for (std::size_t i = 0; i < cand.members.size(); ++i)
      if (cand.members[i].window == seed_ref) cand.seed_index = i;
    out.push_back(std::move(cand));
  }
  // Seeds are visited in descending p_pos, so out is already in confidence order.
  return out;
}

// ---------------------------------------------------------------------------
// Thermal inertia

void TIBasemap::validate() const {
  if (!primary && !fallback) throw ValidationError("basemap", "at least one of primary or fallback is required");
  if (primary) impactscan::validate(*primary);
  if (fallback) impactscan::validate(*fallback);
}

namespace {

std::optional<ValueGrid> load_optional_grid(const fs::path& dir, const std::string& stem) {
  const fs::path meta = dir / (stem + ".json");
  if (!fs::exists(meta)) return std::nullopt;
  for (const char* ext : {".pgm", ".png"}) {
    const fs::path img = dir / (stem + ext);
    if (fs::exists(img)) {
      ValueGrid g = load_value_grid(img, meta);
      g.min_valid = 0.0;
      return g;
    }
  }
  throw NotFoundError("basemap sidecar " + meta.string() + " has no raster next to it");
}

std::optional<double> lookup(const std::optional<ValueGrid>& g, LatLon p) {
  if (!g) return std::nullopt;
  const auto px = g->nearest_pixel(p);
  if (!px || !g->valid(px->first, px->second)) return std::nullopt;
  return g->at(px->first, px->second);
}

}  // namespace

TIBasemap TIBasemap::load(const fs::path& dir) {
  TIBasemap m{load_optional_grid(dir, "ti_primary"), load_optional_grid(dir, "ti_fallback")};
  m.validate();
  return m;
}

TISample sample_ti(const TIBasemap& map, LatLon p) {
  if (auto v = lookup(map.primary, p)) return {v, TISource::primary};
  if (auto v = lookup(map.fallback, p)) return {v, TISource::fallback};
  return {std::nullopt, TISource::missing};
}

void assign_ti(std::vector<Candidate>& cands, const TIBasemap& map) {
  for (auto& c : cands) {
    const TISample s = sample_ti(map, c.seed);
    c.ti_value = s.value;
    c.ti_source = s.source;
  }
}

double sample_footprint_mean(const ValueGrid& grid, const std::vector<LatLon>& polygon) {
  if (polygon.size() < 3) throw ValidationError("polygon", "needs at least three vertices");
  std::vector<std::pair<double, double>> px;  // (row, col)
  const double shift = grid.locate(polygon[0]).second - grid.geo.geo_to_pixel(polygon[0]).second;
  for (const auto& p : polygon) {
    auto rc = grid.geo.geo_to_pixel(p);
    rc.second += shift;
    px.push_back(rc);
  }
  double area = 0.0;
  for (std::size_t i = 0, j = px.size() - 1; i < px.size(); j = i++)
    area += px[j].second * px[i].first - px[i].second * px[j].first;
  if (std::abs(area) <= 0.0) throw ValidationError("polygon", "area must be positive");

  double rmin = px[0].first, rmax = rmin, cmin = px[0].second, cmax = cmin;
  for (const auto& [r, c] : px) {
    rmin = std::min(rmin, r), rmax = std::max(rmax, r);
    cmin = std::min(cmin, c), cmax = std::max(cmax, c);
  }
  const int r0 = std::max(0, static_cast<int>(std::ceil(rmin)));
  const int r1 = std::min(grid.height - 1, static_cast<int>(std::floor(rmax)));
  const long turn = std::lround(360.0 / grid.geo.deg_per_px());
  const bool wraps = turn == grid.width;
  const int c0 = wraps ? static_cast<int>(std::ceil(cmin)) : std::max(0, static_cast<int>(std::ceil(cmin)));
  const int c1 = wraps ? static_cast<int>(std::floor(cmax))
                       : std::min(grid.width - 1, static_cast<int>(std::floor(cmax)));

  double sum = 0.0;
  std::size_t n = 0;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      bool inside = false;
      for (std::size_t i = 0, j = px.size() - 1; i < px.size(); j = i++) {
        const auto [ri, ci] = px[i];
        const auto [rj, cj] = px[j];
        if ((ri > r) != (rj > r) && c < (cj - ci) * (r - ri) / (rj - ri) + ci) inside = !inside;
      }
      const int cc = wraps ? static_cast<int>(((c % turn) + turn) % turn) : c;
      if (inside && grid.valid(r, cc)) {
        sum += grid.at(r, cc);
        ++n;
      }
    }
  if (n == 0) throw ValidationError("polygon", "covers no valid pixels");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Filtering and selection

namespace {

std::optional<std::pair<std::size_t, std::size_t>> dating_members(const Candidate& c, const FilterOptions& opts) {
  std::optional<std::size_t> after;
  for (std::size_t i = 0; i < c.members.size() && !after; ++i)
    if (c.members[i].p_pos >= opts.detect_threshold) after = i;
  if (!after) return std::nullopt;
  std::optional<std::size_t> before;
  for (std::size_t i = 0; i < *after; ++i)
    if (c.members[i].p_pos < opts.nondetect_threshold && c.members[i].acquired_at < c.members[*after].acquired_at)
      before = i;
  if (!before) return std::nullopt;
  return std::pair{*before, *after};
}

}  // namespace

std::vector<Candidate> apply_filters(const std::vector<Candidate>& cands, const FilterOptions& opts) {
  std::vector<Candidate> out;
  for (const auto& c : cands) {
    if (c.seed.lat < opts.lat_min || c.seed.lat > opts.lat_max) continue;
    const auto m = dating_members(c, opts);
    if (!m) continue;
    Candidate kept = c;
    kept.before = m->first;
    kept.after = m->second;
    out.push_back(std::move(kept));
  }
  return out;
}

std::optional<std::pair<Timestamp, Timestamp>> formation_window(const Candidate& c, const FilterOptions& opts) {
  if (c.before && c.after) return std::pair{c.members[*c.before].acquired_at, c.members[*c.after].acquired_at};
  const auto m = dating_members(c, opts);
  if (!m) return std::nullopt;
  return std::pair{c.members[m->first].acquired_at, c.members[m->second].acquired_at};
}

void sort_by_confidence(std::vector<Candidate>& cands) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.id < b.id;
  });
}

std::vector<Candidate> top_k(std::vector<Candidate> cands, std::size_t k) {
  sort_by_confidence(cands);
  if (cands.size() > k) cands.resize(k);
  return cands;
}

TIBins TIBins::uniform(double lo, double hi, int count) {
  if (count < 1) throw ValidationError("bins", "count must be positive");
  TIBins b;
  for (int i = 0; i <= count; ++i) b.edges.push_back(lo + (hi - lo) * i / count);
  return b;
}

void TIBins::validate() const {
  if (edges.size() < 2) throw ValidationError("bin_edges", "need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw ValidationError("bin_edges", "must be strictly increasing");
}

std::optional<std::size_t> TIBins::bin(double ti) const {
  if (!(ti >= edges.front())) return std::nullopt;
  const std::size_t n = count();
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (ti < edges[i + 1]) return i;
  return n - 1;
}

std::string TIBins::label(std::size_t i) const {
  std::ostringstream s;
  s << "[" << edges[i] << ", ";
  if (i + 1 == count())
    s << "inf)";
  else
    s << edges[i + 1] << ")";
  return s.str();
}

std::vector<std::vector<Candidate>> stratified_top(const std::vector<Candidate>& cands, const TIBins& bins,
                                                   std::size_t per_bin) {
  bins.validate();
  std::vector<std::vector<Candidate>> out(bins.count());
  for (const auto& c : cands) {
    if (c.ti_source == TISource::missing || !c.ti_value) continue;
    if (auto b = bins.bin(*c.ti_value)) out[*b].push_back(c);
  }
  for (auto& list : out) {
    sort_by_confidence(list);
    if (list.size() > per_bin) list.resize(per_bin);
  }
  return out;
}

std::vector<Candidate> flatten(const std::vector<std::vector<Candidate>>& per_bin) {
  std::vector<Candidate> out;
  for (const auto& list : per_bin) out.insert(out.end(), list.begin(), list.end());
  sort_by_confidence(out);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kCandidateSchema = "impactscan-candidates";
constexpr int kCandidateSchemaVersion = 1;

json to_json(const Candidate& c) {
  json members = json::array();
  for (const auto& m : c.members)
    members.push_back({{"observation_id", m.window.observation_id},
                       {"row_off", m.window.row_off},
                       {"col_off", m.window.col_off},
                       {"size", m.window.size},
                       {"acquired_at", format_iso8601(m.acquired_at)},
                       {"p_pos", m.p_pos},
                       {"lat", m.center.lat},
                       {"lon", m.center.lon}});
  json j{{"id", c.id},
         {"lat", c.seed.lat},
         {"lon", c.seed.lon},
         {"confidence", c.confidence},
         {"seed_index", c.seed_index},
         {"ti_value", c.ti_value ? json(*c.ti_value) : json(nullptr)},
         {"ti_source", to_string(c.ti_source)},
         {"before", c.before ? json(*c.before) : json(nullptr)},
         {"after", c.after ? json(*c.after) : json(nullptr)},
         {"members", members}};
  return j;
}

std::optional<std::size_t> opt_index(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::size_t>();
}

Candidate from_json(const json& j) {
  Candidate c;
  c.id = j.at("id").get<std::string>();
  c.seed = {j.at("lat").get<double>(), j.at("lon").get<double>()};
  c.confidence = j.at("confidence").get<float>();
  c.seed_index = j.at("seed_index").get<std::size_t>();
  if (!j.at("ti_value").is_null()) c.ti_value = j["ti_value"].get<double>();
  c.ti_source = ti_source_from_string(j.at("ti_source").get<std::string>());
  c.before = opt_index(j, "before");
  c.after = opt_index(j, "after");
  for (const auto& m : j.at("members"))
    c.members.push_back({{m.at("observation_id").get<std::string>(), m.at("row_off").get<int>(),
                          m.at("col_off").get<int>(), m.at("size").get<int>()},
                         parse_iso8601(m.at("acquired_at").get<std::string>()),
                         m.at("p_pos").get<float>(),
                         {m.at("lat").get<double>(), m.at("lon").get<double>()}});
  const std::size_t n = c.members.size();
  if (n == 0 || c.seed_index >= n || (c.before && *c.before >= n) || (c.after && *c.after >= n))
    throw ValidationError("candidate", "member index out of range in '" + c.id + "'");
  return c;
}

}  // namespace

std::string candidates_to_jsonl(const std::vector<Candidate>& cands) {
  std::string out = json{{"schema", kCandidateSchema}, {"version", kCandidateSchemaVersion}}.dump() + "\n";
  for (const auto& c : cands) out += to_json(c).dump() + "\n";
  return out;
}

std::vector<Candidate> candidates_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<Candidate> out;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("schema", "") != kCandidateSchema)
          throw ValidationError("schema", "not a candidate file");
        if (j.value("version", 0) != kCandidateSchemaVersion)
          throw ValidationError("version", "unsupported candidate schema version");
        header = true;
        continue;
      }
      out.push_back(from_json(j));
    } catch (const json::exception& e) {
      throw ValidationError("candidates", "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ValidationError("schema", "missing candidate file header");
  return out;
}

void write_candidates(const fs::path& path, const std::vector<Candidate>& cands) {
  write_file_atomic(path, candidates_to_jsonl(cands));
}

std::vector<Candidate> read_candidates(const fs::path& path) { return candidates_from_jsonl(read_file(path)); }

}  // namespace impactscan
