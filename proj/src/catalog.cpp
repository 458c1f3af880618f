#include "impactscan/catalog.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "impactscan/analytics.hpp"
#include "impactscan/error.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStatusNames[] = {"unreviewed",  "non_impact", "old_impact",         "undateable_fresh",
                                        "known_fresh", "new_fresh",  "duplicate",          "followup_requested",
                                        "confirmed",   "rejected_after_followup"};

constexpr const char* kDecisionSchema = "impactscan-decisions";
constexpr const char* kCatalogSchema = "impactscan-catalog";
constexpr int kSchemaVersion = 1;

}  // namespace

const char* to_string(ReviewStatus s) { return kStatusNames[static_cast<int>(s)]; }

ReviewStatus review_status_from_string(const std::string& s) {
  for (int i = 0; i < 10; ++i)
    if (s == kStatusNames[i]) return static_cast<ReviewStatus>(i);
  throw ValidationError("status", "unknown review status '" + s + "'");
}

const std::vector<ReviewStatus>& all_review_statuses() {
  static const std::vector<ReviewStatus> all = [] {
    std::vector<ReviewStatus> v;
    for (int i = 0; i < 10; ++i) v.push_back(static_cast<ReviewStatus>(i));
    return v;
  }();
  return all;
}

bool is_legal_transition(ReviewStatus from, ReviewStatus to) {
  using S = ReviewStatus;
  switch (from) {
    case S::unreviewed:
      return to == S::non_impact || to == S::old_impact || to == S::undateable_fresh || to == S::known_fresh ||
             to == S::new_fresh || to == S::duplicate;
    case S::new_fresh:
      return to == S::followup_requested;
    case S::followup_requested:
      return to == S::confirmed || to == S::rejected_after_followup;
    default:
      return false;
  }
}

const char* to_string(CraterType t) { return t == CraterType::single ? "single" : "cluster"; }

CraterType crater_type_from_string(const std::string& s) {
  if (s == "single") return CraterType::single;
  if (s == "cluster") return CraterType::cluster;
  throw ValidationError("type", "unknown crater type '" + s + "'");
}

void Measurements::validate() const {
  if (diameters_m.empty()) throw ValidationError("diameters", "at least one diameter is required");
  for (double d : diameters_m)
    if (!(d > 0.0)) throw ValidationError("diameters", "must be positive");
  if (type == CraterType::single && diameters_m.size() != 1)
    throw ValidationError("diameters", "a single-crater entry takes exactly one diameter");
  if (type == CraterType::cluster && diameters_m.size() < 2)
    throw ValidationError("diameters", "a cluster entry lists each crater's diameter (at least two)");
  if (!std::isfinite(dust_cover_index)) throw ValidationError("dust_cover_index", "must be finite");
  if (thermal_inertia && !(*thermal_inertia >= 0.0)) throw ValidationError("thermal_inertia", "must be nonnegative");
}

void CatalogEntry::validate() const {
  if (impact_id.empty()) throw ValidationError("impact_id", "must not be empty");
  if (!(effective_diameter > 0.0)) throw ValidationError("effective_diameter", "must be positive");
  if (!(before.date < after.date)) throw ValidationError("before", "before date must precede after date");
}

void QueryFilter::validate() const {
  bins.validate();
  if (lat_min && lat_max && *lat_min > *lat_max) throw ValidationError("lat", "lat_min exceeds lat_max");
  for (auto v : {min_confidence, max_confidence})
    if (v && !(*v >= 0.0 && *v <= 1.0)) throw ValidationError("confidence", "must lie in [0, 1]");
  if (min_confidence && max_confidence && *min_confidence > *max_confidence)
    throw ValidationError("confidence", "min exceeds max");
  if (ti_bin && *ti_bin >= bins.count()) throw ValidationError("bin", "index out of range");
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json decision_json(const ReviewDecision& d) {
  return {{"seq", d.sequence},
          {"candidate_id", d.candidate_id},
          {"previous", to_string(d.previous)},
          {"status", to_string(d.status)},
          {"reviewer", d.reviewer},
          {"notes", d.notes},
          {"timestamp", format_iso8601(d.timestamp)},
          {"supervisor_override", d.supervisor_override},
          {"conflict", d.conflict}};
}

ReviewDecision decision_from(const json& j) {
  ReviewDecision d;
  d.sequence = j.at("seq").get<std::uint64_t>();
  d.candidate_id = j.at("candidate_id").get<std::string>();
  d.previous = review_status_from_string(j.at("previous").get<std::string>());
  d.status = review_status_from_string(j.at("status").get<std::string>());
  d.reviewer = j.at("reviewer").get<std::string>();
  d.notes = j.value("notes", "");
  d.timestamp = parse_iso8601(j.at("timestamp").get<std::string>());
  d.supervisor_override = j.value("supervisor_override", false);
  d.conflict = j.value("conflict", false);
  return d;
}

json image_json(const ImageRef& r) { return {{"id", r.id}, {"date", format_iso8601(r.date)}}; }
ImageRef image_from(const json& j) { return {j.at("id").get<std::string>(), parse_iso8601(j.at("date").get<std::string>())}; }

json entry_json(const CatalogEntry& e) {
  return {{"impact_id", e.impact_id},
          {"candidate_id", e.candidate_id},
          {"lat", e.lat},
          {"lon", e.lon},
          {"type", to_string(e.type)},
          {"halo", e.halo},
          {"rays", e.rays},
          {"tone", to_string(e.tone)},
          {"effective_diameter", e.effective_diameter},
          {"diameters", e.diameters_m},
          {"dust_cover_index", e.dust_cover_index},
          {"thermal_inertia", e.thermal_inertia ? json(*e.thermal_inertia) : json(nullptr)},
          {"before", image_json(e.before)},
          {"after", image_json(e.after)},
          {"followup_image", e.followup_image ? json(*e.followup_image) : json(nullptr)}};
}

CatalogEntry entry_from(const json& j) {
  CatalogEntry e;
  e.impact_id = j.at("impact_id").get<std::string>();
  e.candidate_id = j.value("candidate_id", "");
  e.lat = j.at("lat").get<double>();
  e.lon = j.at("lon").get<double>();
  e.type = crater_type_from_string(j.at("type").get<std::string>());
  e.halo = j.at("halo").get<bool>();
  e.rays = j.at("rays").get<bool>();
  e.tone = tone_from_string(j.at("tone").get<std::string>());
  e.effective_diameter = j.at("effective_diameter").get<double>();
  e.diameters_m = j.value("diameters", std::vector<double>{});
  e.dust_cover_index = j.at("dust_cover_index").get<double>();
  if (j.contains("thermal_inertia") && !j["thermal_inertia"].is_null()) e.thermal_inertia = j["thermal_inertia"].get<double>();
  e.before = image_from(j.at("before"));
  e.after = image_from(j.at("after"));
  if (j.contains("followup_image") && !j["followup_image"].is_null())
    e.followup_image = j["followup_image"].get<std::string>();
  e.validate();
  return e;
}

// Parses a JSON-lines log with a schema header. A final line that is
// unterminated or unparsable is a torn append: it is dropped and the file is
// truncated back to the last complete record.
std::vector<json> read_log(const fs::path& path, const char* schema) {
  std::vector<json> out;
  if (!fs::exists(path)) return out;
  const std::string text = read_file(path);
  std::size_t pos = 0, good_end = 0;
  bool header = false;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool last = nl == std::string::npos || nl + 1 == text.size();
    const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    json j;
    try {
      if (nl == std::string::npos) throw std::runtime_error("unterminated");
      j = json::parse(line);
    } catch (const std::exception&) {
      if (last) break;
      throw ValidationError("log", "corrupt record in " + path.string() + " at byte " + std::to_string(pos));
    }
    if (!header) {
      if (j.value("schema", "") != schema || j.value("version", 0) != kSchemaVersion)
        throw ValidationError("schema", path.string() + " is not a " + schema + " v1 log");
      header = true;
    } else {
      out.push_back(std::move(j));
    }
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end < text.size()) fs::resize_file(path, good_end);
  return out;
}

}  // namespace

std::string catalog_entry_to_json(const CatalogEntry& e) { return entry_json(e).dump(); }

CatalogEntry catalog_entry_from_json(const std::string& line) {
  try {
    return entry_from(json::parse(line));
  } catch (const json::exception& e) {
    throw ValidationError("catalog", std::string("malformed entry: ") + e.what());
  }
}

std::vector<CatalogEntry> read_catalog_jsonl(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("no catalog at " + path.string());
  std::vector<CatalogEntry> out;
  for (const auto& j : read_log(path, kCatalogSchema)) out.push_back(entry_from(j));
  return out;
}

std::unordered_map<std::string, ReviewStatus> replay_statuses(const std::vector<ReviewDecision>& log) {
  std::unordered_map<std::string, ReviewStatus> s;
  for (const auto& d : log) s[d.candidate_id] = d.status;
  return s;
}

// ---------------------------------------------------------------------------
// Store

CatalogStore::CatalogStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  load();
}

void CatalogStore::load() {
  const fs::path cands = dir_ / "candidates.jsonl";
  if (fs::exists(cands))
    for (auto& c : read_candidates(cands)) {
      index_[c.id] = records_.size();
      records_.push_back({std::move(c), ReviewStatus::unreviewed, std::nullopt});
    }

  std::size_t snap_pos = 0;
  std::unordered_map<std::string, ReviewStatus> snap;
  const fs::path snap_path = dir_ / "snapshot.json";
  if (fs::exists(snap_path)) {
    try {
      const json j = json::parse(read_file(snap_path));
      snap_pos = j.at("log_position").get<std::size_t>();
      for (const auto& [id, st] : j.at("statuses").items()) snap[id] = review_status_from_string(st.get<std::string>());
    } catch (const std::exception&) {
      snap_pos = 0;
      snap.clear();
    }
  }

  for (const auto& j : read_log(dir_ / "decisions.jsonl", kDecisionSchema)) log_.push_back(decision_from(j));
  if (snap_pos > log_.size()) snap_pos = 0, snap.clear();
  for (const auto& [id, st] : snap) {
    auto it = index_.find(id);
    if (it != index_.end()) records_[it->second].status = st;
  }
  for (std::size_t i = snap_pos; i < log_.size(); ++i) apply(log_[i]);

  if (fs::exists(dir_ / "catalog.jsonl"))
    for (const auto& j : read_log(dir_ / "catalog.jsonl", kCatalogSchema)) {
      catalog_.push_back(entry_from(j));
      auto it = index_.find(catalog_.back().candidate_id);
      if (it != index_.end()) records_[it->second].impact_id = catalog_.back().impact_id;
    }
}

void CatalogStore::apply(const ReviewDecision& d) {
  auto it = index_.find(d.candidate_id);
  if (it == index_.end()) return;  // decisions on candidates dropped from the set stay in the log
  records_[it->second].status = d.status;
}

void CatalogStore::append_line(const fs::path& path, const std::string& line) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path.string());
  std::string data;
  if (fresh) {
    const char* schema = path.filename() == "catalog.jsonl" ? kCatalogSchema : kDecisionSchema;
    data = json{{"schema", schema}, {"version", kSchemaVersion}}.dump() + "\n";
  }
  data += line + "\n";
  const bool ok = ::write(fd, data.data(), data.size()) == static_cast<ssize_t>(data.size()) && ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw std::runtime_error("append to " + path.string() + " failed");
}

std::size_t CatalogStore::import_candidates(const std::vector<Candidate>& cands) {
  std::lock_guard w(write_mu_);
  std::unique_lock lock(mu_);
  std::size_t added = 0;
  for (const auto& c : cands) {
    if (index_.count(c.id)) continue;
    index_[c.id] = records_.size();
    records_.push_back({c, ReviewStatus::unreviewed, std::nullopt});
    ++added;
  }
  // Decisions logged before the candidate existed apply now.
  if (added) {
    for (auto& r : records_) r.status = ReviewStatus::unreviewed;
    for (const auto& d : log_) apply(d);
    std::vector<Candidate> all;
    for (const auto& r : records_) all.push_back(r.candidate);
    write_candidates(dir_ / "candidates.jsonl", all);
  }
  return added;
}

std::size_t CatalogStore::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

bool CatalogStore::contains(const std::string& id) const {
  std::shared_lock lock(mu_);
  return index_.count(id) != 0;
}

CandidateRecord CatalogStore::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown candidate '" + id + "'");
  return records_[it->second];
}

std::vector<ReviewDecision> CatalogStore::history(const std::string& id) const {
  std::shared_lock lock(mu_);
  if (!index_.count(id)) throw NotFoundError("unknown candidate '" + id + "'");
  std::vector<ReviewDecision> out;
  for (const auto& d : log_)
    if (d.candidate_id == id) out.push_back(d);
  return out;
}

std::vector<ReviewDecision> CatalogStore::decisions() const {
  std::shared_lock lock(mu_);
  return log_;
}

std::vector<CandidateRecord> CatalogStore::all() const {
  std::shared_lock lock(mu_);
  return records_;
}

ReviewDecision CatalogStore::record_decision(const std::string& id, const DecisionRequest& req) {
  if (req.reviewer.empty()) throw ValidationError("reviewer", "must not be empty");
  std::lock_guard w(write_mu_);
  ReviewDecision d;
  {
    std::shared_lock lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown candidate '" + id + "'");
    const CandidateRecord& rec = records_[it->second];
    const ReviewStatus cur = rec.status;
    bool conflict = false;
    if (!req.supervisor_override) {
      if (rec.impact_id) throw ConflictError("candidate '" + id + "' is already in the catalog");
      if (is_legal_transition(cur, req.status)) {
        conflict = req.base_status && *req.base_status != cur;
      } else {
        bool stale_ok = false;
        if (req.base_status && *req.base_status != cur && is_legal_transition(*req.base_status, req.status)) {
          stale_ok = *req.base_status == ReviewStatus::unreviewed;
          for (const auto& past : log_)
            if (past.candidate_id == id && past.status == *req.base_status) stale_ok = true;
        }
        if (!stale_ok)
          throw ConflictError(std::string("illegal transition ") + to_string(cur) + " -> " + to_string(req.status));
        conflict = true;
      }
    }
    d.sequence = log_.size() + 1;
    d.candidate_id = id;
    d.previous = cur;
    d.status = req.status;
    d.reviewer = req.reviewer;
    d.notes = req.notes;
    d.timestamp = req.timestamp ? *req.timestamp
                                : std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    d.supervisor_override = req.supervisor_override;
    d.conflict = conflict;
  }
  append_line(dir_ / "decisions.jsonl", decision_json(d).dump());
  {
    std::unique_lock lock(mu_);
    log_.push_back(d);
    apply(d);
  }
  if (log_.size() % snapshot_every_ == 0) write_snapshot();
  return d;
}

CatalogEntry CatalogStore::promote_to_catalog(const std::string& id, const Measurements& m,
                                              std::optional<std::string> impact_id) {
  m.validate();
  std::lock_guard w(write_mu_);
  CatalogEntry e;
  {
    std::shared_lock lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown candidate '" + id + "'");
    const CandidateRecord& rec = records_[it->second];
    if (rec.status != ReviewStatus::confirmed)
      throw ConflictError("candidate '" + id + "' is " + to_string(rec.status) + ", not confirmed");
    if (rec.impact_id) throw ConflictError("candidate '" + id + "' is already catalog entry " + *rec.impact_id);
    const Candidate& c = rec.candidate;
    if (!c.before || !c.after) throw ConflictError("candidate '" + id + "' has no before/after observations");
    char buf[32];
    std::snprintf(buf, sizeof buf, "ML%04zu", catalog_.size() + 1);
    e.impact_id = impact_id ? *impact_id : std::string(buf);
    for (const auto& prior : catalog_)
      if (prior.impact_id == e.impact_id) throw ConflictError("impact id '" + e.impact_id + "' already exists");
    e.candidate_id = id;
    e.lat = c.seed.lat;
    e.lon = c.seed.lon;
    e.type = m.type;
    e.halo = m.halo;
    e.rays = m.rays;
    e.tone = m.tone;
    e.diameters_m = m.diameters_m;
    e.effective_diameter = effective_diameter(m.diameters_m);
    e.dust_cover_index = m.dust_cover_index;
    e.thermal_inertia = m.thermal_inertia ? m.thermal_inertia : c.ti_value;
    const auto& b = c.members[*c.before];
    const auto& a = c.members[*c.after];
    e.before = {b.window.observation_id, b.acquired_at};
    e.after = {a.window.observation_id, a.acquired_at};
    e.followup_image = m.followup_image;
    e.validate();
  }
  append_line(dir_ / "catalog.jsonl", entry_json(e).dump());
  std::unique_lock lock(mu_);
  catalog_.push_back(e);
  records_[index_.at(id)].impact_id = e.impact_id;
  return e;
}

std::vector<CatalogEntry> CatalogStore::catalog() const {
  std::shared_lock lock(mu_);
  return catalog_;
}

QueryPage CatalogStore::query(const QueryFilter& f, std::size_t page, std::size_t page_size) const {
  f.validate();
  if (page < 1) throw ValidationError("page", "pages start at 1");
  if (page_size < 1) throw ValidationError("page_size", "must be at least 1");
  std::shared_lock lock(mu_);
  std::vector<const CandidateRecord*> hits;
  for (const auto& r : records_) {
    const Candidate& c = r.candidate;
    if (f.status && r.status != *f.status) continue;
    if (f.ti_bin) {
      if (!c.ti_value) continue;
      const auto b = f.bins.bin(*c.ti_value);
      if (!b || *b != *f.ti_bin) continue;
    }
    if (f.lat_min && c.seed.lat < *f.lat_min) continue;
    if (f.lat_max && c.seed.lat > *f.lat_max) continue;
    if (f.min_confidence && c.confidence < *f.min_confidence) continue;
    if (f.max_confidence && c.confidence > *f.max_confidence) continue;
    hits.push_back(&r);
  }
  std::sort(hits.begin(), hits.end(), [](const CandidateRecord* a, const CandidateRecord* b) {
    if (a->candidate.confidence != b->candidate.confidence) return a->candidate.confidence > b->candidate.confidence;
    return a->candidate.id < b->candidate.id;
  });
  QueryPage out;
  out.total = hits.size();
  out.page = page;
  out.page_size = page_size;
  const std::size_t start = (page - 1) * page_size;
  for (std::size_t i = start; i < hits.size() && i < start + page_size; ++i) out.items.push_back(*hits[i]);
  return out;
}

std::optional<CatalogHint> CatalogStore::nearest_catalog_entry(LatLon p, double max_m) const {
  std::shared_lock lock(mu_);
  std::optional<CatalogHint> best;
  for (const auto* list : {&catalog_, &known_})
    for (const auto& e : *list) {
      const double d = great_circle_distance(p, {e.lat, e.lon});
      if (d <= max_m && (!best || d < best->distance_m)) best = CatalogHint{e, d};
    }
  return best;
}

void CatalogStore::set_known_catalog(std::vector<CatalogEntry> known) {
  std::unique_lock lock(mu_);
  known_ = std::move(known);
}

void CatalogStore::write_snapshot() const {
  json statuses = json::object();
  std::size_t pos;
  {
    std::shared_lock lock(mu_);
    for (const auto& r : records_)
      if (r.status != ReviewStatus::unreviewed) statuses[r.candidate.id] = to_string(r.status);
    pos = log_.size();
  }
  json j{{"schema_version", kSchemaVersion}, {"log_position", pos}, {"statuses", statuses}};
  write_file_atomic(dir_ / "snapshot.json", j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Exports

namespace {

std::vector<const CatalogEntry*> by_ti(const std::vector<CatalogEntry>& entries) {
  std::vector<const CatalogEntry*> v;
  for (const auto& e : entries) v.push_back(&e);
  std::sort(v.begin(), v.end(), [](const CatalogEntry* a, const CatalogEntry* b) {
    const double ta = a->thermal_inertia.value_or(std::numeric_limits<double>::infinity());
    const double tb = b->thermal_inertia.value_or(std::numeric_limits<double>::infinity());
    if (ta != tb) return ta < tb;
    return a->impact_id < b->impact_id;
  });
  return v;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string catalog_properties_csv(const std::vector<CatalogEntry>& entries) {
  std::string out = "id,latitude_n,longitude_e,type,halo,rays,effective_diameter_m,dust_cover_index,thermal_inertia\n";
  for (const auto* e : by_ti(entries)) {
    out += e->impact_id + "," + fixed(e->lat, 4) + "," + fixed(e->lon, 4) + "," + to_string(e->type) + "," +
           (e->halo ? "yes" : "no") + "," + (e->rays ? "yes" : "no") + "," + fixed(e->effective_diameter, 2) + "," +
           fixed(e->dust_cover_index, 3) + "," + (e->thermal_inertia ? fixed(*e->thermal_inertia, 0) : "") + "\n";
  }
  return out;
}

std::string catalog_images_csv(const std::vector<CatalogEntry>& entries) {
  std::string out = "id,latitude_n,longitude_e,before_image,before_date,after_image,after_date,followup_image\n";
  for (const auto* e : by_ti(entries)) {
    out += e->impact_id + "," + fixed(e->lat, 4) + "," + fixed(e->lon, 4) + "," + e->before.id + "," +
           format_date(e->before.date) + "," + e->after.id + "," + format_date(e->after.date) + "," +
           e->followup_image.value_or("") + "\n";
  }
  return out;
}

}  // namespace impactscan
