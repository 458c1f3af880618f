#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "impactscan/candidates.hpp"
#include "impactscan/tone.hpp"

namespace impactscan {

enum class ReviewStatus {
  unreviewed,
  non_impact,
  old_impact,
  undateable_fresh,
  known_fresh,
  new_fresh,
  duplicate,
  followup_requested,
  confirmed,
  rejected_after_followup,
};
const char* to_string(ReviewStatus s);
ReviewStatus review_status_from_string(const std::string& s);
const std::vector<ReviewStatus>& all_review_statuses();

// unreviewed -> any triage category; new_fresh -> followup_requested ->
// {confirmed, rejected_after_followup}. Nothing else.
bool is_legal_transition(ReviewStatus from, ReviewStatus to);

struct ReviewDecision {
  std::uint64_t sequence = 0;  // position in the log, from 1
  std::string candidate_id;
  ReviewStatus previous = ReviewStatus::unreviewed;
  ReviewStatus status = ReviewStatus::unreviewed;
  std::string reviewer;
  std::string notes;
  Timestamp timestamp;
  bool supervisor_override = false;
  // Set when the reviewer acted on a status that had since changed.
  bool conflict = false;
};

struct DecisionRequest {
  ReviewStatus status = ReviewStatus::unreviewed;
  std::string reviewer;
  std::string notes;
  // The status the reviewer saw. If it is stale but the move from it is legal,
  // the decision still applies (last write wins) and is flagged as a conflict.
  std::optional<ReviewStatus> base_status;
  bool supervisor_override = false;
  std::optional<Timestamp> timestamp;
};

enum class CraterType { single, cluster };
const char* to_string(CraterType t);
CraterType crater_type_from_string(const std::string& s);

struct ImageRef {
  std::string id;
  Timestamp date;
};

struct Measurements {
  CraterType type = CraterType::single;
  std::vector<double> diameters_m;
  bool halo = false;
  bool rays = false;
  Tone tone = Tone::dark;
  double dust_cover_index = 0.0;
  // Overrides the candidate's sampled TI (e.g. a footprint mean).
  std::optional<double> thermal_inertia;
  std::optional<std::string> followup_image;

  void validate() const;
};

struct CatalogEntry {
  std::string impact_id;
  std::string candidate_id;
  double lat = 0.0;
  double lon = 0.0;
  CraterType type = CraterType::single;
  bool halo = false;
  bool rays = false;
  Tone tone = Tone::dark;
  double effective_diameter = 0.0;
  std::vector<double> diameters_m;
  double dust_cover_index = 0.0;
  std::optional<double> thermal_inertia;
  ImageRef before;
  ImageRef after;
  std::optional<std::string> followup_image;

  void validate() const;
};

struct CandidateRecord {
  Candidate candidate;
  ReviewStatus status = ReviewStatus::unreviewed;
  std::optional<std::string> impact_id;
};

struct QueryFilter {
  std::optional<ReviewStatus> status;
  std::optional<std::size_t> ti_bin;
  std::optional<double> lat_min;
  std::optional<double> lat_max;
  std::optional<double> min_confidence;
  std::optional<double> max_confidence;
  TIBins bins = TIBins::uniform();

  void validate() const;
};

struct QueryPage {
  std::vector<CandidateRecord> items;
  std::size_t total = 0;
  std::size_t page = 1;
  std::size_t page_size = 50;
};

struct CatalogHint {
  CatalogEntry entry;
  double distance_m = 0.0;
};

// Directory-backed store:
//   candidates.jsonl  candidate set (rewritten atomically on import)
//   decisions.jsonl   append-only review log
//   catalog.jsonl     append-only confirmed entries
//   snapshot.json     statuses as of a log position, to shorten replay
// A torn final line left by an interrupted append is dropped on open.
class CatalogStore {
 public:
  explicit CatalogStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  // Adds candidates not yet present (by id); existing review state is kept.
  std::size_t import_candidates(const std::vector<Candidate>& cands);

  std::size_t size() const;
  bool contains(const std::string& candidate_id) const;
  // Throws NotFoundError.
  CandidateRecord get(const std::string& candidate_id) const;
  std::vector<ReviewDecision> history(const std::string& candidate_id) const;
  std::vector<ReviewDecision> decisions() const;
  std::vector<CandidateRecord> all() const;

  // Throws NotFoundError for unknown ids, ConflictError for illegal transitions.
  ReviewDecision record_decision(const std::string& candidate_id, const DecisionRequest& req);

  // Requires status confirmed and a dateable candidate. Throws ConflictError otherwise.
  CatalogEntry promote_to_catalog(const std::string& candidate_id, const Measurements& m,
                                  std::optional<std::string> impact_id = std::nullopt);
  std::vector<CatalogEntry> catalog() const;

  QueryPage query(const QueryFilter& filter, std::size_t page = 1, std::size_t page_size = 50) const;

  // Nearest catalog entry (this store's plus any known entries) within max_m.
  std::optional<CatalogHint> nearest_catalog_entry(LatLon p, double max_m = 5000.0) const;
  // Prior catalog used only for the hint.
  void set_known_catalog(std::vector<CatalogEntry> known);

  void write_snapshot() const;

 private:
  void load();
  void apply(const ReviewDecision& d);
  void append_line(const std::filesystem::path& path, const std::string& line);

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::mutex write_mu_;
  std::vector<CandidateRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<ReviewDecision> log_;
  std::vector<CatalogEntry> catalog_;
  std::vector<CatalogEntry> known_;
  std::size_t snapshot_every_ = 256;
};

// Replays a decision log from unreviewed and returns the resulting statuses.
std::unordered_map<std::string, ReviewStatus> replay_statuses(const std::vector<ReviewDecision>& log);

// Table-shaped exports, sorted by thermal inertia.
std::string catalog_properties_csv(const std::vector<CatalogEntry>& entries);
std::string catalog_images_csv(const std::vector<CatalogEntry>& entries);

std::string catalog_entry_to_json(const CatalogEntry& e);
CatalogEntry catalog_entry_from_json(const std::string& line);
std::vector<CatalogEntry> read_catalog_jsonl(const std::filesystem::path& path);

}  // namespace impactscan
