#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "impactscan/archive.hpp"
#include "impactscan/calibration.hpp"
#include "impactscan/scorer.hpp"

namespace impactscan {

// Calibrated p_pos for every window position of one observation, row-major.
struct ScoreGrid {
  std::string observation_id;
  int size = kDefaultWindowSize;
  int stride = kDefaultStride;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * cols + col]; }
  WindowRef window(int row, int col) const { return {observation_id, row * stride, col * stride, size}; }
  bool operator==(const ScoreGrid&) const = default;
};

// Binary layout, little-endian: "ISGR" magic, u32 version, u32 id length, id
// bytes, u32 rows, u32 cols, u32 stride, u32 size, then rows*cols f32 values.
std::string encode_score_grid(const ScoreGrid& g);
ScoreGrid decode_score_grid(std::string_view bytes);
std::uint64_t grid_checksum(const ScoreGrid& g);

struct ScanConfig {
  int window_size = kDefaultWindowSize;
  int stride = kDefaultStride;
};

// Hash of scorer parameters, calibration and window geometry.
std::string scan_fingerprint(const WindowScorer& scorer, const CalibrationModel& calibration, const ScanConfig& cfg);

struct ScanCheckpoint {
  std::string fingerprint;
  std::vector<std::string> completed_ids;
};
void write_checkpoint(const std::filesystem::path& path, const ScanCheckpoint& cp);
ScanCheckpoint read_checkpoint(const std::filesystem::path& path);

struct ScanOptions {
  int parallelism = 1;
  // When set, grids go to <out_dir>/grids/<id>.grid with checkpoint.json and index.json beside them.
  std::filesystem::path out_dir;
  // Stop after this many newly committed observations (0 = no limit).
  std::size_t max_observations = 0;
  // Called on the commit path after each observation is persisted.
  std::function<void(const std::string& id, std::size_t committed)> on_commit;
};

struct ScanError {
  std::string observation_id;
  std::string message;
};

struct ScanResult {
  std::vector<ScoreGrid> grids;  // sorted by observation id
  std::vector<ScanError> errors;
  std::size_t scanned = 0;       // observations scored in this call
  std::size_t windows = 0;       // windows scored in this call
  double windows_per_second = 0.0;
  bool complete = true;
};

// One ScoreGrid per observation. Work is partitioned by observation, so the
// output does not depend on parallelism. A failure inside one observation is
// recorded in errors and does not affect the others.
ScanResult scan_archive(const ObservationSource& archive, const WindowScorer& scorer,
                        const CalibrationModel& calibration, const ScanConfig& cfg, const ScanOptions& opts = {});

// Continues a scan persisted in opts.out_dir. Throws ConflictError if the
// checkpoint fingerprint differs from the current configuration.
ScanResult resume_scan(const ObservationSource& archive, const WindowScorer& scorer,
                       const CalibrationModel& calibration, const ScanConfig& cfg, const ScanOptions& opts);

// Reads every grid listed in <dir>/index.json (or, failing that, <dir>/grids/*.grid).
std::vector<ScoreGrid> load_score_grids(const std::filesystem::path& dir);

}  // namespace impactscan
