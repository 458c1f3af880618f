#include "impactscan/scan.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstring>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "impactscan/error.hpp"
#include "impactscan/hash.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "score-grid I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'I', 'S', 'G', 'R'};
constexpr std::uint32_t kGridVersion = 1;

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::string_view in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ValidationError("grid", "truncated score-grid file");
  std::uint32_t v;
  std::memcpy(&v, in.data() + pos, 4);
  pos += 4;
  return v;
}

}  // namespace

std::string encode_score_grid(const ScoreGrid& g) {
  std::string out(kMagic, 4);
  put_u32(out, kGridVersion);
  put_u32(out, static_cast<std::uint32_t>(g.observation_id.size()));
  out += g.observation_id;
  put_u32(out, static_cast<std::uint32_t>(g.rows));
  put_u32(out, static_cast<std::uint32_t>(g.cols));
  put_u32(out, static_cast<std::uint32_t>(g.stride));
  put_u32(out, static_cast<std::uint32_t>(g.size));
  out.append(reinterpret_cast<const char*>(g.values.data()), g.values.size() * sizeof(float));
  return out;
}

ScoreGrid decode_score_grid(std::string_view in) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw ValidationError("grid", "bad score-grid magic");
  std::size_t pos = 4;
  if (get_u32(in, pos) != kGridVersion) throw ValidationError("grid", "unsupported score-grid version");
  const std::uint32_t id_len = get_u32(in, pos);
  if (pos + id_len > in.size()) throw ValidationError("grid", "truncated score-grid file");
  ScoreGrid g;
  g.observation_id.assign(in.data() + pos, id_len);
  pos += id_len;
  g.rows = static_cast<int>(get_u32(in, pos));
  g.cols = static_cast<int>(get_u32(in, pos));
  g.stride = static_cast<int>(get_u32(in, pos));
  g.size = static_cast<int>(get_u32(in, pos));
  const std::size_t n = static_cast<std::size_t>(g.rows) * g.cols;
  if (in.size() - pos != n * sizeof(float)) throw ValidationError("grid", "score-grid payload size mismatch");
  g.values.resize(n);
  std::memcpy(g.values.data(), in.data() + pos, n * sizeof(float));
  for (float v : g.values)
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("grid", "score outside [0, 1]");
  return g;
}

std::uint64_t grid_checksum(const ScoreGrid& g) { return fnv1a(encode_score_grid(g)); }

std::string scan_fingerprint(const WindowScorer& scorer, const CalibrationModel& c, const ScanConfig& cfg) {
  Fnv1a h;
  h.update(scorer.fingerprint());
  h.update_pod(c.temperature).update_pod(c.bias_neg).update_pod(c.bias_pos);
  h.update_pod(cfg.window_size).update_pod(cfg.stride);
  return h.hex();
}

void write_checkpoint(const fs::path& path, const ScanCheckpoint& cp) {
  json j{{"fingerprint", cp.fingerprint}, {"completed_ids", cp.completed_ids}};
  write_file_atomic(path, j.dump() + "\n");
}

ScanCheckpoint read_checkpoint(const fs::path& path) {
  try {
    const json j = json::parse(read_file(path));
    return {j.at("fingerprint").get<std::string>(), j.at("completed_ids").get<std::vector<std::string>>()};
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint", std::string("malformed checkpoint: ") + e.what());
  }
}

namespace {

fs::path grid_path(const fs::path& out_dir, const std::string& id) { return out_dir / "grids" / (id + ".grid"); }

ScoreGrid score_observation(const Observation& obs, const WindowScorer& scorer, const CalibrationModel& calibration,
                            const ScanConfig& cfg) {
  if (scorer.window_size() != cfg.window_size)
    throw ValidationError("window_size", "scorer expects " + std::to_string(scorer.window_size()) + " px windows");
  ScoreGrid g;
  g.observation_id = obs.id();
  g.size = cfg.window_size;
  g.stride = cfg.stride;
  g.rows = window_count(obs.height(), cfg.window_size, cfg.stride);
  g.cols = window_count(obs.width(), cfg.window_size, cfg.stride);
  g.values.reserve(static_cast<std::size_t>(g.rows) * g.cols);
  for (const auto& w : extract_windows(obs.info(), cfg.window_size, cfg.stride)) {
    const RawScore raw = scorer.score(obs.window(w));
    if (!std::isfinite(raw.z_neg) || !std::isfinite(raw.z_pos))
      throw std::runtime_error("non-finite score at window (" + std::to_string(w.row_off) + ", " +
                               std::to_string(w.col_off) + ")");
    g.values.push_back(static_cast<float>(apply_calibration(calibration, raw).p_pos));
  }
  return g;
}

void write_index(const fs::path& out_dir, const std::string& fingerprint, const std::vector<ScoreGrid>& grids) {
  json list = json::array();
  for (const auto& g : grids)
    list.push_back({{"observation_id", g.observation_id},
                    {"file", "grids/" + g.observation_id + ".grid"},
                    {"rows", g.rows},
                    {"cols", g.cols},
                    {"stride", g.stride},
                    {"size", g.size},
                    {"checksum", Fnv1a::to_hex(grid_checksum(g))}});
  json j{{"format", "impactscan-score-index"}, {"version", 1}, {"fingerprint", fingerprint}, {"grids", list}};
  write_file_atomic(out_dir / "index.json", j.dump(1) + "\n");
}

ScanResult run_scan(const ObservationSource& archive, const WindowScorer& scorer, const CalibrationModel& calibration,
                    const ScanConfig& cfg, const ScanOptions& opts, std::vector<ScoreGrid> done,
                    std::vector<std::string> completed) {
  if (opts.parallelism < 1) throw ValidationError("parallelism", "must be at least 1");
  calibration.validate();
  const std::string fingerprint = scan_fingerprint(scorer, calibration, cfg);
  const bool persist = !opts.out_dir.empty();
  const std::set<std::string> skip(completed.begin(), completed.end());

  std::vector<std::string> todo;
  for (const auto& info : archive.observations())
    if (!skip.count(info.id)) todo.push_back(info.id);

  ScanResult result;
  std::mutex commit_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::size_t committed = 0;
  ScanCheckpoint cp{fingerprint, std::move(completed)};
  if (persist) {
    fs::create_directories(opts.out_dir / "grids");
    write_checkpoint(opts.out_dir / "checkpoint.json", cp);
  }

  const auto start = std::chrono::steady_clock::now();
  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const std::string& id = todo[i];
      try {
        ScoreGrid g = score_observation(archive.load(id), scorer, calibration, cfg);
        // Single-writer commit path.
        std::lock_guard lock(commit_mu);
        if (stop.load()) return;
        if (persist) {
          write_file_atomic(grid_path(opts.out_dir, id), encode_score_grid(g));
          cp.completed_ids.push_back(id);
          write_checkpoint(opts.out_dir / "checkpoint.json", cp);
        }
        result.windows += g.values.size();
        result.grids.push_back(std::move(g));
        ++committed;
        if (opts.on_commit) opts.on_commit(id, committed);
        if (opts.max_observations && committed >= opts.max_observations) stop.store(true);
      } catch (const std::exception& e) {
        std::lock_guard lock(commit_mu);
        result.errors.push_back({id, e.what()});
      }
    }
  };

  const int threads = std::min<int>(opts.parallelism, std::max<std::size_t>(todo.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  result.scanned = committed;
  result.windows_per_second = secs > 0.0 ? static_cast<double>(result.windows) / secs : 0.0;
  result.complete = committed + result.errors.size() == todo.size();
  for (auto& g : done) result.grids.push_back(std::move(g));
  std::sort(result.grids.begin(), result.grids.end(),
            [](const ScoreGrid& a, const ScoreGrid& b) { return a.observation_id < b.observation_id; });
  std::sort(result.errors.begin(), result.errors.end(),
            [](const ScanError& a, const ScanError& b) { return a.observation_id < b.observation_id; });
  if (persist) write_index(opts.out_dir, fingerprint, result.grids);
  return result;
}

}  // namespace

ScanResult scan_archive(const ObservationSource& archive, const WindowScorer& scorer,
                        const CalibrationModel& calibration, const ScanConfig& cfg, const ScanOptions& opts) {
  return run_scan(archive, scorer, calibration, cfg, opts, {}, {});
}

ScanResult resume_scan(const ObservationSource& archive, const WindowScorer& scorer,
                       const CalibrationModel& calibration, const ScanConfig& cfg, const ScanOptions& opts) {
  if (opts.out_dir.empty()) throw ValidationError("out_dir", "resume requires a persisted scan directory");
  const fs::path cp_path = opts.out_dir / "checkpoint.json";
  if (!fs::exists(cp_path)) throw NotFoundError("no checkpoint at " + cp_path.string());
  const ScanCheckpoint cp = read_checkpoint(cp_path);
  const std::string current = scan_fingerprint(scorer, calibration, cfg);
  if (cp.fingerprint != current)
    throw ConflictError("checkpoint fingerprint " + cp.fingerprint + " does not match the current configuration (" +
                        current + "); the model, calibration, window size or stride changed since the scan started");
  std::vector<ScoreGrid> done;
  std::vector<std::string> completed;
  for (const auto& id : cp.completed_ids) {
    const fs::path p = grid_path(opts.out_dir, id);
    if (!fs::exists(p)) continue;  // rescanned below
    done.push_back(decode_score_grid(read_file(p)));
    completed.push_back(id);
  }
  return run_scan(archive, scorer, calibration, cfg, opts, std::move(done), std::move(completed));
}

std::vector<ScoreGrid> load_score_grids(const fs::path& dir) {
  std::vector<ScoreGrid> grids;
  const fs::path index = dir / "index.json";
  if (fs::exists(index)) {
    json j;
    try {
      j = json::parse(read_file(index));
    } catch (const json::parse_error& e) {
      throw ValidationError("index", std::string("malformed index.json: ") + e.what());
    }
    for (const auto& e : j.at("grids")) grids.push_back(decode_score_grid(read_file(dir / e.at("file").get<std::string>())));
  } else {
    if (!fs::is_directory(dir / "grids")) throw NotFoundError("no score grids under " + dir.string());
    for (const auto& e : fs::directory_iterator(dir / "grids"))
      if (e.path().extension() == ".grid") grids.push_back(decode_score_grid(read_file(e.path())));
  }
  std::sort(grids.begin(), grids.end(),
            [](const ScoreGrid& a, const ScoreGrid& b) { return a.observation_id < b.observation_id; });
  return grids;
}

}  // namespace impactscan
