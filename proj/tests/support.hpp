#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "impactscan/raster.hpp"
#include "impactscan/time.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("impactscan-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline impactscan::Timestamp day(const char* iso) { return impactscan::parse_iso8601(iso); }

inline impactscan::Observation noise_observation(const std::string& id, int width, int height, std::uint64_t seed,
                                                 double lon = 10.0, double lat = 5.0, double dpp = 1e-4,
                                                 const char* when = "2015-01-19") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.2f, 0.8f);
  std::vector<float> px(static_cast<std::size_t>(width) * height);
  for (auto& v : px) v = u(rng);
  return impactscan::Observation{{id, day(when), width, height, impactscan::GeoTransform{lon, lat, dpp}},
                                 std::move(px)};
}

}  // namespace testing
