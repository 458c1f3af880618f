#include "impactscan/archive.hpp"

#include <algorithm>

#include "impactscan/error.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;

const ObservationInfo& ObservationSource::info(const std::string& id) const {
  const auto& all = observations();
  auto it = std::lower_bound(all.begin(), all.end(), id, [](const ObservationInfo& o, const std::string& k) {
    return o.id < k;
  });
  if (it == all.end() || it->id != id) throw NotFoundError("unknown observation '" + id + "'");
  return *it;
}

DirectoryArchive::DirectoryArchive(fs::path dir) : dir_(std::move(dir)) {
  if (!fs::is_directory(dir_)) throw NotFoundError("archive directory " + dir_.string() + " does not exist");
  std::vector<fs::path> sidecars;
  for (const auto& e : fs::directory_iterator(dir_))
    if (e.is_regular_file() && e.path().extension() == ".json") sidecars.push_back(e.path());
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& meta_path : sidecars) {
    fs::path image;
    for (const char* ext : {".pgm", ".png"}) {
      fs::path candidate = meta_path;
      candidate.replace_extension(ext);
      if (fs::exists(candidate)) {
        image = candidate;
        break;
      }
    }
    if (image.empty()) continue;  // not an observation sidecar
    const Sidecar s = read_sidecar(meta_path, true);
    if (!s.width || !s.height) {
      // Header-only read to learn the dimensions.
      const GrayImage img = read_gray_image(image);
      infos_.push_back({s.id, *s.acquired_at, img.width, img.height, GeoTransform{s.origin_lon, s.origin_lat, s.deg_per_px}});
    } else {
      infos_.push_back({s.id, *s.acquired_at, *s.width, *s.height, GeoTransform{s.origin_lon, s.origin_lat, s.deg_per_px}});
    }
    if (!files_.emplace(s.id, std::pair{image, meta_path}).second)
      throw ValidationError("id", "duplicate observation id '" + s.id + "'");
  }
  std::sort(infos_.begin(), infos_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
}

Observation DirectoryArchive::load(const std::string& id) const {
  auto it = files_.find(id);
  if (it == files_.end()) throw NotFoundError("unknown observation '" + id + "'");
  return import_observation(it->second.first, it->second.second);
}

InMemoryArchive::InMemoryArchive(std::vector<Observation> observations) {
  for (auto& o : observations) {
    infos_.push_back(o.info());
    const std::string id = o.id();
    if (!by_id_.emplace(id, std::move(o)).second) throw ValidationError("id", "duplicate observation id '" + id + "'");
  }
  std::sort(infos_.begin(), infos_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
}

Observation InMemoryArchive::load(const std::string& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw NotFoundError("unknown observation '" + id + "'");
  return it->second;
}

}  // namespace impactscan
