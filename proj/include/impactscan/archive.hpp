#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "impactscan/raster.hpp"

namespace impactscan {

// A set of observations addressable by id. Implementations must allow
// concurrent load() calls.
class ObservationSource {
 public:
  virtual ~ObservationSource() = default;
  // Sorted by id; ids are unique.
  virtual const std::vector<ObservationInfo>& observations() const = 0;
  virtual Observation load(const std::string& id) const = 0;

  // Throws NotFoundError.
  const ObservationInfo& info(const std::string& id) const;
};

// Directory of <id>.json sidecars, each next to <id>.pgm or <id>.png.
class DirectoryArchive final : public ObservationSource {
 public:
  // Reads every sidecar eagerly; throws ValidationError on duplicate ids or bad metadata.
  explicit DirectoryArchive(std::filesystem::path dir);

  const std::vector<ObservationInfo>& observations() const override { return infos_; }
  Observation load(const std::string& id) const override;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<ObservationInfo> infos_;
  std::map<std::string, std::pair<std::filesystem::path, std::filesystem::path>> files_;
};

class InMemoryArchive final : public ObservationSource {
 public:
  explicit InMemoryArchive(std::vector<Observation> observations);

  const std::vector<ObservationInfo>& observations() const override { return infos_; }
  Observation load(const std::string& id) const override;

 private:
  std::vector<ObservationInfo> infos_;
  std::map<std::string, Observation> by_id_;
};

}  // namespace impactscan
