#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "impactscan/raster.hpp"

namespace impactscan {

// Decoded grayscale raster before normalization.
struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }
};

// Binary PGM (P5), maxval up to 65535. 16-bit samples are big-endian per Netpbm.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

GrayImage read_png(const std::filesystem::path& path);
GrayImage decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const GrayImage& img);
void write_png(const std::filesystem::path& path, const GrayImage& img);

// Sample-to-intensity mapping shared by every reader, so that rendering at
// 16-bit precision and re-importing agree bit for bit.
inline float dequantize(std::uint16_t sample, std::uint16_t max_value) {
  const float v = static_cast<float>(sample) * (1.0f / static_cast<float>(max_value));
  return v < 1.0f ? v : 1.0f;
}

// Sniffs the file signature.
GrayImage read_gray_image(const std::filesystem::path& path);

// Quantizes [0, 1] intensities to 16-bit samples.
GrayImage to_gray16(const Observation& obs);

// JSON sidecar: {id, acquired_at, origin_lon, origin_lat, deg_per_px} plus optional
// width/height (checked against the image), and for basemaps nodata/scale/offset.
struct Sidecar {
  std::string id;
  std::optional<Timestamp> acquired_at;
  double origin_lon = 0.0;
  double origin_lat = 0.0;
  double deg_per_px = 0.0;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<double> nodata;
  double scale = 1.0;
  double offset = 0.0;
};

// Throws ValidationError naming the offending field. acquired_at is only
// required when require_time is set.
Sidecar read_sidecar(const std::filesystem::path& path, bool require_time = true);
void write_sidecar(const std::filesystem::path& path, const Sidecar& s);

// Loads an image plus its sidecar and normalizes samples to [0, 1].
Observation import_observation(const std::filesystem::path& image_path,
                               const std::filesystem::path& metadata_path);

// Writes <dir>/<id>.pgm (16-bit) and <dir>/<id>.json.
void write_observation(const std::filesystem::path& dir, const Observation& obs);

// Basemap raster: physical value = raw * scale + offset; nodata is compared against raw.
ValueGrid load_value_grid(const std::filesystem::path& image_path, const std::filesystem::path& metadata_path);
// Stores round(value) as 16-bit raw samples; invalid pixels become the nodata sentinel 65535.
void write_value_grid(const std::filesystem::path& image_path, const std::filesystem::path& metadata_path,
                      const ValueGrid& grid, const std::string& id);

// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace impactscan
