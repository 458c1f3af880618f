#include "impactscan/image_io.hpp"

#include <png.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "impactscan/error.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    const bool ok = std::fwrite(contents.data(), 1, contents.size(), f) == contents.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// PGM

namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

int read_header_int(std::istream& in, const fs::path& path) {
  skip_ws_and_comments(in);
  int v = -1;
  if (!(in >> v) || v < 0) throw ValidationError("image", "malformed PGM header in " + path.string());
  return v;
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  char magic[2] = {};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw ValidationError("image", path.string() + " is not a binary PGM");
  GrayImage img;
  img.width = read_header_int(in, path);
  img.height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 65535)
    throw ValidationError("image", "unsupported PGM dimensions or maxval in " + path.string());
  in.get();  // single whitespace before raster
  img.bit_depth = maxval > 255 ? 16 : 8;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.samples.resize(n);
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError("image", "truncated PGM raster in " + path.string());
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = raw[i];
  } else {
    std::vector<std::uint8_t> raw(2 * n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * n));
    if (!in) throw ValidationError("image", "truncated PGM raster in " + path.string());
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = static_cast<std::uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1]);
  }
  // Rescale non-standard maxvals so that maxval maps to the full range.
  if (maxval != 255 && maxval != 65535) {
    const double full = img.bit_depth == 16 ? 65535.0 : 255.0;
    for (auto& s : img.samples) s = static_cast<std::uint16_t>(std::lround(s * full / maxval));
  }
  return img;
}

void write_pgm(const fs::path& path, const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(img.max_value()) + "\n";
  const std::size_t header = out.size();
  const std::size_t n = img.samples.size();
  if (img.bit_depth == 16) {
    out.resize(header + 2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      out[header + 2 * i] = static_cast<char>(img.samples[i] >> 8);
      out[header + 2 * i + 1] = static_cast<char>(img.samples[i] & 0xff);
    }
  } else {
    out.resize(header + n);
    for (std::size_t i = 0; i < n; ++i) out[header + i] = static_cast<char>(img.samples[i]);
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct MemReader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos = 0;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, r->bytes->data() + r->pos, n);
  r->pos += n;
}

void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_mem_flush(png_structp) {}

void png_throw(png_structp, png_const_charp msg) { throw ValidationError("image", std::string("PNG: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

}  // namespace

GrayImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ValidationError("image", "not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  MemReader reader{&bytes};
  png_set_read_fn(png, &reader, png_mem_read);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) throw ValidationError("image", "only grayscale PNG is supported");
  if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (depth == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);

  GrayImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> raw(rowbytes * img.height);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = raw.data() + r * rowbytes;
  png_read_image(png, rows.data());

  img.samples.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * img.width + c;
      if (depth == 16) {
        std::uint16_t v;
        std::memcpy(&v, rows[r] + 2 * c, 2);
        img.samples[i] = v;
      } else {
        img.samples[i] = rows[r][c];
      }
    }
  }
  return img;
}

GrayImage read_png(const fs::path& path) {
  const std::string s = read_file(path);
  return decode_png(std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_set_write_fn(png, &out, png_mem_write, png_mem_flush);
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bpp = img.bit_depth == 16 ? 2 : 1;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * bpp);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto v = img.samples[static_cast<std::size_t>(r) * img.width + c];
      if (bpp == 2) {
        row[2 * c] = static_cast<std::uint8_t>(v >> 8);
        row[2 * c + 1] = static_cast<std::uint8_t>(v & 0xff);
      } else {
        row[c] = static_cast<std::uint8_t>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  return out;
}

void write_png(const fs::path& path, const GrayImage& img) {
  const auto bytes = encode_png(img);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

GrayImage read_gray_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  char sig[2] = {};
  in.read(sig, 2);
  if (sig[0] == 'P' && sig[1] == '5') return read_pgm(path);
  if (static_cast<unsigned char>(sig[0]) == 0x89 && sig[1] == 'P') return read_png(path);
  throw ValidationError("image", "unsupported raster format: " + path.string());
}

GrayImage to_gray16(const Observation& obs) {
  GrayImage img{obs.width(), obs.height(), 16, {}};
  img.samples.reserve(obs.pixels().size());
  for (float v : obs.pixels()) img.samples.push_back(static_cast<std::uint16_t>(std::lround(v * 65535.0)));
  return img;
}

// ---------------------------------------------------------------------------
// Sidecars

namespace {

double require_number(const json& j, const char* field) {
  if (!j.contains(field)) throw ValidationError(field, "missing");
  if (!j[field].is_number()) throw ValidationError(field, "must be a number");
  return j[field].get<double>();
}

}  // namespace

Sidecar read_sidecar(const fs::path& path, bool require_time) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("metadata", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("metadata", "sidecar must be a JSON object");
  Sidecar s;
  if (!j.contains("id")) throw ValidationError("id", "missing");
  if (!j["id"].is_string() || j["id"].get<std::string>().empty()) throw ValidationError("id", "must be a nonempty string");
  s.id = j["id"].get<std::string>();
  if (j.contains("acquired_at")) {
    if (!j["acquired_at"].is_string()) throw ValidationError("acquired_at", "must be an ISO-8601 string");
    s.acquired_at = parse_iso8601(j["acquired_at"].get<std::string>());
  } else if (require_time) {
    throw ValidationError("acquired_at", "missing");
  }
  s.origin_lon = require_number(j, "origin_lon");
  s.origin_lat = require_number(j, "origin_lat");
  s.deg_per_px = require_number(j, "deg_per_px");
  if (j.contains("width")) s.width = j["width"].get<int>();
  if (j.contains("height")) s.height = j["height"].get<int>();
  if (j.contains("nodata") && !j["nodata"].is_null()) s.nodata = require_number(j, "nodata");
  if (j.contains("scale")) s.scale = require_number(j, "scale");
  if (j.contains("offset")) s.offset = require_number(j, "offset");
  // Validate the geotransform eagerly so errors name the sidecar field.
  GeoTransform{s.origin_lon, s.origin_lat, s.deg_per_px};
  return s;
}

void write_sidecar(const fs::path& path, const Sidecar& s) {
  json j;
  j["id"] = s.id;
  if (s.acquired_at) j["acquired_at"] = format_iso8601(*s.acquired_at);
  j["origin_lon"] = s.origin_lon;
  j["origin_lat"] = s.origin_lat;
  j["deg_per_px"] = s.deg_per_px;
  if (s.width) j["width"] = *s.width;
  if (s.height) j["height"] = *s.height;
  if (s.nodata) j["nodata"] = *s.nodata;
  if (s.scale != 1.0) j["scale"] = s.scale;
  if (s.offset != 0.0) j["offset"] = s.offset;
  write_file_atomic(path, j.dump(2) + "\n");
}

Observation import_observation(const fs::path& image_path, const fs::path& metadata_path) {
  const Sidecar meta = read_sidecar(metadata_path, true);
  const GrayImage img = read_gray_image(image_path);
  if (meta.width && *meta.width != img.width)
    throw ValidationError("width", "sidecar says " + std::to_string(*meta.width) + ", image has " +
                                       std::to_string(img.width));
  if (meta.height && *meta.height != img.height)
    throw ValidationError("height", "sidecar says " + std::to_string(*meta.height) + ", image has " +
                                        std::to_string(img.height));
  std::vector<float> px(img.samples.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = dequantize(img.samples[i], img.max_value());
  ObservationInfo info{meta.id, *meta.acquired_at, img.width, img.height,
                       GeoTransform{meta.origin_lon, meta.origin_lat, meta.deg_per_px}};
  return Observation{std::move(info), std::move(px)};
}

void write_observation(const fs::path& dir, const Observation& obs) {
  fs::create_directories(dir);
  write_pgm(dir / (obs.id() + ".pgm"), to_gray16(obs));
  const auto& g = obs.info().geo;
  Sidecar s{obs.id(), obs.info().acquired_at, g.origin_lon(), g.origin_lat(), g.deg_per_px(),
            obs.width(), obs.height(), std::nullopt, 1.0, 0.0};
  write_sidecar(dir / (obs.id() + ".json"), s);
}

ValueGrid load_value_grid(const fs::path& image_path, const fs::path& metadata_path) {
  const Sidecar meta = read_sidecar(metadata_path, false);
  const GrayImage img = read_gray_image(image_path);
  if (meta.width && *meta.width != img.width) throw ValidationError("width", "does not match image");
  if (meta.height && *meta.height != img.height) throw ValidationError("height", "does not match image");
  ValueGrid g{GeoTransform{meta.origin_lon, meta.origin_lat, meta.deg_per_px}, img.width, img.height, {}, std::nullopt,
              std::nullopt};
  g.values.resize(img.samples.size());
  // The raw sentinel becomes NaN, which ValueGrid::valid rejects.
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const auto raw = img.samples[i];
    if (meta.nodata && raw == *meta.nodata)
      g.values[i] = std::numeric_limits<float>::quiet_NaN();
    else
      g.values[i] = static_cast<float>(raw * meta.scale + meta.offset);
  }
  return g;
}

void write_value_grid(const fs::path& image_path, const fs::path& metadata_path, const ValueGrid& grid,
                      const std::string& id) {
  validate(grid);
  GrayImage img{grid.width, grid.height, 16, {}};
  img.samples.reserve(grid.values.size());
  for (int r = 0; r < grid.height; ++r)
    for (int c = 0; c < grid.width; ++c)
      img.samples.push_back(grid.valid(r, c)
                                ? static_cast<std::uint16_t>(std::clamp(std::lround(grid.at(r, c)), 0L, 65534L))
                                : std::uint16_t{65535});
  write_pgm(image_path, img);
  Sidecar s{id, std::nullopt, grid.geo.origin_lon(), grid.geo.origin_lat(), grid.geo.deg_per_px(),
            grid.width, grid.height, 65535.0, 1.0, 0.0};
  write_sidecar(metadata_path, s);
}

}  // namespace impactscan
