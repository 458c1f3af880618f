#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "impactscan/archive.hpp"
#include "impactscan/catalog.hpp"

namespace impactscan {

inline constexpr int kApiSchemaVersion = 1;

struct ServiceConfig {
  // Access-Control-Allow-Origin value; empty disables CORS headers.
  std::string cors_origin = "*";
  TIBins bins = TIBins::uniform();
  std::size_t default_page_size = 50;
  std::size_t max_page_size = 1000;
  // Holds bias_top_k.json / bias_stratified.json written by the report step.
  std::filesystem::path reports_dir;
  // Expected TI distribution for selection=catalog; taken from a stored report when unset.
  std::optional<std::vector<double>> expected;
  int context_margin_px = 50;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class ReviewService {
 public:
  // archive may be null; image requests then return 404.
  ReviewService(CatalogStore& store, const ObservationSource* archive, ServiceConfig cfg = {});
  ~ReviewService();

  // Transport-independent dispatch used by the HTTP server.
  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::multimap<std::string, std::string>& params, const std::string& body) const;

  // Binds (port 0 picks a free port) and serves on a background thread. Returns the port.
  int start(const std::string& host, int port);
  // Blocks until stop() is called.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Server;
  CatalogStore& store_;
  const ObservationSource* archive_;
  ServiceConfig cfg_;
  std::unique_ptr<Server> server_;
};

// 8-bit PNG of a member window plus margin, contrast-stretched between the
// 1st and 99th percentile of the in-bounds pixels.
std::vector<std::uint8_t> render_member_png(const Observation& obs, const WindowRef& w, int margin_px);

}  // namespace impactscan
