#include "impactscan/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <regex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "impactscan/analytics.hpp"
#include "impactscan/error.hpp"
#include "impactscan/image_io.hpp"

namespace impactscan {

namespace fs = std::filesystem;
using nlohmann::json;

struct ReviewService::Server {
  httplib::Server http;
  std::thread thread;
};

namespace {

HttpResponse json_response(int status, json body) {
  body["schema_version"] = kApiSchemaVersion;
  return {status, "application/json", body.dump()};
}

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"code", code}, {"message", message}});
}

std::optional<std::string> param(const std::multimap<std::string, std::string>& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

std::size_t parse_size(const std::string& field, const std::string& text) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size()) throw ValidationError(field, "must be a nonnegative integer");
  return v;
}

double parse_double(const std::string& field, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(field, "must be a number");
  }
}

json summary_json(const CandidateRecord& r, const TIBins& bins) {
  const Candidate& c = r.candidate;
  std::optional<std::size_t> bin;
  if (c.ti_value) bin = bins.bin(*c.ti_value);
  return {{"id", c.id},
          {"lat", c.seed.lat},
          {"lon", c.seed.lon},
          {"confidence", c.confidence},
          {"status", to_string(r.status)},
          {"ti_value", c.ti_value ? json(*c.ti_value) : json(nullptr)},
          {"ti_source", to_string(c.ti_source)},
          {"ti_bin", bin ? json(*bin) : json(nullptr)},
          {"member_count", c.members.size()},
          {"impact_id", r.impact_id ? json(*r.impact_id) : json(nullptr)}};
}

}  // namespace

std::vector<std::uint8_t> render_member_png(const Observation& obs, const WindowRef& w, int margin) {
  const int side = w.size + 2 * margin;
  const int r0 = w.row_off - margin, c0 = w.col_off - margin;
  std::vector<float> inside;
  inside.reserve(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const int rr = r0 + r, cc = c0 + c;
      if (rr >= 0 && cc >= 0 && rr < obs.height() && cc < obs.width()) inside.push_back(obs.at(rr, cc));
    }
  float lo = 0.0f, hi = 1.0f;
  if (!inside.empty()) {
    std::vector<float> sorted = inside;
    const std::size_t i1 = sorted.size() / 100, i99 = sorted.size() - 1 - sorted.size() / 100;
    std::nth_element(sorted.begin(), sorted.begin() + i1, sorted.end());
    lo = sorted[i1];
    std::nth_element(sorted.begin(), sorted.begin() + i99, sorted.end());
    hi = sorted[i99];
    if (!(hi > lo)) hi = lo + 1e-6f;
  }
  GrayImage img{side, side, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(side) * side, 0)};
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const int rr = r0 + r, cc = c0 + c;
      if (rr < 0 || cc < 0 || rr >= obs.height() || cc >= obs.width()) continue;
      const float t = std::clamp((obs.at(rr, cc) - lo) / (hi - lo), 0.0f, 1.0f);
      img.samples[static_cast<std::size_t>(r) * side + c] = static_cast<std::uint16_t>(std::lround(t * 255.0f));
    }
  return encode_png(img);
}

ReviewService::ReviewService(CatalogStore& store, const ObservationSource* archive, ServiceConfig cfg)
    : store_(store), archive_(archive), cfg_(std::move(cfg)) {
  cfg_.bins.validate();
}

ReviewService::~ReviewService() { stop(); }

HttpResponse ReviewService::handle(const std::string& method, const std::string& path,
                                   const std::multimap<std::string, std::string>& params,
                                   const std::string& body) const {
  static const std::regex kDetail(R"(^/candidates/([A-Za-z0-9_.-]+)$)");
  static const std::regex kDecision(R"(^/candidates/([A-Za-z0-9_.-]+)/decision$)");
  static const std::regex kImage(R"(^/candidates/([A-Za-z0-9_.-]+)/members/([0-9]+)/image\.png$)");
  std::smatch m;
  try {
    if (method == "GET" && path == "/candidates") {
      QueryFilter f;
      f.bins = cfg_.bins;
      if (auto v = param(params, "status")) f.status = review_status_from_string(*v);
      if (auto v = param(params, "bin")) f.ti_bin = parse_size("bin", *v);
      if (auto v = param(params, "min_conf")) f.min_confidence = parse_double("min_conf", *v);
      if (auto v = param(params, "max_conf")) f.max_confidence = parse_double("max_conf", *v);
      if (auto v = param(params, "lat_min")) f.lat_min = parse_double("lat_min", *v);
      if (auto v = param(params, "lat_max")) f.lat_max = parse_double("lat_max", *v);
      std::size_t page = 1, page_size = cfg_.default_page_size;
      if (auto v = param(params, "page")) page = parse_size("page", *v);
      if (auto v = param(params, "page_size")) page_size = parse_size("page_size", *v);
      if (page_size > cfg_.max_page_size)
        throw ValidationError("page_size", "must not exceed " + std::to_string(cfg_.max_page_size));
      const QueryPage q = store_.query(f, page, page_size);
      json items = json::array();
      for (const auto& r : q.items) items.push_back(summary_json(r, cfg_.bins));
      return json_response(200, {{"items", items}, {"total", q.total}, {"page", q.page}, {"page_size", q.page_size}});
    }

    if (method == "GET" && std::regex_match(path, m, kDetail)) {
      const CandidateRecord r = store_.get(m[1]);
      const Candidate& c = r.candidate;
      json detail = summary_json(r, cfg_.bins);
      json members = json::array();
      for (std::size_t i = 0; i < c.members.size(); ++i) {
        const auto& mem = c.members[i];
        members.push_back({{"index", i},
                           {"observation_id", mem.window.observation_id},
                           {"acquired_at", format_iso8601(mem.acquired_at)},
                           {"date", format_date(mem.acquired_at)},
                           {"p_pos", mem.p_pos},
                           {"outlined", mem.p_pos >= kDetectionThreshold},
                           {"seed", i == c.seed_index},
                           {"row_off", mem.window.row_off},
                           {"col_off", mem.window.col_off},
                           {"size", mem.window.size},
                           {"image_url", "/candidates/" + c.id + "/members/" + std::to_string(i) + "/image.png"}});
      }
      detail["members"] = members;
      if (const auto fw = formation_window(c))
        detail["formation_window"] = {{"start", format_iso8601(fw->first)}, {"end", format_iso8601(fw->second)},
                                      {"start_date", format_date(fw->first)}, {"end_date", format_date(fw->second)}};
      else
        detail["formation_window"] = nullptr;
      if (const auto hint = store_.nearest_catalog_entry(c.seed))
        detail["nearest_catalog_entry"] = {{"impact_id", hint->entry.impact_id}, {"distance_m", hint->distance_m}};
      else
        detail["nearest_catalog_entry"] = nullptr;
      detail["followup_image_url"] = nullptr;
      if (r.impact_id)
        for (const auto& e : store_.catalog())
          if (e.impact_id == *r.impact_id && e.followup_image) detail["followup_image_url"] = *e.followup_image;
      json hist = json::array();
      for (const auto& d : store_.history(c.id))
        hist.push_back({{"decision_id", d.sequence},
                        {"status", to_string(d.status)},
                        {"previous", to_string(d.previous)},
                        {"reviewer", d.reviewer},
                        {"notes", d.notes},
                        {"timestamp", format_iso8601(d.timestamp)},
                        {"conflict", d.conflict},
                        {"supervisor_override", d.supervisor_override}});
      detail["history"] = hist;
      return json_response(200, detail);
    }

    if (method == "POST" && std::regex_match(path, m, kDecision)) {
      const std::string id = m[1];
      if (!store_.contains(id)) throw NotFoundError("unknown candidate '" + id + "'");
      json j;
      try {
        j = json::parse(body);
      } catch (const json::parse_error&) {
        throw ValidationError("body", "must be a JSON object");
      }
      if (!j.is_object() || !j.contains("status") || !j["status"].is_string())
        throw ValidationError("status", "missing");
      DecisionRequest req;
      req.status = review_status_from_string(j["status"].get<std::string>());
      req.reviewer = j.value("reviewer", "");
      req.notes = j.value("notes", "");
      if (j.contains("base_status") && !j["base_status"].is_null())
        req.base_status = review_status_from_string(j["base_status"].get<std::string>());
      req.supervisor_override = j.value("supervisor_override", false);
      const ReviewDecision d = store_.record_decision(id, req);
      return json_response(200, {{"candidate_id", id},
                                 {"status", to_string(store_.get(id).status)},
                                 {"decision_id", d.sequence},
                                 {"conflict", d.conflict}});
    }

    if (method == "GET" && std::regex_match(path, m, kImage)) {
      const CandidateRecord r = store_.get(m[1]);
      const std::size_t k = parse_size("member", m[2]);
      if (k >= r.candidate.members.size()) throw NotFoundError("candidate has no member " + std::string(m[2]));
      if (!archive_) throw NotFoundError("no observation archive is attached");
      const WindowRef& w = r.candidate.members[k].window;
      const auto png = render_member_png(archive_->load(w.observation_id), w, cfg_.context_margin_px);
      return {200, "image/png", std::string(png.begin(), png.end())};
    }

    if (method == "GET" && path == "/reports/bias") {
      const std::string sel = param(params, "selection").value_or("stratified");
      if (sel == "top_k" || sel == "stratified") {
        const fs::path p = cfg_.reports_dir / ("bias_" + sel + ".json");
        if (cfg_.reports_dir.empty() || !fs::exists(p))
          return error_response(409, "pipeline_outputs_missing", "no " + sel + " bias report has been generated");
        return json_response(200, json::parse(read_file(p)));
      }
      if (sel == "catalog") {
        std::vector<CatalogEntry> with_ti;
        for (const auto& e : store_.catalog())
          if (e.thermal_inertia) with_ti.push_back(e);
        if (with_ti.empty())
          return error_response(409, "pipeline_outputs_missing", "the catalog has no confirmed entries with TI");
        std::optional<std::vector<double>> expected = cfg_.expected;
        for (const char* name : {"bias_stratified.json", "bias_top_k.json"}) {
          if (expected || cfg_.reports_dir.empty()) break;
          const fs::path p = cfg_.reports_dir / name;
          if (fs::exists(p)) expected = bias_report_from_json(read_file(p)).histogram.expected;
        }
        if (!expected)
          return error_response(409, "pipeline_outputs_missing", "no expected TI distribution is available");
        const BiasReport rep = bias_report(with_ti, *expected, cfg_.bins, "catalog");
        return json_response(200, json::parse(bias_report_to_json(rep)));
      }
      throw ValidationError("selection", "must be top_k, stratified or catalog");
    }

    return error_response(404, "not_found", "no route for " + method + " " + path);
  } catch (const ValidationError& e) {
    return error_response(400, "bad_request", e.what());
  } catch (const NotFoundError& e) {
    return error_response(404, "not_found", e.what());
  } catch (const ConflictError& e) {
    return error_response(409, "conflict", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

namespace {

void install_routes(httplib::Server& http, const ReviewService& svc, const std::string& cors) {
  auto forward = [&svc, cors](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> params(req.params.begin(), req.params.end());
    const HttpResponse r = svc.handle(req.method, req.path, params, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
    if (!cors.empty()) res.set_header("Access-Control-Allow-Origin", cors);
  };
  http.Get(R"(/.*)", forward);
  http.Post(R"(/.*)", forward);
  http.Options(R"(/.*)", [cors](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    if (!cors.empty()) {
      res.set_header("Access-Control-Allow-Origin", cors);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    }
  });
}

}  // namespace

int ReviewService::start(const std::string& host, int port) {
  stop();
  server_ = std::make_unique<Server>();
  install_routes(server_->http, *this, cfg_.cors_origin);
  int bound = port;
  if (port == 0) {
    bound = server_->http.bind_to_any_port(host);
  } else if (!server_->http.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
  return bound;
}

void ReviewService::run(const std::string& host, int port) {
  stop();
  server_ = std::make_unique<Server>();
  install_routes(server_->http, *this, cfg_.cors_origin);
  if (!server_->http.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void ReviewService::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

}  // namespace impactscan
