#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "impactscan/analytics.hpp"
#include "impactscan/archive.hpp"
#include "impactscan/catalog.hpp"
#include "impactscan/error.hpp"
#include "impactscan/image_io.hpp"
#include "impactscan/pipeline.hpp"
#include "impactscan/scan.hpp"
#include "impactscan/service.hpp"
#include "impactscan/simd/kernels.hpp"
#include "impactscan/synthetic.hpp"

namespace fs = std::filesystem;
using namespace impactscan;

namespace {

// Raised for bad flag or config values, reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Paths {
  fs::path workdir = "impactscan-work";
  fs::path world() const { return workdir / "world"; }
  fs::path archive() const { return world() / "archive"; }
  fs::path basemaps() const { return world() / "basemap"; }
  fs::path labels() const { return world() / "labeled" / "labels.csv"; }
  fs::path truth() const { return world() / "truth.jsonl"; }
  fs::path model() const { return workdir / "model.json"; }
  fs::path scores() const { return workdir / "scores"; }
  fs::path candidates() const { return workdir / "candidates.jsonl"; }
  fs::path selection(const std::string& mode) const { return workdir / ("selection_" + mode + ".jsonl"); }
  fs::path reports() const { return workdir / "reports"; }
  fs::path store() const { return workdir / "store"; }
};

fs::path or_default(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

void echo_config(const CLI::App& app, const fs::path& dir) {
  fs::create_directories(dir);
  write_file_atomic(dir / "resolved_config.toml", app.config_to_str(true, false));
}

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

std::vector<Candidate> pick(const std::vector<Candidate>& cands, const std::string& mode, std::size_t k,
                            std::size_t per_bin, const TIBins& bins) {
  if (mode == "top-k") return top_k(cands, k);
  if (mode == "stratified") return flatten(stratified_top(cands, bins, per_bin));
  throw UsageError("--mode must be top-k or stratified");
}

std::string mode_label(const std::string& mode) { return mode == "top-k" ? "top_k" : mode; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fresh-impact survey pipeline: scan an image archive, group and date candidates, "
               "select them by confidence or by thermal-inertia stratum, and review them."};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  Paths paths;
  std::string workdir = paths.workdir.string();
  app.add_option("--workdir", workdir, "Directory holding every stage's default inputs and outputs")
      ->capture_default_str();

  PipelineConfig pc;
  auto add_geometry = [&](CLI::App* sub) {
    sub->add_option("--window", pc.window_size, "Window size in pixels")->capture_default_str();
    sub->add_option("--stride", pc.stride, "Window stride in pixels")->capture_default_str();
  };

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic archive with ground truth and basemaps");
  SyntheticWorldConfig wc;
  int train_pos = 300, train_neg = 300;
  std::string synth_out;
  synth->add_option("--seed", wc.rng_seed, "World seed")->capture_default_str();
  synth->add_option("--sites", wc.site_count, "Number of imaged sites")->capture_default_str();
  synth->add_option("--impact-rate", wc.impact_rate, "Impacts per km^2 per year")->capture_default_str();
  synth->add_option("--contrast-max", wc.contrast_max, "Peak blast-zone contrast at TI 0")->capture_default_str();
  synth->add_option("--train-positives", train_pos, "Labeled positive windows to write")->capture_default_str();
  synth->add_option("--train-negatives", train_neg, "Labeled negative windows to write")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory (default <workdir>/world)");

  // import -----------------------------------------------------------------
  auto* import = app.add_subcommand("import", "Validate an image plus sidecar and add it to an archive directory");
  std::string import_image, import_meta, import_archive;
  import->add_option("--image", import_image, "PGM or PNG grayscale image")->required();
  import->add_option("--metadata", import_meta, "JSON sidecar")->required();
  import->add_option("--archive", import_archive, "Archive directory (default <workdir>/world/archive)");

  // train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train the window scorer on the augmented training split");
  std::string train_labels, train_model;
  double train_fraction = 0.9;
  train->add_option("--labels", train_labels, "labels.csv (path,label)");
  train->add_option("--model", train_model, "Output model file");
  train->add_option("--seed", pc.seed, "Split and augmentation seed")->capture_default_str();
  train->add_option("--train-fraction", train_fraction, "Fraction of labeled windows used for training")
      ->capture_default_str();

  // calibrate --------------------------------------------------------------
  auto* calibrate = app.add_subcommand("calibrate", "Fit bias-corrected temperature scaling on the held-out split");
  std::string cal_labels, cal_model;
  calibrate->add_option("--labels", cal_labels, "labels.csv used for training");
  calibrate->add_option("--model", cal_model, "Model file, updated in place");
  calibrate->add_option("--seed", pc.seed, "Split seed (must match train)")->capture_default_str();
  calibrate->add_option("--train-fraction", train_fraction, "Must match train")->capture_default_str();

  // scan -------------------------------------------------------------------
  auto* scan = app.add_subcommand("scan", "Score every window of every observation");
  std::string scan_archive_dir, scan_model, scan_out;
  bool scan_resume = false;
  std::size_t scan_limit = 0;
  scan->add_option("--archive", scan_archive_dir, "Archive directory");
  scan->add_option("--model", scan_model, "Calibrated model file");
  scan->add_option("--out", scan_out, "Score-grid directory");
  scan->add_option("--parallelism", pc.parallelism, "Worker threads")->capture_default_str();
  scan->add_flag("--resume", scan_resume, "Continue from the checkpoint in --out");
  scan->add_option("--max-observations", scan_limit, "Stop after this many observations (0 = all)")
      ->capture_default_str();
  add_geometry(scan);

  // build ------------------------------------------------------------------
  auto* build = app.add_subcommand("build", "Group windows into candidates, sample TI and keep dateable ones");
  std::string build_archive, build_scores, build_basemaps, build_out;
  bool build_keep_all = false;
  build->add_option("--archive", build_archive, "Archive directory");
  build->add_option("--scores", build_scores, "Score-grid directory");
  build->add_option("--basemaps", build_basemaps, "Directory with ti_primary / ti_fallback rasters");
  build->add_option("--out", build_out, "Candidate file");
  build->add_option("--radius", pc.grouping_radius_m, "Grouping radius in meters")->capture_default_str();
  build->add_option("--lat-min", pc.lat_min, "Southern latitude limit")->capture_default_str();
  build->add_option("--lat-max", pc.lat_max, "Northern latitude limit")->capture_default_str();
  build->add_option("--nondetect", pc.nondetect_threshold, "Before-image threshold")->capture_default_str();
  build->add_option("--detect", pc.detect_threshold, "After-image threshold")->capture_default_str();
  build->add_flag("--keep-undateable", build_keep_all, "Skip the dateability and latitude filters");

  // select -----------------------------------------------------------------
  auto* select = app.add_subcommand("select", "Choose candidates for review");
  std::string sel_in, sel_out, sel_mode = "stratified";
  select->add_option("--candidates", sel_in, "Candidate file");
  select->add_option("--out", sel_out, "Selection file (default <workdir>/selection_<mode>.jsonl)");
  select->add_option("--mode", sel_mode, "top-k or stratified")
      ->check(CLI::IsMember({"top-k", "stratified"}))
      ->capture_default_str();
  select->add_option("--k", pc.k, "Size of the top-K selection")->capture_default_str();
  select->add_option("--per-bin", pc.per_bin, "Candidates per TI bin")->capture_default_str();
  select->add_option("--bin-edges", pc.bin_edges, "TI bin edges; the last bin is open above")
      ->capture_default_str();

  // report -----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "TI bias report (JSON, CSV, SVG) for each selection");
  std::vector<std::string> rep_selections;
  std::string rep_basemaps, rep_out, rep_truth, rep_store;
  report->add_option("--selection", rep_selections, "Selection files (default: every selection_*.jsonl)");
  report->add_option("--basemaps", rep_basemaps, "Basemap directory");
  report->add_option("--out", rep_out, "Report directory");
  report->add_option("--truth", rep_truth, "Ground-truth list; adds reports over truth-verified candidates");
  report->add_option("--store", rep_store, "Also report the confirmed catalog of this store");
  report->add_option("--bin-edges", pc.bin_edges, "TI bin edges")->capture_default_str();
  report->add_option("--lat-min", pc.lat_min, "Southern latitude limit for the expected distribution")
      ->capture_default_str();
  report->add_option("--lat-max", pc.lat_max, "Northern latitude limit")->capture_default_str();

  // serve ------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "HTTP review API");
  std::string srv_store, srv_archive, srv_candidates, srv_reports, srv_host = "127.0.0.1", srv_cors = "*";
  int srv_port = 8080;
  serve->add_option("--store", srv_store, "Review store directory");
  serve->add_option("--archive", srv_archive, "Archive directory for window images");
  serve->add_option("--candidates", srv_candidates, "Candidate file imported into the store on start");
  serve->add_option("--reports", srv_reports, "Report directory");
  serve->add_option("--host", srv_host, "Bind address")->capture_default_str();
  serve->add_option("--port", srv_port, "Port")->capture_default_str();
  serve->add_option("--cors-origin", srv_cors, "Access-Control-Allow-Origin value (empty disables)")
      ->capture_default_str();

  // export -----------------------------------------------------------------
  auto* exp = app.add_subcommand("export", "Write catalog tables and summary statistics");
  std::string exp_store, exp_out;
  exp->add_option("--store", exp_store, "Review store directory");
  exp->add_option("--out", exp_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  paths.workdir = workdir;

  try {
    pc.validate();

    if (*synth) {
      const fs::path out = or_default(synth_out, paths.world());
      wc.validate();
      log("generating world (seed " + std::to_string(wc.rng_seed) + ", " + std::to_string(wc.site_count) + " sites)");
      const SyntheticArchive world = generate_synthetic_archive(wc);
      write_synthetic_world(out, world);
      const auto labeled = world.training_windows(train_pos, train_neg, wc.rng_seed ^ 0x7a11ULL);
      save_labeled_set(out / "labeled", labeled, "labels.csv");
      echo_config(app, out);
      std::printf("%zu observations, %zu impacts, %zu labeled windows -> %s\n", world.observations().size(),
                  world.ground_truth().size(), labeled.size(), out.c_str());
    } else if (*import) {
      const fs::path dir = or_default(import_archive, paths.archive());
      const Observation obs = import_observation(import_image, import_meta);
      write_observation(dir, obs);
      std::printf("imported %s (%dx%d) into %s\n", obs.id().c_str(), obs.width(), obs.height(), dir.c_str());
    } else if (*train) {
      const fs::path labels = or_default(train_labels, paths.labels());
      const fs::path model_path = or_default(train_model, paths.model());
      if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw UsageError("--train-fraction must lie in (0, 1)");
      const auto set = load_labeled_set(labels);
      const auto [train_idx, held_idx] = split_indices(set.size(), train_fraction, pc.seed);
      std::vector<LabeledWindow> part;
      for (auto i : train_idx) part.push_back(set[i]);
      ModelFile m;
      m.scorer = train_baseline_augmented(part, pc.seed ^ 0x5eedULL);
      save_model(model_path, m);
      echo_config(app, model_path.parent_path().empty() ? fs::path(".") : model_path.parent_path());
      std::printf("trained on %zu windows (%zu augmented), %zu held out -> %s\n", part.size(),
                  part.size() * kAugmentationFactor, held_idx.size(), model_path.c_str());
    } else if (*calibrate) {
      const fs::path labels = or_default(cal_labels, paths.labels());
      const fs::path model_path = or_default(cal_model, paths.model());
      const auto set = load_labeled_set(labels);
      const auto [train_idx, held_idx] = split_indices(set.size(), train_fraction, pc.seed);
      std::vector<LabeledWindow> held;
      for (auto i : held_idx) held.push_back(set[i]);
      ModelFile m = load_model(model_path);
      const BaselineScorer scorer(m.scorer);
      const auto samples = calibration_samples(scorer, held);
      const BctsFit fit = fit_bcts(samples);
      std::vector<Prediction> before, after;
      for (const auto& s : samples) {
        before.push_back({apply_calibration(CalibrationModel{}, s.score).p_pos, s.label});
        after.push_back({apply_calibration(fit.model, s.score).p_pos, s.label});
      }
      m.calibration = fit.model;
      save_model(model_path, m);
      std::printf("T = %.4f, b = (%.4f, %.4f), %d iterations; ECE %.4f -> %.4f on %zu held-out windows\n",
                  fit.model.temperature, fit.model.bias_neg, fit.model.bias_pos, fit.iterations, ece(before),
                  ece(after), held.size());
    } else if (*scan) {
      const DirectoryArchive archive(or_default(scan_archive_dir, paths.archive()));
      const ModelFile m = load_model(or_default(scan_model, paths.model()));
      const BaselineScorer scorer(m.scorer);
      ScanOptions so;
      so.parallelism = pc.parallelism;
      so.out_dir = or_default(scan_out, paths.scores());
      so.max_observations = scan_limit;
      const ScanConfig sc{pc.window_size, pc.stride};
      const ScanResult r = scan_resume ? resume_scan(archive, scorer, m.calibration, sc, so)
                                       : scan_archive(archive, scorer, m.calibration, sc, so);
      echo_config(app, so.out_dir);
      for (const auto& e : r.errors) log("error: " + e.observation_id + ": " + e.message);
      std::printf("scanned %zu observations (%zu windows, %.0f windows/s, kernels %s), %zu grids total%s\n",
                  r.scanned, r.windows, r.windows_per_second, simd::active_kernels().name, r.grids.size(),
                  r.complete ? "" : ", incomplete");
      if (!r.errors.empty()) return 1;
    } else if (*build) {
      const DirectoryArchive archive(or_default(build_archive, paths.archive()));
      const auto grids = load_score_grids(or_default(build_scores, paths.scores()));
      const TIBasemap map = TIBasemap::load(or_default(build_basemaps, paths.basemaps()));
      auto cands = build_candidates(grids, archive, pc.grouping_radius_m);
      const std::size_t total = cands.size();
      assign_ti(cands, map);
      if (!build_keep_all) cands = apply_filters(cands, pc.filter());
      const fs::path out = or_default(build_out, paths.candidates());
      write_candidates(out, cands);
      echo_config(app, out.parent_path().empty() ? fs::path(".") : out.parent_path());
      std::printf("%zu candidates from %zu grids, %zu kept -> %s\n", total, grids.size(), cands.size(), out.c_str());
    } else if (*select) {
      const auto cands = read_candidates(or_default(sel_in, paths.candidates()));
      const auto chosen = pick(cands, sel_mode, pc.k, pc.per_bin, pc.bins());
      const fs::path out = or_default(sel_out, paths.selection(mode_label(sel_mode)));
      write_candidates(out, chosen);
      std::printf("%s: %zu of %zu candidates -> %s\n", sel_mode.c_str(), chosen.size(), cands.size(), out.c_str());
    } else if (*report) {
      const TIBasemap map = TIBasemap::load(or_default(rep_basemaps, paths.basemaps()));
      const TIBins bins = pc.bins();
      const auto expected = expected_distribution(map, bins, pc.lat_min, pc.lat_max);
      const fs::path out = or_default(rep_out, paths.reports());
      std::vector<std::pair<std::string, fs::path>> inputs;
      if (rep_selections.empty()) {
        for (const char* mode : {"top_k", "stratified"})
          if (fs::exists(paths.selection(mode))) inputs.emplace_back(mode, paths.selection(mode));
      } else {
        for (const auto& s : rep_selections) {
          std::string label = fs::path(s).stem().string();
          if (label.rfind("selection_", 0) == 0) label = label.substr(10);
          inputs.emplace_back(label, s);
        }
      }
      if (inputs.empty() && rep_store.empty()) throw NotFoundError("no selection files found; run select first");
      std::optional<std::vector<GroundTruthImpact>> truth;
      if (!rep_truth.empty()) truth = read_ground_truth(rep_truth);
      auto emit = [&](const BiasReport& r) {
        write_file_atomic(out / ("bias_" + r.label + ".json"), bias_report_to_json(r));
        write_file_atomic(out / ("bias_" + r.label + ".csv"), bias_report_csv(r));
        write_file_atomic(out / ("bias_" + r.label + ".svg"), bias_report_svg(r));
        std::printf("%-22s n = %5zu  D_KL = %.4f\n", r.label.c_str(), r.n, r.d_kl);
      };
      for (const auto& [label, path] : inputs) {
        auto sel = read_candidates(path);
        std::erase_if(sel, [](const Candidate& c) { return !c.ti_value; });
        emit(bias_report(sel, expected, bins, label));
        if (truth) emit(bias_report(verify_against_truth(sel, *truth), expected, bins, label + "_verified"));
      }
      if (!rep_store.empty()) {
        const CatalogStore store(rep_store);
        auto entries = store.catalog();
        std::erase_if(entries, [](const CatalogEntry& e) { return !e.thermal_inertia; });
        if (entries.empty()) throw NotFoundError("the catalog has no entries with thermal inertia");
        emit(bias_report(entries, expected, bins, "catalog"));
      }
      echo_config(app, out);
    } else if (*serve) {
      CatalogStore store(or_default(srv_store, paths.store()));
      const fs::path cand_path = or_default(srv_candidates, paths.candidates());
      if (!srv_candidates.empty() || fs::exists(cand_path)) {
        const std::size_t added = store.import_candidates(read_candidates(cand_path));
        log("imported " + std::to_string(added) + " new candidates");
      }
      std::optional<DirectoryArchive> archive;
      const fs::path archive_dir = or_default(srv_archive, paths.archive());
      if (fs::exists(archive_dir)) archive.emplace(archive_dir);
      ServiceConfig cfg;
      cfg.cors_origin = srv_cors;
      cfg.reports_dir = or_default(srv_reports, paths.reports());
      cfg.bins = pc.bins();
      ReviewService svc(store, archive ? &*archive : nullptr, cfg);
      log("serving " + std::to_string(store.size()) + " candidates on http://" + srv_host + ":" +
          std::to_string(srv_port));
      svc.run(srv_host, srv_port);
    } else if (*exp) {
      const CatalogStore store(or_default(exp_store, paths.store()));
      const fs::path out = or_default(exp_out, paths.workdir / "export");
      const auto entries = store.catalog();
      write_file_atomic(out / "catalog_properties.csv", catalog_properties_csv(entries));
      write_file_atomic(out / "catalog_images.csv", catalog_images_csv(entries));
      nlohmann::json j{{"entries", entries.size()}};
      if (!entries.empty()) {
        const SummaryStats s = summary_stats(entries);
        j["mean_diameter_m"] = s.mean_diameter;
        j["std_diameter_m"] = s.std_diameter ? nlohmann::json(*s.std_diameter) : nlohmann::json(nullptr);
        j["cluster_fraction"] = s.cluster_fraction;
        j["halo_fraction"] = s.halo_fraction;
        j["ray_fraction"] = s.ray_fraction;
        j["tone_fractions"] = {{"dark", s.dark_fraction}, {"light", s.light_fraction}, {"dual", s.dual_fraction}};
        j["mean_dci"] = s.mean_dci;
        j["std_dci"] = s.std_dci ? nlohmann::json(*s.std_dci) : nlohmann::json(nullptr);
        j["mean_ti"] = s.mean_ti ? nlohmann::json(*s.mean_ti) : nlohmann::json(nullptr);
      }
      write_file_atomic(out / "summary.json", j.dump(2) + "\n");
      std::printf("%zu catalog entries -> %s\n", entries.size(), out.c_str());
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n\n%s", e.what(), app.help().c_str());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid %s: %s\n", e.field().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
