// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "impactscan/analytics.hpp"
#include "impactscan/calibration.hpp"
#include "impactscan/candidates.hpp"
#include "impactscan/catalog.hpp"
#include "impactscan/error.hpp"
#include "impactscan/hash.hpp"
#include "impactscan/image_io.hpp"
#include "impactscan/pipeline.hpp"
#include "impactscan/scan.hpp"
#include "impactscan/scorer.hpp"
#include "impactscan/synthetic.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace impactscan;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      if (pass) detail << "first failure: " << what << "; ";
      pass = false;
    }
  }
};

int failures = 0;

void criterion(int n, const char* title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what() << "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail << "over budget " << budget_s << " s; ";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %2d: %s [%.2f s] %s\n", o.pass ? "PASS" : "FAIL", n, title, secs, o.detail.str().c_str());
  std::fflush(stdout);
}

std::string candidates_checksum(const std::vector<Candidate>& c) {
  return Fnv1a{}.update(candidates_to_jsonl(c)).hex();
}

std::string grids_checksum(const std::vector<ScoreGrid>& grids) {
  Fnv1a h;
  for (const auto& g : grids) h.update(encode_score_grid(g));
  return h.hex();
}

void c1(Outcome& o) {
  const double d = effective_diameter({3, 4, 5});
  o.require(std::abs(d - 6.0) <= 1e-12, "effective_diameter({3,4,5}) = 6");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 100.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(1 + i % 10);
    for (auto& x : v) x = u(rng);
    const double base = effective_diameter(v);
    auto p = v;
    std::shuffle(p.begin(), p.end(), rng);
    o.require(std::abs(effective_diameter(p) - base) <= 1e-12 * base, "permutation invariance");
    auto up = v;
    up[rng() % up.size()] *= 1.01;
    o.require(effective_diameter(up) > base, "monotone in each argument");
  }
  o.detail << "D({3,4,5}) = " << d;
}

void c2(Outcome& o) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 4.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = z(rng), b = z(rng);
    const double soft = std::exp(b) / (std::exp(a) + std::exp(b));
    o.require(std::abs(apply_calibration({}, {a, b}).p_pos - soft) <= 1e-12, "identity equals softmax");
  }

  const double t_star = 1.8, b_neg = -0.15, b_pos = 0.35;
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 10'000; ++i) {
    const RawScore r{z(rng), z(rng)};
    const double p = apply_calibration({t_star, b_neg, b_pos}, r).p_pos;
    s.push_back({r, u(rng) < p ? Label::positive : Label::negative});
  }
  const BctsFit fit = fit_bcts(s);
  const double shift_star = b_pos - b_neg, shift = fit.model.bias_pos - fit.model.bias_neg;
  o.require(std::abs(fit.model.temperature - t_star) <= 0.1 * t_star, "temperature within 10%");
  o.require(std::abs(shift - shift_star) <= 0.1 * shift_star, "bias difference within 10%");
  o.require(fit.converged, "optimizer converged");

  auto preds = [&](const CalibrationModel& m) {
    std::vector<Prediction> v;
    for (const auto& x : s) v.push_back({apply_calibration(m, x.score).p_pos, x.label});
    return v;
  };
  const double ece_before = ece(preds({})), ece_after = ece(preds(fit.model));
  o.require(ece_after <= ece_before + 1e-9, "ECE does not increase on the fitting set");
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    o.require(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12, "objective decreases monotonically");

  std::uniform_real_distribution<double> tt(0.3, 4.0), bb(-2.0, 2.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const CalibrationModel m{tt(rng), bb(rng), bb(rng)};
    const std::vector<CalibrationSample> sub(s.begin() + k * 50, s.begin() + k * 50 + 200);
    const auto g = calibration_nll(m, sub);
    for (int p = 0; p < 3; ++p) {
      CalibrationModel up = m, dn = m;
      double* pu = p == 0 ? &up.temperature : p == 1 ? &up.bias_neg : &up.bias_pos;
      double* pd = p == 0 ? &dn.temperature : p == 1 ? &dn.bias_neg : &dn.bias_pos;
      const double h = 1e-6 * std::max(1.0, std::abs(*pu));
      *pu += h;
      *pd -= h;
      const double fd = (calibration_nll(up, sub).nll - calibration_nll(dn, sub).nll) / (2 * h);
      const double rel = std::abs(g.grad[p] - fd) / std::max(std::abs(fd), 1e-3);
      worst = std::max(worst, rel);
    }
  }
  o.require(worst <= 1e-4, "gradient matches central differences");
  o.detail << "T=" << fit.model.temperature << " (true " << t_star << "), b_pos-b_neg=" << shift << " (true "
           << shift_star << "), ECE " << ece_before << " -> " << ece_after << ", max grad rel err " << worst;
}

void c3(Outcome& o) {
  const double p = apply_calibration({1.51, -0.05, 0.26}, {0.0, 0.0}).p_pos;
  o.require(std::abs(p - 0.577) <= 0.001, "p_pos = 0.577 +- 0.001");
  o.detail << "p_pos = " << p;
}

void c4(Outcome& o) {
  std::vector<LabeledWindow> set;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < 37; ++i) {
    LabeledWindow w{32, std::vector<float>(32 * 32), i % 3 == 0 ? Label::positive : Label::negative};
    for (auto& p : w.pixels) p = u(rng);
    set.push_back(std::move(w));
  }
  const auto out = augment(set, 11);
  o.require(out.size() == 6 * set.size(), "6N outputs");
  const auto pos_in = std::count_if(set.begin(), set.end(), [](auto& w) { return w.label == Label::positive; });
  const auto pos_out = std::count_if(out.begin(), out.end(), [](auto& w) { return w.label == Label::positive; });
  o.require(pos_out == 6 * pos_in, "class balance preserved");
  for (std::size_t i = 0; i < out.size(); ++i) o.require(out[i].label == set[i / 6].label, "labels preserved");
  o.require(6156 * kAugmentationFactor == 36936, "6156 -> 36936");
  o.detail << set.size() << " -> " << out.size() << " windows, positives " << pos_in << " -> " << pos_out;
}

void c5(Outcome& o) {
  const ObservationInfo info{"w", testing::day("2010-01-01"), 600, 450, GeoTransform{0, 0, 1e-4}};
  o.require(extract_windows(info, 300, 75).size() == 15, "600x450 -> 15 windows");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(1, 3000);
  for (int i = 0; i < 500; ++i) {
    const int w = dim(rng), h = dim(rng);
    const ObservationInfo r{"r", info.acquired_at, w, h, info.geo};
    const std::size_t expect =
        (w >= 300 && h >= 300) ? static_cast<std::size_t>((w - 300) / 75 + 1) * ((h - 300) / 75 + 1) : 0;
    o.require(extract_windows(r, 300, 75).size() == expect, "count formula");
  }
  o.detail << "500 random sizes checked";
}

void c6(Outcome& o) {
  const auto f = testing::random_field(100, 10, 10, 6);
  const auto cands = build_candidates(f.grids, f.infos);
  std::map<std::tuple<std::string, int, int>, int> seen;
  for (const auto& c : cands)
    for (const auto& m : c.members) ++seen[{m.window.observation_id, m.window.row_off, m.window.col_off}];
  o.require(seen.size() == f.windows, "every window assigned");
  o.require(std::all_of(seen.begin(), seen.end(), [](auto& kv) { return kv.second == 1; }), "no window assigned twice");
  for (std::size_t i = 0; i < cands.size(); ++i)
    for (std::size_t j = i + 1; j < cands.size(); ++j)
      o.require(great_circle_distance(cands[i].seed, cands[j].seed) > kGroupingRadiusM, "seeds > 600 m apart");
  auto grids = f.grids;
  auto infos = f.infos;
  std::mt19937_64 rng(66);
  std::shuffle(grids.begin(), grids.end(), rng);
  std::shuffle(infos.begin(), infos.end(), rng);
  o.require(candidates_checksum(build_candidates(grids, infos)) == candidates_checksum(cands), "permutation invariance");
  o.detail << f.windows << " windows -> " << cands.size() << " candidates";
}

Candidate timeline(std::vector<std::pair<const char*, float>> pts, double lat) {
  Candidate c;
  c.id = "fixture";
  c.seed = {lat, 1.0};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c.members.push_back({{"o" + std::to_string(i), 0, 0, 300}, testing::day(pts[i].first), pts[i].second, c.seed});
    if (pts[i].second > c.confidence) {
      c.confidence = pts[i].second;
      c.seed_index = i;
    }
  }
  return c;
}

void c7(Outcome& o) {
  const auto kept = apply_filters({timeline({{"2015-01-19", 0.02f}, {"2016-11-17", 0.99f}}, 0.0)});
  o.require(kept.size() == 1, "0.02 then 0.99 kept");
  if (kept.size() == 1) {
    const auto fw = formation_window(kept[0]);
    o.require(fw && fw->first == testing::day("2015-01-19") && fw->second == testing::day("2016-11-17"),
              "formation window (t1, t2]");
  }
  o.require(apply_filters({timeline({{"2016-11-17", 0.99f}}, 0.0)}).empty(), "lone 0.99 dropped");
  o.require(apply_filters({timeline({{"2015-01-19", 0.02f}, {"2016-11-17", 0.99f}}, 61.0)}).empty(),
            "latitude 61 dropped");
  o.detail << "three fixtures";
}

void c8(Outcome& o) {
  const std::vector<double> e{0.1, 0.2, 0.3, 0.4};
  o.require(std::abs(kl_divergence(std::vector<double>{1, 2, 3, 4}, e)) <= 1e-12, "D(O=E) = 0");
  std::vector<std::size_t> onehot(10, 0);
  onehot[0] = 10;
  const double d = kl_divergence(onehot, std::vector<double>(10, 0.1));
  o.require(std::abs(d - std::log(10.0)) <= 1e-9, "one-hot vs uniform = ln 10");
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double min_d = 1e9;
  for (int i = 0; i < 10'000; ++i) {
    const std::size_t n = 2 + i % 12;
    std::vector<double> oc(n), p(n);
    for (auto& x : oc) x = u(rng) < 0.3 ? 0.0 : u(rng);
    oc[i % n] += 0.01;
    for (auto& x : p) x = 1e-3 + u(rng);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& x : p) x /= s;
    const double v = kl_divergence(oc, p);
    min_d = std::min(min_d, v);
    o.require(v >= 0.0, "Gibbs nonnegativity");
  }
  o.detail << "ln10 case " << d << ", min over 10000 random pairs " << min_d;
}

void c9(Outcome& o) {
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  BiasExperimentOptions opts;
  opts.parallelism = static_cast<int>(std::min(cores, 4u));
  int wins = 0;
  double demo_ratio = 1e9;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SyntheticWorldConfig cfg;
    cfg.rng_seed = seed;
    const auto r = run_bias_experiment(cfg, opts);
    const bool win = r.stratified.d_kl < r.top_k.d_kl;
    wins += win;
    if (seed == SyntheticWorldConfig{}.rng_seed) demo_ratio = r.stratified.d_kl / r.top_k.d_kl;
    char buf[96];
    std::snprintf(buf, sizeof buf, " s%llu:%.3f/%.3f", static_cast<unsigned long long>(seed), r.stratified.d_kl,
                  r.top_k.d_kl);
    per_seed << buf;
    std::printf("  seed %2llu  top_k D_KL %.3f (n=%zu)  stratified D_KL %.3f (n=%zu)  [%.1f s]\n",
                static_cast<unsigned long long>(seed), r.top_k.d_kl, r.top_k.n, r.stratified.d_kl, r.stratified.n,
                r.seconds);
    std::fflush(stdout);
  }
  o.require(wins >= 19, "stratified < top-K in >= 19 of 20 seeds");
  o.require(demo_ratio < 0.5, "stratified < 0.5 x top-K on the demo seed");
  o.detail << wins << "/20 seeds, demo-seed ratio " << demo_ratio << " (stratified/top_k:" << per_seed.str() << ")";
}

void c10(Outcome& o) {
  SyntheticWorldConfig cfg;
  cfg.site_count = 30;
  const SyntheticArchive world = generate_synthetic_archive(cfg);
  const auto trained = train_and_calibrate(world.training_windows(60, 60, 3), 0.75, 3);
  const BaselineScorer scorer(trained.model.scorer);
  const CalibrationModel& cal = trained.model.calibration;

  const auto r1 = scan_archive(world, scorer, cal, {}, {1});
  const auto r4 = scan_archive(world, scorer, cal, {}, {4});
  const auto c1 = apply_filters(build_candidates(r1.grids, world));
  const auto c4 = apply_filters(build_candidates(r4.grids, world));
  o.require(grids_checksum(r1.grids) == grids_checksum(r4.grids), "score grids equal for parallelism 1 and 4");
  o.require(candidates_checksum(c1) == candidates_checksum(c4), "candidate files equal for parallelism 1 and 4");

  testing::TempDir dir("accept-scan");
  const std::size_t total = world.observations().size();
  const pid_t child = fork();
  if (child == 0) {
    ScanOptions opts{2, dir.path(), 0, [total](const std::string&, std::size_t committed) {
                       if (committed == total / 2) _exit(0);
                     }};
    scan_archive(world, scorer, cal, {}, opts);
    _exit(3);
  }
  int status = 0;
  waitpid(child, &status, 0);
  o.require(WIFEXITED(status) && WEXITSTATUS(status) == 0, "scan process killed mid-run");
  const auto cp = read_checkpoint(dir / "checkpoint.json");
  o.require(cp.completed_ids.size() == total / 2, "checkpoint reflects committed work");
  const auto resumed = resume_scan(world, scorer, cal, {}, {2, dir.path(), 0, {}});
  o.require(resumed.scanned == total - total / 2, "resume only scans the remainder");
  o.require(grids_checksum(resumed.grids) == grids_checksum(r1.grids), "resumed grids equal uninterrupted run");
  o.require(grids_checksum(load_score_grids(dir.path())) == grids_checksum(r1.grids), "persisted grids equal");
  bool refused = false;
  try {
    resume_scan(world, scorer, cal, ScanConfig{300, 60}, {1, dir.path(), 0, {}});
  } catch (const ConflictError&) {
    refused = true;
  }
  o.require(refused, "resume with a different stride refused");
  o.detail << total << " observations, " << r1.windows << " windows, grids " << grids_checksum(r1.grids)
           << ", candidates " << candidates_checksum(c1) << ", killed after " << cp.completed_ids.size();
}

void c11(Outcome& o) {
  using RS = ReviewStatus;
  testing::TempDir dir("accept-store");
  std::vector<Candidate> cands;
  for (int i = 0; i < 40; ++i) {
    Candidate c = timeline({{"2012-01-01", 0.1f}, {"2013-01-01", 0.97f}}, 10.0);
    c.id = "k" + std::to_string(i);
    c.seed.lon = 1.0 + i;
    cands.push_back(apply_filters({c}).at(0));
  }
  auto req = [](RS s) {
    DecisionRequest r;
    r.status = s;
    r.reviewer = "acceptance";
    return r;
  };
  std::unordered_map<std::string, RS> final_status;
  {
    CatalogStore store(dir.path());
    store.import_candidates(cands);
    for (RS s : {RS::new_fresh, RS::followup_requested, RS::confirmed}) store.record_decision("k0", req(s));
    for (RS s : {RS::new_fresh, RS::followup_requested, RS::rejected_after_followup}) store.record_decision("k1", req(s));
    o.require(store.get("k0").status == RS::confirmed, "path to confirmed accepted");
    o.require(store.get("k1").status == RS::rejected_after_followup, "path to rejected_after_followup accepted");

    // Put candidates into every status, then try moves the state machine forbids.
    const std::vector<std::vector<RS>> paths = {
        {},
        {RS::non_impact},
        {RS::old_impact},
        {RS::undateable_fresh},
        {RS::known_fresh},
        {RS::new_fresh},
        {RS::duplicate},
        {RS::new_fresh, RS::followup_requested},
    };
    int rejected = 0, attempted = 0;
    int next = 2;
    for (const auto& path : paths) {
      const std::string id = "k" + std::to_string(next++);
      for (RS s : path) store.record_decision(id, req(s));
      const RS cur = store.get(id).status;
      for (RS to : all_review_statuses()) {
        if (is_legal_transition(cur, to) || attempted >= 20) continue;
        ++attempted;
        try {
          store.record_decision(id, req(to));
        } catch (const ConflictError&) {
          ++rejected;
        }
      }
    }
    for (RS to : {RS::unreviewed, RS::new_fresh}) {
      if (attempted >= 20) break;
      ++attempted;
      try {
        store.record_decision("k0", req(to));
      } catch (const ConflictError&) {
        ++rejected;
      }
    }
    o.require(attempted == 20 && rejected == 20, "20 illegal transitions rejected");
    o.detail << rejected << "/" << attempted << " illegal transitions rejected; ";
    for (const auto& r : store.all()) final_status[r.candidate.id] = r.status;
  }
  {
    std::ofstream torn(dir / "decisions.jsonl", std::ios::app | std::ios::binary);
    torn << R"({"sequence":99,"candidate_id":"k5","status":"new_f)";
  }
  CatalogStore reopened(dir.path());
  bool same = true;
  for (const auto& r : reopened.all()) same &= final_status.at(r.candidate.id) == r.status;
  o.require(same, "reload after torn append reproduces statuses");
  const auto replayed = replay_statuses(reopened.decisions());
  bool replay_ok = true;
  for (const auto& [id, s] : final_status) {
    const auto it = replayed.find(id);
    replay_ok &= (it == replayed.end() ? RS::unreviewed : it->second) == s;
  }
  o.require(replay_ok, "log replay reproduces final statuses");
  o.detail << reopened.decisions().size() << " decisions replayed";
}

}  // namespace

int main() {
  criterion(1, "effective diameter exactness and properties", 1.0, c1);
  criterion(2, "calibration identity, recovery, ECE and gradient", 30.0, c2);
  criterion(3, "hand-checked calibration point", 1.0, c3);
  criterion(4, "augmentation factor", 0, c4);
  criterion(5, "window-count formula", 0, c5);
  criterion(6, "clustering partition on 10,000 windows", 60.0, c6);
  criterion(7, "dateability and latitude filters", 0, c7);
  criterion(8, "KL divergence correctness", 0, c8);
  criterion(9, "stratified selection reduces TI bias over 20 seeds", 300.0, c9);
  criterion(10, "scan determinism and kill-resume", 0, c10);
  criterion(11, "review state machine and crash replay", 0, c11);
  std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
