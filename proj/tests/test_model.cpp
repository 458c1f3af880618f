#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "impactscan/calibration.hpp"
#include "impactscan/error.hpp"
#include "impactscan/features.hpp"
#include "impactscan/scorer.hpp"
#include "impactscan/simd/kernels.hpp"
#include "support.hpp"

using namespace impactscan;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

LabeledWindow blob_window(int size, double contrast, std::uint64_t seed, Label label) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.02f);
  LabeledWindow w{size, std::vector<float>(static_cast<std::size_t>(size) * size), label};
  const double c = (size - 1) / 2.0;
  for (int r = 0; r < size; ++r)
    for (int col = 0; col < size; ++col) {
      const double d2 = (r - c) * (r - c) + (col - c) * (col - c);
      const double v = 0.5 - contrast * std::exp(-d2 / (2.0 * 25.0)) + noise(rng);
      w.pixels[static_cast<std::size_t>(r) * size + col] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return w;
}

std::vector<LabeledWindow> toy_set(int n_each, std::uint64_t seed) {
  std::vector<LabeledWindow> set;
  for (int i = 0; i < n_each; ++i) {
    set.push_back(blob_window(48, 0.3, seed * 1000 + i, Label::positive));
    set.push_back(blob_window(48, 0.0, seed * 1000 + 500 + i, Label::negative));
  }
  return set;
}

}  // namespace

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const auto& s = simd::scalar_kernels();
  const auto* v = simd::avx2_kernels();
  if (!v) {
    MESSAGE("AVX2 unavailable; only the scalar path is exercised");
    return;
  }
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 300u, 1001u}) {
    const auto a = random_floats(n, n + 1), b = random_floats(n, n + 2);
    CHECK(v->sum(a.data(), n) == doctest::Approx(s.sum(a.data(), n)).epsilon(1e-12));
    const auto ss = s.sum_sumsq(a.data(), n), vs = v->sum_sumsq(a.data(), n);
    CHECK(vs.sum == doctest::Approx(ss.sum).epsilon(1e-12));
    CHECK(vs.sumsq == doctest::Approx(ss.sumsq).epsilon(1e-12));
    CHECK(v->sq_diff_sum(a.data(), b.data(), n) == doctest::Approx(s.sq_diff_sum(a.data(), b.data(), n)).epsilon(1e-12));
  }
  for (auto [w, h, radius] : {std::tuple{1, 1, 1}, {5, 3, 2}, {17, 9, 4}, {64, 40, 6}, {301, 7, 3}}) {
    const auto in = random_floats(static_cast<std::size_t>(w) * h, w * 31 + h);
    auto taps = random_floats(2 * radius + 1, radius);
    std::vector<float> o1(in.size()), o2(in.size());
    s.filter_rows(in.data(), o1.data(), w, h, taps.data(), radius);
    v->filter_rows(in.data(), o2.data(), w, h, taps.data(), radius);
    CHECK(o1 == o2);
    s.filter_cols(in.data(), o1.data(), w, h, taps.data(), radius);
    v->filter_cols(in.data(), o2.data(), w, h, taps.data(), radius);
    CHECK(o1 == o2);
  }
  for (std::size_t n : {0u, 5u, 16u, 17u, 300u, 1003u}) {
    auto x = random_floats(n, 7 * n + 3);
    for (std::size_t i = 0; i < n; i += 5) x[i] = (i % 3 == 0) ? -0.25f : (i % 3 == 1 ? 1.0f : 1.75f);
    for (std::uint32_t bins : {1u, 7u, 1024u, 65536u}) {
      std::vector<std::uint16_t> b1(n), b2(n);
      s.bin_index(x.data(), b1.data(), n, bins);
      v->bin_index(x.data(), b2.data(), n, bins);
      CHECK(b1 == b2);
    }
  }
}

TEST_CASE("window features match between kernel variants and known values") {
  LabeledWindow flat{20, std::vector<float>(400, 0.25f), Label::negative};
  const auto f = window_features(flat.view(), simd::scalar_kernels());
  CHECK(f[0] == doctest::Approx(0.25));
  CHECK(f[1] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(f[2] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(f[3]) <= 1.0 / 1024.0);
  CHECK(f[4] == doctest::Approx(0.0).epsilon(1e-9));

  const auto blob = blob_window(64, 0.3, 4, Label::positive);
  const auto fb = window_features(blob.view(), simd::scalar_kernels());
  CHECK(fb[2] > 0.05);
  if (const auto* v = simd::avx2_kernels()) {
    const auto fv = window_features(blob.view(), *v);
    for (std::size_t i = 0; i < kFeatureCount; ++i) CHECK(fv[i] == doctest::Approx(fb[i]).epsilon(1e-9));
  }
}

TEST_CASE("augmentation transforms") {
  LabeledWindow w{3, {1, 2, 3, 4, 5, 6, 7, 8, 9}, Label::positive};
  for (auto& p : w.pixels) p /= 10.0f;
  auto px = [](const LabeledWindow& x) {
    std::vector<int> out;
    for (float p : x.pixels) out.push_back(static_cast<int>(std::lround(p * 10.0f)));
    return out;
  };
  CHECK(px(flip_horizontal(w)) == std::vector<int>{3, 2, 1, 6, 5, 4, 9, 8, 7});
  CHECK(px(flip_vertical(w)) == std::vector<int>{7, 8, 9, 4, 5, 6, 1, 2, 3});
  CHECK(px(rotate90(w, 4)) == px(w));
  CHECK(rotate90(rotate90(w, 1), 3) == w);
  CHECK(rotate90(w, 2) == flip_vertical(flip_horizontal(w)));
  LabeledWindow flat{16, std::vector<float>(256, 0.4f), Label::negative};
  for (float p : gaussian_blur(flat, 2.0).pixels) CHECK(p == doctest::Approx(0.4f));

  const auto set = toy_set(3, 1);
  const auto a1 = augment(set, 99), a2 = augment(set, 99);
  REQUIRE(a1.size() == set.size() * kAugmentationFactor);
  CHECK(a1 == a2);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(a1[i * kAugmentationFactor] == set[i]);
    for (std::size_t k = 0; k < kAugmentationFactor; ++k) {
      const auto& x = a1[i * kAugmentationFactor + k];
      CHECK(x.label == set[i].label);
      for (float p : x.pixels) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
      }
    }
  }
  std::vector<LabeledWindow> streamed;
  for_each_augmented(set, 99, [&](LabeledWindow&& x) { streamed.push_back(std::move(x)); });
  CHECK(streamed == a1);
}

TEST_CASE("baseline scorer separates blobs from flat terrain") {
  const auto train = toy_set(20, 2);
  const auto model = train_baseline(train);
  const BaselineScorer scorer(model);
  int correct = 0;
  const auto test = toy_set(20, 3);
  for (const auto& w : test) {
    const RawScore s = scorer.score(w.view());
    CHECK(s.z_neg == 0.0);
    correct += (s.z_pos > 0.0) == (w.label == Label::positive);
  }
  CHECK(correct >= 38);
  CHECK(train_baseline_augmented(train, 5) == train_baseline_augmented(train, 5));
  CHECK(scorer.fingerprint() == BaselineScorer(model).fingerprint());
  auto other = model;
  other.intercept += 1.0;
  CHECK(scorer.fingerprint() != BaselineScorer(other).fingerprint());

  LabeledWindow wrong{32, std::vector<float>(32 * 32, 0.5f), Label::negative};
  CHECK_THROWS_AS(score_window(model, wrong.view()), ValidationError);
  std::vector<LabeledWindow> one_class(train.begin(), train.begin() + 1);
  CHECK_THROWS_AS(train_baseline(one_class), ValidationError);
  CHECK_THROWS_AS(train_baseline({}), ValidationError);
}

TEST_CASE("model and labeled-set files round trip") {
  testing::TempDir dir("model");
  const ModelFile m{train_baseline(toy_set(5, 4)), CalibrationModel{1.7, -0.2, 0.2}};
  save_model(dir / "m.json", m);
  const ModelFile back = load_model(dir / "m.json");
  CHECK(back.scorer == m.scorer);
  CHECK(back.calibration == m.calibration);
  CHECK_THROWS_AS(model_from_json(R"({"schema_version":1})"), ValidationError);

  const auto set = toy_set(2, 5);
  const auto csv = save_labeled_set(dir / "set", set);
  const auto loaded = load_labeled_set(csv);
  REQUIRE(loaded.size() == set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(loaded[i].label == set[i].label);
    for (std::size_t k = 0; k < set[i].pixels.size(); ++k)
      CHECK(std::abs(loaded[i].pixels[k] - set[i].pixels[k]) <= 1.0f / 65535.0f);
  }
}

TEST_CASE("split indices partition and are seeded") {
  const auto [a, b] = split_indices(100, 0.75, 3);
  CHECK(a.size() == 75);
  CHECK(b.size() == 25);
  std::vector<int> seen(100, 0);
  for (auto i : a) ++seen[i];
  for (auto i : b) ++seen[i];
  for (int s : seen) CHECK(s == 1);
  CHECK(split_indices(100, 0.75, 3) == std::pair{a, b});
  CHECK(split_indices(100, 0.75, 4) != std::pair{a, b});
}

TEST_CASE("calibrated posteriors form a distribution") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> z(-40.0, 40.0), t(0.05, 20.0), b(-5.0, 5.0);
  for (int i = 0; i < 2000; ++i) {
    const CalibrationModel m{t(rng), b(rng), b(rng)};
    const Posterior p = apply_calibration(m, {z(rng), z(rng)});
    CHECK(p.p_pos >= 0.0);
    CHECK(p.p_neg >= 0.0);
    CHECK(p.p_pos + p.p_neg == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Posterior id = apply_calibration({}, {0.0, std::log(3.0)});
  CHECK(id.p_pos == doctest::Approx(0.75));
  CHECK_THROWS_AS((CalibrationModel{0.0, 0.0, 0.0}.validate()), ValidationError);
  CHECK_THROWS_AS((CalibrationModel{-1.0, 0.0, 0.0}.validate()), ValidationError);
  CHECK_THROWS_AS((CalibrationModel{1.0, std::nan(""), 0.0}.validate()), ValidationError);
}

TEST_CASE("calibration gradient matches finite differences") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z(0.0, 3.0);
  std::bernoulli_distribution coin(0.4);
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 200; ++i) s.push_back({{z(rng), z(rng)}, coin(rng) ? Label::positive : Label::negative});
  const CalibrationModel m{1.3, 0.2, -0.4};
  const auto g = calibration_nll(m, s);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    CalibrationModel up = m, dn = m;
    double* pu = k == 0 ? &up.temperature : k == 1 ? &up.bias_neg : &up.bias_pos;
    double* pd = k == 0 ? &dn.temperature : k == 1 ? &dn.bias_neg : &dn.bias_pos;
    *pu += h;
    *pd -= h;
    const double fd = (calibration_nll(up, s).nll - calibration_nll(dn, s).nll) / (2 * h);
    CHECK(g.grad[k] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("bcts recovers the generating temperature and bias") {
  const double t_true = 2.5, shift = 0.7;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> z(0.0, 6.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 20000; ++i) {
    const double zp = z(rng);
    const double p = 1.0 / (1.0 + std::exp(-(zp / t_true + shift)));
    s.push_back({{0.0, zp}, u(rng) < p ? Label::positive : Label::negative});
  }
  const BctsFit fit = fit_bcts(s);
  CHECK(fit.converged);
  CHECK(fit.grad_norm < 1e-6);
  CHECK(fit.model.temperature == doctest::Approx(t_true).epsilon(0.08));
  CHECK(fit.model.bias_pos - fit.model.bias_neg == doctest::Approx(shift).epsilon(0.15));
  CHECK(fit.model.bias_pos + fit.model.bias_neg == doctest::Approx(0.0).epsilon(1e-9));
  for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
    CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);

  std::vector<CalibrationSample> one(s.begin(), s.begin() + 1);
  one[0].label = Label::positive;
  CHECK_THROWS_AS(fit_bcts(one), ValidationError);
  CHECK_THROWS_AS(fit_bcts({}), ValidationError);
}

TEST_CASE("expected calibration error") {
  CHECK(ece(std::vector<Prediction>{{1.0, Label::positive}, {0.0, Label::negative}}) == doctest::Approx(0.0));
  CHECK(ece(std::vector<Prediction>{{0.9, Label::negative}}) == doctest::Approx(0.9));
  // Two predictions at 0.7, one right: bin confidence 0.7, accuracy 0.5.
  CHECK(ece(std::vector<Prediction>{{0.7, Label::positive}, {0.7, Label::negative}}) == doctest::Approx(0.2));
  CHECK_THROWS_AS(ece({}), ValidationError);
  CHECK_THROWS_AS(ece(std::vector<Prediction>{{1.2, Label::positive}}), ValidationError);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Prediction> preds;
  for (int i = 0; i < 50000; ++i) {
    const double p = u(rng);
    preds.push_back({p, u(rng) < p ? Label::positive : Label::negative});
  }
  const double e = ece(preds);
  CHECK(e >= 0.0);
  CHECK(e < 0.02);
}

TEST_CASE("calibration worked examples") {
  const Posterior p = apply_calibration({1.51, -0.05, 0.26}, {0.0, 0.0});
  CHECK(p.p_pos == doctest::Approx(0.577).epsilon(0.001 / 0.577));
  CHECK(p.p_pos == doctest::Approx(std::exp(0.26) / (std::exp(0.26) + std::exp(-0.05))).epsilon(1e-12));
  const CalibrationModel m{1.3, 0.1, -0.2};
  const Posterior a = apply_calibration(m, {5.0, 5.7}), b = apply_calibration(m, {0.0, 0.7});
  CHECK(a.p_pos == doctest::Approx(b.p_pos).epsilon(1e-12));
  // Bias correction may flip the decision.
  CHECK(apply_calibration({1.0, 2.0, 0.0}, {0.0, 1.0}).p_pos < 0.5);
}

TEST_CASE("bcts leaves already calibrated scores alone") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> z(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CalibrationSample> s;
  for (int i = 0; i < 20000; ++i) {
    const double zp = z(rng);
    s.push_back({{0.0, zp}, u(rng) < 1.0 / (1.0 + std::exp(-zp)) ? Label::positive : Label::negative});
  }
  const BctsFit fit = fit_bcts(s);
  CHECK(fit.model.temperature >= 0.95);
  CHECK(fit.model.temperature <= 1.05);
  CHECK(std::abs(fit.model.bias_pos) < 0.05);
  CHECK(std::abs(fit.model.bias_neg) < 0.05);
  CHECK(calibration_nll(fit.model, s).nll <= calibration_nll({}, s).nll);
}

TEST_CASE("baseline scorer degenerate and permutation cases") {
  const BaselineScorerModel zero{kFeatureSetVersion, 48, {}, 0.0};
  const auto w = blob_window(48, 0.3, 1, Label::positive);
  CHECK(score_window(zero, w.view()) == RawScore{0.0, 0.0});
  CHECK(score_window(zero, w.view()) == score_window(zero, w.view()));

  const auto train = toy_set(10, 6);
  std::vector<LabeledWindow> doubled = train;
  doubled.insert(doubled.end(), train.begin(), train.end());
  const auto m1 = train_baseline(train), m2 = train_baseline(doubled);
  for (std::size_t i = 0; i < kFeatureCount; ++i) CHECK(m2.weights[i] == doctest::Approx(m1.weights[i]).epsilon(1e-6));
  CHECK(m2.intercept == doctest::Approx(m1.intercept).epsilon(1e-6));

  // Shuffled labels carry no signal, so held-out accuracy stays near chance.
  int correct = 0, total = 0;
  auto shuffle_labels = [](std::vector<LabeledWindow>& set, std::mt19937_64& rng) {
    std::vector<Label> labels;
    for (const auto& x : set) labels.push_back(x.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < set.size(); ++i) set[i].label = labels[i];
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto train_set = toy_set(10, 100 + seed);
    auto held = toy_set(50, 200 + seed);
    shuffle_labels(train_set, rng);
    shuffle_labels(held, rng);
    const BaselineScorer sc(train_baseline(train_set));
    for (const auto& x : held) {
      correct += (sc.score(x.view()).z_pos > 0.0) == (x.label == Label::positive);
      ++total;
    }
  }
  MESSAGE("shuffled-label held-out accuracy " << static_cast<double>(correct) / total);
  CHECK(std::abs(static_cast<double>(correct) / total - 0.5) <= 0.05);
}
