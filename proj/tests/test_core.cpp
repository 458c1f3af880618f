#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "impactscan/error.hpp"
#include "impactscan/geo.hpp"
#include "impactscan/image_io.hpp"
#include "impactscan/raster.hpp"
#include "impactscan/time.hpp"
#include "support.hpp"

using namespace impactscan;

TEST_CASE("iso timestamps parse and format") {
  CHECK(format_iso8601(parse_iso8601("2015-01-19")) == "2015-01-19T00:00:00Z");
  CHECK(format_iso8601(parse_iso8601("2016-11-17T12:34:56Z")) == "2016-11-17T12:34:56Z");
  CHECK(format_iso8601(parse_iso8601("2016-11-17T12:34:56.750Z")) == "2016-11-17T12:34:56Z");
  CHECK(format_iso8601(parse_iso8601("2016-11-17T12:34:56+02:00")) == "2016-11-17T10:34:56Z");
  CHECK(format_date(parse_iso8601("2008-02-29T23:59:59Z")) == "2008-02-29");
  CHECK_THROWS_AS(parse_iso8601("2015-02-30"), ValidationError);
  CHECK_THROWS_AS(parse_iso8601("yesterday"), ValidationError);
  CHECK_THROWS_AS(parse_iso8601("2015-01-19T25:00:00Z"), ValidationError);
}

TEST_CASE("great-circle distance") {
  CHECK(great_circle_distance({12.5, 40.0}, {12.5, 40.0}) == 0.0);
  const double one_degree = kMarsRadiusM * std::numbers::pi / 180.0;
  CHECK(great_circle_distance({0.0, 0.0}, {0.0, 1.0}) == doctest::Approx(one_degree).epsilon(1e-12));
  CHECK(one_degree == doctest::Approx(59'160.0).epsilon(1e-3));
  CHECK(great_circle_distance({0.0, 359.5}, {0.0, 0.5}) == doctest::Approx(one_degree).epsilon(1e-12));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-90.0, 90.0), lon(-180.0, 360.0);
  for (int i = 0; i < 1000; ++i) {
    const LatLon a{lat(rng), lon(rng)}, b{lat(rng), lon(rng)};
    CHECK(great_circle_distance(a, b) == great_circle_distance(b, a));
  }
}

TEST_CASE("geotransform maps pixel centers both ways") {
  const GeoTransform g{-10.0, 20.0, 0.01};
  CHECK(g.origin_lon() == 350.0);
  const LatLon p = g.pixel_to_geo(3.0, 4.0);
  CHECK(p.lat == doctest::Approx(19.97));
  CHECK(p.lon == doctest::Approx(350.04));
  const auto [r, c] = g.geo_to_pixel(p);
  CHECK(r == doctest::Approx(3.0));
  CHECK(c == doctest::Approx(4.0));
  // Across the 0/360 seam.
  const GeoTransform seam{359.99, 0.0, 0.01};
  CHECK(seam.geo_to_pixel({0.0, 0.02}).second == doctest::Approx(3.0));
  CHECK_THROWS_AS((GeoTransform{0.0, 0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS((GeoTransform{0.0, 91.0, 0.1}), ValidationError);
}

TEST_CASE("observation invariants") {
  const ObservationInfo info{"obs", testing::day("2015-01-19"), 4, 3, GeoTransform{0.0, 0.0, 1e-4}};
  CHECK_NOTHROW(Observation(info, std::vector<float>(12, 0.5f)));
  CHECK_THROWS_AS(Observation(info, std::vector<float>(11, 0.5f)), ValidationError);
  std::vector<float> bad(12, 0.5f);
  bad[5] = 1.5f;
  CHECK_THROWS_AS(Observation(info, bad), ValidationError);
  bad[5] = std::nanf("");
  CHECK_THROWS_AS(Observation(info, bad), ValidationError);
  ObservationInfo unnamed = info;
  unnamed.id = "";
  CHECK_THROWS_AS(Observation(unnamed, std::vector<float>(12, 0.5f)), ValidationError);
}

TEST_CASE("window extraction") {
  const auto obs = testing::noise_observation("a", 600, 450, 1);
  const auto windows = extract_windows(obs.info(), 300, 75);
  REQUIRE(windows.size() == 15);
  CHECK(windows.front() == WindowRef{"a", 0, 0, 300});
  CHECK(windows.back() == WindowRef{"a", 150, 300, 300});
  CHECK(extract_windows(testing::noise_observation("b", 299, 600, 1).info(), 300, 75).empty());

  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 2000);
  for (int i = 0; i < 500; ++i) {
    const int w = dim(rng), h = dim(rng);
    const ObservationInfo info{"x", testing::day("2010-01-01"), w, h, GeoTransform{0.0, 0.0, 1e-4}};
    const std::size_t expect = (w >= 300 && h >= 300) ? static_cast<std::size_t>((w - 300) / 75 + 1) * ((h - 300) / 75 + 1) : 0;
    const auto ws = extract_windows(info, 300, 75);
    REQUIRE(ws.size() == expect);
    for (const auto& x : ws) {
      CHECK(x.row_off + 300 <= h);
      CHECK(x.col_off + 300 <= w);
    }
  }

  const LatLon c = window_center_geo(obs.info(), windows.front());
  CHECK(c.lat == doctest::Approx(5.0 - 149.5e-4));
  CHECK(c.lon == doctest::Approx(10.0 + 149.5e-4));
  CHECK_THROWS_AS(obs.window({"a", 200, 0, 300}), ValidationError);
  CHECK_THROWS_AS(obs.window({"other", 0, 0, 300}), ValidationError);
}

TEST_CASE("pgm and png round trips are exact at 16 bits") {
  testing::TempDir dir("io");
  const auto obs = testing::noise_observation("img", 37, 23, 5);
  const GrayImage g = to_gray16(obs);
  write_pgm(dir / "a.pgm", g);
  write_png(dir / "a.png", g);
  CHECK(read_pgm(dir / "a.pgm").samples == g.samples);
  CHECK(read_gray_image(dir / "a.png").samples == g.samples);

  write_observation(dir.path(), obs);
  const Observation back = import_observation(dir / "img.pgm", dir / "img.json");
  CHECK(back.info() == obs.info());
  for (std::size_t i = 0; i < obs.pixels().size(); ++i)
    CHECK(std::abs(back.pixels()[i] - obs.pixels()[i]) <= 1.0f / 65535.0f);
  // A second round trip is bit-exact.
  testing::TempDir dir2("io2");
  write_observation(dir2.path(), back);
  CHECK(import_observation(dir2 / "img.pgm", dir2 / "img.json") == back);
}

TEST_CASE("import names the offending sidecar field") {
  testing::TempDir dir("side");
  write_observation(dir.path(), testing::noise_observation("o1", 8, 8, 1));
  auto expect_field = [&](const std::string& json, const std::string& field) {
    write_file_atomic(dir / "o1.json", json);
    try {
      import_observation(dir / "o1.pgm", dir / "o1.json");
      FAIL("expected a validation error for " << field);
    } catch (const ValidationError& e) {
      CHECK(e.field() == field);
    }
  };
  expect_field(R"({"id":"o1","origin_lon":1,"origin_lat":2,"deg_per_px":1e-4})", "acquired_at");
  expect_field(R"({"id":"o1","acquired_at":"2015-13-01","origin_lon":1,"origin_lat":2,"deg_per_px":1e-4})",
               "acquired_at");
  expect_field(R"({"id":"o1","acquired_at":"2015-01-01","origin_lon":1,"origin_lat":2})", "deg_per_px");
  expect_field(R"({"id":"o1","acquired_at":"2015-01-01","origin_lon":1,"origin_lat":2,"deg_per_px":-1})",
               "deg_per_px");
  expect_field(R"({"id":"o1","acquired_at":"2015-01-01","origin_lon":1,"origin_lat":2,"deg_per_px":1e-4,"width":9})",
               "width");
  expect_field(R"({"acquired_at":"2015-01-01","origin_lon":1,"origin_lat":2,"deg_per_px":1e-4})", "id");
}

TEST_CASE("value grids keep no-data out") {
  testing::TempDir dir("grid");
  ValueGrid g{GeoTransform{0.5, 10.0, 1.0}, 3, 2, {100, 200, 300, 400, std::nanf(""), 600}, std::nullopt, 0.0};
  write_value_grid(dir / "m.pgm", dir / "m.json", g, "m");
  const ValueGrid back = load_value_grid(dir / "m.pgm", dir / "m.json");
  CHECK(back.valid(0, 0));
  CHECK(back.at(1, 2) == 600.0f);
  CHECK_FALSE(back.valid(1, 1));
  CHECK_FALSE(back.valid(5, 5));
  CHECK(back.nearest_pixel({9.6, 1.4}) == std::pair{0, 1});
  CHECK_FALSE(back.nearest_pixel({20.0, 1.0}).has_value());
  ValueGrid global{GeoTransform{0.5, 89.5, 1.0}, 360, 180, std::vector<float>(360 * 180, 1.0f), std::nullopt, 0.0};
  for (int c = 0; c < 360; ++c) global.values[c] = static_cast<float>(c);
  CHECK(global.nearest_pixel({89.5, 185.2}) == std::pair{0, 185});
  CHECK(global.nearest_pixel({89.5, 359.9}) == std::pair{0, 359});
  CHECK(global.nearest_pixel({89.5, -0.3}) == std::pair{0, 359});
  CHECK(global.nearest_pixel({89.5, 0.1}) == std::pair{0, 0});
  CHECK(global.nearest_pixel({89.5, 540.7}) == std::pair{0, 180});
  ValueGrid neg = g;
  neg.values[0] = -5.0f;
  CHECK_FALSE(neg.valid(0, 0));
}
