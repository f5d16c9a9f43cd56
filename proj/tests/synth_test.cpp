#include "aqe/synth.hpp"

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "aqe/features.hpp"
#include "test_util.hpp"

using namespace aqe;

namespace {

WorldSpec small_spec(std::uint64_t seed = 3) {
  WorldSpec s;
  s.box = {35.0, 35.3, -120.0, -119.7};
  s.stations = 24;
  s.sensors = 60;
  s.cities = 3;
  s.major_roads_per_city = 6;
  s.minor_roads_per_city = 6;
  s.rural_major_roads = 4;
  s.rural_minor_roads = 4;
  s.hours = 30;
  s.seed = seed;
  return s;
}

TruthParams quiet_params() {
  TruthParams p;
  p.origin = {35.0, -120.0};
  p.bg25 = 8;
  p.bg10 = 20;
  p.diurnal = 4;
  p.diurnal_peak_hour = 19;
  return p;
}

}  // namespace

TEST(Truth, BackgroundAtDiurnalMinimum) {
  const TruthField f(quiet_params());
  // Minimum of D is 12 hours away from the peak, at 07:00.
  const auto v = f.at({35.0, -120.0}, 7 * 3600);
  EXPECT_NEAR(v[0], 8.0, 1e-12);
  EXPECT_NEAR(v[1], 20.0, 1e-12);
}

TEST(Truth, DiurnalPeak) {
  const TruthField f(quiet_params());
  const auto v = f.at({35.0, -120.0}, 19 * 3600);
  EXPECT_NEAR(v[0], 12.0, 1e-12);
  EXPECT_NEAR(v[1], 12.0 + 12.0 + 6.0, 1e-12);
}

TEST(Truth, GradientIsClippedAtZero) {
  auto p = quiet_params();
  p.grad_north = 0.5;
  p.grad_east = -0.5;
  const TruthField f(p);
  // 1 degree north: 111.32 km * 0.5.
  EXPECT_NEAR(f.at({36.0, -120.0}, 7 * 3600)[0], 8.0 + 55.66, 1e-9);
  // Only east of the origin: negative, clipped.
  EXPECT_NEAR(f.at({35.0, -119.0}, 7 * 3600)[0], 8.0, 1e-12);
}

TEST(Truth, PlumeCenterAndCutoff) {
  auto p = quiet_params();
  p.plumes.push_back({{35.1, -119.9}, 0.5, 4, 2.0});
  p.jam_seed = 99;
  const TruthField f(p);
  const HourIndex h = 7;
  const double jam = jam_factor(p, 0, h);
  const double amp = 1.0 * jam * 0.5 * 4;
  const auto v = f.at({35.1, -119.9}, 7 * 3600);
  EXPECT_NEAR(v[0], 8.0 + amp, 1e-12);
  EXPECT_NEAR(v[1], 8.0 + amp + 12.0 + 0.5 * amp, 1e-12);
  // One width away: exp(-1/2).
  const Location one_w{35.1 + 0.15 / kKmPerDegree, -119.9};
  EXPECT_NEAR(f.plume(one_w, h), amp * std::exp(-0.5), 1e-9);
  // Beyond six widths nothing remains.
  const Location far{35.1 + 0.95 / kKmPerDegree, -119.9};
  EXPECT_EQ(f.plume(far, h), 0.0);
}

TEST(Truth, JamFactorRangeAndRounding) {
  auto p = quiet_params();
  p.plumes.push_back({{35.1, -119.9}, 0.5, 3, 4.0});
  p.plumes.push_back({{35.2, -119.8}, 0.5, 5, 1.0});
  p.jam_seed = 5;
  for (std::size_t s = 0; s < 2; ++s) {
    for (HourIndex h = 0; h < 24 * 14; ++h) {
      const double j = jam_factor(p, s, h);
      EXPECT_GE(j, 0.0);
      EXPECT_LE(j, 10.0);
      EXPECT_NEAR(j * 1000.0, std::round(j * 1000.0), 1e-6);
    }
  }
}

TEST(Truth, Pm10NeverBelowPm25) {
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(small_spec(), dir.string());
  const TruthField f(gw.truth);
  Rng rng(11);
  for (int i = 0; i < 5000; ++i) {
    const Location l{uniform(rng, 35.0, 35.3), uniform(rng, -120.0, -119.7)};
    const auto t = static_cast<UnixSeconds>(1704067200 + uniform_index(rng, 30 * 3600));
    const auto v = f.at(l, t);
    ASSERT_GT(v[0], 0.0);
    ASSERT_GE(v[1], v[0]);
  }
}

TEST(Generate, SameSeedSameBytes) {
  const auto root = testutil::scratch_dir();
  generate(small_spec(), (root / "a").string());
  generate(small_spec(), (root / "b").string());
  for (const char* f : {"stations.csv", "sensors.csv", "roads.csv", "traffic.csv", "truth_params.txt"}) {
    EXPECT_EQ(testutil::read_file(root / "a" / f), testutil::read_file(root / "b" / f)) << f;
  }
  generate(small_spec(4), (root / "c").string());
  EXPECT_NE(testutil::read_file(root / "a" / "stations.csv"), testutil::read_file(root / "c" / "stations.csv"));
}

TEST(Generate, ParsersAcceptEveryRow) {
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(small_spec(), dir.string());
  const auto st = parse_stations(gw.paths.stations);
  const auto se = parse_sensors(gw.paths.sensors);
  const auto ro = parse_roads(gw.paths.roads);
  const auto tr = parse_traffic(gw.paths.traffic);
  EXPECT_EQ(st.report.dropped, 0u);
  EXPECT_EQ(se.report.dropped, 0u);
  EXPECT_EQ(ro.report.dropped, 0u);
  EXPECT_EQ(tr.report.dropped, 0u);
  EXPECT_EQ(st.records.size(), gw.station_rows);
  EXPECT_EQ(se.records.size(), gw.sensor_rows);
  EXPECT_EQ(ro.records.size(), gw.road_rows);
  EXPECT_EQ(tr.records.size(), gw.traffic_rows);
  EXPECT_GT(gw.station_rows, 0u);
  EXPECT_GT(gw.sensor_rows, 0u);
}

TEST(Generate, StationValuesAreTruth) {
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(small_spec(), dir.string());
  const TruthField f(gw.truth);
  const auto st = parse_stations(gw.paths.stations);
  std::size_t with_pm10 = 0;
  for (const auto& r : st.records) {
    const auto v = truth_at(f, r.location, r.hour);
    ASSERT_EQ(r.pm25, v[0]) << r.station_id;
    if (!is_na(r.pm10)) {
      ASSERT_EQ(r.pm10, v[1]) << r.station_id;
      ++with_pm10;
    }
  }
  EXPECT_GT(with_pm10, 0u);
  EXPECT_LT(with_pm10, st.records.size());
}

TEST(Generate, NoiselessSensorsReadTruth) {
  auto spec = small_spec();
  spec.sensor_noise = 0;
  spec.humidity_bias = 0;
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(spec, dir.string());
  const TruthField f(gw.truth);
  const auto se = parse_sensors(gw.paths.sensors);
  std::size_t checked = 0;
  for (const auto& r : se.records) {
    if (is_na(r.pm25)) continue;
    const auto v = f.at(r.location, r.timestamp);
    ASSERT_NEAR(r.pm25, v[0], 1e-5 * v[0]);
    ASSERT_NEAR(r.pm10, v[1], 1e-5 * v[1]);
    ++checked;
  }
  EXPECT_GT(checked, se.records.size() * 9 / 10);
}

TEST(Generate, HumidityBiasRaisesReadings) {
  auto spec = small_spec();
  spec.sensor_noise = 0;
  spec.humidity_bias = 0.02;
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(spec, dir.string());
  const TruthField f(gw.truth);
  for (const auto& r : parse_sensors(gw.paths.sensors).records) {
    if (is_na(r.pm25) || is_na(r.humidity)) continue;
    const double factor = 1.0 + 0.02 * std::max(0.0, r.humidity - 60.0);
    // Humidity is written with 6 significant digits.
    ASSERT_NEAR(r.pm25 / f.at(r.location, r.timestamp)[0], factor, 1e-4);
  }
}

TEST(Generate, StationDensitiesFillDeciles) {
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(small_spec(), dir.string());
  const auto src = load_sources(gw.paths);
  const FeatureContext ctx(src.sources);
  std::set<double> distinct;
  for (const auto& d : station_densities(ctx)) distinct.insert(d.density);
  EXPECT_GE(distinct.size(), 10u);
}

TEST(Generate, TruthParamsRoundTrip) {
  const auto dir = testutil::scratch_dir();
  const auto gw = generate(small_spec(), dir.string());
  const auto p = load_truth_params((dir / "truth_params.txt").string());
  EXPECT_EQ(p.origin.lat, gw.truth.origin.lat);
  EXPECT_EQ(p.grad_north, gw.truth.grad_north);
  EXPECT_EQ(p.jam_seed, gw.truth.jam_seed);
  ASSERT_EQ(p.fine.size(), gw.truth.fine.size());
  ASSERT_EQ(p.coarse.size(), gw.truth.coarse.size());
  ASSERT_EQ(p.plumes.size(), gw.truth.plumes.size());
  const TruthField a(gw.truth), b(p);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Location l{uniform(rng, 35.0, 35.3), uniform(rng, -120.0, -119.7)};
    const auto t = static_cast<UnixSeconds>(1704067200 + uniform_index(rng, 30 * 3600));
    ASSERT_EQ(a.at(l, t), b.at(l, t));
  }
}

TEST(Generate, BadSpecIsConfigError) {
  auto s = small_spec();
  s.box = {36, 35, -120, -119};
  EXPECT_THROW(generate(s, testutil::scratch_dir().string()), ConfigError);
  s = small_spec();
  s.sensor_interval_min = 7;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.hours = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}
