#include <gtest/gtest.h>

#include <cmath>

#include "aqe/features.hpp"

using namespace aqe;

namespace {

const Location kOrigin{35.0, -120.0};
const HourIndex kHour = 500000;

Location north_of(Location o, double km) { return {o.lat + km / 111.32, o.lon}; }
Location east_of(Location o, double km) {
  return {o.lat, o.lon + km / (111.32 * std::cos(o.lat * 3.14159265358979323846 / 180.0))};
}

StationRecord station(const std::string& id, Location l, HourIndex h, double pm25, double pm10) {
  return {id, l, h, pm25, pm10};
}

SensorRecord reading(const std::string& id, Location l, UnixSeconds t, double v) {
  return {id, l, t, v, 2 * v, 20 + v, 50};
}

}  // namespace

TEST(Layout, Dimensions) {
  EXPECT_EQ(FeatureLayout(Variant::station).n1, 0u);
  EXPECT_EQ(FeatureLayout(Variant::station).n2, 23u);
  EXPECT_EQ(FeatureLayout(Variant::sensor).n1, 320u);
  EXPECT_EQ(FeatureLayout(Variant::sensor).n2, 13u);
  EXPECT_EQ(FeatureLayout(Variant::station_and_sensor).n1, 320u);
  EXPECT_EQ(FeatureLayout(Variant::station_and_sensor).n2, 33u);
  for (auto v : kVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_ANY_THROW(parse_variant("both"));
}

TEST(StationBlock, Empty) {
  const FeatureContext ctx(Sources{});
  const auto b = ctx.station_block(kOrigin, kHour);
  for (int p = 0; p < 2; ++p) {
    for (std::size_t i = 0; i < kStationSlots; ++i) {
      EXPECT_TRUE(is_na(b.value[p][i]));
      EXPECT_EQ(b.inv_distance[p][i], 0.0);
    }
  }
}

TEST(StationBlock, OneStationOneKilometer) {
  Sources s;
  s.stations.push_back(station("A", north_of(kOrigin, 1.0), kHour, 7, kNA));
  const FeatureContext ctx(s);
  const auto b = ctx.station_block(kOrigin, kHour);
  EXPECT_EQ(b.value[0][0], 7.0);
  EXPECT_NEAR(b.inv_distance[0][0], 1.0, 1e-12);
  for (std::size_t i = 0; i < kStationSlots; ++i) {
    EXPECT_TRUE(is_na(b.value[1][i]));
    EXPECT_EQ(b.inv_distance[1][i], 0.0);
  }
  // Another hour sees nothing.
  EXPECT_TRUE(is_na(ctx.station_block(kOrigin, kHour + 1).value[0][0]));
}

TEST(StationBlock, PerPollutantSelectionOrderingAndCap) {
  Sources s;
  s.stations.push_back(station("a", kOrigin, kHour, 1, kNA));                 // at the query
  s.stations.push_back(station("b", north_of(kOrigin, 2), kHour, 2, 20));
  s.stations.push_back(station("c", north_of(kOrigin, 3), kHour, kNA, 30));
  for (int i = 0; i < 6; ++i) s.stations.push_back(station("z" + std::to_string(i), east_of(kOrigin, 4 + i), kHour, 9, 90));
  const FeatureContext ctx(s);
  const auto b = ctx.station_block(kOrigin, kHour);
  EXPECT_EQ(b.value[0][0], 1.0);
  EXPECT_EQ(b.inv_distance[0][0], kInvDistanceCap);
  EXPECT_EQ(b.value[0][1], 2.0);
  EXPECT_EQ(b.value[1][0], 20.0);
  EXPECT_EQ(b.value[1][1], 30.0);
  for (int p = 0; p < 2; ++p) {
    for (std::size_t i = 0; i + 1 < kStationSlots; ++i) EXPECT_GE(b.inv_distance[p][i], b.inv_distance[p][i + 1]);
  }
}

TEST(StationBlock, SelfExclusion) {
  Sources s;
  s.stations.push_back(station("self", kOrigin, kHour, 123, 456));
  s.stations.push_back(station("other", north_of(kOrigin, 5), kHour, 1, 2));
  const FeatureContext ctx(s);
  const auto self = ctx.stations().find("self");
  ASSERT_TRUE(self);
  const auto fv = ctx.build(Variant::station, kOrigin, kHour, *self);
  for (float v : fv.dense) {
    EXPECT_NE(v, 123.0f);
    EXPECT_NE(v, 456.0f);
  }
}

TEST(SensorBlock, Empty) {
  const FeatureContext ctx(Sources{});
  const auto b = ctx.sensor_block(kOrigin, kHour);
  for (double v : b.window) EXPECT_EQ(v, 0.0);
  for (double v : b.inv_distance) EXPECT_EQ(v, 0.0);
}

TEST(SensorBlock, SixteenRecordsOldestFirst) {
  Sources s;
  const auto loc = north_of(kOrigin, 0.5);
  const UnixSeconds end = start_of(kHour);
  // 20 records, 10 minutes apart, the last exactly at the hour; one in the future.
  for (int i = 0; i < 20; ++i) s.sensors.push_back(reading("A", loc, end - 600 * (19 - i), i));
  s.sensors.push_back(reading("A", loc, end + 60, 999));
  const FeatureContext ctx(s);
  const auto b = ctx.sensor_block(kOrigin, kHour);
  EXPECT_NEAR(b.inv_distance[0], 2.0, 1e-9);
  for (std::size_t t = 0; t < kWindowLength; ++t) {
    EXPECT_EQ(b.at(0, t, 0), 4.0 + t);
    EXPECT_EQ(b.at(0, t, 1), 2 * (4.0 + t));
    EXPECT_EQ(b.at(0, t, 2), 20 + 4.0 + t);
    EXPECT_EQ(b.at(0, t, 3), 50.0);
  }
}

TEST(SensorBlock, LeftEdgeFill) {
  Sources s;
  const UnixSeconds end = start_of(kHour);
  for (int i = 0; i < 4; ++i) s.sensors.push_back(reading("A", kOrigin, end - 600 * (3 - i), 10 + i));
  const FeatureContext ctx(s);
  const auto b = ctx.sensor_block(kOrigin, kHour);
  for (std::size_t t = 0; t < 13; ++t) EXPECT_EQ(b.at(0, t, 0), 10.0);
  EXPECT_EQ(b.at(0, 13, 0), 11.0);
  EXPECT_EQ(b.at(0, 14, 0), 12.0);
  EXPECT_EQ(b.at(0, 15, 0), 13.0);
}

TEST(SensorBlock, LookbackAndForwardFill) {
  Sources s;
  const UnixSeconds end = start_of(kHour);
  const auto far = north_of(kOrigin, 1);
  s.sensors.push_back(reading("old", kOrigin, end - 5 * 3600, 5));  // outside the 4 h lookback
  auto a = reading("na", far, end - 1200, 3);
  a.temperature = kNA;
  auto b = reading("na", far, end - 600, 4);
  b.pm25 = kNA;
  b.humidity = kNA;
  s.sensors.push_back(a);
  s.sensors.push_back(b);
  const FeatureContext ctx(s);
  const auto blk = ctx.sensor_block(kOrigin, kHour);
  // "old" is nearest but padded; its slot stays zero.
  EXPECT_EQ(blk.inv_distance[0], 0.0);
  for (std::size_t t = 0; t < kWindowLength; ++t) EXPECT_EQ(blk.at(0, t, 0), 0.0);
  EXPECT_NEAR(blk.inv_distance[1], 1.0, 1e-9);
  EXPECT_EQ(blk.at(1, 15, 0), 3.0);   // forward-filled pm25
  EXPECT_EQ(blk.at(1, 15, 1), 8.0);
  EXPECT_EQ(blk.at(1, 0, 2), 0.0);    // NA with nothing earlier -> 0
  EXPECT_EQ(blk.at(1, 15, 2), 24.0);
  EXPECT_EQ(blk.at(1, 15, 3), 50.0);
}

TEST(SensorBlock, MovingSensorAwayNeverIncreasesInverseDistance) {
  double prev = 1e300;
  for (int k = 0; k < 30; ++k) {
    Sources s;
    s.sensors.push_back(reading("A", north_of(kOrigin, 0.001 + 0.2 * k), start_of(kHour), 1));
    const auto b = FeatureContext(s).sensor_block(kOrigin, kHour);
    EXPECT_LE(b.inv_distance[0], prev);
    prev = b.inv_distance[0];
  }
}

TEST(ContextBlock, Examples) {
  EXPECT_EQ(FeatureContext(Sources{}).context_block(kOrigin, kHour).roads, 0.0);
  Sources s;
  s.roads.push_back({"M", kOrigin, 0.5, 5, RoadCategory::major_roads});
  s.traffic.push_back({"M", kHour, 2.0});
  const auto c = FeatureContext(s).context_block(kOrigin, kHour);
  EXPECT_NEAR(c.roads, 0.5, 1e-12);
  EXPECT_NEAR(c.major_roads, 0.5, 1e-12);
  EXPECT_NEAR(c.traffic, 5.0, 1e-12);
  // Missing jam factor counts as zero.
  EXPECT_EQ(FeatureContext(s).context_block(kOrigin, kHour + 1).traffic, 0.0);
}

TEST(ContextBlock, TwoSegmentsAtOneHundredMeters) {
  Sources s;
  s.roads.push_back({"a", north_of(kOrigin, 0.1), 0.3, 2, RoadCategory::roads});
  s.roads.push_back({"b", east_of(kOrigin, 0.1), 0.7, 4, RoadCategory::major_roads});
  s.traffic.push_back({"a", kHour, 1.5});
  s.traffic.push_back({"b", kHour, 3.0});
  const auto c = FeatureContext(s).context_block(kOrigin, kHour);
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(c.roads, e1 * (0.3 + 0.7), 1e-9);
  EXPECT_NEAR(c.major_roads, e1 * 0.7, 1e-9);
  EXPECT_NEAR(c.traffic, e1 * (1.5 * 0.3 * 2 + 3.0 * 0.7 * 4), 1e-9);
}

TEST(Assemble, StationVariantAllNA) {
  const auto fv = FeatureContext(Sources{}).build(Variant::station, kOrigin, kHour);
  ASSERT_EQ(fv.dense.size(), 23u);
  EXPECT_TRUE(fv.sensor.empty());
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(std::isnan(fv.dense[i]));
  for (int i = 10; i < 23; ++i) EXPECT_EQ(fv.dense[i], 0.0f);
}

TEST(Assemble, MismatchedBlocksRejected) {
  EXPECT_THROW(assemble(Variant::sensor, StationFeatures{}, std::nullopt, {}), std::invalid_argument);
  EXPECT_THROW(assemble(Variant::station_and_sensor, StationFeatures{}, std::nullopt, {}), std::invalid_argument);
}

TEST(Assemble, ProjectionMatchesDirectBuildAndIsPure) {
  Sources s;
  Rng rng(2);
  for (int i = 0; i < 12; ++i) {
    const Location l{35 + uniform(rng, -0.05, 0.05), -120 + uniform(rng, -0.05, 0.05)};
    s.stations.push_back(station("s" + std::to_string(i), l, kHour, uniform(rng, 1, 30), i % 3 ? uniform(rng, 1, 60) : kNA));
    for (int k = 0; k < 5; ++k) {
      s.sensors.push_back(reading("n" + std::to_string(i), {l.lat + 0.01, l.lon}, start_of(kHour) - 900 * k, uniform(rng, 1, 40)));
    }
    s.roads.push_back({"r" + std::to_string(i), l, 0.2, 1 + i % 5, i % 2 ? RoadCategory::roads : RoadCategory::major_roads});
  }
  const FeatureContext ctx(s);
  const Location q{35.01, -120.01};
  const auto full = ctx.build(Variant::station_and_sensor, q, kHour, std::size_t{3});
  for (auto v : kVariants) {
    const auto direct = ctx.build(v, q, kHour, std::size_t{3});
    const auto proj = project(full, v);
    ASSERT_EQ(direct.dense.size(), proj.dense.size());
    EXPECT_EQ(direct.sensor, proj.sensor);
    for (std::size_t i = 0; i < direct.dense.size(); ++i) {
      EXPECT_TRUE(direct.dense[i] == proj.dense[i] || (std::isnan(direct.dense[i]) && std::isnan(proj.dense[i])));
    }
  }
  const auto again = ctx.build(Variant::station_and_sensor, q, kHour, std::size_t{3});
  EXPECT_EQ(std::memcmp(again.dense.data(), full.dense.data(), full.dense.size() * sizeof(float)), 0);
  EXPECT_EQ(again.sensor, full.sensor);
}
