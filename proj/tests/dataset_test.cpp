#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "aqe/dataset.hpp"
#include "test_util.hpp"

using namespace aqe;

namespace {

const HourIndex kH0 = 450000;

Sources five_stations() {
  Sources s;
  // station, hours with pm25 / pm10 present
  const double na = kNA;
  const struct {
    const char* id;
    double lat;
    std::vector<std::pair<double, double>> vals;
  } rows[] = {
      {"A", 35.00, {{1, 2}, {3, 4}, {5, 6}}},
      {"B", 35.01, {{1, na}, {na, na}, {2, na}}},
      {"C", 35.02, {{na, 7}}},
      {"D", 35.03, {{na, na}, {na, na}}},
      {"E", 35.04, {{8, 9}, {8, na}, {na, 9}, {1, 1}}},
  };
  for (const auto& r : rows) {
    for (std::size_t h = 0; h < r.vals.size(); ++h) {
      s.stations.push_back({r.id, {r.lat, -120}, kH0 + static_cast<HourIndex>(h), r.vals[h].first, r.vals[h].second});
    }
  }
  return s;
}

std::vector<StationDensity> random_densities(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StationDensity> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"st" + std::to_string(1000 + i), std::exp(uniform(rng, -3, 4))});
  }
  return out;
}

// Reference KS: supremum over all sample points of |F_a - F_b|.
double ref_ks(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (const auto* src : {&a, &b}) {
    for (double x : *src) {
      const double fa = static_cast<double>(std::count_if(a.begin(), a.end(), [x](double v) { return v <= x; })) / a.size();
      const double fb = static_cast<double>(std::count_if(b.begin(), b.end(), [x](double v) { return v <= x; })) / b.size();
      worst = std::max(worst, std::abs(fa - fb));
    }
  }
  return worst;
}

DataPoint point_with(const std::vector<float>& dense, Variant v = Variant::station) {
  DataPoint p;
  p.features.variant = v;
  p.features.dense = dense;
  p.features.sensor.assign(FeatureLayout(v).n1, 0.0f);
  p.target = Target::of(1, 1);
  return p;
}

}  // namespace

TEST(BuildDataset, TwoStationsThreeHours) {
  Sources s;
  for (const char* id : {"X", "Y"}) {
    for (int h = 0; h < 3; ++h) s.stations.push_back({id, {35, id[0] == 'X' ? -120.0 : -120.1}, kH0 + h, 5, 6});
  }
  const auto pts = build_dataset(FeatureContext(s), Variant::station);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[0].station_id, "X");
  EXPECT_EQ(pts[3].station_id, "Y");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(pts[i].hour, kH0 + static_cast<HourIndex>(i));
}

TEST(BuildDataset, HandCountAndMasks) {
  const FeatureContext ctx(five_stations());
  const auto pts = build_dataset(ctx, Variant::station_and_sensor);
  // A:3, B:2, C:1, D:0, E:4
  EXPECT_EQ(pts.size(), 10u);
  std::size_t b_count = 0;
  for (const auto& p : pts) {
    EXPECT_TRUE(p.target.any());
    if (p.station_id == "B") {
      ++b_count;
      EXPECT_TRUE(p.target.mask[0]);
      EXPECT_FALSE(p.target.mask[1]);
    }
  }
  EXPECT_EQ(b_count, 2u);
  const auto ranged = build_dataset(ctx, Variant::station, HourRange{kH0 + 1, kH0 + 2});
  // A:2, B:1, E:2
  EXPECT_EQ(ranged.size(), 5u);
  EXPECT_TRUE(build_dataset(FeatureContext(Sources{}), Variant::station).empty());
}

TEST(BuildDataset, SelfExclusionAndThreadInvariance) {
  const FeatureContext ctx(five_stations());
  const auto a = build_dataset(ctx, Variant::station, std::nullopt, 1);
  const auto b = build_dataset(ctx, Variant::station, std::nullopt, 4);
  ASSERT_EQ(a.size(), b.size());
  const FeatureLayout layout(Variant::station);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::memcmp(a[i].features.dense.data(), b[i].features.dense.data(), a[i].features.dense.size() * 4), 0);
    // Nearest station in each pollutant is never the target's own location.
    for (std::size_t p = 0; p < 2; ++p) {
      const float inv = a[i].features.dense[layout.station_inv_distance + p * kStationSlots];
      EXPECT_LT(inv, 100.0f);
    }
  }
}

TEST(Split, HundredStationsEightTwoPerDecile) {
  const auto d = random_densities(100, 5);
  const auto plan = stratified_split(d, 0.8, 17);
  ASSERT_EQ(plan.decile_counts.size(), 10u);
  for (const auto& c : plan.decile_counts) {
    EXPECT_EQ(c[0], 8u);
    EXPECT_EQ(c[1], 2u);
  }
  EXPECT_EQ(plan.train_station_ids.size(), 80u);
  EXPECT_EQ(plan.eval_station_ids.size(), 20u);
  // Each decile of the sorted densities has exactly 2 eval stations.
  auto sorted = d;
  std::stable_sort(sorted.begin(), sorted.end(), [](auto& x, auto& y) { return x.density < y.density; });
  for (int k = 0; k < 10; ++k) {
    int ev = 0;
    for (int i = 0; i < 10; ++i) ev += plan.is_eval(sorted[k * 10 + i].station_id);
    EXPECT_EQ(ev, 2);
  }
}

TEST(Split, DisjointCompleteDeterministic) {
  for (std::size_t n : {10u, 37u, 250u}) {
    const auto d = random_densities(n, n);
    const auto a = stratified_split(d, 0.8, 3);
    const auto b = stratified_split(d, 0.8, 3);
    EXPECT_EQ(a.train_station_ids, b.train_station_ids);
    EXPECT_EQ(a.eval_station_ids, b.eval_station_ids);
    std::set<std::string> all(a.train_station_ids.begin(), a.train_station_ids.end());
    for (const auto& id : a.eval_station_ids) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), n);
    for (const auto& c : a.decile_counts) {
      const double size = static_cast<double>(c[0] + c[1]);
      EXPECT_LE(std::abs(static_cast<double>(c[0]) - 0.8 * size), 1.0);
    }
    // A different seed may move stations only within deciles.
    const auto other = stratified_split(d, 0.8, 4);
    EXPECT_EQ(other.decile_counts, a.decile_counts);
  }
}

TEST(Split, FewStationsFallBack) {
  const auto plan = stratified_split(random_densities(7, 1), 0.8, 1);
  EXPECT_FALSE(plan.stratified);
  EXPECT_EQ(plan.train_station_ids.size() + plan.eval_station_ids.size(), 7u);
  EXPECT_FALSE(plan.train_station_ids.empty());
}

TEST(Split, KsBeatsRandomSplits) {
  const auto d = random_densities(100, 21);
  const auto plan = stratified_split(d, 0.8, 1);
  std::vector<double> tr, ev, all;
  for (const auto& s : d) {
    (plan.is_train(s.station_id) ? tr : ev).push_back(s.density);
    all.push_back(s.density);
  }
  const double ks = ks_distance(tr, ev);
  EXPECT_NEAR(ks, ref_ks(tr, ev), 1e-15);
  Rng rng(77);
  int beaten = 0;
  for (int t = 0; t < 1000; ++t) {
    auto perm = all;
    shuffle(perm, rng);
    const std::vector<double> a(perm.begin(), perm.begin() + 80), b(perm.begin() + 80, perm.end());
    beaten += ks < ref_ks(a, b);
  }
  EXPECT_GE(beaten, 950);
}

TEST(Split, ApplySplitByStation) {
  const FeatureContext ctx(five_stations());
  const auto pts = build_dataset(ctx, Variant::station);
  SplitPlan plan;
  plan.train_station_ids = {"A", "B", "E"};
  plan.eval_station_ids = {"C"};
  const auto sp = apply_split(pts, plan);
  EXPECT_EQ(sp.train.size(), 9u);
  EXPECT_EQ(sp.eval.size(), 1u);
  plan.eval_station_ids.clear();
  EXPECT_THROW(apply_split(pts, plan), DataError);
}

TEST(Normalization, ConstantFeature) {
  std::vector<DataPoint> pts;
  std::vector<float> dense(23, 0.0f);
  for (auto& v : dense) v = 3.0f;
  for (int i = 0; i < 5; ++i) pts.push_back(point_with(dense));
  const auto ns = fit_normalization(pts);
  for (double s : ns.dense_std) EXPECT_EQ(s, 1.0);
  const auto x = normalize(ns, pts[0].features);
  for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(x.dense[i], 0.0);
}

TEST(Normalization, Log1pMeanAndStd) {
  std::vector<float> d0(23, 0.0f), d1(23, 0.0f);
  d1[0] = static_cast<float>(std::exp(1.0) - 1.0);
  const auto ns = fit_normalization({point_with(d0), point_with(d1)});
  EXPECT_NEAR(ns.dense_mean[0], 0.5, 1e-7);
  EXPECT_NEAR(ns.dense_std[0], 0.5, 1e-7);
  // Context features are not log-transformed.
  std::vector<float> c0(23, 0.0f), c1(23, 0.0f);
  c1[22] = 4.0f;
  const auto nc = fit_normalization({point_with(c0), point_with(c1)});
  EXPECT_EQ(nc.dense_mean[22], 2.0);
  EXPECT_EQ(nc.dense_std[22], 2.0);
}

TEST(Normalization, AllNASlotGivesZeroAndFlagZero) {
  std::vector<float> d(23, 1.0f);
  d[4] = NAN;
  const auto ns = fit_normalization({point_with(d), point_with(d)});
  const auto x = normalize(ns, point_with(d).features);
  ASSERT_EQ(x.dense.size(), 33u);
  EXPECT_EQ(x.dense[4], 0.0);
  EXPECT_EQ(x.dense[23 + 4], 0.0);
  EXPECT_EQ(x.dense[23 + 3], 1.0);
  EXPECT_THROW(fit_normalization({}), DataError);
}

TEST(Normalization, InversionWithinTolerance) {
  Rng rng(12);
  for (auto v : kVariants) {
    const FeatureLayout layout(v);
    std::vector<DataPoint> pts;
    for (int i = 0; i < 40; ++i) {
      std::vector<float> dense(layout.n2);
      for (auto& x : dense) x = uniform01(rng) < 0.1 ? NAN : static_cast<float>(uniform(rng, 0, 50));
      for (std::size_t k = 0; k < layout.n2; ++k) {
        if (!layout.is_concentration(k) && std::isnan(dense[k])) dense[k] = 1.0f;
      }
      auto p = point_with(dense, v);
      for (auto& x : p.features.sensor) x = static_cast<float>(uniform(rng, 0, 80));
      pts.push_back(p);
    }
    const auto ns = fit_normalization(pts);
    for (const auto& p : pts) {
      const auto raw = denormalize(ns, normalize(ns, p.features));
      for (std::size_t k = 0; k < layout.n2; ++k) {
        const double orig = p.features.dense[k];
        if (std::isnan(orig)) {
          EXPECT_TRUE(is_na(raw.dense[k]));
        } else {
          EXPECT_NEAR(raw.dense[k], orig, 1e-10 * std::max(1.0, std::abs(orig)));
        }
      }
      for (std::size_t k = 0; k < layout.n1; ++k) {
        EXPECT_NEAR(raw.sensor[k], p.features.sensor[k], 1e-10 * std::max(1.0, double(p.features.sensor[k])));
      }
    }
  }
}

TEST(Normalization, TrainingRange) {
  std::vector<float> d0(23, 1.0f), d1(23, 5.0f), d2(23, 3.0f);
  d2[4] = NAN;
  const std::vector<DataPoint> pts{point_with(d0), point_with(d1), point_with(d2)};
  const auto ns = fit_normalization(pts);
  const FeatureLayout layout(Variant::station);
  ASSERT_TRUE(ns.has_range());
  for (std::size_t i = 0; i < 23; ++i) {
    EXPECT_EQ(ns.dense_lo[i], layout.is_concentration(i) ? std::log1p(1.0) : 1.0);
    EXPECT_EQ(ns.dense_hi[i], layout.is_concentration(i) ? std::log1p(5.0) : 5.0);
  }
  // Training inputs sit inside their own range.
  for (const auto& p : pts) {
    const auto x = normalize(ns, p.features);
    auto y = x;
    clamp_to_training_range(ns, y);
    EXPECT_EQ(x.dense, y.dense);
  }
  std::vector<float> big(23, 50.0f);
  auto y = normalize(ns, point_with(big).features);
  clamp_to_training_range(ns, y);
  for (std::size_t i = 0; i < 23; ++i) {
    EXPECT_NEAR(y.dense[i], (ns.dense_hi[i] - ns.dense_mean[i]) / ns.dense_std[i], 1e-12);
  }
  for (std::size_t i = 23; i < y.dense.size(); ++i) EXPECT_EQ(y.dense[i], 1.0);  // presence flags untouched
}

TEST(Persistence, DatasetRoundTrip) {
  const auto dir = testutil::scratch_dir();
  const FeatureContext ctx(five_stations());
  const auto pts = build_dataset(ctx, Variant::station_and_sensor);
  const auto path = (dir / "d.agds").string();
  save_dataset(pts, Variant::station_and_sensor, path);
  const auto back = load_dataset(path);
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(back[i].station_id, pts[i].station_id);
    EXPECT_EQ(back[i].hour, pts[i].hour);
    EXPECT_EQ(back[i].location, pts[i].location);
    EXPECT_EQ(back[i].target.mask, pts[i].target.mask);
    for (int k = 0; k < 2; ++k) {
      if (pts[i].target.mask[k]) {
        EXPECT_EQ(back[i].target.value[k], pts[i].target.value[k]);
      }
    }
    EXPECT_EQ(std::memcmp(back[i].features.dense.data(), pts[i].features.dense.data(), pts[i].features.dense.size() * 4), 0);
    EXPECT_EQ(back[i].features.sensor, pts[i].features.sensor);
  }
  const auto bytes = testutil::read_file(path);
  EXPECT_EQ(bytes.substr(0, 4), "AGDS");
  testutil::write_file(dir / "bad.agds", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_dataset((dir / "bad.agds").string()), DataError);
}

TEST(Persistence, NormStatsAndSplitPlanRoundTrip) {
  const auto dir = testutil::scratch_dir();
  const FeatureContext ctx(five_stations());
  const auto ns = fit_normalization(build_dataset(ctx, Variant::station_and_sensor));
  save_norm_stats(ns, (dir / "n.txt").string());
  const auto nb = load_norm_stats((dir / "n.txt").string());
  EXPECT_EQ(nb.dense_mean, ns.dense_mean);
  EXPECT_EQ(nb.dense_std, ns.dense_std);
  EXPECT_EQ(nb.sensor_mean, ns.sensor_mean);
  EXPECT_EQ(nb.dense_lo, ns.dense_lo);
  EXPECT_EQ(nb.dense_hi, ns.dense_hi);
  EXPECT_EQ(nb.sensor_lo, ns.sensor_lo);
  EXPECT_EQ(nb.digest(), ns.digest());

  const auto plan = stratified_split(random_densities(30, 2), 0.8, 9);
  save_split_plan(plan, (dir / "s.txt").string());
  const auto pb = load_split_plan((dir / "s.txt").string());
  EXPECT_EQ(pb.train_station_ids, plan.train_station_ids);
  EXPECT_EQ(pb.eval_station_ids, plan.eval_station_ids);
  EXPECT_EQ(pb.decile_counts, plan.decile_counts);
  EXPECT_EQ(pb.seed, plan.seed);
}
