#include <gtest/gtest.h>

#include <cmath>

#include "aqe/evaluation.hpp"

using namespace aqe;

namespace {

const HourIndex kH = 460000;
Location north_of(Location o, double km) { return {o.lat + km / 111.32, o.lon}; }
const Location kQ{35, -120};

// Nearest-valid-station scan with no index.
Concentrations brute_benchmark(const std::vector<StationRecord>& recs, const Location& q, HourIndex h,
                               const std::string& exclude) {
  Concentrations out{kNA, kNA};
  for (int p = 0; p < 2; ++p) {
    double best = 1e300;
    std::string best_id;
    for (const auto& r : recs) {
      if (r.hour != h || r.station_id == exclude) continue;
      const double v = p == 0 ? r.pm25 : r.pm10;
      if (is_na(v)) continue;
      const double d = distance_km(q, r.location);
      if (d < best || (d == best && r.station_id < best_id)) {
        best = d;
        best_id = r.station_id;
        out[p] = v;
      }
    }
  }
  return out;
}

}  // namespace

TEST(Benchmark, Examples) {
  {
    Sources s;
    s.stations.push_back({"A", kQ, kH, 5, 6});
    const FeatureContext ctx(s);
    const auto y = benchmark_predict(ctx.stations(), kQ, kH, ctx.stations().find("A"));
    EXPECT_TRUE(is_na(y[0]) && is_na(y[1]));
  }
  {
    Sources s;
    s.stations.push_back({"A", north_of(kQ, 1), kH, 5, kNA});
    s.stations.push_back({"B", north_of(kQ, 2), kH, 9, 20});
    const FeatureContext ctx(s);
    const auto y = benchmark_predict(ctx.stations(), kQ, kH);
    EXPECT_EQ(y[0], 5.0);
    EXPECT_EQ(y[1], 20.0);
  }
}

TEST(Benchmark, MatchesBruteForceScan) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Sources s;
    const std::size_t n = 2 + uniform_index(rng, 25);
    for (std::size_t i = 0; i < n; ++i) {
      const Location l{35 + uniform(rng, 0, 0.5), -120 + uniform(rng, 0, 0.5)};
      for (HourIndex h = kH; h < kH + 3; ++h) {
        const double a = uniform01(rng) < 0.3 ? kNA : uniform(rng, 1, 50);
        const double b = uniform01(rng) < 0.5 ? kNA : uniform(rng, 1, 90);
        if (is_na(a) && is_na(b)) continue;
        s.stations.push_back({"st" + std::to_string(i), l, h, a, b});
      }
    }
    sort_by_station_hour(s.stations);
    const FeatureContext ctx(s);
    std::vector<DataPoint> pts;
    for (const auto& r : s.stations) {
      DataPoint p;
      p.station_id = r.station_id;
      p.location = r.location;
      p.hour = r.hour;
      p.target = Target::of(r.pm25, r.pm10);
      pts.push_back(p);
    }
    const auto got = benchmark_predictions(ctx, pts);
    std::vector<Concentrations> expect;
    for (const auto& p : pts) expect.push_back(brute_benchmark(s.stations, p.location, p.hour, p.station_id));
    const auto t = targets_of(pts);
    const auto sup_got = shared_support(t, &got);
    const auto sup_exp = shared_support(t, &expect);
    ASSERT_EQ(sup_got, sup_exp);
    for (std::size_t p = 0; p < 2; ++p) {
      const auto a = error_stats(got, t, sup_got, p);
      const auto b = error_stats(expect, t, sup_exp, p);
      EXPECT_EQ(a.msle, b.msle);
      EXPECT_EQ(a.mae, b.mae);
      EXPECT_EQ(a.n, b.n);
    }
  }
}

TEST(Metrics, Examples) {
  const std::vector<Target> t{Target::of(std::exp(1.0) - 1.0, kNA)};
  const auto m = compute_metrics({{0.0, 3.0}}, t);
  ASSERT_TRUE(m[0]);
  EXPECT_NEAR(m[0]->msle, 1.0, 1e-15);
  EXPECT_NEAR(m[0]->mae, std::exp(1.0) - 1.0, 1e-15);
  EXPECT_EQ(m[0]->n, 1u);
  EXPECT_FALSE(m[1]);
  const auto perfect = compute_metrics({{4.0, 9.0}}, {Target::of(4, 9)});
  EXPECT_EQ(perfect[0]->msle, 0.0);
  EXPECT_EQ(perfect[1]->mae, 0.0);
}

TEST(Metrics, PermutationInvariant) {
  Rng rng(2);
  std::vector<Concentrations> p;
  std::vector<Target> t;
  for (int i = 0; i < 64; ++i) {
    p.push_back({uniform(rng, 0, 40), uniform(rng, 0, 40)});
    t.push_back(Target::of(uniform(rng, 0, 40), i % 3 ? uniform(rng, 0, 40) : kNA));
  }
  const auto a = compute_metrics(p, t);
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(idx, rng);
  std::vector<Concentrations> pp;
  std::vector<Target> tt;
  for (auto i : idx) pp.push_back(p[i]), tt.push_back(t[i]);
  const auto b = compute_metrics(pp, tt);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(a[k]->msle, b[k]->msle, 1e-12);
    EXPECT_NEAR(a[k]->mae, b[k]->mae, 1e-12);
    EXPECT_EQ(a[k]->n, b[k]->n);
  }
}

TEST(Metrics, SharedSupportDropsBenchmarkNA) {
  const std::vector<Target> t{Target::of(1, 2), Target::of(3, kNA)};
  const std::vector<Concentrations> bench{{kNA, 2.0}, {3.0, 5.0}};
  const auto s = shared_support(t, &bench);
  EXPECT_EQ(s[0], (std::array<bool, 2>{false, true}));
  EXPECT_EQ(s[1], (std::array<bool, 2>{true, false}));
  const auto table = metrics_table({{"benchmark", bench}, {"m", {{1, 2}, {3, 3}}}}, t, s);
  for (const auto& r : table.rows) EXPECT_EQ(r.stats.n, 1u);
  EXPECT_EQ(metrics_csv(table).substr(0, 26), "pollutant,model,msle,mae,n");
}

TEST(Statistics, RanksAndSpearman) {
  EXPECT_EQ(average_ranks({10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 30, 200, 1000}), 1.0, 1e-15);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-15);
  EXPECT_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_EQ(median_of({4, 1, 2, 3}), 2.5);
}

namespace {

struct BatchFixture {
  std::vector<double> density;
  std::vector<Target> targets;
  std::vector<NamedPredictions> models;
  Support support;
};

BatchFixture batch_fixture(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BatchFixture f;
  NamedPredictions a{"a", {}}, b{"b", {}};
  for (std::size_t i = 0; i < n; ++i) {
    f.density.push_back(std::floor(uniform(rng, 0, 30)));
    f.targets.push_back(Target::of(uniform(rng, 1, 40), uniform01(rng) < 0.3 ? kNA : uniform(rng, 1, 80)));
    a.values.push_back({uniform(rng, 1, 40), uniform(rng, 1, 80)});
    b.values.push_back({uniform(rng, 1, 40), uniform(rng, 1, 80)});
  }
  f.models = {a, b};
  f.support = shared_support(f.targets, nullptr);
  return f;
}

}  // namespace

TEST(DensityBatches, TwentyPointsTenBatchesOfTwo) {
  BatchFixture f = batch_fixture(40, 1);
  for (std::size_t i = 0; i < 40; ++i) f.density[i] = static_cast<double>(i);
  const auto rep = density_batches(f.density, f.models, f.targets, f.support);
  EXPECT_EQ(rep.kept_points, 20u);
  ASSERT_EQ(rep.batches.size(), 10u);
  for (const auto& b : rep.batches) EXPECT_EQ(b.rows.size(), 2u);
  EXPECT_EQ(rep.batches[0].mean_density, 20.5);
}

TEST(DensityBatches, PartitionAndOrdering) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto f = batch_fixture(30 + seed * 7, seed);
    const auto rep = density_batches(f.density, f.models, f.targets, f.support);
    std::vector<int> seen(f.density.size(), 0);
    std::size_t total = 0, lo = SIZE_MAX, hi = 0;
    for (std::size_t k = 0; k < rep.batches.size(); ++k) {
      const auto& b = rep.batches[k];
      for (auto i : b.rows) {
        ++seen[i];
        EXPECT_GE(f.density[i], rep.median_density);
      }
      total += b.rows.size();
      lo = std::min(lo, b.rows.size());
      hi = std::max(hi, b.rows.size());
      if (k > 0) {
        EXPECT_GE(b.mean_density, rep.batches[k - 1].mean_density);
      }
    }
    EXPECT_EQ(total, rep.kept_points);
    EXPECT_LE(hi - lo, 1u);
    for (int s : seen) EXPECT_LE(s, 1);
  }
}

TEST(DensityBatches, TooFewPoints) {
  const auto f = batch_fixture(12, 3);
  EXPECT_THROW(density_batches(f.density, f.models, f.targets, f.support), DataError);
}

TEST(DensityBatches, ImprovementPooledOverPollutants) {
  auto f = batch_fixture(60, 4);
  // "b" is "a" pulled halfway towards the truth.
  for (std::size_t i = 0; i < 60; ++i) {
    for (int p = 0; p < 2; ++p) {
      const double t = f.targets[i].mask[p] ? f.targets[i].value[p] : f.models[0].values[i][p];
      f.models[1].values[i][p] = std::expm1(0.5 * (std::log1p(f.models[0].values[i][p]) + std::log1p(t)));
    }
  }
  const auto rep = density_batches(f.density, f.models, f.targets, f.support);
  for (double v : batch_improvements(rep, "a", "b")) EXPECT_NEAR(v, 0.75, 1e-9);
}

TEST(Regions, WholeDisjointAndEmpty) {
  Rng rng(5);
  std::vector<DataPoint> pts;
  std::vector<double> density;
  for (int i = 0; i < 50; ++i) {
    DataPoint p;
    p.station_id = "s" + std::to_string(i % 10);
    p.location = {35 + 0.1 * (i % 10), -120};
    p.target = Target::of(uniform(rng, 1, 9), uniform(rng, 1, 9));
    pts.push_back(p);
    density.push_back(i % 10);
  }
  const NamedPredictions m{"m", std::vector<Concentrations>(50, {5.0, 5.0})};
  const auto t = targets_of(pts);
  const auto support = shared_support(t, nullptr);
  const auto global = metrics_table({m}, t, support);
  const auto all = region_metrics(pts, density, {"all", {30, 40, -125, -115}}, {m}, support);
  EXPECT_EQ(all.points, 50u);
  EXPECT_EQ(all.stations, 10u);
  EXPECT_NEAR(all.mean_density, 4.5, 1e-12);
  ASSERT_EQ(all.metrics.rows.size(), global.rows.size());
  for (std::size_t i = 0; i < global.rows.size(); ++i) {
    EXPECT_NEAR(all.metrics.rows[i].stats.msle, global.rows[i].stats.msle, 1e-15);
  }
  const auto south = region_metrics(pts, density, {"s", {34, 35.45, -121, -119}}, {m}, support);
  const auto north = region_metrics(pts, density, {"n", {35.45, 36, -121, -119}}, {m}, support);
  EXPECT_EQ(south.points + north.points, 50u);
  EXPECT_THROW(region_metrics(pts, density, {"void", {10, 11, 10, 11}}, {m}, support), DataError);
  EXPECT_THROW(region_metrics(pts, density, {"bad", {11, 10, 10, 11}}, {m}, support), ConfigError);
}

TEST(Output, DensityCsvColumns) {
  const auto f = batch_fixture(40, 6);
  const auto rep = density_batches(f.density, f.models, f.targets, f.support);
  const auto csv = density_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "batch_index,mean_density,pollutant,model,msle,mae,n");
}
