#pragma once

// Supervised dataset assembly (one point per station-hour), the
// density-stratified station split, input normalization, and persistence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/features.hpp"
#include "aqe/ingest.hpp"

namespace aqe {

struct Target {
  Concentrations value{kNA, kNA};
  std::array<bool, 2> mask{false, false};

  static Target of(double pm25, double pm10) {
    Target t;
    t.value = {pm25, pm10};
    t.mask = {!is_na(pm25), !is_na(pm10)};
    return t;
  }
  bool any() const { return mask[0] || mask[1]; }
};

struct DataPoint {
  std::string station_id;
  Location location;
  HourIndex hour = 0;
  FeatureVector features;
  Target target;
};

/// One point per (station, hour in range) with at least one measured
/// pollutant, features built with the station itself excluded. Ordered by
/// (station_id, hour).
inline std::vector<DataPoint> build_dataset(const FeatureContext& ctx, Variant variant,
                                            std::optional<HourRange> hours = std::nullopt,
                                            unsigned threads = 1) {
  const auto& st = ctx.stations();
  struct Job {
    std::size_t station;
    HourIndex hour;
    Concentrations values;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < st.size(); ++s) {
    for (const auto& hv : st.series(s)) {
      if (hours && !hours->contains(hv.hour)) continue;
      if (is_na(hv.values[0]) && is_na(hv.values[1])) continue;
      if (!jobs.empty() && jobs.back().station == s && jobs.back().hour == hv.hour) continue;
      jobs.push_back({s, hv.hour, hv.values});
    }
  }
  if (jobs.empty()) log_warn("build_dataset: no station measurements, dataset is empty");

  std::vector<DataPoint> points(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& j = jobs[i];
      auto& p = points[i];
      p.station_id = st.id(j.station);
      p.location = st.location(j.station);
      p.hour = j.hour;
      p.features = ctx.build(variant, p.location, j.hour, j.station);
      // Stored at the dataset file's float precision so in-memory and
      // reloaded datasets train identically.
      p.target = Target::of(static_cast<float>(j.values[0]), static_cast<float>(j.values[1]));
    }
  });
  return points;
}

/// Narrows station_and_sensor points to another variant.
inline std::vector<DataPoint> select_variant(const std::vector<DataPoint>& points, Variant v) {
  std::vector<DataPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    DataPoint q;
    q.station_id = p.station_id;
    q.location = p.location;
    q.hour = p.hour;
    q.target = p.target;
    q.features = project(p.features, v);
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stratified split

struct StationDensity {
  std::string station_id;
  double density = 0;
};

inline std::vector<StationDensity> station_densities(const FeatureContext& ctx) {
  std::vector<StationDensity> out;
  for (std::size_t s = 0; s < ctx.stations().size(); ++s) {
    out.push_back({ctx.stations().id(s), ctx.sensor_density(ctx.stations().location(s))});
  }
  return out;
}

struct SplitPlan {
  std::vector<std::string> train_station_ids;  // sorted
  std::vector<std::string> eval_station_ids;   // sorted
  std::vector<std::array<std::size_t, 2>> decile_counts;  // (train, eval) per decile
  std::uint64_t seed = 0;
  bool stratified = true;

  bool is_train(const std::string& id) const {
    return std::binary_search(train_station_ids.begin(), train_station_ids.end(), id);
  }
  bool is_eval(const std::string& id) const {
    return std::binary_search(eval_station_ids.begin(), eval_station_ids.end(), id);
  }
};

inline constexpr std::size_t kDensityDeciles = 10;

/// Stations ranked by density and cut into ten equal-count groups (the
/// remainder goes to the lowest groups); within each group a seeded shuffle
/// picks round(ratio * size) stations for training.
inline SplitPlan stratified_split(std::vector<StationDensity> stations, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1)");
  SplitPlan plan;
  plan.seed = seed;
  std::sort(stations.begin(), stations.end(), [](const auto& a, const auto& b) {
    return a.density < b.density || (a.density == b.density && a.station_id < b.station_id);
  });
  Rng rng(seed);
  const auto take = [&](std::vector<std::string> group) {
    shuffle(group, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(group.size())));
    for (std::size_t i = 0; i < group.size(); ++i) {
      (i < n_train ? plan.train_station_ids : plan.eval_station_ids).push_back(group[i]);
    }
    plan.decile_counts.push_back({n_train, group.size() - n_train});
  };

  const std::size_t n = stations.size();
  if (n < kDensityDeciles) {
    log_warn("stratified_split: fewer than 10 stations, using a plain random split");
    plan.stratified = false;
    std::vector<std::string> all;
    for (const auto& s : stations) all.push_back(s.station_id);
    take(std::move(all));
  } else {
    const std::size_t base = n / kDensityDeciles;
    const std::size_t extra = n % kDensityDeciles;
    std::size_t at = 0;
    for (std::size_t d = 0; d < kDensityDeciles; ++d) {
      const std::size_t size = base + (d < extra ? 1 : 0);
      std::vector<std::string> group;
      for (std::size_t i = 0; i < size; ++i) group.push_back(stations[at + i].station_id);
      at += size;
      take(std::move(group));
    }
  }
  std::sort(plan.train_station_ids.begin(), plan.train_station_ids.end());
  std::sort(plan.eval_station_ids.begin(), plan.eval_station_ids.end());
  return plan;
}

struct SplitPoints {
  std::vector<DataPoint> train;
  std::vector<DataPoint> eval;
};

inline SplitPoints apply_split(std::vector<DataPoint> points, const SplitPlan& plan) {
  SplitPoints out;
  for (auto& p : points) {
    if (plan.is_train(p.station_id)) {
      out.train.push_back(std::move(p));
    } else if (plan.is_eval(p.station_id)) {
      out.eval.push_back(std::move(p));
    } else {
      throw DataError("station " + p.station_id + " is missing from the split plan");
    }
  }
  return out;
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double worst = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    worst = std::max(worst, std::abs(static_cast<double>(i) / static_cast<double>(a.size()) -
                                     static_cast<double>(j) / static_cast<double>(b.size())));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kMinStd = 1e-8;

/// Per-feature z-score statistics fitted on training points. Station
/// measurements and sensor PM channels are log1p-transformed first. Sensor
/// statistics are per channel, shared across slots and time steps.
///
/// The lo/hi ranges are the (transformed) extremes seen in training; empty
/// dense_lo means no range is known.
struct NormStats {
  Variant variant = Variant::station;
  std::vector<double> dense_mean, dense_std;
  std::array<double, kSensorChannels> sensor_mean{0, 0, 0, 0};
  std::array<double, kSensorChannels> sensor_std{1, 1, 1, 1};
  std::vector<double> dense_lo, dense_hi;
  std::array<double, kSensorChannels> sensor_lo{0, 0, 0, 0};
  std::array<double, kSensorChannels> sensor_hi{0, 0, 0, 0};

  bool has_range() const { return !dense_lo.empty(); }

  std::uint64_t digest() const {
    std::uint64_t h = fnv1a(&variant, sizeof variant);
    h = fnv1a(dense_mean.data(), dense_mean.size() * sizeof(double), h);
    h = fnv1a(dense_std.data(), dense_std.size() * sizeof(double), h);
    h = fnv1a(sensor_mean.data(), sizeof sensor_mean, h);
    h = fnv1a(sensor_std.data(), sizeof sensor_std, h);
    if (!has_range()) return h;
    h = fnv1a(dense_lo.data(), dense_lo.size() * sizeof(double), h);
    h = fnv1a(dense_hi.data(), dense_hi.size() * sizeof(double), h);
    h = fnv1a(sensor_lo.data(), sizeof sensor_lo, h);
    return fnv1a(sensor_hi.data(), sizeof sensor_hi, h);
  }
};

inline bool is_log_channel(std::size_t channel) { return channel < 2; }

/// Presence flags appended to the dense input, one per station value slot.
inline std::size_t presence_flag_count(Variant v) { return uses_stations(v) ? 2 * kStationSlots : 0; }

/// Dense input width seen by the network (raw dense + presence flags).
inline std::size_t network_dense_size(Variant v) {
  return FeatureLayout(v).n2 + presence_flag_count(v);
}

inline NormStats fit_normalization(const std::vector<DataPoint>& train) {
  if (train.empty()) throw DataError("fit_normalization: empty training set");
  NormStats ns;
  ns.variant = train.front().features.variant;
  const FeatureLayout layout(ns.variant);
  const std::size_t n2 = layout.n2;
  std::vector<double> sum(n2, 0.0), sq(n2, 0.0);
  std::vector<std::size_t> count(n2, 0);
  std::array<double, kSensorChannels> ssum{}, ssq{};
  std::size_t scount = 0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lo(n2, inf), hi(n2, -inf);
  std::array<double, kSensorChannels> slo{inf, inf, inf, inf}, shi{-inf, -inf, -inf, -inf};

  // Two-pass (mean, then centered squares) for accuracy.
  for (const auto& p : train) {
    if (p.features.variant != ns.variant) throw std::invalid_argument("fit_normalization: mixed variants");
    for (std::size_t i = 0; i < n2; ++i) {
      double v = p.features.dense[i];
      if (is_na(v)) continue;
      if (layout.is_concentration(i)) v = std::log1p(v);
      sum[i] += v;
      ++count[i];
      lo[i] = std::min(lo[i], v);
      hi[i] = std::max(hi[i], v);
    }
    for (std::size_t k = 0; k < layout.n1; k += kSensorChannels) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) {
        double v = p.features.sensor[k + c];
        if (is_log_channel(c)) v = std::log1p(v);
        ssum[c] += v;
        slo[c] = std::min(slo[c], v);
        shi[c] = std::max(shi[c], v);
      }
      ++scount;
    }
  }
  ns.dense_mean.assign(n2, 0.0);
  ns.dense_std.assign(n2, 1.0);
  for (std::size_t i = 0; i < n2; ++i) {
    if (count[i]) ns.dense_mean[i] = sum[i] / static_cast<double>(count[i]);
  }
  for (std::size_t c = 0; c < kSensorChannels && scount; ++c) {
    ns.sensor_mean[c] = ssum[c] / static_cast<double>(scount);
  }
  for (const auto& p : train) {
    for (std::size_t i = 0; i < n2; ++i) {
      double v = p.features.dense[i];
      if (is_na(v)) continue;
      if (layout.is_concentration(i)) v = std::log1p(v);
      sq[i] += (v - ns.dense_mean[i]) * (v - ns.dense_mean[i]);
    }
    for (std::size_t k = 0; k < layout.n1; k += kSensorChannels) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) {
        double v = p.features.sensor[k + c];
        if (is_log_channel(c)) v = std::log1p(v);
        ssq[c] += (v - ns.sensor_mean[c]) * (v - ns.sensor_mean[c]);
      }
    }
  }
  for (std::size_t i = 0; i < n2; ++i) {
    const double sd = count[i] ? std::sqrt(sq[i] / static_cast<double>(count[i])) : 1.0;
    ns.dense_std[i] = sd < kMinStd ? 1.0 : sd;
  }
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    const double sd = scount ? std::sqrt(ssq[c] / static_cast<double>(scount)) : 1.0;
    ns.sensor_std[c] = sd < kMinStd ? 1.0 : sd;
  }
  // Features never observed in training collapse to their mean.
  ns.dense_lo.resize(n2);
  ns.dense_hi.resize(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    ns.dense_lo[i] = count[i] ? lo[i] : ns.dense_mean[i];
    ns.dense_hi[i] = count[i] ? hi[i] : ns.dense_mean[i];
  }
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    ns.sensor_lo[c] = scount ? slo[c] : ns.sensor_mean[c];
    ns.sensor_hi[c] = scount ? shi[c] : ns.sensor_mean[c];
  }
  return ns;
}

/// Network-ready input: normalized sensor tensor and dense vector with the
/// presence flags appended.
struct NormalizedInput {
  std::vector<double> sensor;
  std::vector<double> dense;
};

inline NormalizedInput normalize(const NormStats& ns, const FeatureVector& fv) {
  if (fv.variant != ns.variant) throw std::invalid_argument("normalize: variant mismatch");
  const FeatureLayout layout(fv.variant);
  if (fv.dense.size() != layout.n2 || fv.sensor.size() != layout.n1) {
    throw std::invalid_argument("normalize: feature vector has the wrong shape");
  }
  NormalizedInput out;
  out.dense.resize(layout.n2 + presence_flag_count(fv.variant));
  for (std::size_t i = 0; i < layout.n2; ++i) {
    double v = fv.dense[i];
    if (is_na(v)) {
      out.dense[i] = 0.0;
      continue;
    }
    if (layout.is_concentration(i)) v = std::log1p(v);
    out.dense[i] = (v - ns.dense_mean[i]) / ns.dense_std[i];
  }
  for (std::size_t f = 0; f < presence_flag_count(fv.variant); ++f) {
    out.dense[layout.n2 + f] = is_na(fv.dense[layout.station_values + f]) ? 0.0 : 1.0;
  }
  out.sensor.resize(layout.n1);
  for (std::size_t k = 0; k < layout.n1; ++k) {
    const std::size_t c = k % kSensorChannels;
    double v = fv.sensor[k];
    if (is_log_channel(c)) v = std::log1p(v);
    out.sensor[k] = (v - ns.sensor_mean[c]) / ns.sensor_std[c];
  }
  return out;
}

/// Clamps a normalized input to the range seen in training, so inputs far
/// outside it (a map cell next to a sensor) are not extrapolated. Presence
/// flags are left alone. No-op without a fitted range.
inline void clamp_to_training_range(const NormStats& ns, NormalizedInput& x) {
  if (!ns.has_range()) return;
  const std::size_t n2 = ns.dense_lo.size();
  for (std::size_t i = 0; i < n2; ++i) {
    const double a = (ns.dense_lo[i] - ns.dense_mean[i]) / ns.dense_std[i];
    const double b = (ns.dense_hi[i] - ns.dense_mean[i]) / ns.dense_std[i];
    x.dense[i] = std::clamp(x.dense[i], std::min(a, b), std::max(a, b));
  }
  for (std::size_t k = 0; k < x.sensor.size(); ++k) {
    const std::size_t c = k % kSensorChannels;
    const double a = (ns.sensor_lo[c] - ns.sensor_mean[c]) / ns.sensor_std[c];
    const double b = (ns.sensor_hi[c] - ns.sensor_mean[c]) / ns.sensor_std[c];
    x.sensor[k] = std::clamp(x.sensor[k], std::min(a, b), std::max(a, b));
  }
}

/// Inverse of normalize (in double precision); NA slots come back as NA.
struct RawFeatures {
  std::vector<double> sensor;
  std::vector<double> dense;
};

inline RawFeatures denormalize(const NormStats& ns, const NormalizedInput& in) {
  const FeatureLayout layout(ns.variant);
  RawFeatures out;
  out.dense.resize(layout.n2);
  for (std::size_t i = 0; i < layout.n2; ++i) {
    if (layout.is_concentration(i) && in.dense[layout.n2 + (i - layout.station_values)] == 0.0) {
      out.dense[i] = kNA;
      continue;
    }
    const double v = in.dense[i] * ns.dense_std[i] + ns.dense_mean[i];
    out.dense[i] = layout.is_concentration(i) ? std::expm1(v) : v;
  }
  out.sensor.resize(layout.n1);
  for (std::size_t k = 0; k < layout.n1; ++k) {
    const std::size_t c = k % kSensorChannels;
    const double v = in.sensor[k] * ns.sensor_std[c] + ns.sensor_mean[c];
    out.sensor[k] = is_log_channel(c) ? std::expm1(v) : v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace kv {

inline std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

/// Reads "key = value" lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw DataError(path + ": expected key = value: " + std::string(t));
    out.emplace_back(std::string(csv::trim(t.substr(0, eq))), std::string(csv::trim(t.substr(eq + 1))));
  }
  return out;
}

inline double to_double(const std::string& s) {
  double v;
  if (s == "nan") return kNA;
  if (!csv::parse_double(s, v)) throw DataError("not a number: " + s);
  return v;
}

}  // namespace kv

inline void save_norm_stats(const NormStats& ns, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "variant = " << to_string(ns.variant) << "\n";
  out << "dense_count = " << ns.dense_mean.size() << "\n";
  for (std::size_t i = 0; i < ns.dense_mean.size(); ++i) {
    out << "dense." << i << " = " << kv::fmt(ns.dense_mean[i]) << " " << kv::fmt(ns.dense_std[i]) << "\n";
  }
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    out << "sensor_channel." << c << " = " << kv::fmt(ns.sensor_mean[c]) << " " << kv::fmt(ns.sensor_std[c]) << "\n";
  }
  if (!ns.has_range()) return;
  for (std::size_t i = 0; i < ns.dense_lo.size(); ++i) {
    out << "dense_range." << i << " = " << kv::fmt(ns.dense_lo[i]) << " " << kv::fmt(ns.dense_hi[i]) << "\n";
  }
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    out << "sensor_range." << c << " = " << kv::fmt(ns.sensor_lo[c]) << " " << kv::fmt(ns.sensor_hi[c]) << "\n";
  }
}

inline NormStats load_norm_stats(const std::string& path) {
  NormStats ns;
  std::size_t count = 0;
  const auto parse_pair = [](const std::string& v, double& a, double& b) {
    std::istringstream ss(v);
    std::string x, y;
    ss >> x >> y;
    a = kv::to_double(x);
    b = kv::to_double(y);
  };
  for (const auto& [k, v] : kv::read_pairs(path)) {
    if (k == "variant") {
      ns.variant = parse_variant(v);
    } else if (k == "dense_count") {
      count = static_cast<std::size_t>(std::stoul(v));
      ns.dense_mean.assign(count, 0.0);
      ns.dense_std.assign(count, 1.0);
    } else if (k.rfind("dense.", 0) == 0) {
      const auto i = static_cast<std::size_t>(std::stoul(k.substr(6)));
      if (i >= count) throw DataError(path + ": dense index out of range");
      parse_pair(v, ns.dense_mean[i], ns.dense_std[i]);
    } else if (k.rfind("sensor_channel.", 0) == 0) {
      const auto c = static_cast<std::size_t>(std::stoul(k.substr(15)));
      if (c >= kSensorChannels) throw DataError(path + ": channel out of range");
      parse_pair(v, ns.sensor_mean[c], ns.sensor_std[c]);
    } else if (k.rfind("dense_range.", 0) == 0) {
      const auto i = static_cast<std::size_t>(std::stoul(k.substr(12)));
      if (i >= count) throw DataError(path + ": dense index out of range");
      ns.dense_lo.resize(count, 0.0);
      ns.dense_hi.resize(count, 0.0);
      parse_pair(v, ns.dense_lo[i], ns.dense_hi[i]);
    } else if (k.rfind("sensor_range.", 0) == 0) {
      const auto c = static_cast<std::size_t>(std::stoul(k.substr(13)));
      if (c >= kSensorChannels) throw DataError(path + ": channel out of range");
      parse_pair(v, ns.sensor_lo[c], ns.sensor_hi[c]);
    } else {
      throw DataError(path + ": unknown key " + k);
    }
  }
  if (count != FeatureLayout(ns.variant).n2) throw DataError(path + ": dense_count does not match variant");
  return ns;
}

inline void save_split_plan(const SplitPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  const auto join = [](const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + ids[i];
    return s;
  };
  out << "seed = " << plan.seed << "\n";
  out << "stratified = " << (plan.stratified ? "true" : "false") << "\n";
  out << "train = " << join(plan.train_station_ids) << "\n";
  out << "eval = " << join(plan.eval_station_ids) << "\n";
  for (std::size_t d = 0; d < plan.decile_counts.size(); ++d) {
    out << "decile." << d << " = " << plan.decile_counts[d][0] << " " << plan.decile_counts[d][1] << "\n";
  }
}

inline SplitPlan load_split_plan(const std::string& path) {
  SplitPlan plan;
  const auto split_ids = [](const std::string& v) {
    std::vector<std::string> ids;
    for (auto f : csv::split(v)) {
      if (!f.empty()) ids.emplace_back(f);
    }
    return ids;
  };
  for (const auto& [k, v] : kv::read_pairs(path)) {
    if (k == "seed") {
      plan.seed = std::stoull(v);
    } else if (k == "stratified") {
      plan.stratified = v == "true";
    } else if (k == "train") {
      plan.train_station_ids = split_ids(v);
    } else if (k == "eval") {
      plan.eval_station_ids = split_ids(v);
    } else if (k.rfind("decile.", 0) == 0) {
      std::istringstream ss(v);
      std::size_t a = 0, b = 0;
      ss >> a >> b;
      plan.decile_counts.push_back({a, b});
    } else {
      throw DataError(path + ": unknown key " + k);
    }
  }
  return plan;
}

// Binary dataset container ("AGDS", version 1), little-endian:
//   magic[4] u32 version u32 variant u32 n1 u32 n2 u64 count
//   u32 station_count, then per station: u16 id_len, id bytes, f64 lat, f64 lon
//   rows: u32 station ordinal, i64 hour, f32 features[n1 + n2], f32 target[2], u8 mask[2]
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::vector<DataPoint>& points, Variant variant, const std::string& path) {
  const FeatureLayout layout(variant);
  std::vector<std::string> ids;
  std::map<std::string, std::uint32_t> ordinal;
  std::vector<Location> locs;
  for (const auto& p : points) {
    if (p.features.variant != variant) throw std::invalid_argument("save_dataset: variant mismatch");
    if (ordinal.emplace(p.station_id, static_cast<std::uint32_t>(ids.size())).second) {
      ids.push_back(p.station_id);
      locs.push_back(p.location);
    }
  }
  std::string buf = "AGDS";
  put_le<std::uint32_t>(buf, kDatasetVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(variant));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(layout.n1));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(layout.n2));
  put_le<std::uint64_t>(buf, points.size());
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(ids[i].size()));
    buf += ids[i];
    put_le<double>(buf, locs[i].lat);
    put_le<double>(buf, locs[i].lon);
  }
  for (const auto& p : points) {
    put_le<std::uint32_t>(buf, ordinal[p.station_id]);
    put_le<std::int64_t>(buf, p.hour);
    for (float v : p.features.sensor) put_le<float>(buf, v);
    for (float v : p.features.dense) put_le<float>(buf, v);
    put_le<float>(buf, static_cast<float>(p.target.value[0]));
    put_le<float>(buf, static_cast<float>(p.target.value[1]));
    put_le<std::uint8_t>(buf, p.target.mask[0]);
    put_le<std::uint8_t>(buf, p.target.mask[1]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<DataPoint> load_dataset(const std::string& path) {
  const std::string buf = csv::read_file(path);
  std::string_view in = buf;
  if (in.substr(0, 4) != "AGDS") throw DataError(path + ": not a dataset file");
  std::size_t pos = 4;
  if (get_le<std::uint32_t>(in, pos) != kDatasetVersion) throw DataError(path + ": unsupported version");
  const auto variant_raw = get_le<std::uint32_t>(in, pos);
  if (variant_raw > 2) throw DataError(path + ": bad variant");
  const auto variant = static_cast<Variant>(variant_raw);
  const FeatureLayout layout(variant);
  const auto n1 = get_le<std::uint32_t>(in, pos);
  const auto n2 = get_le<std::uint32_t>(in, pos);
  if (n1 != layout.n1 || n2 != layout.n2) throw DataError(path + ": dimensions do not match variant");
  const auto count = get_le<std::uint64_t>(in, pos);
  const auto n_stations = get_le<std::uint32_t>(in, pos);
  std::vector<std::string> ids(n_stations);
  std::vector<Location> locs(n_stations);
  for (std::uint32_t i = 0; i < n_stations; ++i) {
    const auto len = get_le<std::uint16_t>(in, pos);
    if (pos + len > in.size()) throw DataError(path + ": truncated");
    ids[i] = std::string(in.substr(pos, len));
    pos += len;
    locs[i].lat = get_le<double>(in, pos);
    locs[i].lon = get_le<double>(in, pos);
  }
  std::vector<DataPoint> points(count);
  for (auto& p : points) {
    const auto s = get_le<std::uint32_t>(in, pos);
    if (s >= n_stations) throw DataError(path + ": bad station ordinal");
    p.station_id = ids[s];
    p.location = locs[s];
    p.hour = get_le<std::int64_t>(in, pos);
    p.features.variant = variant;
    p.features.sensor.resize(n1);
    p.features.dense.resize(n2);
    for (auto& v : p.features.sensor) v = get_le<float>(in, pos);
    for (auto& v : p.features.dense) v = get_le<float>(in, pos);
    const double t0 = get_le<float>(in, pos);
    const double t1 = get_le<float>(in, pos);
    const bool m0 = get_le<std::uint8_t>(in, pos) != 0;
    const bool m1 = get_le<std::uint8_t>(in, pos) != 0;
    p.target.value = {m0 ? t0 : kNA, m1 ? t1 : kNA};
    p.target.mask = {m0, m1};
  }
  if (pos != in.size()) throw DataError(path + ": trailing bytes");
  return points;
}

}  // namespace aqe
