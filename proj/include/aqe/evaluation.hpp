#pragma once

// Metrics, the nearest-station benchmark, density batches and region reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/dataset.hpp"
#include "aqe/features.hpp"
#include "aqe/geo.hpp"
#include "aqe/neuralnet.hpp"

namespace aqe {

/// Per pollutant, the value of the nearest station reporting it at `hour`,
/// skipping `exclude`. NA where no station qualifies.
inline Concentrations benchmark_predict(const StationTable& stations, const Location& query, HourIndex hour,
                                        std::optional<std::size_t> exclude = std::nullopt) {
  Concentrations out{kNA, kNA};
  for (const auto p : kPollutants) {
    const auto pi = index_of(p);
    const auto nearest = stations.index().k_nearest_if(query, 1, [&](EntryId id) {
      if (exclude && id == *exclude) return false;
      return !is_na(stations.value_at(id, hour)[pi]);
    });
    if (!nearest.empty()) out[pi] = stations.value_at(nearest.front().id, hour)[pi];
  }
  return out;
}

/// Benchmark for every data point, excluding the point's own station.
inline std::vector<Concentrations> benchmark_predictions(const FeatureContext& ctx,
                                                         const std::vector<DataPoint>& points) {
  std::vector<Concentrations> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const auto self = ctx.stations().find(p.station_id);
    out.push_back(benchmark_predict(ctx.stations(), p.location, p.hour, self));
  }
  return out;
}

/// Features of a point in the shape a model of variant `v` expects.
inline FeatureVector features_for(const FeatureVector& fv, Variant v) {
  if (fv.variant == v) return fv;
  return project(fv, v);
}

inline std::vector<Concentrations> model_predictions(const Model& model, const std::vector<DataPoint>& points,
                                                     unsigned threads = 1) {
  std::vector<Concentrations> out(points.size());
  parallel_for(points.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = predict(model, features_for(points[i].features, model.config.variant));
  });
  return out;
}

inline std::vector<Target> targets_of(const std::vector<DataPoint>& points) {
  std::vector<Target> t;
  t.reserve(points.size());
  for (const auto& p : points) t.push_back(p.target);
  return t;
}

// ---------------------------------------------------------------------------
// Metrics

struct ErrorStats {
  double msle = 0;
  double mae = 0;
  std::size_t n = 0;
};

/// Which (point, pollutant) pairs a comparison is computed on.
using Support = std::vector<std::array<bool, 2>>;

/// Pairs with a measured target and, when given, a non-NA benchmark value.
inline Support shared_support(const std::vector<Target>& targets, const std::vector<Concentrations>* benchmark) {
  if (benchmark && benchmark->size() != targets.size()) throw std::invalid_argument("shared_support: size mismatch");
  Support s(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t p = 0; p < 2; ++p) {
      s[i][p] = targets[i].mask[p] && (!benchmark || !is_na((*benchmark)[i][p]));
    }
  }
  return s;
}

/// MSLE and MAE of one pollutant over the selected pairs. `rows` restricts
/// the points considered (all points when empty).
inline ErrorStats error_stats(const std::vector<Concentrations>& pred, const std::vector<Target>& targets,
                              const Support& support, std::size_t pollutant,
                              const std::vector<std::size_t>* rows = nullptr) {
  if (pred.size() != targets.size() || support.size() != targets.size()) {
    throw std::invalid_argument("error_stats: misaligned inputs");
  }
  ErrorStats st;
  double sq = 0.0, abs_err = 0.0;
  const auto add = [&](std::size_t i) {
    if (!support[i][pollutant]) return;
    const double y = pred[i][pollutant];
    const double t = targets[i].value[pollutant];
    if (is_na(y)) throw std::invalid_argument("error_stats: NA prediction inside the support");
    const double e = std::log1p(y) - std::log1p(t);
    sq += e * e;
    abs_err += std::abs(y - t);
    ++st.n;
  };
  if (rows) {
    for (auto i : *rows) add(i);
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) add(i);
  }
  if (st.n > 0) {
    st.msle = sq / static_cast<double>(st.n);
    st.mae = abs_err / static_cast<double>(st.n);
  }
  return st;
}

/// Per-pollutant metrics over all measured pairs; a pollutant without any
/// measured pair is nullopt.
inline std::array<std::optional<ErrorStats>, 2> compute_metrics(const std::vector<Concentrations>& pred,
                                                                const std::vector<Target>& targets) {
  const auto support = shared_support(targets, nullptr);
  std::array<std::optional<ErrorStats>, 2> out;
  for (std::size_t p = 0; p < 2; ++p) {
    const auto st = error_stats(pred, targets, support, p);
    if (st.n > 0) out[p] = st;
  }
  return out;
}

struct NamedPredictions {
  std::string name;
  std::vector<Concentrations> values;
};

struct MetricsRow {
  Pollutant pollutant;
  std::string model;
  ErrorStats stats;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;

  const MetricsRow* find(Pollutant p, std::string_view model) const {
    for (const auto& r : rows) {
      if (r.pollutant == p && r.model == model) return &r;
    }
    return nullptr;
  }
};

inline MetricsTable metrics_table(const std::vector<NamedPredictions>& models, const std::vector<Target>& targets,
                                  const Support& support, const std::vector<std::size_t>* rows = nullptr) {
  MetricsTable table;
  for (const auto p : kPollutants) {
    for (const auto& m : models) {
      const auto st = error_stats(m.values, targets, support, index_of(p), rows);
      if (st.n == 0) {
        log_warn("no evaluated pairs for " + std::string(to_string(p)) + " / " + m.name + ", row omitted");
        continue;
      }
      table.rows.push_back({p, m.name, st});
    }
  }
  return table;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median_of: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Ranks with ties averaged, 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need two aligned samples");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

// ---------------------------------------------------------------------------
// Density batches

inline constexpr std::size_t kDensityBatches = 10;

struct DensityBatch {
  std::size_t index = 0;
  double mean_density = 0;
  std::vector<std::size_t> rows;
  MetricsTable metrics;
  /// Per model, MSLE over both pollutants pooled.
  std::map<std::string, ErrorStats> pooled;
};

struct DensityBatchReport {
  double median_density = 0;
  std::size_t kept_points = 0;
  std::vector<DensityBatch> batches;
};

inline ErrorStats pooled_stats(const std::vector<Concentrations>& pred, const std::vector<Target>& targets,
                               const Support& support, const std::vector<std::size_t>& rows) {
  const auto a = error_stats(pred, targets, support, 0, &rows);
  const auto b = error_stats(pred, targets, support, 1, &rows);
  ErrorStats st;
  st.n = a.n + b.n;
  if (st.n > 0) {
    const double n = static_cast<double>(st.n);
    st.msle = (a.msle * static_cast<double>(a.n) + b.msle * static_cast<double>(b.n)) / n;
    st.mae = (a.mae * static_cast<double>(a.n) + b.mae * static_cast<double>(b.n)) / n;
  }
  return st;
}

/// Drops points below the median density, then cuts the rest, ordered by
/// density, into kDensityBatches batches whose sizes differ by at most one.
inline DensityBatchReport density_batches(const std::vector<double>& density,
                                          const std::vector<NamedPredictions>& models,
                                          const std::vector<Target>& targets, const Support& support) {
  if (density.size() != targets.size()) throw std::invalid_argument("density_batches: misaligned inputs");
  if (density.empty()) throw DataError("density_batches: no evaluation points");
  DensityBatchReport rep;
  rep.median_density = median_of(density);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < density.size(); ++i) {
    if (density[i] >= rep.median_density) kept.push_back(i);
  }
  if (kept.size() < kDensityBatches) {
    throw DataError("density_batches: " + std::to_string(kept.size()) + " points above the median, need " +
                    std::to_string(kDensityBatches));
  }
  std::stable_sort(kept.begin(), kept.end(), [&](auto a, auto b) { return density[a] < density[b]; });
  rep.kept_points = kept.size();
  const std::size_t base = kept.size() / kDensityBatches, extra = kept.size() % kDensityBatches;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < kDensityBatches; ++b) {
    DensityBatch batch;
    batch.index = b;
    const std::size_t n = base + (b < extra ? 1 : 0);
    batch.rows.assign(kept.begin() + static_cast<std::ptrdiff_t>(pos), kept.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    double s = 0;
    for (auto i : batch.rows) s += density[i];
    batch.mean_density = s / static_cast<double>(n);
    batch.metrics = metrics_table(models, targets, support, &batch.rows);
    for (const auto& m : models) batch.pooled[m.name] = pooled_stats(m.values, targets, support, batch.rows);
    rep.batches.push_back(std::move(batch));
  }
  return rep;
}

/// Relative MSLE improvement of `better` over `reference`, pooled over both
/// pollutants, for each batch.
inline std::vector<double> batch_improvements(const DensityBatchReport& rep, const std::string& reference,
                                              const std::string& better) {
  std::vector<double> out;
  for (const auto& b : rep.batches) {
    const double ref = b.pooled.at(reference).msle;
    const double val = b.pooled.at(better).msle;
    out.push_back(ref > 0 ? (ref - val) / ref : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regions

struct RegionSpec {
  std::string name;
  BoundingBox box;
};

struct RegionReport {
  std::string name;
  std::size_t points = 0;
  std::size_t stations = 0;
  double mean_density = 0;  // over the region's distinct evaluation stations
  MetricsTable metrics;
};

inline RegionReport region_metrics(const std::vector<DataPoint>& points, const std::vector<double>& density,
                                   const RegionSpec& region, const std::vector<NamedPredictions>& models,
                                   const Support& support) {
  if (!region.box.well_ordered()) throw ConfigError("region " + region.name + ": bounds are not well ordered");
  if (density.size() != points.size()) throw std::invalid_argument("region_metrics: misaligned inputs");
  std::vector<std::size_t> rows;
  std::map<std::string, double> station_density;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!region.box.contains(points[i].location)) continue;
    rows.push_back(i);
    station_density.emplace(points[i].station_id, density[i]);
  }
  if (rows.empty()) throw DataError("region " + region.name + " contains no evaluation points");
  RegionReport rep;
  rep.name = region.name;
  rep.points = rows.size();
  rep.stations = station_density.size();
  double s = 0;
  for (const auto& [id, d] : station_density) s += d;
  rep.mean_density = s / static_cast<double>(station_density.size());
  rep.metrics = metrics_table(models, targets_of(points), support, &rows);
  return rep;
}

// ---------------------------------------------------------------------------
// Output

inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string metrics_csv(const MetricsTable& t) {
  std::string s = "pollutant,model,msle,mae,n\n";
  for (const auto& r : t.rows) {
    s += std::string(to_string(r.pollutant)) + "," + r.model + "," + fmt_metric(r.stats.msle) + "," +
         fmt_metric(r.stats.mae) + "," + std::to_string(r.stats.n) + "\n";
  }
  return s;
}

inline std::string density_csv(const DensityBatchReport& rep) {
  std::string s = "batch_index,mean_density,pollutant,model,msle,mae,n\n";
  for (const auto& b : rep.batches) {
    for (const auto& r : b.metrics.rows) {
      s += std::to_string(b.index) + "," + fmt_metric(b.mean_density) + "," + std::string(to_string(r.pollutant)) +
           "," + r.model + "," + fmt_metric(r.stats.msle) + "," + fmt_metric(r.stats.mae) + "," +
           std::to_string(r.stats.n) + "\n";
    }
    for (const auto& [name, st] : b.pooled) {
      s += std::to_string(b.index) + "," + fmt_metric(b.mean_density) + ",all," + name + "," + fmt_metric(st.msle) +
           "," + fmt_metric(st.mae) + "," + std::to_string(st.n) + "\n";
    }
  }
  return s;
}

inline std::string metrics_text(const MetricsTable& t, const std::string& title = {}) {
  std::string s;
  if (!title.empty()) s += title + "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-9s %-20s %12s %12s %10s\n", "pollutant", "model", "msle", "mae", "n");
  s += line;
  for (const auto& r : t.rows) {
    std::snprintf(line, sizeof line, "%-9s %-20s %12.6f %12.4f %10zu\n", std::string(to_string(r.pollutant)).c_str(),
                  r.model.c_str(), r.stats.msle, r.stats.mae, r.stats.n);
    s += line;
  }
  return s;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

}  // namespace aqe
