#pragma once

// Feature construction for a (location, hour) pair: the nearest-station
// block, the nearest-sensor window block and the road/traffic context block,
// plus the per-variant assembly into a fixed dense + sensor-tensor layout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/geo.hpp"
#include "aqe/ingest.hpp"
#include "aqe/timeutil.hpp"

namespace aqe {

inline constexpr std::size_t kStationSlots = 5;
inline constexpr std::size_t kSensorSlots = 5;
inline constexpr std::size_t kWindowLength = 16;
inline constexpr std::size_t kSensorChannels = 4;  // pm25, pm10, temperature, humidity
inline constexpr std::size_t kSensorTensorSize = kSensorSlots * kWindowLength * kSensorChannels;
inline constexpr std::size_t kContextFeatures = 3;
inline constexpr double kInvDistanceCap = 100.0;  // 1/km, reached below 10 m

enum class Variant : int { station = 0, sensor = 1, station_and_sensor = 2 };

inline constexpr std::array<Variant, 3> kVariants{Variant::station, Variant::sensor,
                                                  Variant::station_and_sensor};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::station: return "station";
    case Variant::sensor: return "sensor";
    case Variant::station_and_sensor: return "station_and_sensor";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kVariants) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline bool uses_stations(Variant v) { return v != Variant::sensor; }
inline bool uses_sensors(Variant v) { return v != Variant::station; }

/// Offsets of each feature group inside the dense vector. Layout:
///   station values     [pm25 x5, pm10 x5]        (station variants)
///   station inv-dist   [pm25 x5, pm10 x5]        (station variants)
///   sensor inv-dist    [pm25 x5, pm10 x5]        (sensor variants)
///   context            [roads, major_roads, traffic]
/// The sensor tensor is [slot][time, oldest first][channel].
struct FeatureLayout {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Variant variant;
  std::size_t station_values = npos;
  std::size_t station_inv_distance = npos;
  std::size_t sensor_inv_distance = npos;
  std::size_t context = 0;
  std::size_t n1 = 0;  // sensor tensor size
  std::size_t n2 = 0;  // dense size

  explicit FeatureLayout(Variant v) : variant(v) {
    std::size_t at = 0;
    if (uses_stations(v)) {
      station_values = at;
      at += 2 * kStationSlots;
      station_inv_distance = at;
      at += 2 * kStationSlots;
    }
    if (uses_sensors(v)) {
      sensor_inv_distance = at;
      at += 2 * kSensorSlots;
      n1 = kSensorTensorSize;
    }
    context = at;
    n2 = at + kContextFeatures;
  }

  /// Dense slots whose raw value is a concentration (log1p-normalized).
  bool is_concentration(std::size_t dense_index) const {
    return station_values != npos && dense_index >= station_values &&
           dense_index < station_values + 2 * kStationSlots;
  }
};

struct FeatureVector {
  Variant variant = Variant::station;
  std::vector<float> sensor;  // n1 values
  std::vector<float> dense;   // n2 values; NA station measurements are NaN
};

struct StationFeatures {
  // [pollutant][slot]
  std::array<std::array<double, kStationSlots>, 2> value{};
  std::array<std::array<double, kStationSlots>, 2> inv_distance{};
};

struct SensorWindowFeatures {
  std::array<double, kSensorTensorSize> window{};  // [slot][t][channel]
  std::array<double, kSensorSlots> inv_distance{};

  double& at(std::size_t slot, std::size_t t, std::size_t c) {
    return window[(slot * kWindowLength + t) * kSensorChannels + c];
  }
  double at(std::size_t slot, std::size_t t, std::size_t c) const {
    return window[(slot * kWindowLength + t) * kSensorChannels + c];
  }
};

struct ContextFeatures {
  double roads = 0;
  double major_roads = 0;
  double traffic = 0;
};

inline double inverse_distance(double km) { return std::min(kInvDistanceCap, 1.0 / km); }

struct FeatureOptions {
  double density_kernel_km = kDensityKernelKm;
  double context_kernel_km = kContextKernelKm;
  int sensor_lookback_hours = 4;
};

/// Station measurements by (station, hour), ids sorted ascending so that
/// EntryId order equals id order.
class StationTable {
 public:
  StationTable() = default;
  explicit StationTable(const std::vector<StationRecord>& records) {
    std::map<std::string, std::size_t> first_seen;
    for (const auto& r : records) first_seen.try_emplace(r.station_id, 0);
    for (auto& [id, idx] : first_seen) {
      idx = ids_.size();
      ids_.push_back(id);
    }
    locations_.resize(ids_.size());
    series_.resize(ids_.size());
    std::vector<bool> located(ids_.size(), false);
    for (const auto& r : records) {
      const auto s = first_seen[r.station_id];
      if (!located[s]) {
        locations_[s] = r.location;
        located[s] = true;
      }
      series_[s].push_back({r.hour, {r.pm25, r.pm10}});
    }
    for (auto& s : series_) {
      std::stable_sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.hour < b.hour; });
    }
    std::vector<SpatialIndex::Entry> entries;
    for (std::size_t i = 0; i < ids_.size(); ++i) entries.push_back({static_cast<EntryId>(i), locations_[i]});
    index_ = SpatialIndex(std::move(entries), 10.0);
  }

  struct HourValue {
    HourIndex hour;
    Concentrations values;
  };

  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const Location& location(std::size_t i) const { return locations_[i]; }
  const std::vector<HourValue>& series(std::size_t i) const { return series_[i]; }
  const SpatialIndex& index() const { return index_; }

  std::optional<std::size_t> find(std::string_view id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - ids_.begin());
  }

  /// (NA, NA) when the station has no record at that hour.
  Concentrations value_at(std::size_t station, HourIndex hour) const {
    const auto& s = series_[station];
    const auto it = std::lower_bound(s.begin(), s.end(), hour,
                                     [](const HourValue& v, HourIndex h) { return v.hour < h; });
    if (it == s.end() || it->hour != hour) return {kNA, kNA};
    return it->values;
  }

  bool any_at(HourIndex hour) const {
    for (std::size_t i = 0; i < size(); ++i) {
      const auto v = value_at(i, hour);
      if (!is_na(v[0]) || !is_na(v[1])) return true;
    }
    return false;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<Location> locations_;
  std::vector<std::vector<HourValue>> series_;
  SpatialIndex index_;
};

struct SensorReading {
  UnixSeconds timestamp;
  double pm25, pm10, temperature, humidity;
};

class SensorTable {
 public:
  SensorTable() = default;
  explicit SensorTable(const std::vector<SensorRecord>& records) {
    std::map<std::string, std::size_t> first_seen;
    for (const auto& r : records) first_seen.try_emplace(r.sensor_id, 0);
    for (auto& [id, idx] : first_seen) {
      idx = ids_.size();
      ids_.push_back(id);
    }
    locations_.resize(ids_.size());
    readings_.resize(ids_.size());
    std::vector<bool> located(ids_.size(), false);
    for (const auto& r : records) {
      const auto s = first_seen[r.sensor_id];
      if (!located[s]) {
        locations_[s] = r.location;
        located[s] = true;
      }
      readings_[s].push_back({r.timestamp, r.pm25, r.pm10, r.temperature, r.humidity});
    }
    for (auto& s : readings_) {
      std::stable_sort(s.begin(), s.end(),
                       [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    }
    std::vector<SpatialIndex::Entry> entries;
    for (std::size_t i = 0; i < ids_.size(); ++i) entries.push_back({static_cast<EntryId>(i), locations_[i]});
    index_ = SpatialIndex(std::move(entries), 10.0);
  }

  std::size_t size() const { return ids_.size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const Location& location(std::size_t i) const { return locations_[i]; }
  const std::vector<SensorReading>& readings(std::size_t i) const { return readings_[i]; }
  const SpatialIndex& index() const { return index_; }

  bool any_within(UnixSeconds from, UnixSeconds to) const {
    for (const auto& s : readings_) {
      const auto it = std::lower_bound(s.begin(), s.end(), from,
                                       [](const SensorReading& r, UnixSeconds t) { return r.timestamp < t; });
      if (it != s.end() && it->timestamp <= to) return true;
    }
    return false;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<Location> locations_;
  std::vector<std::vector<SensorReading>> readings_;
  SpatialIndex index_;
};

class RoadTable {
 public:
  RoadTable() = default;
  RoadTable(const std::vector<RoadSegment>& roads, const std::vector<TrafficObservation>& traffic,
            double context_kernel_km)
      : segments_(roads) {
    std::unordered_map<std::string, std::size_t> by_id;
    std::vector<SpatialIndex::Entry> entries;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      by_id.emplace(segments_[i].segment_id, i);
      entries.push_back({static_cast<EntryId>(i), segments_[i].midpoint});
    }
    index_ = SpatialIndex(std::move(entries), std::max(0.25, 5.0 * context_kernel_km));
    jam_.reserve(traffic.size());
    for (const auto& t : traffic) {
      const auto it = by_id.find(t.segment_id);
      if (it == by_id.end()) {
        ++unknown_traffic_;
        continue;
      }
      jam_[key(it->second, t.hour)] = t.jam_factor;
    }
  }

  const std::vector<RoadSegment>& segments() const { return segments_; }
  const SpatialIndex& index() const { return index_; }
  std::size_t unknown_traffic_rows() const { return unknown_traffic_; }

  /// Jam factor of a segment at an hour; 0 when not observed.
  double jam(std::size_t segment, HourIndex hour) const {
    const auto it = jam_.find(key(segment, hour));
    return it == jam_.end() ? 0.0 : it->second;
  }

 private:
  static std::uint64_t key(std::size_t segment, HourIndex hour) {
    return (static_cast<std::uint64_t>(hour) << 24) ^ static_cast<std::uint64_t>(segment);
  }

  std::vector<RoadSegment> segments_;
  SpatialIndex index_;
  std::unordered_map<std::uint64_t, double> jam_;
  std::size_t unknown_traffic_ = 0;
};

/// Immutable, query-ready view of all sources. Safe for concurrent reads.
class FeatureContext {
 public:
  FeatureContext(const Sources& sources, FeatureOptions options = {})
      : options_(options),
        density_kernel_(options.density_kernel_km),
        context_kernel_(options.context_kernel_km),
        stations_(sources.stations),
        sensors_(sources.sensors),
        roads_(sources.roads, sources.traffic, options.context_kernel_km) {
    if (roads_.segments().size() >= (std::size_t{1} << 24)) {
      throw DataError("too many road segments");
    }
  }

  const FeatureOptions& options() const { return options_; }
  const StationTable& stations() const { return stations_; }
  const SensorTable& sensors() const { return sensors_; }
  const RoadTable& roads() const { return roads_; }

  double sensor_density(const Location& q) const {
    return aqe::sensor_density(sensors_.index(), q, density_kernel_);
  }

  /// Per pollutant, the kStationSlots nearest stations reporting that
  /// pollutant at `hour`, excluding `exclude`. Padded slots are (NA, 0).
  StationFeatures station_block(const Location& query, HourIndex hour,
                                std::optional<std::size_t> exclude = std::nullopt) const {
    StationFeatures out;
    for (auto& row : out.value) row.fill(kNA);
    for (const auto p : kPollutants) {
      const auto pi = index_of(p);
      const auto nearest = stations_.index().k_nearest_if(query, kStationSlots, [&](EntryId id) {
        if (exclude && id == *exclude) return false;
        return !is_na(stations_.value_at(id, hour)[pi]);
      });
      for (std::size_t i = 0; i < nearest.size(); ++i) {
        out.value[pi][i] = stations_.value_at(nearest[i].id, hour)[pi];
        out.inv_distance[pi][i] = inverse_distance(nearest[i].distance_km);
      }
    }
    return out;
  }

  /// Windows of the last kWindowLength readings (timestamp <= hour, within the
  /// lookback) of the kSensorSlots nearest sensors.
  SensorWindowFeatures sensor_block(const Location& query, HourIndex hour) const {
    SensorWindowFeatures out;
    const UnixSeconds until = start_of(hour);
    const UnixSeconds from = until - options_.sensor_lookback_hours * kSecondsPerHour;
    const auto nearest = sensors_.index().k_nearest(query, kSensorSlots);
    for (std::size_t slot = 0; slot < nearest.size(); ++slot) {
      const auto& readings = sensors_.readings(nearest[slot].id);
      auto end = std::upper_bound(readings.begin(), readings.end(), until,
                                  [](UnixSeconds t, const SensorReading& r) { return t < r.timestamp; });
      auto begin = end;
      while (begin != readings.begin() && static_cast<std::size_t>(end - begin) < kWindowLength &&
             std::prev(begin)->timestamp >= from) {
        --begin;
      }
      const auto n = static_cast<std::size_t>(end - begin);
      if (n == 0) continue;  // padded: zeros, inv-distance 0
      out.inv_distance[slot] = inverse_distance(nearest[slot].distance_km);
      std::array<double, kSensorChannels> last{kNA, kNA, kNA, kNA};
      for (std::size_t t = 0; t < kWindowLength; ++t) {
        // Left edge repeats the oldest reading.
        const std::size_t src = t + n < kWindowLength ? 0 : t + n - kWindowLength;
        const auto& r = *(begin + static_cast<std::ptrdiff_t>(src));
        const std::array<double, kSensorChannels> raw{r.pm25, r.pm10, r.temperature, r.humidity};
        for (std::size_t c = 0; c < kSensorChannels; ++c) {
          if (!is_na(raw[c])) last[c] = raw[c];
          out.at(slot, t, c) = is_na(last[c]) ? 0.0 : last[c];
        }
      }
    }
    return out;
  }

  ContextFeatures context_block(const Location& query, HourIndex hour) const {
    ContextFeatures out;
    const auto& segs = roads_.segments();
    roads_.index().visit_within(
        query, kernel_cutoff_radius(context_kernel_), [&](EntryId id, const Location&, double d) {
          const auto& s = segs[id];
          const double w = std::exp(-d / context_kernel_.d_km);
          out.roads += w * s.length_km;
          if (s.category == RoadCategory::major_roads) out.major_roads += w * s.length_km;
          out.traffic += w * roads_.jam(id, hour) * s.length_km * s.functional_class;
        });
    return out;
  }

  FeatureVector build(Variant variant, const Location& query, HourIndex hour,
                      std::optional<std::size_t> exclude_station = std::nullopt) const;

 private:
  FeatureOptions options_;
  KernelSpec density_kernel_;
  KernelSpec context_kernel_;
  StationTable stations_;
  SensorTable sensors_;
  RoadTable roads_;
};

/// Lays the blocks out for a variant; the station block is required exactly
/// when the variant uses stations, likewise the sensor block.
inline FeatureVector assemble(Variant variant, const std::optional<StationFeatures>& station,
                              const std::optional<SensorWindowFeatures>& sensor,
                              const ContextFeatures& context) {
  if (station.has_value() != uses_stations(variant) || sensor.has_value() != uses_sensors(variant)) {
    throw std::invalid_argument("assemble: blocks do not match variant " + std::string(to_string(variant)));
  }
  const FeatureLayout layout(variant);
  FeatureVector fv;
  fv.variant = variant;
  fv.dense.assign(layout.n2, 0.0f);
  fv.sensor.assign(layout.n1, 0.0f);
  if (station) {
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t i = 0; i < kStationSlots; ++i) {
        fv.dense[layout.station_values + p * kStationSlots + i] = static_cast<float>(station->value[p][i]);
        fv.dense[layout.station_inv_distance + p * kStationSlots + i] =
            static_cast<float>(station->inv_distance[p][i]);
      }
    }
  }
  if (sensor) {
    for (std::size_t i = 0; i < kSensorTensorSize; ++i) fv.sensor[i] = static_cast<float>(sensor->window[i]);
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t i = 0; i < kSensorSlots; ++i) {
        fv.dense[layout.sensor_inv_distance + p * kSensorSlots + i] = static_cast<float>(sensor->inv_distance[i]);
      }
    }
  }
  fv.dense[layout.context + 0] = static_cast<float>(context.roads);
  fv.dense[layout.context + 1] = static_cast<float>(context.major_roads);
  fv.dense[layout.context + 2] = static_cast<float>(context.traffic);
  return fv;
}

inline FeatureVector FeatureContext::build(Variant variant, const Location& query, HourIndex hour,
                                           std::optional<std::size_t> exclude_station) const {
  std::optional<StationFeatures> st;
  std::optional<SensorWindowFeatures> se;
  if (uses_stations(variant)) st = station_block(query, hour, exclude_station);
  if (uses_sensors(variant)) se = sensor_block(query, hour);
  return assemble(variant, st, se, context_block(query, hour));
}

/// Projects a station_and_sensor feature vector onto a narrower variant.
inline FeatureVector project(const FeatureVector& full, Variant target) {
  if (full.variant != Variant::station_and_sensor) {
    if (full.variant == target) return full;
    throw std::invalid_argument("project: source must be station_and_sensor");
  }
  const FeatureLayout from(Variant::station_and_sensor);
  const FeatureLayout to(target);
  FeatureVector out;
  out.variant = target;
  out.dense.assign(to.n2, 0.0f);
  if (uses_sensors(target)) out.sensor = full.sensor;
  const auto copy = [&](std::size_t src, std::size_t dst, std::size_t n) {
    std::copy_n(full.dense.begin() + static_cast<std::ptrdiff_t>(src), n,
                out.dense.begin() + static_cast<std::ptrdiff_t>(dst));
  };
  if (uses_stations(target)) {
    copy(from.station_values, to.station_values, 2 * kStationSlots);
    copy(from.station_inv_distance, to.station_inv_distance, 2 * kStationSlots);
  }
  if (uses_sensors(target)) copy(from.sensor_inv_distance, to.sensor_inv_distance, 2 * kSensorSlots);
  copy(from.context, to.context, kContextFeatures);
  return out;
}

}  // namespace aqe
