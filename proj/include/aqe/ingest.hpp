#pragma once

// CSV ingestion for the four data sources and the station outlier filter.
//
//   stations.csv:  station_id,lat,lon,hour_utc,pm25,pm10
//   sensors.csv:   sensor_id,lat,lon,timestamp_utc,pm25,pm10,temperature,humidity
//   roads.csv:     segment_id,lat,lon,length_km,functional_class,category
//   traffic.csv:   segment_id,hour_utc,jam_factor
//
// "NA" or an empty field marks a missing value. Rows that fail validation are
// dropped and counted; header mismatches and unreadable files are fatal.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/geo.hpp"
#include "aqe/timeutil.hpp"

namespace aqe {

struct StationRecord {
  std::string station_id;
  Location location;
  HourIndex hour = 0;
  double pm25 = kNA;
  double pm10 = kNA;

  Concentrations values() const { return {pm25, pm10}; }
};

struct SensorRecord {
  std::string sensor_id;
  Location location;
  UnixSeconds timestamp = 0;
  double pm25 = kNA;
  double pm10 = kNA;
  double temperature = kNA;
  double humidity = kNA;
};

enum class RoadCategory { roads, major_roads };

struct RoadSegment {
  std::string segment_id;
  Location midpoint;
  double length_km = 0;
  int functional_class = 1;
  RoadCategory category = RoadCategory::roads;
};

struct TrafficObservation {
  std::string segment_id;
  HourIndex hour = 0;
  double jam_factor = 0;
};

struct IngestReport {
  std::string source;
  std::size_t total_rows = 0;
  std::size_t accepted = 0;
  std::size_t dropped = 0;
  std::size_t na_cells = 0;
  std::vector<std::string> issues;  // first few drop reasons

  void drop(std::size_t line, std::string_view why) {
    ++dropped;
    if (issues.size() < 20) issues.push_back("line " + std::to_string(line) + ": " + std::string(why));
  }
};

template <class Record>
struct Parsed {
  std::vector<Record> records;
  IngestReport report;
};

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool is_na_token(std::string_view s) { return s.empty() || s == "NA"; }

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, int& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
}

/// Optional value: NA token gives kNA; otherwise must parse.
inline bool parse_optional(std::string_view s, double& out, std::size_t& na_cells) {
  if (is_na_token(s)) {
    out = kNA;
    ++na_cells;
    return true;
  }
  return parse_double(s, out);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Drives a row parser over a CSV file with the expected header.
/// row_fn(fields, record, why, na_cells) -> bool accepted.
template <class Record, class RowFn>
Parsed<Record> parse_file(const std::string& path, std::string_view expected_header,
                          std::size_t field_count, RowFn&& row_fn) {
  Parsed<Record> result;
  result.report.source = path;
  const std::string text = read_file(path);
  std::string_view rest = text;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.remove_prefix(3);
      if (line != expected_header) {
        throw DataError(path + ": malformed header, expected '" + std::string(expected_header) + "'");
      }
      header_seen = true;
      continue;
    }
    ++result.report.total_rows;
    const auto fields = split(line);
    if (fields.size() != field_count) {
      result.report.drop(line_no, "expected " + std::to_string(field_count) + " fields");
      continue;
    }
    Record rec;
    std::string why;
    std::size_t na = 0;
    if (row_fn(fields, rec, why, na)) {
      ++result.report.accepted;
      result.report.na_cells += na;
      result.records.push_back(std::move(rec));
    } else {
      result.report.drop(line_no, why);
    }
  }
  if (!header_seen) throw DataError(path + ": missing header");
  return result;
}

inline bool parse_location(std::string_view lat, std::string_view lon, Location& out,
                           std::string& why) {
  if (!parse_double(lat, out.lat) || !parse_double(lon, out.lon) || !is_valid(out)) {
    why = "invalid location";
    return false;
  }
  return true;
}

inline bool valid_concentration(double v) { return is_na(v) || v >= 0.0; }

}  // namespace csv

inline Parsed<StationRecord> parse_stations(const std::string& path) {
  return csv::parse_file<StationRecord>(
      path, "station_id,lat,lon,hour_utc,pm25,pm10", 6,
      [](const auto& f, StationRecord& r, std::string& why, std::size_t& na) {
        if (f[0].empty()) return why = "empty station_id", false;
        r.station_id = std::string(f[0]);
        if (!csv::parse_location(f[1], f[2], r.location, why)) return false;
        const auto ts = parse_timestamp(f[3]);
        if (!ts) return why = "bad timestamp", false;
        r.hour = hour_of(*ts);
        if (!csv::parse_optional(f[4], r.pm25, na) || !csv::parse_optional(f[5], r.pm10, na)) {
          return why = "unparseable concentration", false;
        }
        if (!csv::valid_concentration(r.pm25) || !csv::valid_concentration(r.pm10)) {
          return why = "negative concentration", false;
        }
        if (is_na(r.pm25) && is_na(r.pm10)) return why = "no pollutant value", false;
        return true;
      });
}

inline Parsed<SensorRecord> parse_sensors(const std::string& path) {
  return csv::parse_file<SensorRecord>(
      path, "sensor_id,lat,lon,timestamp_utc,pm25,pm10,temperature,humidity", 8,
      [](const auto& f, SensorRecord& r, std::string& why, std::size_t& na) {
        if (f[0].empty()) return why = "empty sensor_id", false;
        r.sensor_id = std::string(f[0]);
        if (!csv::parse_location(f[1], f[2], r.location, why)) return false;
        const auto ts = parse_timestamp(f[3]);
        if (!ts) return why = "bad timestamp", false;
        r.timestamp = *ts;
        if (!csv::parse_optional(f[4], r.pm25, na) || !csv::parse_optional(f[5], r.pm10, na) ||
            !csv::parse_optional(f[6], r.temperature, na) ||
            !csv::parse_optional(f[7], r.humidity, na)) {
          return why = "unparseable value", false;
        }
        if (!csv::valid_concentration(r.pm25) || !csv::valid_concentration(r.pm10)) {
          return why = "negative concentration", false;
        }
        if (!is_na(r.humidity) && (r.humidity < 0.0 || r.humidity > 100.0)) {
          return why = "humidity out of [0,100]", false;
        }
        return true;
      });
}

inline Parsed<RoadSegment> parse_roads(const std::string& path) {
  return csv::parse_file<RoadSegment>(
      path, "segment_id,lat,lon,length_km,functional_class,category", 6,
      [](const auto& f, RoadSegment& r, std::string& why, std::size_t&) {
        if (f[0].empty()) return why = "empty segment_id", false;
        r.segment_id = std::string(f[0]);
        if (!csv::parse_location(f[1], f[2], r.midpoint, why)) return false;
        if (!csv::parse_double(f[3], r.length_km) || !(r.length_km > 0.0)) {
          return why = "length must be > 0", false;
        }
        if (!csv::parse_int(f[4], r.functional_class) || r.functional_class < 1 ||
            r.functional_class > 5) {
          return why = "functional_class must be 1..5", false;
        }
        if (f[5] == "roads") {
          r.category = RoadCategory::roads;
        } else if (f[5] == "major_roads") {
          r.category = RoadCategory::major_roads;
        } else {
          return why = "unknown category", false;
        }
        return true;
      });
}

inline Parsed<TrafficObservation> parse_traffic(const std::string& path) {
  return csv::parse_file<TrafficObservation>(
      path, "segment_id,hour_utc,jam_factor", 3,
      [](const auto& f, TrafficObservation& r, std::string& why, std::size_t&) {
        if (f[0].empty()) return why = "empty segment_id", false;
        r.segment_id = std::string(f[0]);
        const auto ts = parse_timestamp(f[1]);
        if (!ts) return why = "bad timestamp", false;
        r.hour = hour_of(*ts);
        if (csv::is_na_token(f[2])) return why = "missing jam factor", false;
        if (!csv::parse_double(f[2], r.jam_factor) || r.jam_factor < 0.0 || r.jam_factor > 10.0) {
          return why = "jam_factor out of [0,10]", false;
        }
        return true;
      });
}

inline void sort_by_station_hour(std::vector<StationRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.station_id < b.station_id || (a.station_id == b.station_id && a.hour < b.hour);
  });
}

struct OutlierRule {
  double absolute_cap = 1000.0;
  double relative_factor = 5.0;
  int trailing_hours = 24;
  std::size_t min_trailing = 6;
};

struct Rejection {
  std::string station_id;
  HourIndex hour = 0;
  Pollutant pollutant = Pollutant::pm25;
  double value = 0;
  std::string reason;
};

struct OutlierResult {
  std::vector<StationRecord> kept;
  std::vector<Rejection> rejected;
};

/// Absolute cap plus a trailing-median rule per station and pollutant. The
/// median runs over accepted values from the previous `trailing_hours` hours.
/// Rejected values become NA; records left with no value are removed.
inline OutlierResult filter_station_outliers(std::vector<StationRecord> records,
                                             const OutlierRule& rule = {}) {
  const bool sorted = std::is_sorted(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.station_id < b.station_id || (a.station_id == b.station_id && a.hour < b.hour);
  });
  if (!sorted) throw std::invalid_argument("filter_station_outliers: records not sorted by (station_id, hour)");

  OutlierResult out;
  out.kept.reserve(records.size());
  struct Past {
    HourIndex hour;
    double value;
  };
  std::array<std::vector<Past>, 2> trailing;
  std::vector<double> scratch;
  std::string current;
  bool first = true;

  for (auto& rec : records) {
    if (first || current != rec.station_id) {
      trailing[0].clear();
      trailing[1].clear();
      current = rec.station_id;
      first = false;
    }
    for (const auto p : kPollutants) {
      double& v = index_of(p) == 0 ? rec.pm25 : rec.pm10;
      auto& past = trailing[index_of(p)];
      std::erase_if(past, [&](const Past& x) { return x.hour < rec.hour - rule.trailing_hours; });
      if (is_na(v)) continue;
      std::string reason;
      if (v > rule.absolute_cap) {
        reason = "above absolute cap";
      } else if (past.size() >= rule.min_trailing) {
        scratch.clear();
        for (const auto& x : past) scratch.push_back(x.value);
        std::sort(scratch.begin(), scratch.end());
        const std::size_t n = scratch.size();
        const double median = n % 2 ? scratch[n / 2] : 0.5 * (scratch[n / 2 - 1] + scratch[n / 2]);
        if (v > rule.relative_factor * median) reason = "above trailing-median bound";
      }
      if (reason.empty()) {
        past.push_back({rec.hour, v});
      } else {
        out.rejected.push_back({rec.station_id, rec.hour, p, v, std::move(reason)});
        v = kNA;
      }
    }
    if (!is_na(rec.pm25) || !is_na(rec.pm10)) out.kept.push_back(std::move(rec));
  }
  return out;
}

/// All four inputs after parsing and (for stations) outlier filtering.
struct Sources {
  std::vector<StationRecord> stations;
  std::vector<SensorRecord> sensors;
  std::vector<RoadSegment> roads;
  std::vector<TrafficObservation> traffic;
};

struct SourcePaths {
  std::string stations, sensors, roads, traffic;
};

struct LoadedSources {
  Sources sources;
  std::vector<IngestReport> reports;
  std::vector<Rejection> rejections;
};

inline LoadedSources load_sources(const SourcePaths& paths) {
  LoadedSources out;
  auto st = parse_stations(paths.stations);
  auto se = parse_sensors(paths.sensors);
  auto ro = parse_roads(paths.roads);
  auto tr = parse_traffic(paths.traffic);
  out.reports = {st.report, se.report, ro.report, tr.report};
  sort_by_station_hour(st.records);
  auto filtered = filter_station_outliers(std::move(st.records));
  out.sources.stations = std::move(filtered.kept);
  out.rejections = std::move(filtered.rejected);
  out.sources.sensors = std::move(se.records);
  out.sources.roads = std::move(ro.records);
  out.sources.traffic = std::move(tr.records);
  return out;
}

}  // namespace aqe
