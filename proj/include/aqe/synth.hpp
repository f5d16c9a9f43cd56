#pragma once

// Synthetic world with a closed-form pollution field.
//
//   pm25(l, t) = (bg25 + D(t) + G(l)) * exp(E(l, t)) + P(l, t)
//   pm10(l, t) = pm25(l, t) + (bg10 - bg25 + 1.5 D(t) + G(l)) * exp(C(l, t)) + 0.5 P(l, t)
//
// D is a diurnal term with minimum 0, G a linear regional gradient that is 0
// at the south-west corner, E and C sums of travelling cosine waves, and P
// the traffic plumes: Gaussians of width w around major-road midpoints with
// amplitude kappa * jam * length * class, truncated at 6 w.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/dataset.hpp"
#include "aqe/geo.hpp"
#include "aqe/ingest.hpp"
#include "aqe/timeutil.hpp"

namespace aqe {

struct WorldSpec {
  BoundingBox box{35.0, 37.0, -121.0, -119.0};
  std::size_t stations = 400;
  std::size_t sensors = 1200;
  std::size_t cities = 40;
  std::size_t major_roads_per_city = 40;
  std::size_t minor_roads_per_city = 60;
  std::size_t rural_major_roads = 150;
  std::size_t rural_minor_roads = 150;
  std::size_t hours = 720;
  UnixSeconds start = 1704067200;  // 2024-01-01T00:00Z
  std::uint64_t seed = 1;
  double sensor_noise = 0.2;      // std of the log of the multiplicative noise
  double humidity_bias = 0.01;    // relative bias per %RH above 60
  double background_pm25 = 8.0;
  double background_pm10 = 20.0;
  int sensor_interval_min = 10;
  double city_weight_ratio = 300.0;  // largest / smallest city sensor share
  std::size_t local_waves = 8;        // short-wavelength modes
  double local_wave_amplitude = 0.15;
  double local_wave_min_km = 1.5;
  double local_wave_max_km = 5.0;
  double city_station_fraction = 0.5;
  double roadside_station_fraction = 0.2;
  double rural_sensor_fraction = 0.1;
  double pm10_missing_fraction = 0.3;  // stations without a pm10 monitor
  double station_gap_fraction = 0.02;  // missing station-hours
  double sensor_na_fraction = 0.01;
  // Minimum spacing. Closer pairs give inverse-distance features far outside
  // the range seen in training.
  double station_clearance_km = 0.5;
  double sensor_clearance_km = 0.2;

  void validate() const {
    if (!box.well_ordered()) throw ConfigError("world bounding box is not well ordered");
    if (!(sensor_noise >= 0) || !(humidity_bias >= 0)) throw ConfigError("noise and bias must be >= 0");
    if (hours == 0) throw ConfigError("world needs at least one hour");
    if (sensor_interval_min <= 0 || 60 % sensor_interval_min != 0) {
      throw ConfigError("sensor interval must divide 60 minutes");
    }
    if (stations > 0 && cities == 0 && city_station_fraction > 0) throw ConfigError("city stations need cities");
  }
};

struct Wave {
  double amplitude, kx, ky, omega, phase;  // k in rad/km, omega in rad/hour
};

struct PlumeSource {
  Location midpoint;
  double length_km;
  int functional_class;
  double base_jam;
};

struct TruthParams {
  Location origin;  // south-west corner
  double bg25 = 8, bg10 = 20;
  double diurnal = 4;          // peak of D(t)
  double diurnal_peak_hour = 19;
  double grad_north = 0, grad_east = 0;  // ug/m3 per km
  std::vector<Wave> fine, coarse;
  double kappa = 1.0;
  double plume_width_km = 0.15;
  std::uint64_t jam_seed = 0;
  std::vector<PlumeSource> plumes;
};

inline double jam_factor(const TruthParams& p, std::size_t source, HourIndex hour) {
  const auto& s = p.plumes.at(source);
  const double hod = static_cast<double>(((hour % 24) + 24) % 24);
  const auto bump = [&](double c, double w) {
    double d = std::abs(hod - c);
    d = std::min(d, 24.0 - d);
    return std::exp(-d * d / (2 * w * w));
  };
  const double rush = bump(8.0, 1.5) + bump(17.5, 2.0);
  const std::uint64_t h = splitmix64(p.jam_seed ^ splitmix64(source * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(hour)));
  const double noise = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  const double raw = std::clamp(s.base_jam * (1.0 + 1.2 * rush) + 0.5 * noise, 0.0, 10.0);
  return std::round(raw * 1000.0) / 1000.0;
}

/// Evaluates the field; holds a spatial index over the plume sources.
class TruthField {
 public:
  explicit TruthField(TruthParams p) : p_(std::move(p)), index_(make_index(p_)) {}

  const TruthParams& params() const { return p_; }

  /// (pm25, pm10) at `loc` and time `t`.
  Concentrations at(const Location& loc, UnixSeconds t) const {
    const double hours = static_cast<double>(t) / 3600.0;
    const double y = (loc.lat - p_.origin.lat) * kKmPerDegree;
    const double x = (loc.lon - p_.origin.lon) * std::cos(0.5 * (loc.lat + p_.origin.lat) * std::numbers::pi / 180.0) *
                     kKmPerDegree;
    const double D = p_.diurnal * 0.5 *
                     (1.0 + std::cos(2.0 * std::numbers::pi * (std::fmod(hours, 24.0) - p_.diurnal_peak_hour) / 24.0));
    const double G = std::max(0.0, p_.grad_north * y + p_.grad_east * x);
    const auto waves = [&](const std::vector<Wave>& ws) {
      double e = 0;
      for (const auto& w : ws) e += w.amplitude * std::cos(w.kx * x + w.ky * y - w.omega * hours + w.phase);
      return e;
    };
    const double P = plume(loc, hour_of(t));
    const double pm25 = (p_.bg25 + D + G) * std::exp(waves(p_.fine)) + P;
    const double pm10 = pm25 + (p_.bg10 - p_.bg25 + 1.5 * D + G) * std::exp(waves(p_.coarse)) + 0.5 * P;
    return {pm25, pm10};
  }

  double plume(const Location& loc, HourIndex hour) const {
    double P = 0;
    const double w = p_.plume_width_km;
    index_.visit_within(loc, 6.0 * w, [&](EntryId id, const Location&, double d) {
      const auto& s = p_.plumes[id];
      P += p_.kappa * jam_factor(p_, id, hour) * s.length_km * s.functional_class * std::exp(-d * d / (2 * w * w));
    });
    return P;
  }

 private:
  static SpatialIndex make_index(const TruthParams& p) {
    std::vector<SpatialIndex::Entry> e;
    for (std::size_t i = 0; i < p.plumes.size(); ++i) e.push_back({static_cast<EntryId>(i), p.plumes[i].midpoint});
    return SpatialIndex(std::move(e), 1.0);
  }

  TruthParams p_;
  SpatialIndex index_;
};

inline Concentrations truth_at(const TruthField& field, const Location& loc, HourIndex hour) {
  return field.at(loc, start_of(hour));
}

// ---------------------------------------------------------------------------
// Parameter file

inline void write_text_file_exact(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed: " + path);
}

inline void save_truth_params(const TruthParams& p, const std::string& path) {
  std::string s = "# synthetic truth field\n";
  const auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("origin", kv::fmt(p.origin.lat) + " " + kv::fmt(p.origin.lon));
  put("bg25", kv::fmt(p.bg25));
  put("bg10", kv::fmt(p.bg10));
  put("diurnal", kv::fmt(p.diurnal));
  put("diurnal_peak_hour", kv::fmt(p.diurnal_peak_hour));
  put("grad_north", kv::fmt(p.grad_north));
  put("grad_east", kv::fmt(p.grad_east));
  put("kappa", kv::fmt(p.kappa));
  put("plume_width_km", kv::fmt(p.plume_width_km));
  put("jam_seed", std::to_string(p.jam_seed));
  const auto wave = [](const Wave& w) {
    return kv::fmt(w.amplitude) + " " + kv::fmt(w.kx) + " " + kv::fmt(w.ky) + " " + kv::fmt(w.omega) + " " +
           kv::fmt(w.phase);
  };
  for (const auto& w : p.fine) put("fine_wave", wave(w));
  for (const auto& w : p.coarse) put("coarse_wave", wave(w));
  for (const auto& q : p.plumes) {
    put("plume", kv::fmt(q.midpoint.lat) + " " + kv::fmt(q.midpoint.lon) + " " + kv::fmt(q.length_km) + " " +
                     std::to_string(q.functional_class) + " " + kv::fmt(q.base_jam));
  }
  write_text_file_exact(path, s);
}

inline TruthParams load_truth_params(const std::string& path) {
  TruthParams p;
  for (const auto& [k, v] : kv::read_pairs(path)) {
    std::istringstream ss(v);
    const auto num = [&] {
      std::string tok;
      if (!(ss >> tok)) throw DataError(path + ": missing value for " + k);
      return kv::to_double(tok);
    };
    if (k == "origin") {
      p.origin.lat = num();
      p.origin.lon = num();
    } else if (k == "bg25") p.bg25 = num();
    else if (k == "bg10") p.bg10 = num();
    else if (k == "diurnal") p.diurnal = num();
    else if (k == "diurnal_peak_hour") p.diurnal_peak_hour = num();
    else if (k == "grad_north") p.grad_north = num();
    else if (k == "grad_east") p.grad_east = num();
    else if (k == "kappa") p.kappa = num();
    else if (k == "plume_width_km") p.plume_width_km = num();
    else if (k == "jam_seed") p.jam_seed = std::stoull(v);
    else if (k == "fine_wave" || k == "coarse_wave") {
      Wave w{};
      w.amplitude = num();
      w.kx = num();
      w.ky = num();
      w.omega = num();
      w.phase = num();
      (k == "fine_wave" ? p.fine : p.coarse).push_back(w);
    } else if (k == "plume") {
      PlumeSource q{};
      q.midpoint.lat = num();
      q.midpoint.lon = num();
      q.length_km = num();
      q.functional_class = static_cast<int>(num());
      q.base_jam = num();
      p.plumes.push_back(q);
    } else {
      throw DataError(path + ": unknown key " + k);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Generation

struct City {
  Location center;
  double spread_km;
  double weight;
};

struct GeneratedWorld {
  TruthParams truth;
  std::vector<City> cities;
  SourcePaths paths;
  std::size_t station_rows = 0, sensor_rows = 0, road_rows = 0, traffic_rows = 0;
};

namespace detail {

inline Location offset_km(const Location& c, double north_km, double east_km) {
  const double lat = c.lat + north_km / kKmPerDegree;
  const double lon = c.lon + east_km / (kKmPerDegree * std::cos(c.lat * std::numbers::pi / 180.0));
  return {lat, lon};
}

inline Location clamp_to(const BoundingBox& b, Location l) {
  l.lat = std::clamp(l.lat, b.lat_min, b.lat_max);
  l.lon = std::clamp(l.lon, b.lon_min, b.lon_max);
  return l;
}

inline Location uniform_in(const BoundingBox& b, Rng& rng) {
  return {uniform(rng, b.lat_min, b.lat_max), uniform(rng, b.lon_min, b.lon_max)};
}

inline Location gaussian_around(const BoundingBox& b, const Location& c, double sigma_km, Rng& rng) {
  const double n = standard_normal(rng) * sigma_km;
  const double e = standard_normal(rng) * sigma_km;
  return clamp_to(b, offset_km(c, n, e));
}

inline std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string exact(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string sig6(double v) {
  if (is_na(v)) return "NA";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::vector<Wave> random_waves(Rng& rng, std::size_t n, double amplitude, double min_wl, double max_wl) {
  std::vector<Wave> ws;
  for (std::size_t i = 0; i < n; ++i) {
    const double wl = uniform(rng, min_wl, max_wl);
    const double dir = uniform(rng, 0, 2 * std::numbers::pi);
    const double k = 2 * std::numbers::pi / wl;
    const double period = uniform(rng, 12.0, 72.0);
    ws.push_back({amplitude, k * std::cos(dir), k * std::sin(dir), 2 * std::numbers::pi / period,
                  uniform(rng, 0, 2 * std::numbers::pi)});
  }
  return ws;
}

}  // namespace detail

/// Writes stations.csv, sensors.csv, roads.csv, traffic.csv and
/// truth_params.txt into `dir`. Output depends only on the spec.
inline GeneratedWorld generate(const WorldSpec& spec, const std::string& dir) {
  spec.validate();
  std::filesystem::create_directories(dir);
  Rng rng(spec.seed);
  GeneratedWorld gw;
  const auto& box = spec.box;

  // Cities sit away from the edges; sizes vary over an order of magnitude.
  const BoundingBox inner{box.lat_min + 0.1 * (box.lat_max - box.lat_min), box.lat_max - 0.1 * (box.lat_max - box.lat_min),
                          box.lon_min + 0.1 * (box.lon_max - box.lon_min), box.lon_max - 0.1 * (box.lon_max - box.lon_min)};
  for (std::size_t c = 0; c < spec.cities; ++c) {
    City city;
    city.center = detail::uniform_in(inner, rng);
    city.spread_km = uniform(rng, 2.0, 5.0);
    city.weight = std::exp(uniform(rng, 0.0, std::log(spec.city_weight_ratio)));
    gw.cities.push_back(city);
  }

  TruthParams& tp = gw.truth;
  tp.origin = {box.lat_min, box.lon_min};
  tp.bg25 = spec.background_pm25;
  tp.bg10 = spec.background_pm10;
  tp.diurnal = 0.5 * spec.background_pm25;
  tp.grad_north = uniform(rng, 0.0, 0.03);
  tp.grad_east = uniform(rng, 0.0, 0.03);
  tp.fine = detail::random_waves(rng, 10, 0.18, 4.0, 30.0);
  for (const auto& w : detail::random_waves(rng, spec.local_waves, spec.local_wave_amplitude, spec.local_wave_min_km, spec.local_wave_max_km)) {
    tp.fine.push_back(w);
  }
  tp.coarse = detail::random_waves(rng, 6, 0.2, 6.0, 30.0);
  tp.jam_seed = rng();

  // Roads
  struct Road {
    Location mid;
    double len;
    int cls;
    bool major;
  };
  std::vector<Road> roads;
  for (const auto& city : gw.cities) {
    for (std::size_t i = 0; i < spec.major_roads_per_city; ++i) {
      roads.push_back({detail::gaussian_around(box, city.center, 1.5 * city.spread_km, rng), 0.5,
                       3 + static_cast<int>(uniform_index(rng, 3)), true});
    }
    for (std::size_t i = 0; i < spec.minor_roads_per_city; ++i) {
      roads.push_back({detail::gaussian_around(box, city.center, 1.5 * city.spread_km, rng), uniform(rng, 0.2, 0.5),
                       1 + static_cast<int>(uniform_index(rng, 2)), false});
    }
  }
  for (std::size_t i = 0; i < spec.rural_major_roads; ++i) {
    roads.push_back({detail::uniform_in(box, rng), 0.5, 3 + static_cast<int>(uniform_index(rng, 3)), true});
  }
  for (std::size_t i = 0; i < spec.rural_minor_roads; ++i) {
    roads.push_back({detail::uniform_in(box, rng), uniform(rng, 0.2, 0.5), 1 + static_cast<int>(uniform_index(rng, 2)), false});
  }
  std::vector<std::size_t> majors;
  for (std::size_t i = 0; i < roads.size(); ++i) {
    if (!roads[i].major) continue;
    majors.push_back(i);
    tp.plumes.push_back({roads[i].mid, roads[i].len, roads[i].cls, uniform(rng, 1.0, 4.0)});
  }
  const TruthField field(tp);

  // Stations
  struct Station {
    std::string id;
    Location loc;
    bool has_pm10;
  };
  std::vector<Station> stations;
  const std::size_t city_stations =
      spec.cities ? static_cast<std::size_t>(std::llround(spec.city_station_fraction * static_cast<double>(spec.stations))) : 0;
  const auto clear_of_stations = [&](const Location& l, double km) {
    for (const auto& st : stations) {
      if (distance_km(st.loc, l) < km) return false;
    }
    return true;
  };
  for (std::size_t s = 0; s < spec.stations; ++s) {
    Location loc;
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (uniform01(rng) < spec.roadside_station_fraction && !majors.empty()) {
        // Roadside: near a major road in the station's own area type.
        std::size_t pick = 0;
        if (s < city_stations) {
          const auto& city = gw.cities[s % spec.cities];
          double best = 1e300;
          const Location anchor = detail::gaussian_around(box, city.center, city.spread_km, rng);
          for (auto m : majors) {
            const double d = distance_km(anchor, roads[m].mid);
            if (d < best) best = d, pick = m;
          }
        } else {
          pick = majors[uniform_index(rng, majors.size())];
        }
        const double r = uniform(rng, 0.03, 0.2), a = uniform(rng, 0, 2 * std::numbers::pi);
        loc = detail::clamp_to(box, detail::offset_km(roads[pick].mid, r * std::cos(a), r * std::sin(a)));
      } else if (s < city_stations) {
        const auto& city = gw.cities[s % spec.cities];
        loc = detail::gaussian_around(box, city.center, city.spread_km, rng);
      } else {
        loc = detail::uniform_in(box, rng);
      }
      if (clear_of_stations(loc, spec.station_clearance_km)) break;
    }
    char id[16];
    std::snprintf(id, sizeof id, "ST%04zu", s);
    stations.push_back({id, loc, uniform01(rng) >= spec.pm10_missing_fraction});
  }

  // Sensors
  struct Sensor {
    std::string id;
    Location loc;
    double rh_offset, t_offset;
    int minute_offset;
    HourIndex gap_from, gap_to;  // offline interval (empty when from > to)
  };
  std::vector<Sensor> sensors;
  double wsum = 0;
  for (const auto& c : gw.cities) wsum += c.weight;
  for (std::size_t s = 0; s < spec.sensors; ++s) {
    Sensor sn;
    if (gw.cities.empty() || uniform01(rng) < spec.rural_sensor_fraction) {
      sn.loc = detail::uniform_in(box, rng);
    } else {
      double u = uniform01(rng) * wsum;
      std::size_t c = 0;
      while (c + 1 < gw.cities.size() && u >= gw.cities[c].weight) u -= gw.cities[c++].weight;
      sn.loc = detail::gaussian_around(box, gw.cities[c].center, gw.cities[c].spread_km, rng);
    }
    for (int attempt = 0; attempt < 100 && !clear_of_stations(sn.loc, spec.sensor_clearance_km); ++attempt) {
      const double r = uniform(rng, spec.sensor_clearance_km, 3 * spec.sensor_clearance_km);
      const double a = uniform(rng, 0, 2 * std::numbers::pi);
      sn.loc = detail::clamp_to(box, detail::offset_km(sn.loc, r * std::cos(a), r * std::sin(a)));
    }
    char id[16];
    std::snprintf(id, sizeof id, "SN%04zu", s);
    sn.id = id;
    sn.rh_offset = uniform(rng, -10.0, 10.0);
    sn.t_offset = uniform(rng, -3.0, 3.0);
    sn.minute_offset = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.sensor_interval_min)));
    sn.gap_from = 1;
    sn.gap_to = 0;
    if (uniform01(rng) < 0.05 && spec.hours > 48) {
      sn.gap_from = static_cast<HourIndex>(uniform_index(rng, spec.hours - 48));
      sn.gap_to = sn.gap_from + 47;
    }
    sensors.push_back(sn);
  }

  const HourIndex h0 = hour_of(spec.start);
  const auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  gw.paths = {path("stations.csv"), path("sensors.csv"), path("roads.csv"), path("traffic.csv")};

  {
    std::string out = "station_id,lat,lon,hour_utc,pm25,pm10\n";
    for (const auto& st : stations) {
      const std::string prefix = st.id + "," + detail::fixed(st.loc.lat, 7) + "," + detail::fixed(st.loc.lon, 7) + ",";
      for (std::size_t h = 0; h < spec.hours; ++h) {
        if (uniform01(rng) < spec.station_gap_fraction) continue;
        const HourIndex hour = h0 + static_cast<HourIndex>(h);
        const Location at{kv::to_double(detail::fixed(st.loc.lat, 7)), kv::to_double(detail::fixed(st.loc.lon, 7))};
        const auto v = truth_at(field, at, hour);
        out += prefix + format_hour(hour) + "," + detail::exact(v[0]) + "," + (st.has_pm10 ? detail::exact(v[1]) : "NA") + "\n";
        ++gw.station_rows;
      }
    }
    write_text_file_exact(gw.paths.stations, out);
  }

  {
    std::ofstream out(gw.paths.sensors, std::ios::binary);
    if (!out) throw DataError("cannot write " + gw.paths.sensors);
    out << "sensor_id,lat,lon,timestamp_utc,pm25,pm10,temperature,humidity\n";
    const std::size_t per_hour = static_cast<std::size_t>(60 / spec.sensor_interval_min);
    std::string buf;
    for (const auto& sn : sensors) {
      const Location at{kv::to_double(detail::fixed(sn.loc.lat, 7)), kv::to_double(detail::fixed(sn.loc.lon, 7))};
      const std::string prefix = sn.id + "," + detail::fixed(sn.loc.lat, 7) + "," + detail::fixed(sn.loc.lon, 7) + ",";
      for (std::size_t h = 0; h < spec.hours; ++h) {
        const HourIndex hour = h0 + static_cast<HourIndex>(h);
        if (static_cast<HourIndex>(h) >= sn.gap_from && static_cast<HourIndex>(h) <= sn.gap_to) continue;
        for (std::size_t k = 0; k < per_hour; ++k) {
          const UnixSeconds t = start_of(hour) + static_cast<UnixSeconds>(k * spec.sensor_interval_min + sn.minute_offset) * 60;
          const double hod = std::fmod(static_cast<double>(t) / 3600.0, 24.0);
          const double rh = std::clamp(65.0 + sn.rh_offset + 20.0 * std::cos(2 * std::numbers::pi * (hod - 5.0) / 24.0) +
                                           3.0 * standard_normal(rng),
                                       5.0, 100.0);
          const double temp = 14.0 + sn.t_offset + 7.0 * std::cos(2 * std::numbers::pi * (hod - 15.0) / 24.0) +
                              0.5 * standard_normal(rng);
          const auto truth = field.at(at, t);
          const double bias = 1.0 + spec.humidity_bias * std::max(0.0, rh - 60.0);
          double pm25 = truth[0] * std::exp(spec.sensor_noise * standard_normal(rng)) * bias;
          double pm10 = truth[1] * std::exp(spec.sensor_noise * standard_normal(rng)) * bias;
          pm10 = std::max(pm10, pm25);
          double hum = rh;
          if (uniform01(rng) < spec.sensor_na_fraction) pm25 = pm10 = kNA;
          if (uniform01(rng) < spec.sensor_na_fraction) hum = kNA;
          buf += prefix + format_timestamp(t) + "," + detail::sig6(pm25) + "," + detail::sig6(pm10) + "," +
                 detail::sig6(temp) + "," + detail::sig6(hum) + "\n";
          ++gw.sensor_rows;
        }
      }
      out << buf;
      buf.clear();
    }
    if (!out) throw DataError("write failed: " + gw.paths.sensors);
  }

  {
    std::string out = "segment_id,lat,lon,length_km,functional_class,category\n";
    std::string traffic = "segment_id,hour_utc,jam_factor\n";
    std::size_t plume = 0;
    for (std::size_t i = 0; i < roads.size(); ++i) {
      char id[24];
      std::snprintf(id, sizeof id, "RD%05zu", i);
      const auto& r = roads[i];
      out += std::string(id) + "," + detail::exact(r.mid.lat) + "," + detail::exact(r.mid.lon) + "," + detail::exact(r.len) +
             "," + std::to_string(r.cls) + "," + (r.major ? "major_roads" : "roads") + "\n";
      ++gw.road_rows;
      if (!r.major) continue;
      for (std::size_t h = 0; h < spec.hours; ++h) {
        const HourIndex hour = h0 + static_cast<HourIndex>(h);
        traffic += std::string(id) + "," + format_hour(hour) + "," + detail::fixed(jam_factor(tp, plume, hour), 3) + "\n";
        ++gw.traffic_rows;
      }
      ++plume;
    }
    write_text_file_exact(gw.paths.roads, out);
    write_text_file_exact(gw.paths.traffic, traffic);
  }
  save_truth_params(tp, path("truth_params.txt"));
  return gw;
}

}  // namespace aqe
