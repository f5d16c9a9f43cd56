#pragma once

// Concentration rasters over a bounding box at one hour.
//
// Cells are square in degrees with side cell_m / 111320 m, so they are
// cell_m tall and cell_m * cos(lat) wide. Rows run north to south.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "aqe/common.hpp"
#include "aqe/features.hpp"
#include "aqe/geo.hpp"
#include "aqe/neuralnet.hpp"

namespace aqe {

inline constexpr double kMinCellMeters = 10.0;
inline constexpr double kMaxCellMeters = 5000.0;
inline constexpr std::size_t kMaxCells = 4'000'000;

struct GridSpec {
  BoundingBox box;
  double cell_m = 50.0;
  HourIndex hour = 0;

  double cell_deg() const { return cell_m / (kKmPerDegree * 1000.0); }
  std::size_t ncols() const { return static_cast<std::size_t>(std::ceil((box.lon_max - box.lon_min) / cell_deg() - 1e-9)); }
  std::size_t nrows() const { return static_cast<std::size_t>(std::ceil((box.lat_max - box.lat_min) / cell_deg() - 1e-9)); }

  void validate() const {
    if (!box.well_ordered()) throw ConfigError("map bounding box is not well ordered");
    if (!(cell_m >= kMinCellMeters && cell_m <= kMaxCellMeters)) {
      throw ConfigError("cell size must be in [10, 5000] m");
    }
    const double cells = std::ceil((box.lon_max - box.lon_min) / cell_deg()) * std::ceil((box.lat_max - box.lat_min) / cell_deg());
    if (cells > static_cast<double>(kMaxCells)) {
      throw ConfigError("grid has " + std::to_string(static_cast<long long>(cells)) + " cells, limit is 4000000");
    }
  }

  /// Center of the cell in row r (0 = north) and column c.
  Location center(std::size_t r, std::size_t c) const {
    const double d = cell_deg();
    return {box.lat_min + (static_cast<double>(nrows() - r) - 0.5) * d, box.lon_min + (static_cast<double>(c) + 0.5) * d};
  }
};

struct Raster {
  std::size_t nrows = 0, ncols = 0;
  double xll = 0, yll = 0;  // lower-left corner (lon, lat)
  double cell_deg = 0;
  std::vector<double> values;  // row-major, north row first

  double at(std::size_t r, std::size_t c) const { return values[r * ncols + c]; }
  bool same_grid(const Raster& o) const {
    return nrows == o.nrows && ncols == o.ncols && xll == o.xll && yll == o.yll && cell_deg == o.cell_deg;
  }
};

/// Throws DataError when the sources hold nothing for `hour` that the
/// variant would read.
inline void require_hour(const FeatureContext& ctx, Variant v, HourIndex hour) {
  const bool stations = ctx.stations().any_at(hour);
  const UnixSeconds until = start_of(hour);
  const bool sensors = ctx.sensors().any_within(until - ctx.options().sensor_lookback_hours * kSecondsPerHour, until);
  if ((uses_stations(v) && !stations) || (uses_sensors(v) && !sensors) || (!stations && !sensors)) {
    throw DataError("hour " + format_hour(hour) + " is not covered by the sources");
  }
}

/// One raster per pollutant (pm25, pm10): the model's prediction at every
/// cell center with no station excluded.
inline std::array<Raster, 2> render(const Model& model, const FeatureContext& ctx, const GridSpec& spec,
                                    unsigned threads = 1) {
  spec.validate();
  require_hour(ctx, model.config.variant, spec.hour);
  std::array<Raster, 2> out;
  const std::size_t nr = spec.nrows(), nc = spec.ncols();
  for (auto& r : out) {
    r.nrows = nr;
    r.ncols = nc;
    r.xll = spec.box.lon_min;
    r.yll = spec.box.lat_min;
    r.cell_deg = spec.cell_deg();
    r.values.assign(nr * nc, 0.0);
  }
  parallel_for(nr * nc, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto loc = spec.center(i / nc, i % nc);
      const auto y = predict(model, ctx.build(model.config.variant, loc, spec.hour));
      out[0].values[i] = y[0];
      out[1].values[i] = y[1];
    }
  });
  return out;
}

struct RasterStats {
  double mean_a = 0, std_a = 0, mean_b = 0, std_b = 0;
  double ratio = 0;  // std_b / std_a
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_std: empty raster");
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

inline RasterStats raster_stats(const Raster& a, const Raster& b) {
  if (!a.same_grid(b)) throw std::invalid_argument("raster_stats: rasters are on different grids");
  RasterStats st;
  std::tie(st.mean_a, st.std_a) = mean_std(a.values);
  std::tie(st.mean_b, st.std_b) = mean_std(b.values);
  if (st.std_a > 0) {
    st.ratio = st.std_b / st.std_a;
  } else {
    st.ratio = st.std_b > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Writers

inline void write_raster_csv(const Raster& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "lat,lon,value\n";
  char buf[96];
  for (std::size_t i = 0; i < r.nrows; ++i) {
    for (std::size_t j = 0; j < r.ncols; ++j) {
      const double lat = r.yll + (static_cast<double>(r.nrows - i) - 0.5) * r.cell_deg;
      const double lon = r.xll + (static_cast<double>(j) + 0.5) * r.cell_deg;
      std::snprintf(buf, sizeof buf, "%.7f,%.7f,%.9g\n", lat, lon, r.at(i, j));
      out << buf;
    }
  }
}

inline constexpr double kNoData = -9999.0;

inline void write_raster_asc(const Raster& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  char buf[128];
  out << "ncols " << r.ncols << "\nnrows " << r.nrows << "\n";
  std::snprintf(buf, sizeof buf, "xllcorner %.10f\nyllcorner %.10f\ncellsize %.12g\n", r.xll, r.yll, r.cell_deg);
  out << buf << "NODATA_value -9999\n";
  for (std::size_t i = 0; i < r.nrows; ++i) {
    for (std::size_t j = 0; j < r.ncols; ++j) {
      const double v = r.at(i, j);
      std::snprintf(buf, sizeof buf, "%s%.6g", j ? " " : "", std::isfinite(v) ? v : kNoData);
      out << buf;
    }
    out << "\n";
  }
}

/// 8-bit binary PGM scaled linearly from the raster's min (black) to max.
inline void write_raster_pgm(const Raster& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : r.values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  out << "P5\n" << r.ncols << " " << r.nrows << "\n255\n";
  std::string px(r.values.size(), '\0');
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    const double v = r.values[i];
    if (!std::isfinite(v) || !(hi > lo)) continue;
    px[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (v - lo) / (hi - lo))));
  }
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
}

/// Parses an ESRI ASCII grid written by write_raster_asc.
inline Raster read_raster_asc(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  Raster r;
  std::string key;
  double nodata = kNoData;
  for (int i = 0; i < 6; ++i) {
    in >> key;
    if (key == "ncols") in >> r.ncols;
    else if (key == "nrows") in >> r.nrows;
    else if (key == "xllcorner") in >> r.xll;
    else if (key == "yllcorner") in >> r.yll;
    else if (key == "cellsize") in >> r.cell_deg;
    else if (key == "NODATA_value") in >> nodata;
    else throw DataError(path + ": unexpected header key " + key);
  }
  r.values.resize(r.nrows * r.ncols);
  for (auto& v : r.values) {
    if (!(in >> v)) throw DataError(path + ": truncated grid");
    if (v == nodata) v = kNA;
  }
  return r;
}

}  // namespace aqe
