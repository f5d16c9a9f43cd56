#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aqe/common.hpp"

namespace aqe {

inline constexpr double kKmPerDegree = 111.32;

struct Location {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const Location&, const Location&) = default;
};

inline bool is_valid(const Location& l) {
  return std::isfinite(l.lat) && std::isfinite(l.lon) && std::abs(l.lat) <= 90.0 &&
         std::abs(l.lon) <= 180.0;
}

/// Scale of the exponential kernel exp(-distance / d), in kilometers.
struct KernelSpec {
  double d_km = 10.0;

  explicit KernelSpec(double d) : d_km(d) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw std::invalid_argument("kernel distance must be positive and finite");
    }
  }
};

inline constexpr double kDensityKernelKm = 10.0;
inline constexpr double kContextKernelKm = 0.1;

/// Planar distance under a local equirectangular projection centred on the
/// mean latitude of the pair.
inline double distance_km(const Location& a, const Location& b) {
  const double mean_lat = 0.5 * (a.lat + b.lat) * std::numbers::pi / 180.0;
  const double dy = (b.lat - a.lat) * kKmPerDegree;
  const double dx = (b.lon - a.lon) * std::cos(mean_lat) * kKmPerDegree;
  return std::sqrt(dx * dx + dy * dy);
}

inline double kernel(const KernelSpec& spec, const Location& a, const Location& b) {
  return std::exp(-distance_km(a, b) / spec.d_km);
}

/// Weights below this are dropped from kernel sums.
inline constexpr double kKernelCutoff = 1e-12;

inline double kernel_cutoff_radius(const KernelSpec& spec) {
  return spec.d_km * -std::log(kKernelCutoff);
}

using EntryId = std::uint32_t;

struct Neighbor {
  EntryId id = 0;
  double distance_km = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Uniform lat/lon grid over a fixed set of points. Immutable after
/// construction. Query results are exactly those of a brute-force scan.
class SpatialIndex {
 public:
  struct Entry {
    EntryId id;
    Location location;
  };

  SpatialIndex() = default;

  explicit SpatialIndex(std::vector<Entry> entries, double cell_km = 10.0) {
    for (const auto& e : entries) {
      if (!is_valid(e.location)) throw std::invalid_argument("invalid location in spatial index");
    }
    count_ = entries.size();
    if (entries.empty()) return;

    double lat_min = 90, lat_max = -90, lon_min = 180, lon_max = -180, lat_sum = 0;
    for (const auto& e : entries) {
      lat_min = std::min(lat_min, e.location.lat);
      lat_max = std::max(lat_max, e.location.lat);
      lon_min = std::min(lon_min, e.location.lon);
      lon_max = std::max(lon_max, e.location.lon);
      lat_sum += e.location.lat;
      max_abs_lat_ = std::max(max_abs_lat_, std::abs(e.location.lat));
    }
    const double ref_lat = lat_sum / static_cast<double>(entries.size());
    const double cos_ref = std::max(0.01, std::cos(ref_lat * std::numbers::pi / 180.0));
    cell_lat_ = cell_km / kKmPerDegree;
    cell_lon_ = cell_km / (kKmPerDegree * cos_ref);
    lat0_ = lat_min;
    lon0_ = lon_min;

    // Keep the grid proportional to the entry count.
    const double max_cells = 4.0 * static_cast<double>(entries.size()) + 1024.0;
    for (;;) {
      rows_ = static_cast<std::int64_t>((lat_max - lat0_) / cell_lat_) + 1;
      cols_ = static_cast<std::int64_t>((lon_max - lon0_) / cell_lon_) + 1;
      if (static_cast<double>(rows_) * static_cast<double>(cols_) <= max_cells) break;
      cell_lat_ *= 2.0;
      cell_lon_ *= 2.0;
    }

    std::vector<std::size_t> cell_of(entries.size());
    cell_start_.assign(static_cast<std::size_t>(rows_ * cols_) + 1, 0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto r = std::clamp<std::int64_t>(row_of(entries[i].location.lat), 0, rows_ - 1);
      const auto c = std::clamp<std::int64_t>(col_of(entries[i].location.lon), 0, cols_ - 1);
      cell_of[i] = static_cast<std::size_t>(r * cols_ + c);
      ++cell_start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    entries_.resize(entries.size());
    std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < entries.size(); ++i) entries_[fill[cell_of[i]]++] = entries[i];
  }

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  std::span<const Entry> entries() const { return entries_; }

  /// k nearest accepted entries, ascending by (distance, id).
  template <class Accept>
  std::vector<Neighbor> k_nearest_if(const Location& query, std::size_t k, Accept&& accept) const {
    std::vector<Neighbor> found;
    if (k == 0) throw std::invalid_argument("k_nearest requires k >= 1");
    if (empty()) return found;

    const std::int64_t qr = row_of(query.lat);
    const std::int64_t qc = col_of(query.lon);
    const std::int64_t r_max = std::max({std::abs(qr), std::abs(qr - (rows_ - 1)), std::abs(qc),
                                         std::abs(qc - (cols_ - 1))});
    const std::int64_t r_min = std::max({std::int64_t{0}, -qr, qr - (rows_ - 1), -qc,
                                         qc - (cols_ - 1)});
    const double cos_min = min_cos(query);
    const auto by_distance = [](const Neighbor& a, const Neighbor& b) {
      return a.distance_km < b.distance_km || (a.distance_km == b.distance_km && a.id < b.id);
    };

    for (std::int64_t r = r_min; r <= r_max; ++r) {
      const std::int64_t r_lo = std::max<std::int64_t>(0, qr - r);
      const std::int64_t r_hi = std::min<std::int64_t>(rows_ - 1, qr + r);
      for (std::int64_t row = r_lo; row <= r_hi; ++row) {
        const std::int64_t c_lo = std::max<std::int64_t>(0, qc - r);
        const std::int64_t c_hi = std::min<std::int64_t>(cols_ - 1, qc + r);
        if (std::abs(row - qr) == r) {
          for (std::int64_t col = c_lo; col <= c_hi; ++col) scan_cell(row, col, query, accept, found);
        } else {
          if (qc - r >= 0 && qc - r < cols_) scan_cell(row, qc - r, query, accept, found);
          if (r > 0 && qc + r >= 0 && qc + r < cols_) scan_cell(row, qc + r, query, accept, found);
        }
      }
      if (found.size() >= k && r < r_max) {
        std::nth_element(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k - 1),
                         found.end(), by_distance);
        if (found[k - 1].distance_km < ring_lower_bound(query, qr, qc, r, cos_min)) break;
      }
    }
    std::sort(found.begin(), found.end(), by_distance);
    if (found.size() > k) found.resize(k);
    return found;
  }

  std::vector<Neighbor> k_nearest(const Location& query, std::size_t k,
                                  std::optional<EntryId> exclude = std::nullopt) const {
    return k_nearest_if(query, k, [&](EntryId id) { return !exclude || id != *exclude; });
  }

  /// Calls fn(id, location, distance_km) for every entry within radius_km.
  /// Visiting order is fixed by the grid layout.
  template <class Visitor>
  void visit_within(const Location& query, double radius_km, Visitor&& fn) const {
    if (empty()) return;
    const double cos_min = min_cos(query);
    const double dlat = radius_km / kKmPerDegree;
    const double dlon = cos_min > 0 ? radius_km / (kKmPerDegree * cos_min) : 360.0;
    const auto r_lo = std::max<std::int64_t>(0, row_of(query.lat - dlat));
    const auto r_hi = std::min<std::int64_t>(rows_ - 1, row_of(query.lat + dlat));
    const auto c_lo = std::max<std::int64_t>(0, col_of(query.lon - dlon));
    const auto c_hi = std::min<std::int64_t>(cols_ - 1, col_of(query.lon + dlon));
    for (std::int64_t row = r_lo; row <= r_hi; ++row) {
      for (std::int64_t col = c_lo; col <= c_hi; ++col) {
        const auto cell = static_cast<std::size_t>(row * cols_ + col);
        for (auto i = cell_start_[cell]; i < cell_start_[cell + 1]; ++i) {
          const auto& e = entries_[i];
          const double d = distance_km(query, e.location);
          if (d <= radius_km) fn(e.id, e.location, d);
        }
      }
    }
  }

  /// Sum over entries of kernel(query, entry) * values[id]. Entries whose
  /// weight falls below kKernelCutoff are skipped.
  double weighted_sum(const Location& query, const KernelSpec& spec,
                      std::span<const double> values) const {
    for (const auto& e : entries_) {
      if (e.id >= values.size()) {
        throw ConfigError("weighted_sum: no value for entry id " + std::to_string(e.id));
      }
    }
    double sum = 0.0;
    visit_within(query, kernel_cutoff_radius(spec), [&](EntryId id, const Location&, double d) {
      sum += std::exp(-d / spec.d_km) * values[id];
    });
    return sum;
  }

  /// weighted_sum with every value equal to 1.
  double kernel_sum(const Location& query, const KernelSpec& spec) const {
    double sum = 0.0;
    visit_within(query, kernel_cutoff_radius(spec),
                 [&](EntryId, const Location&, double d) { sum += std::exp(-d / spec.d_km); });
    return sum;
  }

 private:
  std::int64_t row_of(double lat) const {
    return static_cast<std::int64_t>(std::floor((lat - lat0_) / cell_lat_));
  }
  std::int64_t col_of(double lon) const {
    return static_cast<std::int64_t>(std::floor((lon - lon0_) / cell_lon_));
  }

  // cos of the largest |latitude| any (query, entry) pair can average to;
  // bounds the east-west km per degree from below.
  double min_cos(const Location& query) const {
    const double lat = std::max(std::abs(query.lat), max_abs_lat_);
    return std::max(0.0, std::cos(lat * std::numbers::pi / 180.0));
  }

  // Smallest possible distance to any entry outside the (2r+1)^2 block of
  // cells centred on the query cell.
  double ring_lower_bound(const Location& q, std::int64_t qr, std::int64_t qc, std::int64_t r,
                          double cos_min) const {
    const double south = lat0_ + static_cast<double>(qr - r) * cell_lat_;
    const double north = lat0_ + static_cast<double>(qr + r + 1) * cell_lat_;
    const double west = lon0_ + static_cast<double>(qc - r) * cell_lon_;
    const double east = lon0_ + static_cast<double>(qc + r + 1) * cell_lon_;
    const double lat_gap = std::min(q.lat - south, north - q.lat) * kKmPerDegree;
    const double lon_gap = std::min(q.lon - west, east - q.lon) * kKmPerDegree * cos_min;
    return std::max(0.0, std::min(lat_gap, lon_gap));
  }

  template <class Accept>
  void scan_cell(std::int64_t row, std::int64_t col, const Location& query, Accept& accept,
                 std::vector<Neighbor>& found) const {
    const auto cell = static_cast<std::size_t>(row * cols_ + col);
    for (auto i = cell_start_[cell]; i < cell_start_[cell + 1]; ++i) {
      const auto& e = entries_[i];
      if (!accept(e.id)) continue;
      found.push_back({e.id, distance_km(query, e.location)});
    }
  }

  std::size_t count_ = 0;
  std::vector<Entry> entries_;
  std::vector<std::uint32_t> cell_start_;
  double lat0_ = 0, lon0_ = 0, cell_lat_ = 1, cell_lon_ = 1, max_abs_lat_ = 0;
  std::int64_t rows_ = 0, cols_ = 0;
};

/// Kernel-weighted sensor count around a location (d = 10 km by default).
inline double sensor_density(const SpatialIndex& sensors, const Location& query,
                             const KernelSpec& spec = KernelSpec{kDensityKernelKm}) {
  return sensors.kernel_sum(query, spec);
}

/// Axis-aligned lat/lon box.
struct BoundingBox {
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;

  bool well_ordered() const {
    return lat_min < lat_max && lon_min < lon_max && is_valid({lat_min, lon_min}) &&
           is_valid({lat_max, lon_max});
  }
  bool contains(const Location& l) const {
    return l.lat >= lat_min && l.lat <= lat_max && l.lon >= lon_min && l.lon <= lon_max;
  }
  Location center() const { return {0.5 * (lat_min + lat_max), 0.5 * (lon_min + lon_max)}; }
};

}  // namespace aqe
