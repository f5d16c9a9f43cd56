#pragma once

// Shared vocabulary for the air quality engine: NA handling, pollutant
// indices, error types with CLI exit codes, portable RNG helpers and a
// small fixed-order parallel loop.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <iostream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace aqe {

inline constexpr double kNA = std::numeric_limits<double>::quiet_NaN();

inline bool is_na(double v) { return std::isnan(v); }

enum class Pollutant : int { pm25 = 0, pm10 = 1 };

inline constexpr std::array<Pollutant, 2> kPollutants{Pollutant::pm25, Pollutant::pm10};

inline constexpr std::string_view to_string(Pollutant p) {
  return p == Pollutant::pm25 ? "pm25" : "pm10";
}

inline constexpr std::size_t index_of(Pollutant p) { return static_cast<std::size_t>(p); }

/// Concentration pair in (pm25, pm10) order; either component may be NA.
using Concentrations = std::array<double, 2>;

// Error categories. Each maps onto a CLI exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void log_info(std::string_view msg) { std::cerr << "[info] " << msg << '\n'; }
inline void log_warn(std::string_view msg) { std::cerr << "[warn] " << msg << '\n'; }

// Random numbers. std::mt19937_64's output sequence is fixed by the
// standard, the <random> distributions are not, so conversions are done here.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

/// Standard normal via Box-Muller (one value per call, second discarded).
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Fisher-Yates with the portable index draw above.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over raw bytes, used for content digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are fixed by
/// (n, threads) so results written by index are identical for any thread count.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, &errors, t, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

// Little-endian scalar I/O for the binary containers.
template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class T>
T get_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("truncated binary input");
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace aqe
