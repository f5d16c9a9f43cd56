#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace aqe {

/// Seconds since the Unix epoch, UTC.
using UnixSeconds = std::int64_t;
/// Whole hours since the Unix epoch, UTC.
using HourIndex = std::int64_t;

inline constexpr std::int64_t kSecondsPerHour = 3600;

inline HourIndex hour_of(UnixSeconds t) {
  return t >= 0 ? t / kSecondsPerHour : -((-t + kSecondsPerHour - 1) / kSecondsPerHour);
}

inline UnixSeconds start_of(HourIndex h) { return h * kSecondsPerHour; }

namespace detail {

inline bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  std::from_chars(s.data() + pos, s.data() + pos + len, out);
  return true;
}

}  // namespace detail

/// Accepts YYYY-MM-DDTHH:MMZ and YYYY-MM-DDTHH:MM:SSZ.
inline std::optional<UnixSeconds> parse_timestamp(std::string_view s) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() != 17 && s.size() != 20) return std::nullopt;
  if (!detail::read_int(s, 0, 4, y) || s[4] != '-' || !detail::read_int(s, 5, 2, mo) ||
      s[7] != '-' || !detail::read_int(s, 8, 2, d) || s[10] != 'T' ||
      !detail::read_int(s, 11, 2, h) || s[13] != ':' || !detail::read_int(s, 14, 2, mi)) {
    return std::nullopt;
  }
  if (s.size() == 20) {
    if (s[16] != ':' || !detail::read_int(s, 17, 2, sec) || s[19] != 'Z') return std::nullopt;
  } else if (s[16] != 'Z') {
    return std::nullopt;
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  const auto days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<UnixSeconds>(days_since) * 86400 + h * 3600 + mi * 60 + sec;
}

/// YYYY-MM-DDTHH:MMZ
inline std::string format_timestamp(UnixSeconds t) {
  using namespace std::chrono;
  const auto day_count = t >= 0 ? t / 86400 : -((-t + 86399) / 86400);
  const auto rem = t - day_count * 86400;
  const year_month_day ymd{sys_days{days{day_count}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60));
  return buf;
}

inline std::string format_hour(HourIndex h) { return format_timestamp(start_of(h)); }

/// Inclusive range of hours.
struct HourRange {
  HourIndex first = 0;
  HourIndex last = -1;

  bool contains(HourIndex h) const { return h >= first && h <= last; }
  bool empty() const { return last < first; }
};

}  // namespace aqe
