#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace zonedesign {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Parses `YYYY-MM-DDTHH:MM:SS[.fff](Z|+HH:MM|-HH:MM)`. Timestamps without an
/// explicit offset are rejected.
std::optional<Timestamp> parse_rfc3339(std::string_view text);

/// UTC rendering with millisecond precision, e.g. `2018-03-01T12:00:00.000Z`.
std::string format_rfc3339(Timestamp t);

struct CivilDate {
  int year;
  unsigned month;
  unsigned day;
};

CivilDate utc_date(Timestamp t);
/// 1-based day of year in UTC.
int utc_day_of_year(Timestamp t);
Timestamp utc_time(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                   double seconds = 0.0);

inline double seconds_between(Timestamp a, Timestamp b) {
  return std::chrono::duration<double>(b - a).count();
}

}  // namespace zonedesign
