#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "downscale/errors.hpp"

namespace dsc {

// Proleptic Gregorian calendar date with day-serial conversion
// (days_from_civil / civil_from_days, Howard Hinnant's algorithms).
struct Date {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31

  static constexpr bool is_leap(int y) {
    return y % 4 == 0 && (y % 100 != 0 || y % 400 == 0);
  }

  static constexpr int days_in_month(int y, int m) {
    constexpr int lengths[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return m == 2 && is_leap(y) ? 29 : lengths[m - 1];
  }

  bool valid() const {
    return month >= 1 && month <= 12 && day >= 1 &&
           day <= days_in_month(year, month);
  }

  // Days since 1970-01-01.
  std::int64_t serial() const {
    std::int64_t y = year - (month <= 2);
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy =
        (153u * (month + (month > 2 ? -3 : 9)) + 2u) / 5u + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
  }

  static Date from_serial(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m),
                static_cast<int>(d)};
  }

  Date plus_days(std::int64_t n) const { return from_serial(serial() + n); }

  std::string to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
    return buf;
  }

  // Parses "YYYY-MM-DD".
  static Date parse(std::string_view s) {
    Date d;
    auto fail = [&] { throw input_error("invalid date: " + std::string(s)); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') fail();
    auto num = [&](std::string_view part, int& out) {
      auto r = std::from_chars(part.data(), part.data() + part.size(), out);
      if (r.ec != std::errc{} || r.ptr != part.data() + part.size()) fail();
    };
    num(s.substr(0, 4), d.year);
    num(s.substr(5, 2), d.month);
    num(s.substr(8, 2), d.day);
    if (!d.valid()) fail();
    return d;
  }

  friend bool operator==(const Date& a, const Date& b) {
    return a.year == b.year && a.month == b.month && a.day == b.day;
  }
  friend bool operator!=(const Date& a, const Date& b) { return !(a == b); }
  friend bool operator<(const Date& a, const Date& b) {
    return a.serial() < b.serial();
  }
  friend bool operator<=(const Date& a, const Date& b) {
    return a.serial() <= b.serial();
  }
};

// Closed date interval [first, last].
struct DateRange {
  Date first;
  Date last;

  bool contains(const Date& d) const { return first <= d && d <= last; }

  std::string to_string() const {
    return first.to_string() + ":" + last.to_string();
  }

  // Parses "YYYY-MM-DD:YYYY-MM-DD".
  static DateRange parse(std::string_view s) {
    auto sep = s.find(':');
    if (sep == std::string_view::npos)
      throw input_error("invalid date range: " + std::string(s));
    DateRange r{Date::parse(s.substr(0, sep)), Date::parse(s.substr(sep + 1))};
    if (!(r.first <= r.last))
      throw input_error("date range end precedes start: " + std::string(s));
    return r;
  }
};

}  // namespace dsc
