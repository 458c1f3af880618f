#include "impactscan/time.hpp"

#include <cctype>
#include <cstdio>

#include "impactscan/error.hpp"

namespace impactscan {

namespace {

int read_int(std::string_view s, std::size_t& pos, std::size_t digits) {
  if (pos + digits > s.size()) throw ValidationError("acquired_at", "truncated timestamp '" + std::string(s) + "'");
  int v = 0;
  for (std::size_t i = 0; i < digits; ++i) {
    char c = s[pos + i];
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw ValidationError("acquired_at", "malformed timestamp '" + std::string(s) + "'");
    v = v * 10 + (c - '0');
  }
  pos += digits;
  return v;
}

void expect(std::string_view s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c)
    throw ValidationError("acquired_at", "malformed timestamp '" + std::string(s) + "'");
  ++pos;
}

}  // namespace

Timestamp parse_iso8601(std::string_view s) {
  using namespace std::chrono;
  std::size_t pos = 0;
  int y = read_int(s, pos, 4);
  expect(s, pos, '-');
  int mo = read_int(s, pos, 2);
  expect(s, pos, '-');
  int d = read_int(s, pos, 2);
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw ValidationError("acquired_at", "invalid calendar date '" + std::string(s) + "'");
  int hh = 0, mm = 0, ss = 0;
  long offset_s = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') throw ValidationError("acquired_at", "malformed timestamp '" + std::string(s) + "'");
    ++pos;
    hh = read_int(s, pos, 2);
    expect(s, pos, ':');
    mm = read_int(s, pos, 2);
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      ss = read_int(s, pos, 2);
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      }
    }
    if (hh > 23 || mm > 59 || ss > 60) throw ValidationError("acquired_at", "invalid time of day '" + std::string(s) + "'");
    if (pos < s.size()) {
      if (s[pos] == 'Z') {
        ++pos;
      } else if (s[pos] == '+' || s[pos] == '-') {
        int sign = s[pos] == '-' ? -1 : 1;
        ++pos;
        int oh = read_int(s, pos, 2);
        expect(s, pos, ':');
        int om = read_int(s, pos, 2);
        offset_s = sign * (oh * 3600L + om * 60L);
      }
    }
    if (pos != s.size()) throw ValidationError("acquired_at", "trailing characters in '" + std::string(s) + "'");
  }
  return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss} - seconds{offset_s};
}

std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  hh_mm_ss hms{t - day_point};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

std::string format_date(Timestamp t) { return format_iso8601(t).substr(0, 10); }

}  // namespace impactscan
