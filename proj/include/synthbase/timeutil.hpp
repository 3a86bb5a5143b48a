#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "synthbase/errors.hpp"

namespace synthbase {

using Instant = std::chrono::sys_seconds;

/// Accepts `YYYY-MM-DDTHH:MM[:SS]` and the same with a space separator.
/// Timezone suffixes are not supported; all instants are naive local time.
inline Instant parse_instant(std::string_view s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    char sep = 0;
    const std::string buf(s);
    const int n = std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &y, &mo, &d, &sep, &h, &mi, &sec);
    if (n < 6 || (sep != 'T' && sep != ' ')) {
        throw SchemaError("malformed timestamp '" + buf + "'");
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 59) {
        throw SchemaError("invalid timestamp '" + buf + "'");
    }
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
}

inline std::string format_instant(Instant t) {
    using namespace std::chrono;
    const auto day_point = floor<days>(t);
    const year_month_day ymd{day_point};
    const hh_mm_ss hms{t - day_point};
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
    return buf;
}

/// Monday = 0 ... Sunday = 6.
inline int weekday_index(Instant t) {
    using namespace std::chrono;
    const weekday wd{floor<days>(t)};
    return static_cast<int>(wd.iso_encoding()) - 1;
}

/// Fractional hour of day in [0, 24).
inline double hour_of_day(Instant t) {
    using namespace std::chrono;
    const auto since_midnight = t - floor<days>(t);
    return static_cast<double>(since_midnight.count()) / 3600.0;
}

inline bool is_midnight(Instant t) {
    using namespace std::chrono;
    return t == floor<days>(t);
}

}  // namespace synthbase
