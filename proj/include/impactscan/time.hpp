#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace impactscan {

using Timestamp = std::chrono::sys_seconds;

// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS" with optional fractional seconds
// and an optional "Z" or "+HH:MM"/"-HH:MM" offset. Throws ValidationError.
Timestamp parse_iso8601(std::string_view text);

// Always UTC with a trailing "Z", second resolution.
std::string format_iso8601(Timestamp t);
// "YYYY-MM-DD"
std::string format_date(Timestamp t);

}  // namespace impactscan
