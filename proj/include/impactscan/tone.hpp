#pragma once

#include <string>

namespace impactscan {

// Blast-zone albedo relative to the surroundings.
enum class Tone { dark, light, dual };
const char* to_string(Tone t);
Tone tone_from_string(const std::string& s);

}  // namespace impactscan
