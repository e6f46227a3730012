#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace namac {

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(std::uint64_t value);

/// Fixed significant-digit rendering (printf %.{digits}g).
std::string format_sig(double value, int digits);

/// Evenly spaced values including both endpoints; n == 1 gives the midpoint.
std::vector<double> linspace(double lo, double hi, std::size_t n);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace namac
