#ifndef OPD_TEXT_IO_HPP_
#define OPD_TEXT_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace opd {

// Shortest decimal representation that round-trips exactly.
std::string FormatDouble(double value);
// Fixed-precision rendering used in CSV outputs ("nan" for NaN).
std::string FormatFixed(double value, int digits = 6);
std::string FormatHex64(std::uint64_t value);

// Throw ConfigError naming `what` on malformed input.
double ParseDouble(std::string_view text, std::string_view what);
long long ParseInt(std::string_view text, std::string_view what);
std::uint64_t ParseHex64(std::string_view text, std::string_view what);

std::vector<std::string> SplitWhitespace(std::string_view line);
std::vector<std::string> Split(std::string_view text, char sep);
std::string Trim(std::string_view text);

// Throw IoError on failure.
std::string ReadFile(const std::filesystem::path& path);
void WriteFile(const std::filesystem::path& path, std::string_view contents);

}  // namespace opd

#endif  // OPD_TEXT_IO_HPP_
