#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Plain-text `key = value` files: one pair per line, `#` starts a comment,
// blank lines are ignored. Used for run configs and checkpoint config blocks.

namespace exprfuse {

using KeyValues = std::map<std::string, std::string>;

// Throws ConfigError naming `source` and the line for malformed lines and
// duplicate keys.
KeyValues parse_key_values(std::string_view text, const std::string& source);
std::string format_key_values(const KeyValues& kv);

std::size_t parse_size(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

// Shortest text that parses back to exactly `v`.
std::string format_double(double v);
std::string format_size_list(const std::vector<std::size_t>& values);
std::string format_double_list(const std::vector<double>& values);

std::string trim(std::string_view s);

}  // namespace exprfuse
