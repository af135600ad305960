#pragma once

// `key = value` text blocks: one pair per line, '#' starts a comment.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "firenet/real.hpp"

namespace firenet::inline FIRENET_ABI {

/// Pairs in file order. Throws ConfigError (with the line number) on a line
/// without '=' or with an empty key.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

std::string trim(const std::string& s);
int64_t parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Comma-separated integers; at least one.
std::vector<int64_t> parse_int_list(const std::string& key, const std::string& value);
std::string join_ints(const std::vector<int64_t>& values);

}  // namespace firenet
