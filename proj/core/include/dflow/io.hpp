// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dflow {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Line-oriented `key = value`; '#' starts a comment, blank lines skipped.
// Duplicate keys and lines without '=' are errors.
using ConfigMap = std::map<std::string, std::string>;
ConfigMap parse_config(std::string_view text);
ConfigMap load_config(const std::filesystem::path& path);

// Typed lookups; throw ConfigError naming the key on malformed values.
double config_double(const ConfigMap& c, const std::string& key, double fallback);
std::int64_t config_int(const ConfigMap& c, const std::string& key, std::int64_t fallback);
bool config_bool(const ConfigMap& c, const std::string& key, bool fallback);
std::string config_string(const ConfigMap& c, const std::string& key, const std::string& fallback);

std::vector<std::string> split_list(std::string_view s, char sep = ',');

// Shortest round-trip text, '.' separator regardless of locale. NaN -> "nan".
std::string format_number(double v);
std::string format_number(std::int64_t v);
inline std::string format_number(std::size_t v) { return format_number(static_cast<std::int64_t>(v)); }
inline std::string format_number(int v) { return format_number(static_cast<std::int64_t>(v)); }
inline std::string format_number(float v) { return format_number(static_cast<double>(v)); }

class MetricsCsv {
 public:
  explicit MetricsCsv(std::vector<std::string> header);

  // Each cell is pre-formatted text; commas and quotes are escaped.
  void add_row(std::vector<std::string> cells);
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace dflow
