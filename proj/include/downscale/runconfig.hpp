#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "downscale/errors.hpp"

namespace dsc {

inline constexpr const char* kSoftwareVersion = "0.1.0";

// Flat key=value run configuration; '#' starts a comment, blank lines are
// ignored. Units are spelled out in the key names (e.g. radius_km).
struct RunConfig {
  std::map<std::string, std::string> values;
  std::string raw;  // verbatim file contents, hashed into the run manifest

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  const std::string& require(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end())
      throw input_error("run config: missing key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : std::stod(it->second);
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : std::stol(it->second);
  }

  std::uint64_t get_seed() const {
    return std::uint64_t(get_int("seed", 0));
  }

  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    cfg.raw = text;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::size_t start = line.find_first_not_of(" \t");
      if (start == std::string::npos || line[start] == '#') continue;
      std::size_t eq = line.find('=', start);
      if (eq == std::string::npos)
        throw input_error("run config: line " + std::to_string(lineno) +
                          " is not key=value");
      auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t");
        std::size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw input_error("run config: empty key at line " +
                          std::to_string(lineno));
      cfg.values[key] = value;
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("run config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }
};

// FNV-1a 64-bit, used to fingerprint run configs in output manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dsc
