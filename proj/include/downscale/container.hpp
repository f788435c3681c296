#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "downscale/errors.hpp"
#include "downscale/grid.hpp"
#include "downscale/tensor.hpp"

namespace dsc {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian");

// On-disk dataset container: a line-oriented text manifest followed by packed
// little-endian row-major array payloads.
//
//   DSCONTAINER 1
//   meta <key> <value to end of line>
//   array <name> <f32|f64> <rank> <d0> ... <d(rank-1)> <byte offset>
//   payload <total payload bytes>
//   <binary>
//
// Offsets are relative to the start of the payload; arrays are packed in
// manifest order with no gaps.
struct ContainerArray {
  std::string name;
  char dtype = 'f';  // 'f' = f32, 'd' = f64
  Shape shape;
  std::vector<float> f;
  std::vector<double> d;

  std::size_t numel() const { return shape_numel(shape); }
  std::size_t bytes() const { return numel() * (dtype == 'f' ? 4 : 8); }
};

struct Container {
  std::vector<std::pair<std::string, std::string>> meta;  // ordered
  std::vector<ContainerArray> arrays;

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : meta)
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    meta.emplace_back(key, value);
  }

  const std::string* find_meta(const std::string& key) const {
    for (const auto& kv : meta)
      if (kv.first == key) return &kv.second;
    return nullptr;
  }

  const std::string& require_meta(const std::string& key) const {
    const std::string* v = find_meta(key);
    if (!v) throw format_error("container: missing meta key '" + key + "'");
    return *v;
  }

  bool has_array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }

  const ContainerArray& require_array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw format_error("container: missing array '" + name + "'");
  }

  void add_f32(const std::string& name, Shape shape, std::vector<float> data) {
    ContainerArray a;
    a.name = name;
    a.dtype = 'f';
    a.shape = std::move(shape);
    a.f = std::move(data);
    if (a.f.size() != a.numel())
      throw input_error("container: array data does not match shape: " + name);
    arrays.push_back(std::move(a));
  }

  void add_f64(const std::string& name, Shape shape, std::vector<double> data) {
    ContainerArray a;
    a.name = name;
    a.dtype = 'd';
    a.shape = std::move(shape);
    a.d = std::move(data);
    if (a.d.size() != a.numel())
      throw input_error("container: array data does not match shape: " + name);
    arrays.push_back(std::move(a));
  }
};

namespace detail {

inline void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos)
    throw input_error(std::string("container: invalid ") + what + ": '" + s +
                      "'");
}

}  // namespace detail

inline void write_container(const std::string& path, const Container& c) {
  std::ostringstream manifest;
  manifest << "DSCONTAINER 1\n";
  for (const auto& kv : c.meta) {
    detail::check_token(kv.first, "meta key");
    if (kv.second.find_first_of("\r\n") != std::string::npos)
      throw input_error("container: meta value contains newline: " + kv.first);
    manifest << "meta " << kv.first << " " << kv.second << "\n";
  }
  std::size_t offset = 0;
  for (const auto& a : c.arrays) {
    detail::check_token(a.name, "array name");
    manifest << "array " << a.name << " " << (a.dtype == 'f' ? "f32" : "f64")
             << " " << a.shape.size();
    for (std::size_t d : a.shape) manifest << " " << d;
    manifest << " " << offset << "\n";
    offset += a.bytes();
  }
  manifest << "payload " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("container: cannot open for writing: " + path);
  const std::string header = manifest.str();
  out.write(header.data(), std::streamsize(header.size()));
  for (const auto& a : c.arrays) {
    if (a.dtype == 'f')
      out.write(reinterpret_cast<const char*>(a.f.data()),
                std::streamsize(a.f.size() * 4));
    else
      out.write(reinterpret_cast<const char*>(a.d.data()),
                std::streamsize(a.d.size() * 8));
  }
  if (!out) throw format_error("container: write failed: " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("container: cannot open: " + path);

  Container c;
  std::string line;
  if (!std::getline(in, line) || line != "DSCONTAINER 1")
    throw format_error("container: bad magic or version in " + path);

  std::size_t expected_offset = 0;
  std::size_t declared_payload = std::size_t(-1);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      if (key.empty()) throw format_error("container: malformed meta line");
      c.meta.emplace_back(key, value);
    } else if (tag == "array") {
      ContainerArray a;
      std::string dtype;
      std::size_t rank = 0, offset = 0;
      ls >> a.name >> dtype >> rank;
      if (!ls || rank > 8) throw format_error("container: malformed array line");
      a.shape.resize(rank);
      for (std::size_t i = 0; i < rank; ++i) ls >> a.shape[i];
      ls >> offset;
      if (!ls) throw format_error("container: malformed array line");
      if (dtype == "f32")
        a.dtype = 'f';
      else if (dtype == "f64")
        a.dtype = 'd';
      else
        throw format_error("container: unknown element type " + dtype);
      if (offset != expected_offset)
        throw format_error("container: non-packed array offset for '" + a.name +
                           "' (expected byte " +
                           std::to_string(expected_offset) + ")");
      expected_offset += a.bytes();
      c.arrays.push_back(std::move(a));
    } else if (tag == "payload") {
      ls >> declared_payload;
      if (!ls) throw format_error("container: malformed payload line");
      break;
    } else {
      throw format_error("container: unknown manifest line: " + line);
    }
  }
  if (declared_payload == std::size_t(-1))
    throw format_error("container: manifest missing payload line");
  if (declared_payload != expected_offset)
    throw format_error(
        "container: payload size disagrees with arrays (declared " +
        std::to_string(declared_payload) + ", arrays need " +
        std::to_string(expected_offset) + ")");

  std::size_t pos = 0;
  for (auto& a : c.arrays) {
    const std::size_t n = a.bytes();
    if (a.dtype == 'f') {
      a.f.resize(a.numel());
      in.read(reinterpret_cast<char*>(a.f.data()), std::streamsize(n));
    } else {
      a.d.resize(a.numel());
      in.read(reinterpret_cast<char*>(a.d.data()), std::streamsize(n));
    }
    if (std::size_t(in.gcount()) != n)
      throw format_error("container: truncated payload for '" + a.name +
                         "' at payload byte " + std::to_string(pos));
    pos += n;
  }
  return c;
}

// ---- typed helpers --------------------------------------------------------

namespace containerio {

inline std::string join_csv(const std::vector<double>& xs) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline std::vector<double> split_csv(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

inline void put_geometry(Container& c, const std::string& prefix,
                         const GridGeometry& g) {
  c.set_meta(prefix + ".lats", join_csv(g.lats));
  c.set_meta(prefix + ".lons", join_csv(g.lons));
  c.set_meta(prefix + ".resolution", std::to_string(g.resolution));
}

inline GridGeometry get_geometry(const Container& c, const std::string& prefix) {
  GridGeometry g;
  g.lats = split_csv(c.require_meta(prefix + ".lats"));
  g.lons = split_csv(c.require_meta(prefix + ".lons"));
  if (const std::string* r = c.find_meta(prefix + ".resolution"))
    g.resolution = std::stod(*r);
  g.validate();
  return g;
}

inline void put_channels(Container& c, const std::string& key,
                         const std::vector<ChannelSpec>& channels) {
  std::string s;
  for (std::size_t i = 0; i < channels.size(); ++i)
    s += (i ? "," : "") + channels[i].id();
  c.set_meta(key, s);
}

inline std::vector<ChannelSpec> get_channels(const Container& c,
                                             const std::string& key) {
  std::vector<ChannelSpec> out;
  std::istringstream is(c.require_meta(key));
  std::string tok;
  while (std::getline(is, tok, ',')) {
    auto at = tok.find('@');
    if (at == std::string::npos)
      throw format_error("container: malformed channel spec: " + tok);
    out.push_back({tok.substr(0, at), std::stoi(tok.substr(at + 1))});
  }
  return out;
}

inline void put_times(Container& c, const std::string& key,
                      const std::vector<Date>& times) {
  std::string s;
  for (std::size_t i = 0; i < times.size(); ++i)
    s += (i ? "," : "") + times[i].to_string();
  c.set_meta(key, s);
}

inline std::vector<Date> get_times(const Container& c, const std::string& key) {
  std::vector<Date> out;
  std::istringstream is(c.require_meta(key));
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(Date::parse(tok));
  return out;
}

inline void put_mask(Container& c, const std::string& key, const LandMask& m) {
  std::string s;
  s.reserve(m.mask.size() + 16);
  s = std::to_string(m.rows) + "x" + std::to_string(m.cols) + ":";
  for (std::uint8_t b : m.mask) s += b ? '1' : '0';
  c.set_meta(key, s);
}

inline LandMask get_mask(const Container& c, const std::string& key) {
  const std::string& s = c.require_meta(key);
  auto x = s.find('x');
  auto colon = s.find(':');
  if (x == std::string::npos || colon == std::string::npos || x > colon)
    throw format_error("container: malformed mask meta");
  std::size_t rows = std::stoul(s.substr(0, x));
  std::size_t cols = std::stoul(s.substr(x + 1, colon - x - 1));
  std::string bits = s.substr(colon + 1);
  if (bits.size() != rows * cols)
    throw format_error("container: mask bit count mismatch");
  std::vector<std::uint8_t> m(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) m[i] = bits[i] == '1';
  return LandMask(rows, cols, std::move(m));
}

// Gridded fields are stored as f32 payloads (model precision); statistics
// arrays elsewhere use f64.
inline void put_gridded_field(Container& c, const std::string& name,
                              const GriddedField& field) {
  put_geometry(c, name + ".geometry", field.geometry);
  put_channels(c, name + ".channels", field.channels);
  put_times(c, name + ".times", field.times);
  std::vector<float> payload(field.data.v.begin(), field.data.v.end());
  c.add_f32(name, field.data.shape, std::move(payload));
}

inline GriddedField get_gridded_field(const Container& c,
                                      const std::string& name) {
  GriddedField f;
  f.geometry = get_geometry(c, name + ".geometry");
  f.channels = get_channels(c, name + ".channels");
  f.times = get_times(c, name + ".times");
  const ContainerArray& a = c.require_array(name);
  if (a.dtype != 'f') throw format_error("container: field must be f32");
  f.data.shape = a.shape;
  f.data.v.assign(a.f.begin(), a.f.end());
  f.validate();
  return f;
}

inline void put_target_field(Container& c, const std::string& name,
                             const TargetField& field) {
  put_times(c, name + ".times", field.times);
  std::vector<float> payload(field.data.v.begin(), field.data.v.end());
  c.add_f32(name, field.data.shape, std::move(payload));
}

inline TargetField get_target_field(const Container& c,
                                    const std::string& name) {
  TargetField f;
  f.times = get_times(c, name + ".times");
  const ContainerArray& a = c.require_array(name);
  if (a.dtype != 'f') throw format_error("container: field must be f32");
  f.data.shape = a.shape;
  f.data.v.assign(a.f.begin(), a.f.end());
  f.validate();
  return f;
}

}  // namespace containerio

}  // namespace dsc
