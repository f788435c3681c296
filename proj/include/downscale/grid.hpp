#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "downscale/date.hpp"
#include "downscale/errors.hpp"
#include "downscale/tensor.hpp"

namespace dsc {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }

// Great-circle distance between two (lat, lon) points in degrees.
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  if (!std::isfinite(lat1) || !std::isfinite(lon1) || !std::isfinite(lat2) ||
      !std::isfinite(lon2))
    throw input_error("haversine: non-finite coordinate");
  if (std::abs(lat1) > 90.0 || std::abs(lat2) > 90.0)
    throw input_error("haversine: latitude outside [-90, 90]");
  const double phi1 = deg2rad(lat1), phi2 = deg2rad(lat2);
  const double dphi = deg2rad(lat2 - lat1);
  const double dlam = deg2rad(lon2 - lon1);
  const double sp = std::sin(dphi / 2.0), sl = std::sin(dlam / 2.0);
  const double a = sp * sp + std::cos(phi1) * std::cos(phi2) * sl * sl;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

// Regular (or at least rectilinear) lat/lon grid of box centers.
struct GridGeometry {
  std::vector<double> lats;  // strictly monotonic, degrees
  std::vector<double> lons;  // strictly monotonic, degrees
  double resolution = 0.0;   // informational, degrees per box

  std::size_t rows() const { return lats.size(); }
  std::size_t cols() const { return lons.size(); }
  std::size_t cells() const { return rows() * cols(); }

  void validate() const {
    if (lats.empty() || lons.empty())
      throw input_error("grid geometry: empty coordinate axis");
    auto strictly_monotonic = [](const std::vector<double>& x) {
      if (x.size() < 2) return true;
      const bool inc = x[1] > x[0];
      for (std::size_t i = 1; i < x.size(); ++i) {
        if (inc ? x[i] <= x[i - 1] : x[i] >= x[i - 1]) return false;
      }
      return true;
    };
    if (!strictly_monotonic(lats) || !strictly_monotonic(lons))
      throw input_error("grid geometry: coordinates not strictly monotonic");
    for (double la : lats)
      if (!std::isfinite(la) || std::abs(la) > 90.0)
        throw input_error("grid geometry: latitude outside [-90, 90]");
    for (double lo : lons)
      if (!std::isfinite(lo))
        throw input_error("grid geometry: non-finite longitude");
  }

  friend bool operator==(const GridGeometry& a, const GridGeometry& b) {
    return a.lats == b.lats && a.lons == b.lons;
  }
  friend bool operator!=(const GridGeometry& a, const GridGeometry& b) {
    return !(a == b);
  }

  // Evenly spaced helper grid.
  static GridGeometry regular(double lat0, double dlat, std::size_t nlat,
                              double lon0, double dlon, std::size_t nlon) {
    GridGeometry g;
    g.lats.resize(nlat);
    g.lons.resize(nlon);
    for (std::size_t i = 0; i < nlat; ++i) g.lats[i] = lat0 + dlat * double(i);
    for (std::size_t j = 0; j < nlon; ++j) g.lons[j] = lon0 + dlon * double(j);
    g.resolution = std::abs(dlat);
    g.validate();
    return g;
  }
};

// One predictor variable at one pressure level, e.g. air-temperature @ 1000.
struct ChannelSpec {
  std::string variable;  // "geopotential", "specific-humidity", ...
  int level_hpa = 0;

  std::string id() const { return variable + "@" + std::to_string(level_hpa); }

  friend bool operator==(const ChannelSpec& a, const ChannelSpec& b) {
    return a.variable == b.variable && a.level_hpa == b.level_hpa;
  }
};

inline void validate_channels(const std::vector<ChannelSpec>& channels) {
  for (std::size_t i = 0; i < channels.size(); ++i)
    for (std::size_t j = i + 1; j < channels.size(); ++j)
      if (channels[i] == channels[j])
        throw input_error("duplicate channel spec: " + channels[i].id());
}

// Daily gridded multi-channel field, data axes [time, channel, lat, lon].
struct GriddedField {
  Tensor<double> data;
  GridGeometry geometry;
  std::vector<ChannelSpec> channels;
  std::vector<Date> times;

  std::size_t ntime() const { return times.size(); }
  std::size_t nchan() const { return channels.size(); }

  double at(std::size_t t, std::size_t c, std::size_t i, std::size_t j) const {
    return data.at4(t, c, i, j);
  }
  double& at(std::size_t t, std::size_t c, std::size_t i, std::size_t j) {
    return data.at4(t, c, i, j);
  }

  void validate() const {
    geometry.validate();
    validate_channels(channels);
    Shape want{times.size(), channels.size(), geometry.rows(),
               geometry.cols()};
    if (data.shape != want)
      throw input_error("gridded field: data extents do not match metadata");
    for (double x : data.v)
      if (!std::isfinite(x))
        throw input_error("gridded field: non-finite value");
  }
};

// Boolean mask over a predictand grid plus the fixed row-major enumeration of
// its true cells; the enumeration order defines the output-neuron ordering.
struct LandMask {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> mask;   // row-major, rows*cols
  std::vector<std::size_t> cells;   // flat indices of true cells, ascending

  LandMask() = default;
  LandMask(std::size_t r, std::size_t c, std::vector<std::uint8_t> m)
      : rows(r), cols(c), mask(std::move(m)) {
    if (mask.size() != rows * cols)
      throw input_error("land mask: size does not match grid");
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) cells.push_back(i);
    if (cells.empty()) throw input_error("land mask: no true cells");
  }

  static LandMask all(std::size_t r, std::size_t c) {
    return LandMask(r, c, std::vector<std::uint8_t>(r * c, 1));
  }

  std::size_t count() const { return cells.size(); }

  friend bool operator==(const LandMask& a, const LandMask& b) {
    return a.rows == b.rows && a.cols == b.cols && a.mask == b.mask;
  }
};

// Per-day values over the masked predictand gridpoints, axes [time, location].
struct TargetField {
  Tensor<double> data;
  std::vector<Date> times;

  std::size_t ntime() const { return times.size(); }
  std::size_t nloc() const { return data.shape.size() == 2 ? data.shape[1] : 0; }

  void validate() const {
    if (data.shape.size() != 2 || data.shape[0] != times.size())
      throw input_error("target field: data extents do not match time axis");
    for (double x : data.v)
      if (!std::isfinite(x)) throw input_error("target field: non-finite value");
  }
};

// (lat, lon) of every masked predictand gridpoint, in enumeration order.
inline std::vector<std::pair<double, double>> mask_latlons(
    const GridGeometry& g, const LandMask& m) {
  if (m.rows != g.rows() || m.cols != g.cols())
    throw input_error("mask does not match geometry");
  std::vector<std::pair<double, double>> out;
  out.reserve(m.count());
  for (std::size_t cell : m.cells)
    out.emplace_back(g.lats[cell / m.cols], g.lons[cell % m.cols]);
  return out;
}

// Distance from every gridbox center to a target point, in km.
inline Tensor<double> distance_field(const GridGeometry& g, double lat,
                                     double lon) {
  g.validate();
  Tensor<double> out({g.rows(), g.cols()});
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      out.at2(i, j) = haversine_km(g.lats[i], g.lons[j], lat, lon);
  return out;
}

namespace detail {

// Bracketing index and weight along one monotonic axis; clamps outside the
// source hull to the nearest edge cell.
inline void bracket(const std::vector<double>& axis, double x, std::size_t& i0,
                    double& w) {
  const bool inc = axis.size() < 2 || axis[1] > axis[0];
  const std::size_t n = axis.size();
  auto coord = [&](std::size_t i) { return inc ? axis[i] : axis[n - 1 - i]; };
  // Ascending view.
  if (x <= coord(0)) {
    i0 = 0;
    w = 0.0;
  } else if (x >= coord(n - 1)) {
    i0 = n >= 2 ? n - 2 : 0;
    w = n >= 2 ? 1.0 : 0.0;
  } else {
    std::size_t lo = 0, hi = n - 1;
    while (hi - lo > 1) {
      std::size_t mid = (lo + hi) / 2;
      if (coord(mid) <= x)
        lo = mid;
      else
        hi = mid;
    }
    i0 = lo;
    w = (x - coord(lo)) / (coord(lo + 1) - coord(lo));
  }
  if (!inc) {
    // Map the ascending-view bracket back to original indices.
    i0 = n >= 2 ? n - 2 - i0 : 0;
    w = n >= 2 ? 1.0 - w : 0.0;
  }
}

}  // namespace detail

// Bilinear interpolation of src onto dst gridbox centers, per time/channel.
// Destination points outside the source hull clamp to the nearest edge
// row/column (no extrapolation).
inline GriddedField bilinear_regrid(const GriddedField& src,
                                    const GridGeometry& dst_geometry) {
  src.validate();
  dst_geometry.validate();
  auto outside = [](const std::vector<double>& axis,
                    const std::vector<double>& pts) {
    const double lo = std::min(axis.front(), axis.back());
    const double hi = std::max(axis.front(), axis.back());
    const auto [pmin, pmax] = std::minmax_element(pts.begin(), pts.end());
    return *pmax < lo || *pmin > hi;  // ranges disjoint
  };
  if (outside(src.geometry.lats, dst_geometry.lats) ||
      outside(src.geometry.lons, dst_geometry.lons))
    throw input_error("bilinear_regrid: destination entirely outside source");

  const std::size_t nr = dst_geometry.rows(), nc = dst_geometry.cols();
  std::vector<std::size_t> ri(nr), cj(nc);
  std::vector<double> rw(nr), cw(nc);
  for (std::size_t i = 0; i < nr; ++i)
    detail::bracket(src.geometry.lats, dst_geometry.lats[i], ri[i], rw[i]);
  for (std::size_t j = 0; j < nc; ++j)
    detail::bracket(src.geometry.lons, dst_geometry.lons[j], cj[j], cw[j]);

  GriddedField out;
  out.geometry = dst_geometry;
  out.channels = src.channels;
  out.times = src.times;
  out.data = Tensor<double>({src.ntime(), src.nchan(), nr, nc});
  const std::size_t sr = src.geometry.rows();
  const bool one_row = sr < 2, one_col = src.geometry.cols() < 2;
  for (std::size_t t = 0; t < src.ntime(); ++t)
    for (std::size_t c = 0; c < src.nchan(); ++c)
      for (std::size_t i = 0; i < nr; ++i) {
        const std::size_t i1 = one_row ? ri[i] : ri[i] + 1;
        for (std::size_t j = 0; j < nc; ++j) {
          const std::size_t j1 = one_col ? cj[j] : cj[j] + 1;
          const double v00 = src.at(t, c, ri[i], cj[j]);
          const double v01 = src.at(t, c, ri[i], j1);
          const double v10 = src.at(t, c, i1, cj[j]);
          const double v11 = src.at(t, c, i1, j1);
          const double top = v00 * (1.0 - cw[j]) + v01 * cw[j];
          const double bot = v10 * (1.0 - cw[j]) + v11 * cw[j];
          out.at(t, c, i, j) = top * (1.0 - rw[i]) + bot * rw[i];
        }
      }
  return out;
}

}  // namespace dsc
