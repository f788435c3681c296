#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "downscale/container.hpp"
#include "downscale/errors.hpp"
#include "downscale/grid.hpp"

namespace dsc {

namespace detail {

inline std::vector<std::size_t> period_indices(const GriddedField& f,
                                               const DateRange& period) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < f.ntime(); ++t)
    if (period.contains(f.times[t])) idx.push_back(t);
  if (idx.empty())
    throw input_error("period " + period.to_string() +
                      " selects no days from the field's time axis");
  return idx;
}

inline std::string cell_name(const GriddedField& f, std::size_t c,
                             std::size_t i, std::size_t j) {
  return f.channels[c].id() + " at (" + std::to_string(f.geometry.lats[i]) +
         ", " + std::to_string(f.geometry.lons[j]) + ")";
}

}  // namespace detail

// Per-(channel, gridbox) mean and population standard deviation fitted on a
// reference period.
struct Standardizer {
  GridGeometry geometry;
  std::vector<ChannelSpec> channels;
  Tensor<double> mean;  // [C, H, W]
  Tensor<double> std;   // [C, H, W]

  void check_compatible(const GriddedField& f) const {
    if (f.geometry != geometry)
      throw input_error("standardizer: geometry mismatch");
    if (f.channels != channels)
      throw input_error("standardizer: channel mismatch");
  }
};

inline Standardizer fit_standardizer(const GriddedField& predictors,
                                     const DateRange& period) {
  predictors.validate();
  const auto idx = detail::period_indices(predictors, period);
  const std::size_t C = predictors.nchan();
  const std::size_t H = predictors.geometry.rows();
  const std::size_t W = predictors.geometry.cols();

  Standardizer s;
  s.geometry = predictors.geometry;
  s.channels = predictors.channels;
  s.mean = Tensor<double>({C, H, W});
  s.std = Tensor<double>({C, H, W});
  const double n = double(idx.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double sum = 0.0;
        for (std::size_t t : idx) sum += predictors.at(t, c, i, j);
        const double mu = sum / n;
        double ss = 0.0;
        for (std::size_t t : idx) {
          const double d = predictors.at(t, c, i, j) - mu;
          ss += d * d;
        }
        const double sigma = std::sqrt(ss / n);
        if (!(sigma > 0.0))
          throw input_error("standardizer: zero variance in cell " +
                            detail::cell_name(predictors, c, i, j));
        s.mean.at3(c, i, j) = mu;
        s.std.at3(c, i, j) = sigma;
      }
  return s;
}

inline GriddedField apply_standardizer(const GriddedField& predictors,
                                       const Standardizer& s) {
  predictors.validate();
  s.check_compatible(predictors);
  GriddedField out = predictors;
  for (std::size_t t = 0; t < out.ntime(); ++t)
    for (std::size_t c = 0; c < out.nchan(); ++c)
      for (std::size_t i = 0; i < out.geometry.rows(); ++i)
        for (std::size_t j = 0; j < out.geometry.cols(); ++j)
          out.at(t, c, i, j) =
              (predictors.at(t, c, i, j) - s.mean.at3(c, i, j)) /
              s.std.at3(c, i, j);
  return out;
}

// Per-(calendar month, channel, gridbox) mean and population standard
// deviation for a named dataset/period.
struct MonthlyMoments {
  GridGeometry geometry;
  std::vector<ChannelSpec> channels;
  Tensor<double> mean;  // [12, C, H, W]
  Tensor<double> std;   // [12, C, H, W]

  void check_compatible(const GriddedField& f) const {
    if (f.geometry != geometry)
      throw input_error("monthly moments: geometry mismatch");
    if (f.channels != channels)
      throw input_error("monthly moments: channel mismatch");
  }
};

inline MonthlyMoments fit_monthly_moments(const GriddedField& field,
                                          const DateRange& period) {
  field.validate();
  const auto idx = detail::period_indices(field, period);
  const std::size_t C = field.nchan();
  const std::size_t H = field.geometry.rows();
  const std::size_t W = field.geometry.cols();

  std::vector<std::vector<std::size_t>> by_month(12);
  for (std::size_t t : idx) by_month[field.times[t].month - 1].push_back(t);
  for (int m = 0; m < 12; ++m)
    if (by_month[m].empty())
      throw input_error("monthly moments: no days for calendar month " +
                        std::to_string(m + 1) + " in period " +
                        period.to_string());

  MonthlyMoments mm;
  mm.geometry = field.geometry;
  mm.channels = field.channels;
  mm.mean = Tensor<double>({12, C, H, W});
  mm.std = Tensor<double>({12, C, H, W});
  for (int m = 0; m < 12; ++m) {
    const auto& days = by_month[m];
    const double n = double(days.size());
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double sum = 0.0;
          for (std::size_t t : days) sum += field.at(t, c, i, j);
          const double mu = sum / n;
          double ss = 0.0;
          for (std::size_t t : days) {
            const double d = field.at(t, c, i, j) - mu;
            ss += d * d;
          }
          const double sigma = std::sqrt(ss / n);
          if (!(sigma > 0.0))
            throw input_error("monthly moments: zero variance in month " +
                              std::to_string(m + 1) + ", cell " +
                              detail::cell_name(field, c, i, j));
          mm.mean.at4(std::size_t(m), c, i, j) = mu;
          mm.std.at4(std::size_t(m), c, i, j) = sigma;
        }
  }
  return mm;
}

// Signal-preserving monthly mean/variance adjustment of GCM predictors toward
// observational statistics.  For a day in calendar month m:
//   x' = mu_obs_m + (sigma_obs_m / sigma_gcm_m) * (x - mu_gcm_m)
// The same historical-period moments are applied to every period, including
// future scenarios.
inline GriddedField adjust_gcm_monthly(const GriddedField& gcm,
                                       const MonthlyMoments& gcm_hist_moments,
                                       const MonthlyMoments& obs_moments) {
  gcm.validate();
  gcm_hist_moments.check_compatible(gcm);
  obs_moments.check_compatible(gcm);
  GriddedField out = gcm;
  for (std::size_t t = 0; t < out.ntime(); ++t) {
    const std::size_t m = std::size_t(gcm.times[t].month - 1);
    for (std::size_t c = 0; c < out.nchan(); ++c)
      for (std::size_t i = 0; i < out.geometry.rows(); ++i)
        for (std::size_t j = 0; j < out.geometry.cols(); ++j) {
          const double x = gcm.at(t, c, i, j);
          const double mu_g = gcm_hist_moments.mean.at4(m, c, i, j);
          const double sd_g = gcm_hist_moments.std.at4(m, c, i, j);
          const double mu_o = obs_moments.mean.at4(m, c, i, j);
          const double sd_o = obs_moments.std.at4(m, c, i, j);
          out.at(t, c, i, j) = mu_o + (sd_o / sd_g) * (x - mu_g);
        }
  }
  return out;
}

// ---- container serialization ----------------------------------------------

namespace containerio {

inline void put_standardizer(Container& c, const std::string& name,
                             const Standardizer& s) {
  put_geometry(c, name + ".geometry", s.geometry);
  put_channels(c, name + ".channels", s.channels);
  c.add_f64(name + ".mean", s.mean.shape, s.mean.v);
  c.add_f64(name + ".std", s.std.shape, s.std.v);
}

inline Standardizer get_standardizer(const Container& c,
                                     const std::string& name) {
  Standardizer s;
  s.geometry = get_geometry(c, name + ".geometry");
  s.channels = get_channels(c, name + ".channels");
  const auto& m = c.require_array(name + ".mean");
  const auto& sd = c.require_array(name + ".std");
  if (m.dtype != 'd' || sd.dtype != 'd')
    throw format_error("container: standardizer arrays must be f64");
  s.mean = Tensor<double>(m.shape, m.d);
  s.std = Tensor<double>(sd.shape, sd.d);
  return s;
}

inline void put_monthly_moments(Container& c, const std::string& name,
                                const MonthlyMoments& mm) {
  put_geometry(c, name + ".geometry", mm.geometry);
  put_channels(c, name + ".channels", mm.channels);
  c.add_f64(name + ".mean", mm.mean.shape, mm.mean.v);
  c.add_f64(name + ".std", mm.std.shape, mm.std.v);
}

inline MonthlyMoments get_monthly_moments(const Container& c,
                                          const std::string& name) {
  MonthlyMoments mm;
  mm.geometry = get_geometry(c, name + ".geometry");
  mm.channels = get_channels(c, name + ".channels");
  const auto& m = c.require_array(name + ".mean");
  const auto& sd = c.require_array(name + ".std");
  if (m.dtype != 'd' || sd.dtype != 'd')
    throw format_error("container: moments arrays must be f64");
  mm.mean = Tensor<double>(m.shape, m.d);
  mm.std = Tensor<double>(sd.shape, sd.d);
  return mm;
}

}  // namespace containerio

}  // namespace dsc
