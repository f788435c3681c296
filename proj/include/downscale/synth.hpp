#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "downscale/container.hpp"
#include "downscale/errors.hpp"
#include "downscale/grid.hpp"

namespace dsc {

// Synthetic gridded dataset with known locality ground truth: each target
// location depends only on predictor cells of the causal channel within
// radius rho of the target, with weights that sum to one per location.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  GridGeometry predictor_geometry;
  std::vector<ChannelSpec> channels;
  std::size_t causal_channel = 0;
  GridGeometry predictand_geometry;
  LandMask mask;
  double radius_km = 250.0;
  double noise_std = 0.0;
  Date start{2000, 1, 1};
  std::size_t days = 0;
  // Pseudo-GCM extension: future days repeat the historical day-of-year value
  // with a per-calendar-month additive trend on the causal channel.
  std::size_t future_days = 0;
  std::array<double, 12> monthly_shift{};

  void validate() const {
    predictor_geometry.validate();
    predictand_geometry.validate();
    validate_channels(channels);
    if (causal_channel >= channels.size())
      throw input_error("synthetic spec: causal channel out of range");
    if (mask.rows != predictand_geometry.rows() ||
        mask.cols != predictand_geometry.cols())
      throw input_error("synthetic spec: mask does not match predictand grid");
    if (days == 0) throw input_error("synthetic spec: zero days");
    if (radius_km <= 0.0)
      throw input_error("synthetic spec: radius must be positive");
  }
};

// Per-location causal support: predictor cell indices and weights on the
// causal channel.
struct SynthTruth {
  std::size_t causal_channel = 0;
  double radius_km = 0.0;
  std::vector<std::vector<std::size_t>> support;  // flat predictor cell idx
  std::vector<std::vector<double>> weights;       // same extents, sum 1
};

struct SynthResult {
  GriddedField predictors;
  TargetField predictand;
  SynthTruth truth;
  std::optional<GriddedField> gcm_predictors;
  std::optional<TargetField> gcm_reference;
};

namespace detail {

inline TargetField apply_truth(const GriddedField& predictors,
                               const SynthTruth& truth, double noise_std,
                               std::mt19937_64& rng) {
  TargetField out;
  out.times = predictors.times;
  const std::size_t nloc = truth.support.size();
  out.data = Tensor<double>({predictors.ntime(), nloc});
  std::normal_distribution<double> noise(0.0, noise_std);
  const std::size_t plane =
      predictors.geometry.rows() * predictors.geometry.cols();
  for (std::size_t t = 0; t < predictors.ntime(); ++t) {
    const double* field =
        predictors.data.data() + (t * predictors.nchan() + truth.causal_channel) * plane;
    for (std::size_t l = 0; l < nloc; ++l) {
      double v = 0.0;
      for (std::size_t k = 0; k < truth.support[l].size(); ++k)
        v += truth.weights[l][k] * field[truth.support[l][k]];
      if (noise_std > 0.0) v += noise(rng);
      out.data.at2(t, l) = v;
    }
  }
  return out;
}

}  // namespace detail

inline SynthResult synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  // Causal supports: every predictor cell within radius of the target.
  SynthTruth truth;
  truth.causal_channel = spec.causal_channel;
  truth.radius_km = spec.radius_km;
  const auto& pg = spec.predictor_geometry;
  for (std::size_t cell : spec.mask.cells) {
    const std::size_t r = cell / spec.mask.cols, c = cell % spec.mask.cols;
    const double tlat = spec.predictand_geometry.lats[r];
    const double tlon = spec.predictand_geometry.lons[c];
    std::vector<std::size_t> support;
    std::vector<double> weights;
    for (std::size_t i = 0; i < pg.rows(); ++i)
      for (std::size_t j = 0; j < pg.cols(); ++j)
        if (haversine_km(pg.lats[i], pg.lons[j], tlat, tlon) <= spec.radius_km)
          support.push_back(i * pg.cols() + j);
    if (support.empty())
      throw input_error(
          "synthetic spec: no predictor cell within radius of target (" +
          std::to_string(tlat) + ", " + std::to_string(tlon) + ")");
    std::uniform_real_distribution<double> wdist(0.5, 1.5);
    double sum = 0.0;
    for (std::size_t k = 0; k < support.size(); ++k) {
      weights.push_back(wdist(rng));
      sum += weights.back();
    }
    for (double& w : weights) w /= sum;
    truth.support.push_back(std::move(support));
    truth.weights.push_back(std::move(weights));
  }

  // Predictors: iid standard normal everywhere (non-causal channels carry
  // independent noise by construction).
  SynthResult result;
  result.predictors.geometry = pg;
  result.predictors.channels = spec.channels;
  for (std::size_t t = 0; t < spec.days; ++t)
    result.predictors.times.push_back(spec.start.plus_days(std::int64_t(t)));
  result.predictors.data = Tensor<double>(
      {spec.days, spec.channels.size(), pg.rows(), pg.cols()});
  {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& x : result.predictors.data.v) x = dist(rng);
  }
  result.predictand =
      detail::apply_truth(result.predictors, truth, spec.noise_std, rng);
  result.truth = truth;

  if (spec.future_days > 0) {
    // Pseudo-GCM predictors: an independent historical draw, extended into
    // the future by repeating the same day-of-year values with the monthly
    // trend added on the causal channel.
    GriddedField gcm;
    gcm.geometry = pg;
    gcm.channels = spec.channels;
    const std::size_t total = spec.days + spec.future_days;
    for (std::size_t t = 0; t < total; ++t)
      gcm.times.push_back(spec.start.plus_days(std::int64_t(t)));
    gcm.data =
        Tensor<double>({total, spec.channels.size(), pg.rows(), pg.cols()});
    const std::size_t per_day = spec.channels.size() * pg.rows() * pg.cols();
    {
      std::normal_distribution<double> dist(0.0, 1.0);
      for (std::size_t i = 0; i < spec.days * per_day; ++i) gcm.data[i] = dist(rng);
    }
    // Day-of-year lookup into the historical part (Feb 29 maps to Feb 28).
    std::map<std::pair<int, int>, std::size_t> doy;
    for (std::size_t t = 0; t < spec.days; ++t) {
      const Date d = gcm.times[t];
      doy.emplace(std::make_pair(d.month, d.day), t);
    }
    const std::size_t plane = pg.rows() * pg.cols();
    for (std::size_t t = spec.days; t < total; ++t) {
      Date d = gcm.times[t];
      auto it = doy.find({d.month, d.day});
      if (it == doy.end() && d.month == 2 && d.day == 29)
        it = doy.find({2, 28});
      if (it == doy.end())
        throw input_error(
            "synthetic spec: historical period must cover a full year for "
            "pseudo-GCM generation (missing " + d.to_string() + ")");
      const std::size_t src = it->second;
      std::copy_n(gcm.data.data() + src * per_day, per_day,
                  gcm.data.data() + t * per_day);
      const double shift = spec.monthly_shift[std::size_t(d.month - 1)];
      if (shift != 0.0) {
        double* causal =
            gcm.data.data() + (t * spec.channels.size() + spec.causal_channel) * plane;
        for (std::size_t q = 0; q < plane; ++q) causal[q] += shift;
      }
    }
    // Pseudo-reality temperature series: the noiseless truth applied to the
    // pseudo-GCM predictors. Weights sum to one per location, so a uniform
    // monthly shift on the causal channel injects exactly that delta.
    std::mt19937_64 null_rng(0);
    result.gcm_reference = detail::apply_truth(gcm, truth, 0.0, null_rng);
    result.gcm_predictors = std::move(gcm);
  }
  return result;
}

// ---- container serialization ----------------------------------------------

namespace containerio {

inline void put_truth(Container& c, const std::string& name,
                      const SynthTruth& truth) {
  c.set_meta(name + ".causal_channel", std::to_string(truth.causal_channel));
  c.set_meta(name + ".radius_km", std::to_string(truth.radius_km));
  std::vector<float> counts;
  std::vector<float> cells;
  std::vector<float> weights;
  for (std::size_t l = 0; l < truth.support.size(); ++l) {
    counts.push_back(float(truth.support[l].size()));
    for (std::size_t k = 0; k < truth.support[l].size(); ++k) {
      cells.push_back(float(truth.support[l][k]));
      weights.push_back(float(truth.weights[l][k]));
    }
  }
  c.add_f32(name + ".support_counts", {counts.size()}, counts);
  c.add_f32(name + ".support_cells", {cells.size()}, cells);
  std::vector<double> w64(weights.size());
  // Weights kept at full precision for the least-squares oracle.
  std::size_t i = 0;
  for (std::size_t l = 0; l < truth.weights.size(); ++l)
    for (double w : truth.weights[l]) w64[i++] = w;
  c.add_f64(name + ".support_weights", {w64.size()}, w64);
}

inline SynthTruth get_truth(const Container& c, const std::string& name) {
  SynthTruth t;
  t.causal_channel = std::stoul(c.require_meta(name + ".causal_channel"));
  t.radius_km = std::stod(c.require_meta(name + ".radius_km"));
  const auto& counts = c.require_array(name + ".support_counts");
  const auto& cells = c.require_array(name + ".support_cells");
  const auto& weights = c.require_array(name + ".support_weights");
  std::size_t pos = 0;
  for (float fc : counts.f) {
    const std::size_t n = std::size_t(fc);
    std::vector<std::size_t> sup(n);
    std::vector<double> w(n);
    for (std::size_t k = 0; k < n; ++k, ++pos) {
      if (pos >= cells.f.size() || pos >= weights.d.size())
        throw format_error("truth: support arrays truncated");
      sup[k] = std::size_t(cells.f[pos]);
      w[k] = weights.d[pos];
    }
    t.support.push_back(std::move(sup));
    t.weights.push_back(std::move(w));
  }
  return t;
}

}  // namespace containerio

}  // namespace dsc
