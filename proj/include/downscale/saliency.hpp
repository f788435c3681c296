#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "downscale/errors.hpp"
#include "downscale/grid.hpp"
#include "downscale/nn.hpp"

namespace dsc {

inline constexpr double kSaliencyThreshold = 0.1;

// Integrated Gradients along the straight path from baseline to input for one
// output neuron. The path integral uses the trapezoidal rule on a uniform
// [0,1] grid including both endpoints (midpoint rule when steps == 1).
// Returns the signed attribution per input feature, shape [C, H, W].
template <typename T>
Tensor<double> integrated_gradients(ModelGraph<T>& model, const Tensor<T>& input,
                                    const Tensor<T>& baseline,
                                    std::size_t target_location,
                                    std::size_t steps) {
  if (steps < 1) throw input_error("integrated_gradients: steps must be >= 1");
  if (baseline.shape != input.shape)
    throw input_error("integrated_gradients: baseline shape mismatch");
  if (target_location >= model.output_size())
    throw input_error("integrated_gradients: target location out of range");

  const std::size_t n = input.numel();
  std::vector<double> avg_grad(n, 0.0);
  Tensor<T> point(input.shape);
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha =
        steps == 1 ? 0.5 : double(k) / double(steps - 1);
    const double weight =
        steps == 1 ? 1.0
                   : (k == 0 || k == steps - 1 ? 0.5 : 1.0) / double(steps - 1);
    for (std::size_t i = 0; i < n; ++i)
      point[i] = T(double(baseline[i]) +
                   alpha * (double(input[i]) - double(baseline[i])));
    Tensor<T> g = model.input_gradient(point, target_location);
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = double(g[i]);
      if (!std::isfinite(gi))
        throw numeric_error("integrated_gradients: non-finite gradient");
      avg_grad[i] += weight * gi;
    }
  }
  Tensor<double> out;
  out.shape = input.shape;
  out.v.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.v[i] = (double(input[i]) - double(baseline[i])) * avg_grad[i];
  return out;
}

// Per-day attribution over the full predictor space for every target
// location: absolute value, per-location max normalization, 0.1 threshold.
struct SaliencyCube {
  Tensor<double> values;  // [location, channel, lat, lon], in [0, 1]
  Date day;
  std::string model_id;
  std::string baseline_id;
  std::size_t steps = 0;
  std::vector<std::size_t> zero_locations;  // all-zero maps, flagged

  std::size_t nloc() const { return values.shape[0]; }
};

// Absolute value over all channels and gridboxes jointly, divide by the
// per-location maximum, zero out values below the threshold. All-zero maps
// are returned untouched and recorded in the cube's zero-location list.
inline SaliencyCube normalize_threshold(const Tensor<double>& raw, Date day,
                                        std::string model_id = "",
                                        std::string baseline_id = "",
                                        std::size_t steps = 0,
                                        double threshold = kSaliencyThreshold) {
  if (raw.shape.size() != 4)
    throw input_error("normalize_threshold: expects [location, C, H, W]");
  for (double x : raw.v)
    if (!std::isfinite(x))
      throw input_error("normalize_threshold: non-finite attribution");
  SaliencyCube cube;
  cube.values = Tensor<double>(raw.shape);
  cube.day = day;
  cube.model_id = std::move(model_id);
  cube.baseline_id = std::move(baseline_id);
  cube.steps = steps;
  const std::size_t nloc = raw.shape[0];
  const std::size_t per_loc = raw.numel() / nloc;
  for (std::size_t l = 0; l < nloc; ++l) {
    const double* src = raw.data() + l * per_loc;
    double* dst = cube.values.data() + l * per_loc;
    double mx = 0.0;
    for (std::size_t i = 0; i < per_loc; ++i) mx = std::max(mx, std::abs(src[i]));
    if (mx == 0.0) {
      cube.zero_locations.push_back(l);
      continue;
    }
    for (std::size_t i = 0; i < per_loc; ++i) {
      const double v = std::abs(src[i]) / mx;
      dst[i] = v < threshold ? 0.0 : v;
    }
  }
  return cube;
}

enum class PeriodAggregation { Mean, Sum };

// Accumulated Saliency Map: per day, sum over target locations; then
// aggregate over the days of the period (mean by default).
inline Tensor<double> accumulate_asm(
    const std::vector<SaliencyCube>& cubes,
    PeriodAggregation agg = PeriodAggregation::Mean) {
  if (cubes.empty()) throw input_error("accumulate_asm: empty period");
  const Shape& s = cubes.front().values.shape;
  Tensor<double> out({s[1], s[2], s[3]});
  for (const SaliencyCube& cube : cubes) {
    if (cube.values.shape != s)
      throw input_error("accumulate_asm: cube shape mismatch");
    const std::size_t per_loc = out.numel();
    for (std::size_t l = 0; l < cube.nloc(); ++l) {
      const double* src = cube.values.data() + l * per_loc;
      for (std::size_t i = 0; i < per_loc; ++i) out[i] += src[i];
    }
  }
  if (agg == PeriodAggregation::Mean)
    for (double& x : out.v) x /= double(cubes.size());
  return out;
}

// Saliency Dispersion Map: per day and target location, the sum over
// predictor gridboxes of salience x great-circle distance to the target; then
// aggregate over days. Per-channel by default; channel == nullopt sums
// channels before weighting. normalize divides by total salience per map.
inline std::vector<double> compute_sdm(
    const std::vector<SaliencyCube>& cubes, const GridGeometry& predictor_geom,
    const std::vector<std::pair<double, double>>& target_latlon,
    std::optional<std::size_t> channel,
    PeriodAggregation agg = PeriodAggregation::Mean, bool normalize = false) {
  if (cubes.empty()) throw input_error("compute_sdm: empty period");
  const Shape& s = cubes.front().values.shape;
  const std::size_t nloc = s[0], nchan = s[1];
  const std::size_t h = s[2], w = s[3];
  if (channel && *channel >= nchan)
    throw input_error("compute_sdm: channel not present in cubes");
  if (target_latlon.size() != nloc)
    throw input_error("compute_sdm: target coordinate count mismatch");
  if (predictor_geom.rows() != h || predictor_geom.cols() != w)
    throw input_error("compute_sdm: predictor geometry mismatch");

  // Distance fields per target location are day-independent.
  std::vector<Tensor<double>> dist(nloc);
  for (std::size_t l = 0; l < nloc; ++l)
    dist[l] = distance_field(predictor_geom, target_latlon[l].first,
                             target_latlon[l].second);

  std::vector<double> out(nloc, 0.0);
  for (const SaliencyCube& cube : cubes) {
    if (cube.values.shape != s) throw input_error("compute_sdm: cube shape mismatch");
    for (std::size_t l = 0; l < nloc; ++l) {
      double weighted = 0.0, total = 0.0;
      for (std::size_t c = 0; c < nchan; ++c) {
        if (channel && c != *channel) continue;
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double sal = cube.values.at4(l, c, i, j);
            weighted += sal * dist[l].at2(i, j);
            total += sal;
          }
      }
      out[l] += normalize ? (total > 0.0 ? weighted / total : 0.0) : weighted;
    }
  }
  if (agg == PeriodAggregation::Mean)
    for (double& x : out) x /= double(cubes.size());
  return out;
}

// Raw IG attributions for every target location of one day, stacked into the
// [location, C, H, W] block normalize_threshold expects.
template <typename T>
Tensor<double> attribute_day(ModelGraph<T>& model, const Tensor<T>& input,
                             const Tensor<T>& baseline, std::size_t steps) {
  const std::size_t nloc = model.output_size();
  Shape s = model.input_shape;
  Tensor<double> raw({nloc, s[0], s[1], s[2]});
  const std::size_t per_loc = raw.numel() / nloc;
  for (std::size_t l = 0; l < nloc; ++l) {
    Tensor<double> a = integrated_gradients(model, input, baseline, l, steps);
    std::copy_n(a.data(), per_loc, raw.data() + l * per_loc);
  }
  return raw;
}

}  // namespace dsc
