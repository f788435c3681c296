#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "downscale/date.hpp"
#include "downscale/errors.hpp"
#include "downscale/grid.hpp"

namespace dsc {

enum class ValidationIndex { P02, Mean, P98, Rmse };

inline std::string index_name(ValidationIndex i) {
  switch (i) {
    case ValidationIndex::P02: return "P02";
    case ValidationIndex::Mean: return "mean";
    case ValidationIndex::P98: return "P98";
    case ValidationIndex::Rmse: return "RMSE";
  }
  throw input_error("bad validation index");
}

inline ValidationIndex parse_index(const std::string& s) {
  if (s == "P02" || s == "p02") return ValidationIndex::P02;
  if (s == "mean") return ValidationIndex::Mean;
  if (s == "P98" || s == "p98") return ValidationIndex::P98;
  if (s == "RMSE" || s == "rmse") return ValidationIndex::Rmse;
  throw input_error("unknown validation index: " + s);
}

// Linear interpolation between order statistics: h = (n-1)*p/100 on the
// sorted sample (0-indexed).
inline double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw input_error("percentile: empty sample");
  if (!(p >= 0.0 && p <= 100.0))
    throw input_error("percentile: p outside [0, 100]");
  std::sort(samples.begin(), samples.end());
  const double h = double(samples.size() - 1) * p / 100.0;
  const std::size_t lo = std::size_t(std::floor(h));
  if (lo + 1 >= samples.size()) return samples.back();
  const double frac = h - double(lo);
  return samples[lo] + frac * (samples[lo + 1] - samples[lo]);
}

namespace detail {

inline double series_index(const std::vector<double>& xs, ValidationIndex idx) {
  switch (idx) {
    case ValidationIndex::P02: return percentile(xs, 2.0);
    case ValidationIndex::P98: return percentile(xs, 98.0);
    case ValidationIndex::Mean: {
      double s = 0.0;
      for (double x : xs) s += x;
      return s / double(xs.size());
    }
    case ValidationIndex::Rmse:
      throw input_error("RMSE is not a single-series index");
  }
  throw input_error("bad validation index");
}

inline void check_aligned(const TargetField& pred, const TargetField& obs) {
  if (pred.times != obs.times)
    throw input_error("prediction/observation time axes differ");
  if (pred.nloc() != obs.nloc())
    throw input_error("prediction/observation location counts differ");
  if (pred.ntime() == 0) throw input_error("empty time axis");
}

}  // namespace detail

// index(pred series) - index(obs series), per location.
inline std::vector<double> bias_map(const TargetField& pred,
                                    const TargetField& obs,
                                    ValidationIndex index) {
  if (index == ValidationIndex::Rmse)
    throw input_error("bias_map: RMSE is not a bias index");
  detail::check_aligned(pred, obs);
  const std::size_t nloc = pred.nloc();
  std::vector<double> out(nloc);
  std::vector<double> ps(pred.ntime()), os(pred.ntime());
  for (std::size_t l = 0; l < nloc; ++l) {
    for (std::size_t t = 0; t < pred.ntime(); ++t) {
      ps[t] = pred.data.at2(t, l);
      os[t] = obs.data.at2(t, l);
    }
    out[l] = detail::series_index(ps, index) - detail::series_index(os, index);
  }
  return out;
}

// Per-location root of the mean squared daily error.
inline std::vector<double> rmse_map(const TargetField& pred,
                                    const TargetField& obs) {
  detail::check_aligned(pred, obs);
  const std::size_t nloc = pred.nloc();
  std::vector<double> out(nloc);
  for (std::size_t l = 0; l < nloc; ++l) {
    double ss = 0.0;
    for (std::size_t t = 0; t < pred.ntime(); ++t) {
      const double d = pred.data.at2(t, l) - obs.data.at2(t, l);
      ss += d * d;
    }
    out[l] = std::sqrt(ss / double(pred.ntime()));
  }
  return out;
}

// Unweighted mean of |value| over locations (panel summary number).
inline double spatial_mean_abs(const std::vector<double>& map) {
  if (map.empty()) throw input_error("spatial_mean_abs: empty map");
  double s = 0.0;
  for (double x : map) s += std::abs(x);
  return s / double(map.size());
}

// Calendar-month filter: 0 = annual (all months), otherwise 1..12.
struct MonthFilter {
  int month = 0;

  static MonthFilter annual() { return {0}; }
  static MonthFilter august() { return {8}; }
  static MonthFilter december() { return {12}; }

  bool matches(const Date& d) const { return month == 0 || d.month == month; }

  std::string to_string() const {
    static const char* names[] = {"annual", "jan", "feb", "mar", "apr",
                                  "may",    "jun", "jul", "aug", "sep",
                                  "oct",    "nov", "dec"};
    return names[month];
  }

  static MonthFilter parse(const std::string& s) {
    static const char* names[] = {"annual", "jan", "feb", "mar", "apr",
                                  "may",    "jun", "jul", "aug", "sep",
                                  "oct",    "nov", "dec"};
    for (int i = 0; i <= 12; ++i)
      if (s == names[i]) return {i};
    throw input_error("unknown month filter: " + s);
  }

  friend bool operator==(const MonthFilter& a, const MonthFilter& b) {
    return a.month == b.month;
  }
};

// index over filtered future days minus index over filtered historical days,
// per location.
inline std::vector<double> delta_change(const TargetField& series,
                                        const DateRange& hist,
                                        const DateRange& future,
                                        ValidationIndex index,
                                        MonthFilter filter = MonthFilter::annual()) {
  if (index == ValidationIndex::Rmse)
    throw input_error("delta_change: RMSE is not a delta index");
  series.validate();
  auto collect = [&](const DateRange& period, std::size_t l) {
    std::vector<double> xs;
    for (std::size_t t = 0; t < series.ntime(); ++t)
      if (period.contains(series.times[t]) && filter.matches(series.times[t]))
        xs.push_back(series.data.at2(t, l));
    return xs;
  };
  const std::size_t nloc = series.nloc();
  std::vector<double> out(nloc);
  for (std::size_t l = 0; l < nloc; ++l) {
    std::vector<double> f = collect(future, l);
    std::vector<double> h = collect(hist, l);
    if (f.empty() || h.empty())
      throw input_error("delta_change: empty filtered period (" +
                        filter.to_string() + ")");
    out[l] = detail::series_index(f, index) - detail::series_index(h, index);
  }
  return out;
}

// Closed lat/lon polygon; vertices as (lon, lat).
struct Region {
  std::string name;
  std::vector<std::pair<double, double>> polygon;
};

// Ray-casting point-in-polygon with strict upper comparisons and an eastward
// crossing test; on a rectangle this makes south and west edges inclusive,
// north and east edges exclusive (the documented boundary rule).
inline bool point_in_polygon(double lon, double lat,
                             const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double x1 = poly[j].first, y1 = poly[j].second;
    const double x2 = poly[i].first, y2 = poly[i].second;
    if ((y1 > lat) != (y2 > lat)) {
      const double xint = x1 + (lat - y1) * (x2 - x1) / (y2 - y1);
      if (lon < xint) inside = !inside;
    }
  }
  return inside;
}

// Named polygon masks over the predictand grid.
struct RegionSet {
  std::vector<Region> regions;

  // Region index per target location (-1 when unassigned); throws if any
  // point falls in more than one region.
  std::vector<int> assign(
      const std::vector<std::pair<double, double>>& latlon) const {
    std::vector<int> out(latlon.size(), -1);
    for (std::size_t p = 0; p < latlon.size(); ++p) {
      for (std::size_t r = 0; r < regions.size(); ++r) {
        if (point_in_polygon(latlon[p].second, latlon[p].first,
                             regions[r].polygon)) {
          if (out[p] >= 0)
            throw input_error("region set: gridpoint belongs to both '" +
                              regions[std::size_t(out[p])].name + "' and '" +
                              regions[r].name + "'");
          out[p] = int(r);
        }
      }
    }
    return out;
  }
};

// Unweighted mean over member gridpoints per region; regions with no members
// report missing (nullopt), never zero.
inline std::vector<std::optional<double>> region_aggregate(
    const std::vector<double>& map, const std::vector<int>& membership,
    std::size_t nregions) {
  if (map.size() != membership.size())
    throw input_error("region_aggregate: map/membership size mismatch");
  std::vector<double> sums(nregions, 0.0);
  std::vector<std::size_t> counts(nregions, 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (membership[i] < 0) continue;
    sums[std::size_t(membership[i])] += map[i];
    counts[std::size_t(membership[i])] += 1;
  }
  std::vector<std::optional<double>> out(nregions);
  for (std::size_t r = 0; r < nregions; ++r)
    if (counts[r] > 0) out[r] = sums[r] / double(counts[r]);
  return out;
}

// Side-by-side regional delta table for the pseudo-reality protocol.
struct DeltaReport {
  struct Row {
    std::string region;
    std::string period;
    ValidationIndex index = ValidationIndex::Mean;
    MonthFilter filter;
    std::optional<double> gcm_delta;
    std::optional<double> model_delta;
    bool flagged = false;  // |model - gcm| exceeds the threshold
  };
  double threshold_degc = 2.0;
  std::vector<Row> rows;

  std::size_t flag_count() const {
    std::size_t n = 0;
    for (const Row& r : rows) n += r.flagged;
    return n;
  }

  std::string to_tsv() const {
    std::ostringstream os;
    os.precision(17);
    os << "region\tperiod\tindex\tmonths\tgcm_delta\tmodel_delta\tflag\n";
    for (const Row& r : rows) {
      os << r.region << "\t" << r.period << "\t" << index_name(r.index) << "\t"
         << r.filter.to_string() << "\t";
      if (r.gcm_delta) os << *r.gcm_delta; else os << "missing";
      os << "\t";
      if (r.model_delta) os << *r.model_delta; else os << "missing";
      os << "\t" << (r.flagged ? 1 : 0) << "\n";
    }
    return os.str();
  }

  static DeltaReport from_tsv(const std::string& text, double threshold) {
    DeltaReport rep;
    rep.threshold_degc = threshold;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line.rfind("region\t", 0) != 0)
      throw format_error("delta report: missing header");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      Row r;
      std::string idx, months, gcm, model, flag;
      std::getline(ls, r.region, '\t');
      std::getline(ls, r.period, '\t');
      std::getline(ls, idx, '\t');
      std::getline(ls, months, '\t');
      std::getline(ls, gcm, '\t');
      std::getline(ls, model, '\t');
      std::getline(ls, flag, '\t');
      r.index = parse_index(idx);
      r.filter = MonthFilter::parse(months);
      if (gcm != "missing") r.gcm_delta = std::stod(gcm);
      if (model != "missing") r.model_delta = std::stod(model);
      r.flagged = flag == "1";
      rep.rows.push_back(std::move(r));
    }
    return rep;
  }
};

struct DeltaPeriodSpec {
  std::string name;  // e.g. "2041:2070"
  DateRange range;
};

// Computes regional deltas for both series over every (period, index, month
// filter) combination and flags regional discrepancies above the threshold.
inline DeltaReport pseudo_reality_report(
    const TargetField& model_series, const TargetField& gcm_series,
    const DateRange& hist, const std::vector<DeltaPeriodSpec>& periods,
    const std::vector<ValidationIndex>& indices,
    const std::vector<MonthFilter>& filters, const RegionSet& regions,
    const std::vector<std::pair<double, double>>& latlon,
    double threshold_degc = 2.0) {
  if (model_series.nloc() != gcm_series.nloc())
    throw input_error("pseudo_reality_report: location count mismatch");
  const std::vector<int> membership = regions.assign(latlon);
  DeltaReport rep;
  rep.threshold_degc = threshold_degc;
  for (const DeltaPeriodSpec& period : periods)
    for (ValidationIndex idx : indices)
      for (const MonthFilter& filter : filters) {
        const auto gcm_map =
            delta_change(gcm_series, hist, period.range, idx, filter);
        const auto model_map =
            delta_change(model_series, hist, period.range, idx, filter);
        const auto gcm_reg =
            region_aggregate(gcm_map, membership, regions.regions.size());
        const auto model_reg =
            region_aggregate(model_map, membership, regions.regions.size());
        for (std::size_t r = 0; r < regions.regions.size(); ++r) {
          DeltaReport::Row row;
          row.region = regions.regions[r].name;
          row.period = period.name;
          row.index = idx;
          row.filter = filter;
          row.gcm_delta = gcm_reg[r];
          row.model_delta = model_reg[r];
          row.flagged = row.gcm_delta && row.model_delta &&
                        std::abs(*row.model_delta - *row.gcm_delta) >
                            threshold_degc;
          rep.rows.push_back(std::move(row));
        }
      }
  return rep;
}

}  // namespace dsc
