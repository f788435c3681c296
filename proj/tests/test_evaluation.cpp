#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "downscale/evaluation.hpp"

using namespace dsc;
using Catch::Approx;

TEST_CASE("percentile worked examples") {
  CHECK(percentile({3, 1, 2}, 50) == 2.0);
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[std::size_t(i)] = i + 1;
  // h = 99*0.98 = 97.02 -> 98 + 0.02
  CHECK(percentile(v, 98) == Approx(98.02).margin(1e-12));
  CHECK(percentile(v, 2) == Approx(2.98).margin(1e-12));
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 100.0);
  CHECK(percentile({5.0}, 73) == 5.0);
  CHECK_THROWS_AS(percentile({}, 50), input_error);
  CHECK_THROWS_AS(percentile({1.0}, 101), input_error);
}

TEST_CASE("percentile properties on random samples") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-50, 50);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(1 + rng() % 40);
    for (double& x : xs) x = dist(rng);
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    CHECK(percentile(xs, 0) == sorted.front());
    CHECK(percentile(xs, 100) == sorted.back());
    // Exact order statistics at integer h.
    const std::size_t n = xs.size();
    if (n > 1) {
      const std::size_t k = rng() % n;
      CHECK(percentile(xs, 100.0 * double(k) / double(n - 1)) ==
            Approx(sorted[k]).margin(1e-9));
    }
    double prev = percentile(xs, 10);
    for (double p : {25.0, 50.0, 75.0, 90.0}) {
      const double cur = percentile(xs, p);
      CHECK(cur >= prev - 1e-12);
      prev = cur;
    }
  }
}

namespace {

TargetField series_of(std::vector<Date> times, std::size_t nloc,
                      std::vector<double> data) {
  TargetField f;
  f.times = std::move(times);
  f.data = Tensor<double>({f.times.size(), nloc}, std::move(data));
  return f;
}

std::vector<Date> consecutive(Date start, std::size_t n) {
  std::vector<Date> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(start.plus_days(std::int64_t(i)));
  return out;
}

}  // namespace

TEST_CASE("bias and rmse maps") {
  auto times = consecutive({2000, 1, 1}, 2);
  TargetField obs = series_of(times, 2, {0, 10, 0, 10});
  TargetField pred = series_of(times, 2, {3, 10, 4, 10});

  std::vector<double> bias = bias_map(pred, obs, ValidationIndex::Mean);
  CHECK(bias[0] == Approx(3.5).margin(1e-12));
  CHECK(bias[1] == Approx(0.0).margin(1e-12));

  std::vector<double> rmse = rmse_map(pred, obs);
  CHECK(rmse[0] == Approx(std::sqrt((9.0 + 16.0) / 2.0)).margin(1e-12));
  CHECK(rmse[1] == Approx(0.0).margin(1e-12));

  CHECK(spatial_mean_abs(bias) == Approx(1.75).margin(1e-12));
  CHECK_THROWS_AS(bias_map(pred, obs, ValidationIndex::Rmse), input_error);

  TargetField other = series_of(consecutive({2001, 1, 1}, 2), 2, {0, 0, 0, 0});
  CHECK_THROWS_AS(bias_map(pred, other, ValidationIndex::Mean), input_error);
}

TEST_CASE("delta change with month filters") {
  // Two years of daily data; the second year is shifted by +2 in August only.
  auto times = consecutive({2001, 1, 1}, 730);
  std::vector<double> data(730, 10.0);
  for (std::size_t t = 365; t < 730; ++t) {
    Date d = Date{2001, 1, 1}.plus_days(std::int64_t(t));
    if (d.month == 8) data[t] = 12.0;
  }
  TargetField series = series_of(times, 1, std::move(data));
  DateRange hist = DateRange::parse("2001-01-01:2001-12-31");
  DateRange fut = DateRange::parse("2002-01-01:2002-12-31");

  CHECK(delta_change(series, hist, fut, ValidationIndex::Mean,
                     MonthFilter::august())[0] == Approx(2.0).margin(1e-12));
  CHECK(delta_change(series, hist, fut, ValidationIndex::Mean,
                     MonthFilter{7})[0] == Approx(0.0).margin(1e-12));
  CHECK(delta_change(series, hist, fut, ValidationIndex::Mean)[0] ==
        Approx(2.0 * 31.0 / 365.0).margin(1e-12));
  CHECK(delta_change(series, hist, fut, ValidationIndex::P98,
                     MonthFilter::august())[0] == Approx(2.0).margin(1e-12));
  CHECK_THROWS_AS(delta_change(series, hist, fut, ValidationIndex::Rmse),
                  input_error);
}

TEST_CASE("point in polygon boundary rule on a rectangle") {
  // Rectangle [0, 10] x [0, 5] in (lon, lat).
  std::vector<std::pair<double, double>> rect{{0, 0}, {10, 0}, {10, 5}, {0, 5}};
  CHECK(point_in_polygon(5, 2, rect));
  CHECK_FALSE(point_in_polygon(-1, 2, rect));
  CHECK_FALSE(point_in_polygon(5, 7, rect));
  // South and west edges inclusive, north and east exclusive.
  CHECK(point_in_polygon(5, 0, rect));
  CHECK(point_in_polygon(0, 2, rect));
  CHECK_FALSE(point_in_polygon(5, 5, rect));
  CHECK_FALSE(point_in_polygon(10, 2, rect));
  CHECK(point_in_polygon(0, 0, rect));       // south-west corner
  CHECK_FALSE(point_in_polygon(10, 5, rect));  // north-east corner
}

TEST_CASE("adjacent regions partition shared edges without overlap") {
  RegionSet rs;
  rs.regions.push_back({"west", {{0, 0}, {5, 0}, {5, 5}, {0, 5}}});
  rs.regions.push_back({"east", {{5, 0}, {10, 0}, {10, 5}, {5, 5}}});

  std::vector<std::pair<double, double>> pts;  // (lat, lon)
  for (double lon : {0.0, 2.5, 5.0, 7.5, 10.0})
    for (double lat : {0.0, 2.5, 5.0}) pts.emplace_back(lat, lon);
  std::vector<int> member = rs.assign(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double lat = pts[i].first, lon = pts[i].second;
    if (lat >= 5.0 || lon >= 10.0) {
      CHECK(member[i] == -1);
    } else if (lon < 5.0) {
      CHECK(member[i] == 0);
    } else {
      CHECK(member[i] == 1);  // shared edge lon == 5 goes east
    }
  }

  RegionSet overlap;
  overlap.regions.push_back({"a", {{0, 0}, {6, 0}, {6, 5}, {0, 5}}});
  overlap.regions.push_back({"b", {{5, 0}, {10, 0}, {10, 5}, {5, 5}}});
  CHECK_THROWS_AS(overlap.assign({{2.0, 5.5}}), input_error);
}

TEST_CASE("region aggregate reports missing for empty regions") {
  std::vector<double> map{1.0, 3.0, 5.0};
  std::vector<int> member{0, 0, -1};
  auto agg = region_aggregate(map, member, 2);
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].value() == Approx(2.0).margin(1e-12));
  CHECK_FALSE(agg[1].has_value());  // missing, not zero
  CHECK_THROWS_AS(region_aggregate(map, {0, 0}, 2), input_error);
}

TEST_CASE("delta report tsv round trip") {
  DeltaReport rep;
  rep.threshold_degc = 2.0;
  rep.rows.push_back({"north", "2041-01-01:2070-12-31", ValidationIndex::Mean,
                      MonthFilter::august(), 1.9375, 4.125, true});
  rep.rows.push_back({"south", "2071-01-01:2100-12-31", ValidationIndex::P02,
                      MonthFilter::annual(), std::nullopt, 0.5, false});
  const std::string tsv = rep.to_tsv();
  DeltaReport back = DeltaReport::from_tsv(tsv, 2.0);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].region == "north");
  CHECK(back.rows[0].gcm_delta.value() == 1.9375);
  CHECK(back.rows[0].model_delta.value() == 4.125);
  CHECK(back.rows[0].flagged);
  CHECK(back.rows[0].filter == MonthFilter::august());
  CHECK_FALSE(back.rows[1].gcm_delta.has_value());
  CHECK(back.flag_count() == 1);
  CHECK_THROWS_AS(DeltaReport::from_tsv("bogus\n", 2.0), format_error);
}

TEST_CASE("pseudo reality report flags only real discrepancies") {
  auto times = consecutive({2001, 1, 1}, 730);
  std::vector<double> truth(730, 10.0);
  for (std::size_t t = 365; t < 730; ++t) truth[t] = 13.0;  // +3 everywhere
  TargetField gcm = series_of(times, 1, std::vector<double>(truth));
  TargetField good = series_of(times, 1, std::vector<double>(truth));
  std::vector<double> off = truth;
  for (std::size_t t = 365; t < 730; ++t) off[t] = 19.0;  // +9: discrepancy 6
  TargetField bad = series_of(times, 1, std::move(off));

  RegionSet rs;
  rs.regions.push_back({"box", {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}});
  std::vector<std::pair<double, double>> latlon{{0.0, 0.0}};
  DateRange hist = DateRange::parse("2001-01-01:2001-12-31");
  std::vector<DeltaPeriodSpec> periods{
      {"fut", DateRange::parse("2002-01-01:2002-12-31")}};

  DeltaReport ok = pseudo_reality_report(good, gcm, hist, periods,
                                         {ValidationIndex::Mean},
                                         {MonthFilter::annual()}, rs, latlon);
  REQUIRE(ok.rows.size() == 1);
  CHECK(ok.flag_count() == 0);
  CHECK(ok.rows[0].model_delta.value() == Approx(3.0).margin(1e-12));

  DeltaReport flagged = pseudo_reality_report(bad, gcm, hist, periods,
                                              {ValidationIndex::Mean},
                                              {MonthFilter::annual()}, rs, latlon);
  CHECK(flagged.flag_count() == 1);
}
