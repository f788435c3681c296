#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "downscale/synth.hpp"

using namespace dsc;
using Catch::Approx;

namespace {

SyntheticSpec desk_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.predictor_geometry = GridGeometry::regular(40, 1, 6, -10, 1, 6);
  spec.predictand_geometry = GridGeometry::regular(41.3, 1, 4, -8.7, 1, 4);
  spec.channels = {{"ta", 1000}, {"hus", 1000}, {"z", 500}};
  spec.causal_channel = 1;
  spec.mask = LandMask::all(4, 4);
  spec.radius_km = 200.0;
  spec.days = 30;
  return spec;
}

// Ordinary least squares restricted to the true support, solved by Gaussian
// elimination with partial pivoting.
std::vector<double> ols_weights(const GriddedField& predictors,
                                const TargetField& predictand,
                                const SynthTruth& truth, std::size_t loc) {
  const auto& sup = truth.support[loc];
  const std::size_t k = sup.size(), n = predictors.ntime();
  const std::size_t plane =
      predictors.geometry.rows() * predictors.geometry.cols();
  std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    const double* field =
        predictors.data.data() + (t * predictors.nchan() + truth.causal_channel) * plane;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j)
        a[i][j] += field[sup[i]] * field[sup[j]];
      a[i][k] += field[sup[i]] * predictand.data.at2(t, loc);
    }
  }
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t cc = col; cc <= k; ++cc) a[r][cc] -= f * a[col][cc];
    }
  }
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = a[i][k] / a[i][i];
  return w;
}

}  // namespace

TEST_CASE("synthesis is deterministic per seed") {
  SynthResult a = synth_generate(desk_spec(5));
  SynthResult b = synth_generate(desk_spec(5));
  CHECK(a.predictors.data.v == b.predictors.data.v);
  CHECK(a.predictand.data.v == b.predictand.data.v);
  CHECK(a.truth.weights == b.truth.weights);

  SynthResult c = synth_generate(desk_spec(6));
  CHECK(a.predictors.data.v != c.predictors.data.v);
}

TEST_CASE("causal supports lie within the radius and weights sum to one") {
  SyntheticSpec spec = desk_spec(7);
  SynthResult r = synth_generate(spec);
  REQUIRE(r.truth.support.size() == 16);
  const auto& pg = spec.predictor_geometry;
  for (std::size_t l = 0; l < 16; ++l) {
    REQUIRE(!r.truth.support[l].empty());
    double sum = 0.0;
    const std::size_t cell = spec.mask.cells[l];
    const double tlat = spec.predictand_geometry.lats[cell / 4];
    const double tlon = spec.predictand_geometry.lons[cell % 4];
    for (std::size_t k = 0; k < r.truth.support[l].size(); ++k) {
      const std::size_t p = r.truth.support[l][k];
      CHECK(haversine_km(pg.lats[p / 6], pg.lons[p % 6], tlat, tlon) <=
            spec.radius_km);
      CHECK(r.truth.weights[l][k] > 0.0);
      sum += r.truth.weights[l][k];
    }
    CHECK(sum == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("noiseless predictand equals the weighted causal sum") {
  SyntheticSpec spec = desk_spec(8);
  SynthResult r = synth_generate(spec);
  const std::size_t plane = 36;
  for (std::size_t t = 0; t < spec.days; ++t)
    for (std::size_t l = 0; l < 16; ++l) {
      double want = 0.0;
      for (std::size_t k = 0; k < r.truth.support[l].size(); ++k)
        want += r.truth.weights[l][k] *
                r.predictors.data[(t * 3 + 1) * plane + r.truth.support[l][k]];
      CHECK(r.predictand.data.at2(t, l) == Approx(want).margin(1e-12));
    }
}

TEST_CASE("least squares recovers the true weights from noiseless data") {
  SyntheticSpec spec = desk_spec(9);
  spec.days = 120;  // well overdetermined
  SynthResult r = synth_generate(spec);
  for (std::size_t l : {std::size_t(0), std::size_t(7), std::size_t(15)}) {
    std::vector<double> w = ols_weights(r.predictors, r.predictand, r.truth, l);
    REQUIRE(w.size() == r.truth.weights[l].size());
    for (std::size_t k = 0; k < w.size(); ++k)
      CHECK(w[k] == Approx(r.truth.weights[l][k]).epsilon(0).margin(1e-6));
  }
}

TEST_CASE("pseudo gcm future repeats day of year plus the monthly shift") {
  SyntheticSpec spec = desk_spec(10);
  spec.start = Date{2001, 1, 1};
  spec.days = 365;
  spec.future_days = 365;
  spec.monthly_shift[7] = 2.0;  // August
  SynthResult r = synth_generate(spec);
  REQUIRE(r.gcm_predictors.has_value());
  REQUIRE(r.gcm_reference.has_value());
  const GriddedField& g = *r.gcm_predictors;
  const std::size_t plane = 36;

  for (std::size_t t = 365; t < 730; t += 37) {
    const Date d = g.times[t];
    std::size_t src = std::size_t(-1);
    for (std::size_t s = 0; s < 365; ++s)
      if (g.times[s].month == d.month && g.times[s].day == d.day) src = s;
    REQUIRE(src != std::size_t(-1));
    const double shift = d.month == 8 ? 2.0 : 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t q = 0; q < plane; ++q) {
        const double want = g.data[(src * 3 + c) * plane + q] +
                            (c == spec.causal_channel ? shift : 0.0);
        CHECK(g.data[(t * 3 + c) * plane + q] == Approx(want).margin(1e-12));
      }
  }

  // Weights sum to one, so the reference series shifts by exactly +2 in
  // August and is unchanged elsewhere.
  for (std::size_t t = 365; t < 730; t += 11) {
    std::size_t src = std::size_t(-1);
    for (std::size_t s = 0; s < 365; ++s)
      if (g.times[s].month == g.times[t].month && g.times[s].day == g.times[t].day)
        src = s;
    const double shift = g.times[t].month == 8 ? 2.0 : 0.0;
    for (std::size_t l = 0; l < 16; ++l)
      CHECK(r.gcm_reference->data.at2(t, l) ==
            Approx(r.gcm_reference->data.at2(src, l) + shift).margin(1e-9));
  }
}

TEST_CASE("pseudo gcm requires a full historical year") {
  SyntheticSpec spec = desk_spec(11);
  spec.days = 100;
  spec.future_days = 50;
  CHECK_THROWS_AS(synth_generate(spec), input_error);
}

TEST_CASE("unreachable targets are rejected") {
  SyntheticSpec spec = desk_spec(12);
  spec.radius_km = 1.0;
  CHECK_THROWS_AS(synth_generate(spec), input_error);
}

TEST_CASE("truth container round trip") {
  SynthResult r = synth_generate(desk_spec(13));
  Container c;
  containerio::put_truth(c, "truth", r.truth);
  const std::string path =
      (std::filesystem::temp_directory_path() / "truth_rt.dsc").string();
  write_container(path, c);
  Container back = read_container(path);
  std::remove(path.c_str());
  SynthTruth t = containerio::get_truth(back, "truth");
  CHECK(t.causal_channel == r.truth.causal_channel);
  CHECK(t.support == r.truth.support);
  CHECK(t.weights == r.truth.weights);  // f64 payload, bit exact
}
