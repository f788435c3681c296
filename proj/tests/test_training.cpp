#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "downscale/models.hpp"
#include "downscale/synth.hpp"
#include "downscale/train.hpp"

using namespace dsc;
using Catch::Approx;

TEST_CASE("mse loss worked examples") {
  Tensor<double> a({1, 2}, {1.0, 2.0});
  CHECK(mse_loss(a, a).first == 0.0);

  Tensor<double> b({1, 2}, {2.0, 3.0});
  auto [l1, g1] = mse_loss(b, a);
  CHECK(l1 == Approx(1.0).margin(1e-15));
  CHECK(g1.v == std::vector<double>{1.0, 1.0});  // 2*d/n with d=1, n=2

  Tensor<double> p({2, 1}, {3.0, 0.0});
  Tensor<double> o({2, 1}, {0.0, 4.0});
  auto [l2, g2] = mse_loss(p, o);
  CHECK(l2 == Approx((9.0 + 16.0) / 2.0).margin(1e-15));
  CHECK(g2.v == std::vector<double>{3.0, -4.0});

  Tensor<double> bad({1, 2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(mse_loss(a, bad), input_error);
  Tensor<double> wrong({2, 1}, {0.0, 0.0});
  CHECK_THROWS_AS(mse_loss(a, wrong), input_error);
}

TEST_CASE("adam first step moves by about the learning rate") {
  Param<double> p;
  p.name = "p";
  p.init_shape({2});
  p.value = Tensor<double>({2}, {1.0, -1.0});
  p.grad = Tensor<double>({2}, {0.5, -2.0});
  std::vector<Param<double>*> params{&p};
  AdamState<double> st;
  st.init(params);
  adam_step(params, st, 1e-4);
  // With zero moments, bias-corrected step = lr*g/(|g|+eps) ~ lr*sign(g).
  CHECK(p.value[0] == Approx(1.0 - 1e-4).epsilon(1e-6));
  CHECK(p.value[1] == Approx(-1.0 + 1e-4).epsilon(1e-6));

  p.grad[0] = std::nan("");
  CHECK_THROWS_AS(adam_step(params, st, 1e-4), numeric_error);
}

namespace {

struct LinearTask {
  GriddedField predictors;
  TargetField predictand;
};

// Standard-normal predictors; each target is a fixed random linear map of the
// causal channel (variance O(1) by construction).
LinearTask make_linear_task(std::size_t days, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.predictor_geometry = GridGeometry::regular(40, 1, 8, -10, 1, 8);
  spec.predictand_geometry = GridGeometry::regular(41.5, 1.2, 4, -8.5, 1.2, 4);
  spec.channels = {{"ta", 1000}, {"hus", 1000}, {"z", 500}, {"ua", 850}};
  spec.causal_channel = 0;
  spec.mask = LandMask::all(4, 4);
  spec.radius_km = 260.0;
  spec.days = days;
  SynthResult r = synth_generate(spec);
  return {std::move(r.predictors), std::move(r.predictand)};
}

}  // namespace

TEST_CASE("training is deterministic per seed") {
  LinearTask task = make_linear_task(40, 3);
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::DeepESD;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  cfg.width_scale = 0.1;

  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch_size = 10;
  tc.seed = 7;

  ModelGraph<float> m1 = build_model<float>(cfg);
  ModelGraph<float> m2 = build_model<float>(cfg);
  TrainResult r1 = train(m1, task.predictors, task.predictand, tc);
  TrainResult r2 = train(m2, task.predictors, task.predictand, tc);
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t e = 0; e < r1.log.size(); ++e) {
    CHECK(r1.log[e].train_loss == r2.log[e].train_loss);
    CHECK(r1.log[e].val_loss == r2.log[e].val_loss);
  }
  auto p1 = m1.parameters();
  auto p2 = m2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i]->value.v == p2[i]->value.v);

  ModelGraph<float> m3 = build_model<float>(cfg);
  tc.seed = 8;
  TrainResult r3 = train(m3, task.predictors, task.predictand, tc);
  CHECK(r3.log[0].train_loss != r1.log[0].train_loss);
}

TEST_CASE("early stopping fires after patience epochs without improvement") {
  LinearTask task = make_linear_task(30, 4);
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::DeepESD;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  cfg.width_scale = 0.1;
  ModelGraph<float> m = build_model<float>(cfg);

  TrainConfig tc;
  tc.learning_rate = 0.0;  // no progress: first epoch is best, then stall
  tc.max_epochs = 50;
  tc.patience = 3;
  tc.batch_size = 10;
  TrainResult r = train(m, task.predictors, task.predictand, tc);
  CHECK(r.early_stopped);
  CHECK(r.best_epoch == 1);
  CHECK(r.log.size() == 1 + tc.patience);
  CHECK(r.log.front().best);
  for (std::size_t e = 1; e < r.log.size(); ++e) CHECK_FALSE(r.log[e].best);
}

TEST_CASE("best snapshot corresponds to the minimum validation loss") {
  LinearTask task = make_linear_task(60, 5);
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::DeepESD;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  cfg.width_scale = 0.2;
  ModelGraph<float> m = build_model<float>(cfg);

  TrainConfig tc;
  tc.max_epochs = 8;
  tc.batch_size = 20;
  TrainResult r = train(m, task.predictors, task.predictand, tc);
  double min_val = r.log.front().val_loss;
  std::size_t argmin = 1;
  for (const EpochLog& e : r.log)
    if (e.val_loss < min_val) {
      min_val = e.val_loss;
      argmin = e.epoch;
    }
  CHECK(r.best_val_loss == min_val);
  CHECK(r.best_epoch == argmin);
}

TEST_CASE("small deepesd fits a noiseless linear task") {
  LinearTask task = make_linear_task(200, 6);
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::DeepESD;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  cfg.width_scale = 0.2;
  ModelGraph<float> m = build_model<float>(cfg);

  TrainConfig tc;
  tc.learning_rate = 2e-3;  // fast variant for the unit test
  tc.max_epochs = 400;
  tc.batch_size = 50;
  tc.patience = 400;
  TrainResult r = train(m, task.predictors, task.predictand, tc);

  double var = 0.0, mean = 0.0;
  for (double y : task.predictand.data.v) mean += y;
  mean /= double(task.predictand.data.numel());
  for (double y : task.predictand.data.v) var += (y - mean) * (y - mean);
  var /= double(task.predictand.data.numel());
  CHECK(r.log.back().train_loss < 0.05 * var);

  // predict() agrees with the train-time forward pass on the same inputs.
  TargetField pred = predict(m, task.predictors);
  CHECK(pred.times == task.predictors.times);
  CHECK(pred.nloc() == 16);
}

TEST_CASE("training input validation") {
  LinearTask task = make_linear_task(20, 9);
  ArchitectureConfig cfg;
  cfg.architecture = Architecture::DeepESD;
  cfg.in_channels = 4;
  cfg.in_h = 8;
  cfg.in_w = 8;
  cfg.mask = LandMask::all(4, 4);
  cfg.width_scale = 0.1;
  ModelGraph<float> m = build_model<float>(cfg);

  TrainConfig bad;
  bad.val_fraction = 0.0;
  CHECK_THROWS_AS(train(m, task.predictors, task.predictand, bad), input_error);

  TargetField shifted = task.predictand;
  shifted.times[0] = Date{1999, 12, 31};
  TrainConfig tc;
  CHECK_THROWS_AS(train(m, task.predictors, shifted, tc), input_error);
}
