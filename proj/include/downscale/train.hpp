#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "downscale/errors.hpp"
#include "downscale/grid.hpp"
#include "downscale/nn.hpp"

namespace dsc {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 100;
  std::size_t max_epochs = 100;
  std::size_t patience = 30;   // early-stop epochs without improvement
  double min_delta = 0.0;
  double val_fraction = 0.10;  // random whole-day split
  std::uint64_t seed = 0;

  void validate() const {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw input_error("train config: validation fraction must be in (0, 1)");
    if (batch_size < 1) throw input_error("train config: batch size must be >= 1");
    if (max_epochs < 1) throw input_error("train config: max epochs must be >= 1");
  }
};

// ADAM optimizer state; moments mirror parameter shapes, kept in double.
template <typename T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;

  template <typename P>
  void init(const std::vector<P*>& params) {
    m.clear();
    v.clear();
    for (const P* p : params) {
      m.emplace_back(p->value.numel(), 0.0);
      v.emplace_back(p->value.numel(), 0.0);
    }
    t = 0;
  }
};

// Mean over batch and locations of the squared error; returns the loss and
// the gradient 2*(pred-obs)/(batch*locations).
template <typename T>
std::pair<double, Tensor<T>> mse_loss(const Tensor<T>& pred,
                                      const Tensor<T>& obs) {
  if (pred.shape != obs.shape)
    throw input_error("mse_loss: prediction/observation shape mismatch");
  for (const T& o : obs.v)
    if (!std::isfinite(double(o)))
      throw input_error("mse_loss: non-finite observation");
  const double n = double(pred.numel());
  double loss = 0.0;
  Tensor<T> grad(pred.shape);
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = double(pred[i]) - double(obs[i]);
    loss += d * d;
    grad[i] = T(2.0 * d / n);
  }
  return {loss / n, std::move(grad)};
}

// Bias-corrected ADAM update: theta <- theta - lr * m_hat / (sqrt(v_hat)+eps).
template <typename T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state,
               double lr) {
  if (state.m.size() != params.size())
    throw input_error("adam_step: state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param<T>* p = params[pi];
    if (p->value.numel() != state.m[pi].size())
      throw input_error("adam_step: moment shape mismatch for " + p->name);
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = double(p->grad[i]);
      if (!std::isfinite(g))
        throw numeric_error("adam_step: non-finite gradient in " + p->name);
      state.m[pi][i] = state.beta1 * state.m[pi][i] + (1.0 - state.beta1) * g;
      state.v[pi][i] =
          state.beta2 * state.v[pi][i] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[pi][i] / bc1;
      const double vhat = state.v[pi][i] / bc2;
      p->value[i] = T(double(p->value[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool best = false;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  bool early_stopped = false;

  // Line-delimited text table: epoch, train-loss, val-loss, best-flag.
  std::string log_table() const {
    std::ostringstream os;
    os.precision(10);
    os << "epoch\ttrain_loss\tval_loss\tbest\n";
    for (const EpochLog& e : log)
      os << e.epoch << "\t" << e.train_loss << "\t" << e.val_loss << "\t"
         << (e.best ? 1 : 0) << "\n";
    return os.str();
  }
};

namespace detail {

template <typename T>
double eval_loss(ModelGraph<T>& model, const Tensor<T>& x, const Tensor<T>& y,
                 const std::vector<std::size_t>& idx, std::size_t batch_size) {
  const std::size_t feat = shape_numel(model.input_shape);
  const std::size_t nloc = y.shape[1];
  double total = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, idx.size() - start);
    Shape bshape = model.input_shape;
    bshape.insert(bshape.begin(), n);
    Tensor<T> bx(bshape), by({n, nloc});
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(x.data() + idx[start + s] * feat, feat, bx.data() + s * feat);
      std::copy_n(y.data() + idx[start + s] * nloc, nloc, by.data() + s * nloc);
    }
    ForwardTape<T> tape;
    Tensor<T> pred = model.forward(bx, tape, Mode::Eval);
    auto [loss, grad] = mse_loss(pred, by);
    total += loss * double(n);
  }
  return total / double(idx.size());
}

}  // namespace detail

// The shared training protocol: MSE + ADAM, seeded shuffling, random
// whole-day validation split, early stopping, best-snapshot restore.
// Predictors are expected to be standardized already; the predictand is in
// physical units.
template <typename T>
TrainResult train(ModelGraph<T>& model, const GriddedField& predictors,
                  const TargetField& predictand, const TrainConfig& config) {
  config.validate();
  predictors.validate();
  predictand.validate();
  if (predictors.times != predictand.times)
    throw input_error("train: predictor and predictand time axes differ");
  if (predictand.nloc() != model.output_size())
    throw input_error("train: predictand location count does not match model");
  const std::size_t ndays = predictors.ntime();
  if (ndays == 0) throw input_error("train: empty dataset");
  if (model.has_batchnorm() && config.batch_size < 2)
    throw input_error("train: batch size must be >= 2 with batch norm");

  // Sample tensors, cast to model precision once.
  const std::size_t feat = shape_numel(model.input_shape);
  const std::size_t nloc = predictand.nloc();
  Shape xshape = model.input_shape;
  xshape.insert(xshape.begin(), ndays);
  Tensor<T> x(xshape), y({ndays, nloc});
  if (predictors.data.numel() != ndays * feat)
    throw input_error("train: predictor shape does not match model input");
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = T(predictors.data[i]);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = T(predictand.data[i]);

  // Seeded whole-day split: validation first, disjoint from training.
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(ndays);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t nval = std::size_t(std::floor(double(ndays) * config.val_fraction));
  if (nval == 0) nval = 1;
  if (nval >= ndays) throw input_error("train: validation split leaves no training days");
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + nval);
  std::vector<std::size_t> train_idx(order.begin() + nval, order.end());

  model.init_params(config.seed);
  auto params = model.parameters();
  AdamState<T> adam;
  adam.init(params);

  TrainResult result;
  std::vector<Tensor<T>> best_snapshot = model.snapshot_state();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  const bool has_bn = model.has_batchnorm();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size();) {
      std::size_t n = std::min(config.batch_size, train_idx.size() - start);
      // A trailing singleton batch cannot feed batch norm; fold it into the
      // previous batch instead of dropping the day.
      if (has_bn && n == config.batch_size &&
          train_idx.size() - start == config.batch_size + 1)
        n += 1;
      Shape bshape = model.input_shape;
      bshape.insert(bshape.begin(), n);
      Tensor<T> bx(bshape), by({n, nloc});
      for (std::size_t s = 0; s < n; ++s) {
        std::copy_n(x.data() + train_idx[start + s] * feat, feat,
                    bx.data() + s * feat);
        std::copy_n(y.data() + train_idx[start + s] * nloc, nloc,
                    by.data() + s * nloc);
      }
      ForwardTape<T> tape;
      Tensor<T> pred = model.forward(bx, tape, Mode::Train);
      auto [loss, grad] = mse_loss(pred, by);
      if (!std::isfinite(loss))
        throw numeric_error("train: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      epoch_loss += loss * double(n);
      model.zero_grads();
      model.backward_params(tape, grad);
      adam_step(params, adam, config.learning_rate);
      start += n;
      ++batch_no;
    }
    epoch_loss /= double(train_idx.size());

    const double val_loss =
        detail::eval_loss(model, x, y, val_idx, config.batch_size);
    EpochLog entry{epoch, epoch_loss, val_loss, false};
    if (val_loss < best_val - config.min_delta) {
      best_val = val_loss;
      best_snapshot = model.snapshot_state();
      result.best_epoch = epoch;
      since_best = 0;
      entry.best = true;
    } else {
      ++since_best;
    }
    result.log.push_back(entry);
    if (since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }

  model.restore_state(best_snapshot);
  result.best_val_loss = best_val;
  return result;
}

// Applies a trained model to standardized predictors, producing a per-day
// location series.
template <typename T>
TargetField predict(ModelGraph<T>& model, const GriddedField& predictors,
                    std::size_t batch_size = 100) {
  predictors.validate();
  const std::size_t feat = shape_numel(model.input_shape);
  const std::size_t ndays = predictors.ntime();
  if (predictors.data.numel() != ndays * feat)
    throw input_error("predict: predictor shape does not match model input");
  const std::size_t nloc = model.output_size();
  TargetField out;
  out.times = predictors.times;
  out.data = Tensor<double>({ndays, nloc});
  for (std::size_t start = 0; start < ndays; start += batch_size) {
    const std::size_t n = std::min(batch_size, ndays - start);
    Shape bshape = model.input_shape;
    bshape.insert(bshape.begin(), n);
    Tensor<T> bx(bshape);
    for (std::size_t i = 0; i < n * feat; ++i)
      bx[i] = T(predictors.data[start * feat + i]);
    ForwardTape<T> tape;
    Tensor<T> pred = model.forward(bx, tape, Mode::Eval);
    for (std::size_t i = 0; i < n * nloc; ++i)
      out.data[start * nloc + i] = double(pred[i]);
  }
  return out;
}

}  // namespace dsc
