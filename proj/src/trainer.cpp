// SPDX-License-Identifier: Apache-2.0
//
// nlsim - nonlinear stacked-metasurface receiver simulator
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "nlsim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace nlsim {

Dataset generate_dataset(const SimGeometry& geometry, const ChannelScenario& scenario, int count,
                         std::uint64_t seed) {
  if (count < 1) throw ConfigError("dataset needs at least one sample");
  Rng rng(seed);
  Dataset d;
  d.samples.reserve(count);
  d.inputs.resize(geometry.num_cells(), count);
  d.positions.resize(2, count);
  for (int n = 0; n < count; ++n) {
    d.samples.push_back(draw_sample(geometry, scenario, rng));
    d.inputs.col(n) = d.samples.back().input_field;
    d.positions.col(n) = d.samples.back().position.planar();
  }
  split_dataset(d, rng);
  return d;
}

void split_dataset(Dataset& dataset, Rng& rng) {
  const auto n = dataset.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = (8 * n) / 10;
  const auto n_val = n / 10;
  dataset.train.assign(order.begin(), order.begin() + n_train);
  dataset.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  dataset.test.assign(order.begin() + n_train + n_val, order.end());
}

NormalizedTarget normalize_targets(double range_m, double azimuth_rad, const RegionBounds& b) {
  if (!(b.r_max_m > b.r_min_m)) throw ConfigError("need r_max > r_min");
  return {(range_m - b.r_min_m) / (b.r_max_m - b.r_min_m) * 2.0 - 1.0, 2.0 * azimuth_rad / kPi};
}

UePosition denormalize_targets(const NormalizedTarget& t, const RegionBounds& b) {
  if (!(b.r_max_m > b.r_min_m)) throw ConfigError("need r_max > r_min");
  return {(t.range + 1.0) / 2.0 * (b.r_max_m - b.r_min_m) + b.r_min_m, t.azimuth * kPi / 2.0};
}

double position_rmse(const Eigen::Ref<const Eigen::Matrix2Xd>& estimates,
                     const Eigen::Ref<const Eigen::Matrix2Xd>& truth) {
  if (estimates.cols() == 0) throw ConfigError("RMSE of an empty set is undefined");
  if (estimates.cols() != truth.cols()) throw ConfigError("estimate/truth count mismatch");
  return std::sqrt((estimates - truth).colwise().squaredNorm().mean());
}

void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !(c.bias_learning_rate >= 0.0))
    throw ConfigError("learning rates must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0) || !(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0))
    throw ConfigError("Adam moment decays must be in [0, 1)");
  if (!(c.adam_epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
  if (c.patience < 1) throw ConfigError("patience must be >= 1");
}

void adam_step(RealVector& params, const RealVector& grads, std::span<const ParamKind> kinds,
               AdamState& state, const TrainConfig& config) {
  const Eigen::Index n = params.size();
  if (grads.size() != n || static_cast<Eigen::Index>(kinds.size()) != n)
    throw ConfigError("Adam shapes must match");
  if (state.first_moment.size() != n) {
    state.first_moment = RealVector::Zero(n);
    state.second_moment = RealVector::Zero(n);
  }
  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = grads(i);
    state.first_moment(i) = b1 * state.first_moment(i) + (1.0 - b1) * g;
    state.second_moment(i) = b2 * state.second_moment(i) + (1.0 - b2) * g * g;
    const double m_hat = state.first_moment(i) / c1;
    const double v_hat = state.second_moment(i) / c2;
    const bool is_bias = kinds[i] == ParamKind::Bias;
    const double lr = is_bias ? config.bias_learning_rate : config.learning_rate;
    double p = params(i) - lr * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
    if (is_bias) {
      p = std::min(p, 0.0);
    } else {
      p = std::fmod(p, kTwoPi);
      if (p < 0.0) p += kTwoPi;
    }
    params(i) = p;
  }
}

EvalReport evaluate_estimator(const Dataset& dataset, std::span<const Eigen::Index> split,
                              const Estimator& estimator) {
  if (split.empty()) throw ConfigError("cannot evaluate an empty split");
  EvalReport report;
  report.rows.reserve(split.size());
  Eigen::Matrix2Xd est(2, static_cast<Eigen::Index>(split.size()));
  Eigen::Matrix2Xd truth(2, est.cols());
  for (std::size_t k = 0; k < split.size(); ++k) {
    const Eigen::Index i = split[k];
    const PositionEstimate e = estimator(i);
    const UePosition& p = dataset.samples[i].position;
    est.col(k) = e.position;
    truth.col(k) = dataset.positions.col(i);
    report.rows.push_back({i, p.range_m, p.azimuth_rad, e.range_m, e.azimuth_rad,
                           (e.position - truth.col(k)).norm()});
  }
  report.rmse = position_rmse(est, truth);
  return report;
}

EvalReport evaluate(const SimModel& model, const Dataset& dataset,
                    std::span<const Eigen::Index> split, const RegionBounds& bounds) {
  const std::vector<Eigen::Index> idx(split.begin(), split.end());
  const ComplexMatrix y = forward_output(model, dataset.inputs(Eigen::all, idx));
  std::vector<Eigen::Index> column(dataset.samples.size(), -1);
  for (std::size_t k = 0; k < idx.size(); ++k) column[idx[k]] = static_cast<Eigen::Index>(k);
  return evaluate_estimator(dataset, split, [&](Eigen::Index i) {
    return readout(y.col(column[i]), model.beta, bounds);
  });
}

TrainResult train(const SimModel& initial, const Dataset& dataset, const RegionBounds& bounds,
                  const TrainConfig& config) {
  validate(config);
  validate(initial);
  if (dataset.train.empty() || dataset.validation.empty())
    throw ConfigError("training needs non-empty train and validation splits");

  TrainResult result;
  result.best_model = initial;
  if (config.epochs == 0) {
    result.best_val_rmse = evaluate(initial, dataset, dataset.validation, bounds).rmse;
    return result;
  }

  Rng rng(config.seed);
  SimModel model = initial;
  const std::vector<ParamKind> kinds = parameter_kinds(model);
  RealVector params = pack_parameters(model);
  AdamState adam;

  result.best_val_rmse = evaluate(model, dataset, dataset.validation, bounds).rmse;
  int since_best = 0;
  std::vector<Eigen::Index> order = dataset.train;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::vector<Eigen::Index> batch(order.begin() + start, order.begin() + end);
      ComplexMatrix inputs = dataset.inputs(Eigen::all, batch);
      if (config.redraw_noise) {
        for (Eigen::Index b = 0; b < inputs.cols(); ++b) {
          const ChannelSample& s = dataset.samples[batch[b]];
          for (Eigen::Index m = 0; m < inputs.rows(); ++m) {
            inputs(m, b) = s.channel(m) * s.pilot + complex_normal(rng, s.noise_power_w);
          }
        }
      }
      const LossFn loss = position_loss(dataset.positions(Eigen::all, batch), model.beta, bounds);
      const ForwardTrace trace = forward(model, inputs);
      const LossEval eval = loss(trace.output);
      if (!std::isfinite(eval.value)) {
        result.diverged = true;
        return result;
      }
      loss_sum += eval.value * static_cast<double>(batch.size());
      const RealVector grads = pack_gradients(model, backward(model, trace, eval.cotangent));
      if (!grads.allFinite()) {
        result.diverged = true;
        return result;
      }
      adam_step(params, grads, kinds, adam, config);
      unpack_parameters(model, params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_rmse = evaluate(model, dataset, dataset.validation, bounds).rmse;
    result.history.push_back(rec);
    if (!std::isfinite(rec.val_rmse)) {
      result.diverged = true;
      return result;
    }
    if (rec.val_rmse < result.best_val_rmse) {
      result.best_val_rmse = rec.val_rmse;
      result.best_epoch = epoch;
      result.best_model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

void write_eval_csv(std::ostream& os, const EvalReport& report) {
  os << "index,r,theta,r_hat,theta_hat,error\n";
  os.precision(12);
  for (const EvalRow& r : report.rows) {
    os << r.index << ',' << r.range_m << ',' << r.azimuth_rad << ',' << r.range_hat_m << ','
       << r.azimuth_hat_rad << ',' << r.error_m << '\n';
  }
}

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,train_loss,val_rmse\n";
  os.precision(12);
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_rmse << '\n';
  }
}

}  // namespace nlsim
