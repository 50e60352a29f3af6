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

#pragma once

#include "nlsim/simnet.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace nlsim {

/// Channel realizations with a fixed 80/10/10 train/validation/test split.
/// Noise is frozen inside each sample.
struct Dataset {
  std::vector<ChannelSample> samples;
  ComplexMatrix inputs;       // M x N, column n is samples[n].input_field
  Eigen::Matrix2Xd positions;  // planar ground truth
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> validation;
  std::vector<Eigen::Index> test;

  Eigen::Index size() const { return static_cast<Eigen::Index>(samples.size()); }
};

Dataset generate_dataset(const SimGeometry& geometry, const ChannelScenario& scenario, int count,
                         std::uint64_t seed);

/// Disjoint, exhaustive split with floor(0.8 N) train and floor(0.1 N)
/// validation samples; the rest is the test set.
void split_dataset(Dataset& dataset, Rng& rng);

struct NormalizedTarget {
  double range = 0.0;
  double azimuth = 0.0;
};

/// Affine map of (r, theta) to [-1, 1] x [-1, 1] and back.
NormalizedTarget normalize_targets(double range_m, double azimuth_rad, const RegionBounds& bounds);
UePosition denormalize_targets(const NormalizedTarget& target, const RegionBounds& bounds);

/// sqrt(mean ||p_i - p_hat_i||^2) over planar positions (columns).
double position_rmse(const Eigen::Ref<const Eigen::Matrix2Xd>& estimates,
                     const Eigen::Ref<const Eigen::Matrix2Xd>& ground_truth);

struct TrainConfig {
  double learning_rate = 1e-3;
  /// Biases live on the scale of the field amplitude, far below the phases.
  double bias_learning_rate = 1e-8;
  int batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int patience = 20;
  bool redraw_noise = false;
};

void validate(const TrainConfig& config);

struct AdamState {
  RealVector first_moment;
  RealVector second_moment;
  long step = 0;
};

/// One bias-corrected Adam update. Phases wrap into [0, 2 pi), biases are
/// clamped to <= 0.
void adam_step(RealVector& params, const RealVector& grads, std::span<const ParamKind> kinds,
               AdamState& state, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  SimModel best_model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 = the initial model
  double best_val_rmse = 0.0;
  bool diverged = false;
};

/// Mini-batch Adam on the mean squared position error. Returns the model
/// with the lowest validation RMSE; a non-finite loss stops training early.
TrainResult train(const SimModel& initial, const Dataset& dataset, const RegionBounds& bounds,
                  const TrainConfig& config);

struct EvalRow {
  Eigen::Index index = 0;
  double range_m = 0.0;
  double azimuth_rad = 0.0;
  double range_hat_m = 0.0;
  double azimuth_hat_rad = 0.0;
  double error_m = 0.0;
};

struct EvalReport {
  double rmse = 0.0;
  std::vector<EvalRow> rows;
};

using Estimator = std::function<PositionEstimate(Eigen::Index sample)>;

EvalReport evaluate_estimator(const Dataset& dataset, std::span<const Eigen::Index> split,
                              const Estimator& estimator);

EvalReport evaluate(const SimModel& model, const Dataset& dataset,
                    std::span<const Eigen::Index> split, const RegionBounds& bounds);

/// Columns: index,r,theta,r_hat,theta_hat,error.
void write_eval_csv(std::ostream& os, const EvalReport& report);
/// Columns: epoch,train_loss,val_rmse.
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace nlsim
