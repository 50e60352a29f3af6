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

#include "nlsim/emfield.hpp"
#include "nlsim/nonlin.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <variant>
#include <vector>

namespace nlsim {

/// Phase-only layer: x = diag(e^{j theta}) W x_prev.
struct LinearLayer {
  RealVector phases;
  bool trainable = true;
};

/// Element-wise activation layer: x_m = sigma_m((W x_prev)_m) with per-cell
/// bias. Nonlinear cells carry no independent phase shifter.
struct NonlinearLayer {
  std::vector<Activation> activations;
  RealVector biases;
  bool trainable = false;
};

using LayerKind = std::variant<LinearLayer, NonlinearLayer>;

/// Fixed propagation operators of a geometry: inter_layer[l - 1] maps layer
/// l - 1 to layer l (0-based); the first layer sees the input directly.
struct Propagation {
  std::vector<ComplexMatrix> inter_layer;
  ComplexMatrix to_output;
};

std::shared_ptr<const Propagation> build_propagation(const SimGeometry& geometry);

struct SimModel {
  SimGeometry geometry;
  std::vector<LayerKind> layers;
  std::shared_ptr<const Propagation> propagation;
  double beta = 1.0;

  int num_cells() const { return geometry.num_cells(); }
  int num_layers() const { return static_cast<int>(layers.size()); }
  /// 0-based indices of nonlinear layers.
  std::vector<int> nonlinear_layers() const;
};

/// Checks schedule length, per-layer sizes and propagation shapes.
void validate(const SimModel& model);

/// Per-layer fields for a batch; column b belongs to sample b.
struct ForwardTrace {
  std::vector<ComplexMatrix> pre;   // field entering each layer's cells (after W)
  std::vector<ComplexMatrix> post;  // post[0] = input, post[l + 1] = layer l output
  ComplexMatrix output;             // N_R x B
};

ForwardTrace forward(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& input);

/// Output field only, processed in column chunks to bound memory.
ComplexMatrix forward_output(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& input,
                             Eigen::Index chunk = 256);

/// Per-layer gradients of a real loss; an empty vector marks a frozen layer.
struct GradientSet {
  std::vector<RealVector> layers;

  bool has(int layer) const { return layers[layer].size() > 0; }
};

/// Reverse-mode pass. `output_cotangent` holds dL/dRe(y) + j dL/dIm(y) for
/// each output entry of the traced batch.
GradientSet backward(const SimModel& model, const ForwardTrace& trace,
                     const Eigen::Ref<const ComplexMatrix>& output_cotangent);

struct RegionBounds {
  double r_min_m = 1.0;
  double r_max_m = 3.0;
};

struct PositionEstimate {
  double range_m = 0.0;
  double azimuth_rad = 0.0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

/// Amplitude readout of a two-antenna output: |y1| encodes range and |y2|
/// the azimuth. Estimates are not clamped to the region.
PositionEstimate readout(const Eigen::Ref<const ComplexVector>& output_field, double beta,
                         const RegionBounds& bounds);

struct LossEval {
  double value = 0.0;
  ComplexMatrix cotangent;
};

using LossFn = std::function<LossEval(const ComplexMatrix& output)>;

/// Mean squared Cartesian position error over the batch columns; targets is
/// 2 x B.
LossFn position_loss(Eigen::Matrix2Xd targets, double beta, const RegionBounds& bounds);

/// beta = 1 / (percentile of max_i |y_i| over `inputs`).
double calibrate_beta(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& inputs,
                      double percentile = 0.95);

enum class ParamKind { Phase, Bias };

/// Trainable parameters flattened layer by layer.
std::vector<ParamKind> parameter_kinds(const SimModel& model);
RealVector pack_parameters(const SimModel& model);
void unpack_parameters(SimModel& model, const RealVector& params);
RealVector pack_gradients(const SimModel& model, const GradientSet& grads);

struct FiniteDifferenceOptions {
  int count = 32;
  double knee_margin = 1e-6;
  /// Natural magnitude of a bias; bias steps and errors are measured in it.
  double bias_scale = 1e-5;
};

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped_near_knee = 0;
};

/// Compares backward() against central differences on up to `count`
/// randomly chosen trainable parameters.
FiniteDifferenceReport finite_difference_check(const SimModel& model,
                                               const Eigen::Ref<const ComplexMatrix>& input,
                                               const LossFn& loss, double step, Rng& rng,
                                               const FiniteDifferenceOptions& options = {});

/// Self-describing JSON checkpoint; doubles round-trip exactly.
void save_checkpoint(const std::filesystem::path& path, const SimModel& model);
SimModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const SimModel& model);
SimModel model_from_json(const std::string& text);

}  // namespace nlsim
