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

#include "nlsim/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlsim {

std::shared_ptr<const Propagation> build_propagation(const SimGeometry& geometry) {
  auto p = std::make_shared<Propagation>();
  for (int l = 1; l < geometry.num_layers; ++l) {
    p->inter_layer.push_back(rayleigh_sommerfeld_matrix(geometry, l - 1, l).entries);
  }
  p->to_output = rayleigh_sommerfeld_matrix(geometry, geometry.num_layers - 1,
                                            PropagationMatrix::kOutputArray)
                     .entries;
  return p;
}

std::vector<int> SimModel::nonlinear_layers() const {
  std::vector<int> out;
  for (int l = 0; l < num_layers(); ++l) {
    if (std::holds_alternative<NonlinearLayer>(layers[l])) out.push_back(l);
  }
  return out;
}

void validate(const SimModel& model) {
  const int m = model.num_cells();
  if (model.num_layers() != model.geometry.num_layers)
    throw ConfigError("layer schedule length must equal the geometry's layer count");
  if (!model.propagation) throw ConfigError("model has no propagation operators");
  const Propagation& p = *model.propagation;
  if (static_cast<int>(p.inter_layer.size()) != model.num_layers() - 1)
    throw ConfigError("propagation operator count does not match the layer count");
  for (const ComplexMatrix& w : p.inter_layer) {
    if (w.rows() != m || w.cols() != m) throw ConfigError("inter-layer operator must be M x M");
  }
  if (p.to_output.cols() != m || p.to_output.rows() != model.geometry.num_output_antennas)
    throw ConfigError("output operator must be N_R x M");
  for (const LayerKind& layer : model.layers) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->phases.size() != m) throw ConfigError("phase vector must have M entries");
    } else {
      const auto& nl = std::get<NonlinearLayer>(layer);
      if (static_cast<int>(nl.activations.size()) != m || nl.biases.size() != m)
        throw ConfigError("nonlinear layer needs M activations and M biases");
    }
  }
  if (!(model.beta > 0.0) || !std::isfinite(model.beta)) throw ConfigError("beta must be > 0");
}

namespace {

void apply_layer(const LayerKind& layer, const ComplexMatrix& z, ComplexMatrix& x) {
  if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
    const ComplexVector phasor = (kJ * lin->phases.cast<Complex>()).array().exp();
    x.noalias() = phasor.asDiagonal() * z;
    return;
  }
  const auto& nl = std::get<NonlinearLayer>(layer);
  x.resize(z.rows(), z.cols());
  for (Eigen::Index b = 0; b < z.cols(); ++b) {
    for (Eigen::Index m = 0; m < z.rows(); ++m) {
      x(m, b) = apply_activation(nl.activations[m], z(m, b), nl.biases(m));
    }
  }
}

}  // namespace

ForwardTrace forward(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& input) {
  if (input.rows() != model.num_cells()) throw ConfigError("input field must have M rows");
  const Propagation& prop = *model.propagation;
  ForwardTrace t;
  const int num_layers = model.num_layers();
  t.pre.resize(num_layers);
  t.post.resize(num_layers + 1);
  t.post[0] = input;
  for (int l = 0; l < num_layers; ++l) {
    if (l == 0) {
      t.pre[0] = input;
    } else {
      t.pre[l].noalias() = prop.inter_layer[l - 1] * t.post[l];
    }
    apply_layer(model.layers[l], t.pre[l], t.post[l + 1]);
  }
  t.output.noalias() = prop.to_output * t.post[num_layers];
  return t;
}

ComplexMatrix forward_output(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& input,
                             Eigen::Index chunk) {
  if (input.rows() != model.num_cells()) throw ConfigError("input field must have M rows");
  const Propagation& prop = *model.propagation;
  ComplexMatrix out(prop.to_output.rows(), input.cols());
  ComplexMatrix x, z;
  for (Eigen::Index start = 0; start < input.cols(); start += chunk) {
    const Eigen::Index n = std::min(chunk, input.cols() - start);
    x = input.middleCols(start, n);
    for (int l = 0; l < model.num_layers(); ++l) {
      if (l == 0) {
        z = x;
      } else {
        z.noalias() = prop.inter_layer[l - 1] * x;
      }
      apply_layer(model.layers[l], z, x);
    }
    out.middleCols(start, n).noalias() = prop.to_output * x;
  }
  return out;
}

GradientSet backward(const SimModel& model, const ForwardTrace& trace,
                     const Eigen::Ref<const ComplexMatrix>& output_cotangent) {
  const Propagation& prop = *model.propagation;
  if (output_cotangent.rows() != trace.output.rows() ||
      output_cotangent.cols() != trace.output.cols())
    throw ConfigError("cotangent shape must match the traced output");

  const int num_layers = model.num_layers();
  GradientSet grads;
  grads.layers.resize(num_layers);

  ComplexMatrix g = prop.to_output.adjoint() * output_cotangent;
  ComplexMatrix gz;
  for (int l = num_layers - 1; l >= 0; --l) {
    const ComplexMatrix& x = trace.post[l + 1];
    if (const auto* lin = std::get_if<LinearLayer>(&model.layers[l])) {
      if (lin->trainable) {
        // d/dtheta of e^{j theta} z is j x; pairing with g gives -Im(conj(g) x).
        grads.layers[l] = -(g.conjugate().cwiseProduct(x)).imag().rowwise().sum();
      }
      const ComplexVector conj_phasor = (-kJ * lin->phases.cast<Complex>()).array().exp();
      gz.noalias() = conj_phasor.asDiagonal() * g;
    } else {
      const auto& nl = std::get<NonlinearLayer>(model.layers[l]);
      const ComplexMatrix& z = trace.pre[l];
      gz.resize(z.rows(), z.cols());
      RealVector gb = RealVector::Zero(z.rows());
      for (Eigen::Index b = 0; b < z.cols(); ++b) {
        for (Eigen::Index m = 0; m < z.rows(); ++m) {
          const double rho = std::abs(z(m, b));
          if (rho == 0.0) {
            gz(m, b) = 0.0;
            continue;
          }
          const Complex u = z(m, b) / rho;
          const ActivationResponse r = nl.activations[m].respond(rho, nl.biases(m));
          const Complex p = std::conj(g(m, b)) * u;
          gz(m, b) = u * Complex(r.d_amplitude * p.real(), -(r.value / rho) * p.imag());
          gb(m) += p.real() * r.d_bias;
        }
      }
      if (nl.trainable) grads.layers[l] = std::move(gb);
    }
    if (l > 0) g.noalias() = prop.inter_layer[l - 1].adjoint() * gz;
  }
  return grads;
}

PositionEstimate readout(const Eigen::Ref<const ComplexVector>& y, double beta,
                         const RegionBounds& bounds) {
  if (y.size() < 2) throw ConfigError("readout needs two output antennas");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  PositionEstimate e;
  e.range_m = bounds.r_min_m + beta * std::abs(y(0)) * (bounds.r_max_m - bounds.r_min_m);
  e.azimuth_rad = (2.0 * beta * std::abs(y(1)) - 1.0) * kPi / 2.0;
  e.position = {e.range_m * std::cos(e.azimuth_rad), e.range_m * std::sin(e.azimuth_rad)};
  return e;
}

LossFn position_loss(Eigen::Matrix2Xd targets, double beta, const RegionBounds& bounds) {
  return [targets = std::move(targets), beta, bounds](const ComplexMatrix& y) {
    if (y.cols() != targets.cols()) throw ConfigError("loss batch size mismatch");
    const double n = static_cast<double>(y.cols());
    const double span = bounds.r_max_m - bounds.r_min_m;
    LossEval out;
    out.cotangent = ComplexMatrix::Zero(y.rows(), y.cols());
    for (Eigen::Index b = 0; b < y.cols(); ++b) {
      const PositionEstimate est = readout(y.col(b), beta, bounds);
      const Eigen::Vector2d err = est.position - targets.col(b);
      out.value += err.squaredNorm() / n;
      const Eigen::Vector2d d_pos = 2.0 * err / n;
      const double c = std::cos(est.azimuth_rad);
      const double s = std::sin(est.azimuth_rad);
      const double d_range = d_pos.x() * c + d_pos.y() * s;
      const double d_angle = est.range_m * (-d_pos.x() * s + d_pos.y() * c);
      const double d_amp[2] = {d_range * beta * span, d_angle * beta * kPi};
      for (int i = 0; i < 2; ++i) {
        const double a = std::abs(y(i, b));
        if (a > 0.0) out.cotangent(i, b) = (d_amp[i] / a) * y(i, b);
      }
    }
    return out;
  };
}

double calibrate_beta(const SimModel& model, const Eigen::Ref<const ComplexMatrix>& inputs,
                      double percentile) {
  if (inputs.cols() == 0) throw ConfigError("beta calibration needs samples");
  if (!(percentile > 0.0 && percentile <= 1.0)) throw ConfigError("percentile must be in (0, 1]");
  const ComplexMatrix y = forward_output(model, inputs);
  std::vector<double> peaks(y.cols());
  for (Eigen::Index b = 0; b < y.cols(); ++b) peaks[b] = y.col(b).cwiseAbs().maxCoeff();
  const auto n = static_cast<std::ptrdiff_t>(peaks.size());
  std::ptrdiff_t k = static_cast<std::ptrdiff_t>(std::ceil(percentile * n)) - 1;
  k = std::clamp<std::ptrdiff_t>(k, 0, n - 1);
  std::nth_element(peaks.begin(), peaks.begin() + k, peaks.end());
  const double level = peaks[k];
  if (!(level > 0.0) || !std::isfinite(level))
    throw NumericalError("cannot calibrate beta: output amplitude is zero or not finite");
  return 1.0 / level;
}

std::vector<ParamKind> parameter_kinds(const SimModel& model) {
  std::vector<ParamKind> kinds;
  for (const LayerKind& layer : model.layers) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->trainable) kinds.insert(kinds.end(), lin->phases.size(), ParamKind::Phase);
    } else {
      const auto& nl = std::get<NonlinearLayer>(layer);
      if (nl.trainable) kinds.insert(kinds.end(), nl.biases.size(), ParamKind::Bias);
    }
  }
  return kinds;
}

RealVector pack_parameters(const SimModel& model) {
  std::vector<double> flat;
  for (const LayerKind& layer : model.layers) {
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->trainable) flat.insert(flat.end(), lin->phases.begin(), lin->phases.end());
    } else {
      const auto& nl = std::get<NonlinearLayer>(layer);
      if (nl.trainable) flat.insert(flat.end(), nl.biases.begin(), nl.biases.end());
    }
  }
  return Eigen::Map<const RealVector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

void unpack_parameters(SimModel& model, const RealVector& params) {
  Eigen::Index offset = 0;
  for (LayerKind& layer : model.layers) {
    RealVector* target = nullptr;
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      if (lin->trainable) target = &lin->phases;
    } else {
      auto& nl = std::get<NonlinearLayer>(layer);
      if (nl.trainable) target = &nl.biases;
    }
    if (!target) continue;
    if (offset + target->size() > params.size()) throw ConfigError("parameter vector too short");
    *target = params.segment(offset, target->size());
    offset += target->size();
  }
  if (offset != params.size()) throw ConfigError("parameter vector too long");
}

RealVector pack_gradients(const SimModel& model, const GradientSet& grads) {
  std::vector<double> flat;
  for (int l = 0; l < model.num_layers(); ++l) {
    const RealVector& g = grads.layers[l];
    flat.insert(flat.end(), g.begin(), g.end());
  }
  RealVector out = Eigen::Map<const RealVector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  if (out.size() != static_cast<Eigen::Index>(parameter_kinds(model).size()))
    throw ConfigError("gradient set does not match the model's trainable parameters");
  return out;
}

FiniteDifferenceReport finite_difference_check(const SimModel& model,
                                               const Eigen::Ref<const ComplexMatrix>& input,
                                               const LossFn& loss, double step, Rng& rng,
                                               const FiniteDifferenceOptions& options) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be > 0");
  const ForwardTrace trace = forward(model, input);
  const LossEval base = loss(trace.output);
  const RealVector grad = pack_gradients(model, backward(model, trace, base.cotangent));
  const std::vector<ParamKind> kinds = parameter_kinds(model);
  const RealVector params = pack_parameters(model);

  // Map each flat parameter back to (layer, cell).
  std::vector<std::pair<int, int>> owner;
  for (int l = 0; l < model.num_layers(); ++l) {
    const bool trainable =
        std::visit([](const auto& x) { return x.trainable; }, model.layers[l]);
    if (!trainable) continue;
    for (int m = 0; m < model.num_cells(); ++m) owner.emplace_back(l, m);
  }

  auto near_knee = [&](int layer, int cell) {
    const auto& nl = std::get<NonlinearLayer>(model.layers[layer]);
    const auto knee = nl.activations[cell].knee(nl.biases(cell));
    if (!knee) return false;
    const double tol = options.knee_margin * std::max(*knee, options.bias_scale);
    for (Eigen::Index b = 0; b < trace.pre[layer].cols(); ++b) {
      if (std::abs(std::abs(trace.pre[layer](cell, b)) - *knee) <= tol) return true;
    }
    return false;
  };
  std::vector<bool> layer_near_knee(model.num_layers(), false);
  for (int l : model.nonlinear_layers()) {
    for (int m = 0; m < model.num_cells() && !layer_near_knee[l]; ++m) {
      layer_near_knee[l] = near_knee(l, m);
    }
  }

  std::vector<Eigen::Index> order(grad.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto scale_of = [&](Eigen::Index i) {
    return kinds[i] == ParamKind::Bias ? options.bias_scale : 1.0;
  };
  double floor = 0.0;
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    floor = std::max(floor, std::abs(grad(i)) * scale_of(i));
  }
  floor *= 1e-6;

  FiniteDifferenceReport report;
  SimModel probe = model;
  for (Eigen::Index i : order) {
    if (report.checked >= options.count) break;
    const auto [layer, cell] = owner[i];
    bool skip = false;
    if (kinds[i] == ParamKind::Bias) {
      skip = near_knee(layer, cell);
    } else {
      for (int l = layer + 1; l < model.num_layers() && !skip; ++l) skip = layer_near_knee[l];
    }
    if (skip) {
      ++report.skipped_near_knee;
      continue;
    }
    const double h = step * scale_of(i);
    RealVector p = params;
    p(i) = params(i) + h;
    unpack_parameters(probe, p);
    const double up = loss(forward_output(probe, input)).value;
    p(i) = params(i) - h;
    unpack_parameters(probe, p);
    const double down = loss(forward_output(probe, input)).value;

    const double fd = (up - down) / (2.0 * h) * scale_of(i);
    const double an = grad(i) * scale_of(i);
    const double denom = std::max({std::abs(fd), std::abs(an), floor});
    const double err = denom > 0.0 ? std::abs(fd - an) / denom : 0.0;
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.checked;
  }
  return report;
}

}  // namespace nlsim
