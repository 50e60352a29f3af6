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

#include "nlsim/core.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace nlsim {

/// Diode cell between a receive and a transmit antenna.
struct DiodeCircuitParams {
  double saturation_current_a = 1e-6;
  double alpha_per_volt = 33.0;
  double antenna_resistance_ohm = 73.0;
  double bias_volts = 0.0;  // operating-point shift, must be <= 0
};

void validate(const DiodeCircuitParams& params);

/// Memoryless real-valued device response F[v] seen at RF.
class BandpassNL {
 public:
  enum class Kind { Relu, ShiftedRelu, AbsoluteValue, Sign, Power, DiodeCircuit, Custom };

  static BandpassNL relu();
  /// F[v] = max(v + shift, 0).
  static BandpassNL shifted_relu(double shift);
  static BandpassNL absolute_value();
  static BandpassNL sign();
  /// F[v] = v^n for n >= 1. Only odd n have a closed-form lowpass.
  static BandpassNL power(int n);
  static BandpassNL diode(const DiodeCircuitParams& params);
  static BandpassNL custom(std::function<double(double)> fn);

  double operator()(double v) const;

  Kind kind() const { return kind_; }
  double shift() const { return shift_; }
  int exponent() const { return exponent_; }
  const DiodeCircuitParams& diode_params() const { return diode_; }

  /// Angles in (0, pi) where F[v cos(phi)] has a kink or jump.
  std::vector<double> breakpoints(double amplitude) const;

 private:
  explicit BandpassNL(Kind kind) : kind_(kind) {}

  Kind kind_;
  double shift_ = 0.0;
  int exponent_ = 1;
  DiodeCircuitParams diode_;
  std::function<double(double)> custom_;
};

/// Evaluated envelope map: value C and its partials w.r.t. the input
/// amplitude and the cell bias.
struct ActivationResponse {
  double value = 0.0;
  double d_amplitude = 0.0;
  double d_bias = 0.0;
};

/// Piecewise-linear table of C[v] on ascending knots starting at 0.
struct ActivationTable {
  std::vector<double> amplitudes;
  std::vector<double> values;
  std::vector<double> knot_slopes;  // mean of adjacent segment slopes

  ActivationTable(std::vector<double> amplitudes, std::vector<double> values);
  double value(double v) const;
  double slope(double v) const;
};

/// Lowpass-equivalent amplitude map C[.] of a cell. The complex response is
/// C[|x|] e^{j arg x}. A cell bias b <= 0 shifts the operating point: for the
/// shifted-ReLU family it adds to the device shift, for every other kind the
/// envelope is shifted to max(|x| + b, 0).
class Activation {
 public:
  enum class Kind { ShiftedRelu, Sign, AbsoluteValue, OddPower, EnvelopeRelu, Tabulated };

  /// Lowpass of max(v + shift, 0); shift = 0 gives C[v] = v/2.
  static Activation shifted_relu(double shift = 0.0);
  static Activation sign();
  static Activation absolute_value();
  /// `catalog_coefficient` selects the tabulated textbook expression instead
  /// of the exact zonal-filter coefficient.
  static Activation odd_power(int n, bool catalog_coefficient = false);
  /// C[v] = gain * max(v - knee, 0).
  static Activation envelope_relu(double gain, double knee);
  static Activation tabulated(std::vector<double> amplitudes, std::vector<double> values);

  Kind kind() const { return kind_; }
  ActivationResponse respond(double amplitude, double bias = 0.0) const;
  double operator()(double amplitude, double bias = 0.0) const {
    return respond(amplitude, bias).value;
  }
  double derivative(double amplitude, double bias = 0.0) const {
    return respond(amplitude, bias).d_amplitude;
  }

  /// Amplitude where the response changes regime, if any.
  std::optional<double> knee(double bias = 0.0) const;

  double shift() const { return shift_; }
  double gain() const { return gain_; }
  double knee_point() const { return knee_; }
  int exponent() const { return exponent_; }
  bool catalog_coefficient() const { return catalog_; }
  const ActivationTable* table() const { return table_.get(); }

 private:
  explicit Activation(Kind kind) : kind_(kind) {}
  ActivationResponse respond_unbiased(double v) const;

  Kind kind_;
  double shift_ = 0.0;
  double gain_ = 1.0;
  double knee_ = 0.0;
  int exponent_ = 1;
  bool catalog_ = false;
  double coefficient_ = 0.0;
  std::shared_ptr<const ActivationTable> table_;
};

const char* to_string(Activation::Kind kind);

/// sigma(x) = C[|x|] e^{j arg x}; sigma(0) = 0.
Complex apply_activation(const Activation& activation, Complex x, double bias = 0.0);

struct QuadratureOptions {
  double abs_tolerance = 1e-9;
  int max_intervals = 2000;
};

/// Zonal-filter lowpass C[v] = (2/pi) int_0^pi F[v cos phi] cos phi dphi.
/// Throws NumericalError carrying the achieved error estimate if the
/// tolerance cannot be met.
double lowpass_from_bandpass(const BandpassNL& nl, double amplitude,
                             const QuadratureOptions& options = {});

/// Closed-form lowpass for the catalog kinds. Rejects diode circuits,
/// custom functions and even powers.
Activation closed_form_lowpass(const BandpassNL& nl);

/// Solves u = R_A I_s (exp(2 alpha (s + b - u)) - 1) for the transmitted
/// voltage u given the instantaneous input s.
double diode_bandpass_response(const DiodeCircuitParams& params, double instantaneous_input);

/// |u - R_A I_s (exp(2 alpha (s + b - u)) - 1)|.
double diode_residual(const DiodeCircuitParams& params, double instantaneous_input, double u);

struct DiodeTableOptions {
  int points = 16384;
  double max_amplitude_v = 2.0;
  double log_floor_v = 1e-8;
  QuadratureOptions quadrature{};
};

/// Tabulated lowpass of the diode cell on [0, max_amplitude].
Activation diode_activation(const DiodeCircuitParams& params, const DiodeTableOptions& options = {});

struct ReluFit {
  double gain = 0.0;
  double knee = 0.0;
  double residual_rms = 0.0;
};

/// Least-squares fit of v -> gain * max(v - knee, 0) on `samples` uniform
/// amplitudes in [lo, hi].
ReluFit fit_relu_approximation(const Activation& activation, double lo, double hi,
                               int samples = 512);

std::vector<double> sample_static_alphas(int count, double alpha_min, double alpha_max, Rng& rng);

/// Half-normal non-positive biases: -|N(0,1)| * scale.
std::vector<double> sample_trainable_bias_init(int count, Rng& rng, double scale = 1e-5);

/// CSV with columns amplitude,C,dC/dv.
void write_activation_csv(std::ostream& os, const Activation& activation,
                          std::span<const double> amplitudes);

}  // namespace nlsim
