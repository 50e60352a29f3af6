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

#include "nlsim/nonlin.hpp"

#include <algorithm>
#include <cmath>

namespace nlsim {

ActivationTable::ActivationTable(std::vector<double> amps, std::vector<double> vals)
    : amplitudes(std::move(amps)), values(std::move(vals)) {
  if (amplitudes.size() < 2 || amplitudes.size() != values.size())
    throw ConfigError("activation table needs >= 2 matching knots");
  if (amplitudes.front() != 0.0) throw ConfigError("activation table must start at amplitude 0");
  for (std::size_t i = 1; i < amplitudes.size(); ++i) {
    if (!(amplitudes[i] > amplitudes[i - 1]))
      throw ConfigError("activation table knots must be strictly increasing");
  }
  const std::size_t n = amplitudes.size();
  std::vector<double> seg(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    seg[i] = (values[i + 1] - values[i]) / (amplitudes[i + 1] - amplitudes[i]);
  }
  knot_slopes.resize(n);
  knot_slopes.front() = seg.front();
  knot_slopes.back() = seg.back();
  for (std::size_t i = 1; i + 1 < n; ++i) knot_slopes[i] = 0.5 * (seg[i - 1] + seg[i]);
}

double ActivationTable::value(double v) const {
  if (v <= 0.0) return values.front();
  if (v >= amplitudes.back()) return values.back();
  const auto it = std::upper_bound(amplitudes.begin(), amplitudes.end(), v);
  const std::size_t hi = static_cast<std::size_t>(it - amplitudes.begin());
  const std::size_t lo = hi - 1;
  const double t = (v - amplitudes[lo]) / (amplitudes[hi] - amplitudes[lo]);
  return values[lo] + t * (values[hi] - values[lo]);
}

double ActivationTable::slope(double v) const {
  if (v >= amplitudes.back()) return 0.0;  // clamped above the table
  if (v <= 0.0) return knot_slopes.front();
  const auto it = std::upper_bound(amplitudes.begin(), amplitudes.end(), v);
  const std::size_t hi = static_cast<std::size_t>(it - amplitudes.begin());
  const std::size_t lo = hi - 1;
  if (amplitudes[lo] == v) return knot_slopes[lo];
  return (values[hi] - values[lo]) / (amplitudes[hi] - amplitudes[lo]);
}

Activation Activation::shifted_relu(double shift) {
  if (!std::isfinite(shift)) throw ConfigError("shift must be finite");
  Activation a(Kind::ShiftedRelu);
  a.shift_ = shift;
  return a;
}

Activation Activation::sign() { return Activation(Kind::Sign); }

Activation Activation::absolute_value() { return Activation(Kind::AbsoluteValue); }

Activation Activation::odd_power(int n, bool catalog_coefficient) {
  if (n < 1 || n % 2 == 0) throw ConfigError("odd_power needs an odd exponent >= 1");
  Activation a(Kind::OddPower);
  a.exponent_ = n;
  a.catalog_ = catalog_coefficient;
  const double half_n = 0.5 * n;
  // Catalog expression Gamma(1+n/2) / (sqrt(pi) Gamma((3+n)/2)); the exact
  // fundamental of cos^n, weighted as in the zonal filter, is twice that
  // and scales with v^n.
  const double catalog =
      std::exp(std::lgamma(1.0 + half_n) - std::lgamma(1.5 + half_n)) / std::sqrt(kPi);
  a.coefficient_ = catalog_coefficient ? catalog : 2.0 * catalog;
  return a;
}

Activation Activation::envelope_relu(double gain, double knee) {
  if (!std::isfinite(gain) || !std::isfinite(knee)) throw ConfigError("ReLU fit must be finite");
  Activation a(Kind::EnvelopeRelu);
  a.gain_ = gain;
  a.knee_ = knee;
  return a;
}

Activation Activation::tabulated(std::vector<double> amplitudes, std::vector<double> values) {
  Activation a(Kind::Tabulated);
  a.table_ = std::make_shared<const ActivationTable>(std::move(amplitudes), std::move(values));
  return a;
}

ActivationResponse Activation::respond_unbiased(double v) const {
  switch (kind_) {
    case Kind::Sign:
      return {v > 0.0 ? 4.0 / kPi : 0.0, 0.0, 0.0};
    case Kind::AbsoluteValue:
      return {0.0, 0.0, 0.0};
    case Kind::OddPower:
      if (catalog_) return {v > 0.0 ? coefficient_ : 0.0, 0.0, 0.0};
      return {coefficient_ * std::pow(v, exponent_),
              coefficient_ * exponent_ * std::pow(v, exponent_ - 1), 0.0};
    case Kind::EnvelopeRelu: {
      const double x = v - knee_;
      const double slope = x > 0.0 ? gain_ : (x == 0.0 ? 0.5 * gain_ : 0.0);
      return {gain_ * std::max(x, 0.0), slope, 0.0};
    }
    case Kind::Tabulated:
      return {table_->value(v), table_->slope(v), 0.0};
    case Kind::ShiftedRelu:
      break;
  }
  return {};
}

ActivationResponse Activation::respond(double amplitude, double bias) const {
  const double v = amplitude;
  if (kind_ == Kind::ShiftedRelu) {
    const double a = shift_ + bias;
    const double abs_a = std::abs(a);
    if (v == 0.0) return {0.0, a > 0.0 ? 1.0 : (a < 0.0 ? 0.0 : 0.5), 0.0};
    if (v <= abs_a) {
      if (a > 0.0) return {v, 1.0, 0.0};
      return {0.0, 0.0, 0.0};
    }
    const double root = std::sqrt((v - abs_a) * (v + abs_a));
    const double angle = std::acos(-a / v);
    ActivationResponse r;
    r.value = (v * angle + a * root / v) / kPi;
    r.d_amplitude = (angle - a * root / (v * v)) / kPi;
    r.d_bias = 2.0 * root / (kPi * v);
    return r;
  }
  // Envelope-domain operating-point shift.
  const double shifted = v + bias;
  if (shifted < 0.0) return {respond_unbiased(0.0).value, 0.0, 0.0};
  ActivationResponse r = respond_unbiased(shifted);
  if (shifted == 0.0 && bias != 0.0) r.d_amplitude *= 0.5;
  r.d_bias = r.d_amplitude;
  return r;
}

std::optional<double> Activation::knee(double bias) const {
  switch (kind_) {
    case Kind::ShiftedRelu: {
      const double a = shift_ + bias;
      if (a == 0.0) return std::nullopt;
      return std::abs(a);
    }
    case Kind::EnvelopeRelu:
      return knee_ - bias;
    default:
      if (bias < 0.0) return -bias;
      return std::nullopt;
  }
}

const char* to_string(Activation::Kind kind) {
  switch (kind) {
    case Activation::Kind::ShiftedRelu: return "shifted_relu";
    case Activation::Kind::Sign: return "sign";
    case Activation::Kind::AbsoluteValue: return "absolute_value";
    case Activation::Kind::OddPower: return "odd_power";
    case Activation::Kind::EnvelopeRelu: return "envelope_relu";
    case Activation::Kind::Tabulated: return "tabulated";
  }
  return "unknown";
}

Complex apply_activation(const Activation& activation, Complex x, double bias) {
  const double rho = std::abs(x);
  if (rho == 0.0) return {0.0, 0.0};
  return (activation(rho, bias) / rho) * x;
}

}  // namespace nlsim
