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

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

namespace nlsim {

namespace {

// 15-point Kronrod rule with its embedded 7-point Gauss rule (QUADPACK qk15).
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a;
  double b;
  double integral;
  double error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

template <typename F>
Segment kronrod15(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = half * kXgk[j];
    const double pair = f(center - dx) + f(center + dx);
    kronrod += kWgk[j] * pair;
    if (j % 2 == 1) gauss += kWg[j / 2] * pair;
  }
  kronrod *= half;
  gauss *= half;
  return {a, b, kronrod, std::abs(kronrod - gauss)};
}

/// Globally adaptive Gauss-Kronrod on [a, b] with optional interior
/// breakpoints; bisects the worst segment until the summed error estimate
/// meets the absolute tolerance.
template <typename F>
double integrate(const F& f, double a, double b, std::vector<double> breaks,
                 const QuadratureOptions& opt) {
  std::sort(breaks.begin(), breaks.end());
  std::priority_queue<Segment> heap;
  double lo = a;
  for (double x : breaks) {
    if (x > lo && x < b) {
      heap.push(kronrod15(f, lo, x));
      lo = x;
    }
  }
  heap.push(kronrod15(f, lo, b));

  auto totals = [&heap]() {
    auto copy = heap;
    double integral = 0.0, error = 0.0;
    while (!copy.empty()) {
      integral += copy.top().integral;
      error += copy.top().error;
      copy.pop();
    }
    return std::pair{integral, error};
  };

  double error = 0.0;
  {
    auto [i, e] = totals();
    error = e;
    if (!std::isfinite(i)) throw NumericalError("quadrature integrand is not finite");
  }
  while (error > opt.abs_tolerance) {
    if (static_cast<int>(heap.size()) >= opt.max_intervals) {
      std::ostringstream msg;
      msg << "quadrature did not converge: error estimate " << error << " > "
          << opt.abs_tolerance;
      throw NumericalError(msg.str());
    }
    const Segment worst = heap.top();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      std::ostringstream msg;
      msg << "quadrature segment underflow: error estimate " << error;
      throw NumericalError(msg.str());
    }
    heap.pop();
    const Segment left = kronrod15(f, worst.a, mid);
    const Segment right = kronrod15(f, mid, worst.b);
    heap.push(left);
    heap.push(right);
    error += left.error + right.error - worst.error;
    if (!std::isfinite(left.integral + right.integral))
      throw NumericalError("quadrature integrand is not finite");
  }
  // Re-sum from scratch so the result does not depend on update order.
  return totals().first;
}

}  // namespace

void validate(const DiodeCircuitParams& p) {
  if (!(p.saturation_current_a > 0.0)) throw ConfigError("diode I_s must be > 0");
  if (!(p.alpha_per_volt > 0.0)) throw ConfigError("diode alpha must be > 0");
  if (!(p.antenna_resistance_ohm > 0.0)) throw ConfigError("antenna resistance must be > 0");
  if (!(p.bias_volts <= 0.0)) throw ConfigError("diode bias must be <= 0");
}

BandpassNL BandpassNL::relu() { return BandpassNL(Kind::Relu); }

BandpassNL BandpassNL::shifted_relu(double shift) {
  BandpassNL nl(Kind::ShiftedRelu);
  nl.shift_ = shift;
  return nl;
}

BandpassNL BandpassNL::absolute_value() { return BandpassNL(Kind::AbsoluteValue); }

BandpassNL BandpassNL::sign() { return BandpassNL(Kind::Sign); }

BandpassNL BandpassNL::power(int n) {
  if (n < 1) throw ConfigError("power exponent must be >= 1");
  BandpassNL nl(Kind::Power);
  nl.exponent_ = n;
  return nl;
}

BandpassNL BandpassNL::diode(const DiodeCircuitParams& params) {
  validate(params);
  BandpassNL nl(Kind::DiodeCircuit);
  nl.diode_ = params;
  return nl;
}

BandpassNL BandpassNL::custom(std::function<double(double)> fn) {
  if (!fn) throw ConfigError("custom bandpass function is empty");
  BandpassNL nl(Kind::Custom);
  nl.custom_ = std::move(fn);
  return nl;
}

double BandpassNL::operator()(double v) const {
  switch (kind_) {
    case Kind::Relu: return std::max(v, 0.0);
    case Kind::ShiftedRelu: return std::max(v + shift_, 0.0);
    case Kind::AbsoluteValue: return std::abs(v);
    case Kind::Sign: return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    case Kind::Power: return std::pow(v, exponent_);
    case Kind::DiodeCircuit: return diode_bandpass_response(diode_, v);
    case Kind::Custom: return custom_(v);
  }
  return 0.0;
}

std::vector<double> BandpassNL::breakpoints(double amplitude) const {
  switch (kind_) {
    case Kind::Relu:
    case Kind::AbsoluteValue:
    case Kind::Sign:
    case Kind::Custom:
      return {kPi / 2.0};
    case Kind::ShiftedRelu:
      if (amplitude > std::abs(shift_)) return {std::acos(-shift_ / amplitude)};
      return {};
    default:
      return {};
  }
}

double lowpass_from_bandpass(const BandpassNL& nl, double amplitude,
                             const QuadratureOptions& options) {
  if (!std::isfinite(amplitude)) throw ConfigError("amplitude must be finite");
  auto integrand = [&](double phi) {
    const double c = std::cos(phi);
    return nl(amplitude * c) * c;
  };
  // The 2/pi weight is applied to the tolerance so it bounds the final value.
  QuadratureOptions scaled = options;
  scaled.abs_tolerance = options.abs_tolerance * kPi / 2.0;
  return (2.0 / kPi) * integrate(integrand, 0.0, kPi, nl.breakpoints(amplitude), scaled);
}

Activation closed_form_lowpass(const BandpassNL& nl) {
  switch (nl.kind()) {
    case BandpassNL::Kind::Relu: return Activation::shifted_relu(0.0);
    case BandpassNL::Kind::ShiftedRelu: return Activation::shifted_relu(nl.shift());
    case BandpassNL::Kind::AbsoluteValue: return Activation::absolute_value();
    case BandpassNL::Kind::Sign: return Activation::sign();
    case BandpassNL::Kind::Power:
      if (nl.exponent() % 2 == 0)
        throw ConfigError("even powers have no closed-form lowpass (it is identically zero)");
      return Activation::odd_power(nl.exponent());
    case BandpassNL::Kind::DiodeCircuit:
      throw ConfigError("diode circuits have no closed-form lowpass; use diode_activation");
    case BandpassNL::Kind::Custom:
      throw ConfigError("custom bandpass functions have no closed-form lowpass");
  }
  throw ConfigError("unknown bandpass kind");
}

double diode_residual(const DiodeCircuitParams& p, double s, double u) {
  const double ri = p.antenna_resistance_ohm * p.saturation_current_a;
  return std::abs(u - ri * std::expm1(2.0 * p.alpha_per_volt * (s + p.bias_volts - u)));
}

double diode_bandpass_response(const DiodeCircuitParams& p, double input) {
  if (!std::isfinite(input)) throw ConfigError("diode input must be finite");
  const double s = input + p.bias_volts;
  const double ri = p.antenna_resistance_ohm * p.saturation_current_a;
  const double two_alpha = 2.0 * p.alpha_per_volt;

  // g(u) = u - RI (exp(2 alpha (s - u)) - 1) is strictly increasing; g(lo) < 0
  // and g(hi) >= 0 on this bracket.
  double lo = -ri;
  double hi = std::max(0.0, 2.0 * s);
  auto g = [&](double u) { return u - ri * std::expm1(two_alpha * (s - u)); };
  if (g(hi) == 0.0) return hi;

  // Large-signal start: u ~ s - ln(1 + u/RI) / (2 alpha).
  double u = s > 0.0 ? s - std::log1p(s / ri) / two_alpha : s * ri * two_alpha / (1.0 + ri * two_alpha);
  u = std::clamp(u, lo, hi);

  for (int iter = 0; iter < 200; ++iter) {
    const double gu = g(u);
    if (gu == 0.0) return u;
    if (gu < 0.0 || std::isnan(gu)) {
      lo = u;
    } else {
      hi = u;
    }
    const double slope = 1.0 + two_alpha * ri * std::exp(two_alpha * (s - u));
    double next = u - gu / slope;
    if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
    const double tol = 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(next));
    if (std::abs(next - u) <= tol || hi - lo <= tol) {
      u = next;
      break;
    }
    u = next;
  }
  return u;
}

Activation diode_activation(const DiodeCircuitParams& params, const DiodeTableOptions& opt) {
  validate(params);
  if (opt.points < 3) throw ConfigError("diode table needs >= 3 points");
  if (!(opt.max_amplitude_v > opt.log_floor_v) || !(opt.log_floor_v > 0.0))
    throw ConfigError("diode table range must satisfy 0 < floor < max");

  const BandpassNL nl = BandpassNL::diode(params);
  std::vector<double> amps(opt.points);
  std::vector<double> vals(opt.points);
  amps[0] = 0.0;
  vals[0] = 0.0;
  const double log_lo = std::log(opt.log_floor_v);
  const double log_hi = std::log(opt.max_amplitude_v);
  for (int i = 1; i < opt.points; ++i) {
    const double t = static_cast<double>(i - 1) / (opt.points - 2);
    amps[i] = i + 1 == opt.points ? opt.max_amplitude_v : std::exp(log_lo + t * (log_hi - log_lo));
    vals[i] = lowpass_from_bandpass(nl, amps[i], opt.quadrature);
  }
  // Quadrature noise can make the curve dip by less than the tolerance in the
  // cut-off region; anything larger is a real failure.
  for (int i = 1; i < opt.points; ++i) {
    if (vals[i] < vals[i - 1]) {
      if (vals[i - 1] - vals[i] > 10.0 * opt.quadrature.abs_tolerance)
        throw NumericalError("diode lowpass is not monotone");
      vals[i] = vals[i - 1];
    }
  }
  return Activation::tabulated(std::move(amps), std::move(vals));
}

ReluFit fit_relu_approximation(const Activation& activation, double lo, double hi, int samples) {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw ConfigError("ReLU fit needs a non-empty amplitude range");
  if (samples < 3) throw ConfigError("ReLU fit needs >= 3 samples");

  std::vector<double> v(samples), c(samples);
  double peak = 0.0;
  for (int i = 0; i < samples; ++i) {
    v[i] = lo + (hi - lo) * i / (samples - 1);
    c[i] = activation(v[i]);
    peak = std::max(peak, std::abs(c[i]));
  }
  if (peak == 0.0) throw ConfigError("cannot fit a ReLU to an all-zero activation");

  // For a fixed knee the optimal gain is a 1-D least-squares solve.
  auto fit_at = [&](double knee) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double m = std::max(v[i] - knee, 0.0);
      num += m * c[i];
      den += m * m;
    }
    const double gain = den > 0.0 ? num / den : 0.0;
    double sse = 0.0;
    for (int i = 0; i < samples; ++i) {
      const double e = c[i] - gain * std::max(v[i] - knee, 0.0);
      sse += e * e;
    }
    return std::pair{gain, sse};
  };

  const double span = hi - lo;
  const double k_lo = lo - span;
  const double k_hi = hi - 2.0 * span / (samples - 1);
  constexpr int kScan = 400;
  const double step = (k_hi - k_lo) / kScan;
  double best_knee = k_lo;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kScan; ++i) {
    const double k = k_lo + i * step;
    const double sse = fit_at(k).second;
    if (sse < best_sse) {
      best_sse = sse;
      best_knee = k;
    }
  }
  const auto refined = boost::math::tools::brent_find_minima(
      [&](double k) { return fit_at(k).second; }, std::max(k_lo, best_knee - step),
      std::min(k_hi, best_knee + step), std::numeric_limits<double>::digits);
  if (refined.second <= best_sse) best_knee = refined.first;

  const auto [gain, sse] = fit_at(best_knee);
  return {gain, best_knee, std::sqrt(sse / samples)};
}

std::vector<double> sample_static_alphas(int count, double alpha_min, double alpha_max, Rng& rng) {
  if (count < 0) throw ConfigError("count must be >= 0");
  if (alpha_min > alpha_max) throw ConfigError("alpha range must satisfy min <= max");
  std::vector<double> out(count);
  for (double& a : out) a = alpha_min == alpha_max ? alpha_min : uniform(rng, alpha_min, alpha_max);
  return out;
}

std::vector<double> sample_trainable_bias_init(int count, Rng& rng, double scale) {
  if (count < 0) throw ConfigError("count must be >= 0");
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> out(count);
  for (double& b : out) b = -std::abs(n(rng)) * scale;
  return out;
}

void write_activation_csv(std::ostream& os, const Activation& activation,
                          std::span<const double> amplitudes) {
  os << "amplitude,C,dC/dv\n";
  os.precision(17);
  for (double v : amplitudes) {
    const ActivationResponse r = activation.respond(v);
    os << v << ',' << r.value << ',' << r.d_amplitude << '\n';
  }
}

}  // namespace nlsim
