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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace nlsim;

namespace {

// Plain bisection on g(u) = u - R I (exp(2 alpha (s - u)) - 1), run until the
// bracket stops shrinking.
double bisect_diode(const DiodeCircuitParams& p, double s) {
  const double ri = p.antenna_resistance_ohm * p.saturation_current_a;
  auto g = [&](double u) { return u - ri * (std::exp(2 * p.alpha_per_volt * (s - u)) - 1); };
  double lo = -ri, hi = std::max(0.0, 2 * s) + 1e-12;
  for (int i = 0; i < 1000000; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (g(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("quadrature: catalog values") {
  CHECK(lowpass_from_bandpass(BandpassNL::relu(), 2.0) == doctest::Approx(1.0).epsilon(1e-10));
  for (double v : {0.1, 1.0, 7.5}) {
    CHECK(std::abs(lowpass_from_bandpass(BandpassNL::absolute_value(), v)) <= 1e-9);
    CHECK(lowpass_from_bandpass(BandpassNL::sign(), v) == doctest::Approx(4.0 / M_PI).epsilon(1e-10));
  }
}

TEST_CASE("quadrature vs closed forms at 50 random amplitudes") {
  Rng rng(42);
  const std::vector<BandpassNL> kinds = {BandpassNL::relu(), BandpassNL::shifted_relu(-0.5),
                                         BandpassNL::shifted_relu(0.5),
                                         BandpassNL::absolute_value(), BandpassNL::sign()};
  for (const BandpassNL& nl : kinds) {
    const Activation closed = closed_form_lowpass(nl);
    for (int i = 0; i < 50; ++i) {
      const double v = uniform(rng, 0.0, 4.0);
      CHECK(std::abs(lowpass_from_bandpass(nl, v) - closed(v)) <= 1e-7);
    }
  }
}

TEST_CASE("odd power: quadrature gives the exact coefficient, catalog is off by 2 v^n") {
  for (double v : {0.3, 1.0, 2.2}) {
    CHECK(lowpass_from_bandpass(BandpassNL::power(1), v) == doctest::Approx(v).epsilon(1e-10));
    CHECK(lowpass_from_bandpass(BandpassNL::power(3), v) ==
          doctest::Approx(0.75 * v * v * v).epsilon(1e-10));
    CHECK(Activation::odd_power(1)(v) == doctest::Approx(v).epsilon(1e-14));
    CHECK(Activation::odd_power(3)(v) == doctest::Approx(0.75 * v * v * v).epsilon(1e-14));
    CHECK(Activation::odd_power(1, true)(v) == doctest::Approx(0.5).epsilon(1e-14));
  }
  CHECK_THROWS_AS(closed_form_lowpass(BandpassNL::power(2)), ConfigError);
}

TEST_CASE("even bandpass functions are annihilated") {
  const BandpassNL cosine = BandpassNL::custom([](double v) { return std::cos(v); });
  for (double v : {0.2, 1.0, 3.0}) {
    CHECK(std::abs(lowpass_from_bandpass(BandpassNL::absolute_value(), v)) <= 1e-9);
    CHECK(std::abs(lowpass_from_bandpass(BandpassNL::power(2), v)) <= 1e-9);
    CHECK(std::abs(lowpass_from_bandpass(cosine, v)) <= 1e-9);
  }
}

TEST_CASE("quadrature failure reports its error estimate") {
  const BandpassNL wild = BandpassNL::custom([](double v) { return std::sin(1e4 * v) * v; });
  QuadratureOptions opt;
  opt.abs_tolerance = 1e-14;
  opt.max_intervals = 2;
  CHECK_THROWS_AS(lowpass_from_bandpass(wild, 1.0, opt), NumericalError);
}

TEST_CASE("shifted ReLU closed form branches") {
  CHECK(Activation::shifted_relu(0.5)(0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(Activation::shifted_relu(-0.5)(0.3) == 0.0);
  const double a = -0.5, v = 1.0;
  const double expected = (v * std::acos(-a / v) + a * std::sqrt(v * v - a * a) / v) / M_PI;
  CHECK(Activation::shifted_relu(a)(v) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(std::abs(lowpass_from_bandpass(BandpassNL::shifted_relu(a), v) - expected) <= 1e-8);
}

TEST_CASE("shifted ReLU derivatives match central differences") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double shift = uniform(rng, -1.0, 1.0);
    const double bias = -uniform(rng, 0.0, 0.5);
    const double v = uniform(rng, 0.0, 3.0);
    const Activation act = Activation::shifted_relu(shift);
    const double h = 1e-6;
    if (std::abs(v - std::abs(shift + bias)) < 1e-4) continue;
    const ActivationResponse r = act.respond(v, bias);
    CHECK(r.d_amplitude == doctest::Approx((act(v + h, bias) - act(v - h, bias)) / (2 * h)).epsilon(1e-6));
    CHECK(r.d_bias == doctest::Approx((act(v, bias + h) - act(v, bias - h)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("negative bias acts as an amplitude threshold") {
  const Activation act = Activation::shifted_relu(0.0);
  for (double b : {-1e-5, -0.3}) {
    for (double frac : {0.0, 0.2, 0.9999}) CHECK(act(frac * -b, b) == 0.0);
    CHECK(act(-2 * b, b) > 0.0);
  }
}

TEST_CASE("apply_activation: linear response, zero and phase equivariance") {
  const Activation relu = Activation::shifted_relu(0.0);
  const Complex x = std::polar(2.0, M_PI / 3);
  CHECK(std::abs(apply_activation(relu, x) - std::polar(1.0, M_PI / 3)) <= 1e-15);
  CHECK(apply_activation(relu, Complex(0.0, 0.0)) == Complex(0.0, 0.0));

  DiodeCircuitParams dp;
  dp.alpha_per_volt = 33;
  const std::vector<Activation> acts = {
      relu,
      Activation::shifted_relu(-0.2),
      Activation::sign(),
      Activation::absolute_value(),
      Activation::odd_power(3),
      Activation::envelope_relu(0.7, 0.1),
      diode_activation(dp, {.points = 64}),
  };
  Rng rng(13);
  for (const Activation& a : acts) {
    for (int i = 0; i < 100; ++i) {
      const Complex z = complex_normal(rng, 1.0);
      const double psi = uniform(rng, -M_PI, M_PI);
      const Complex rot = std::polar(1.0, psi);
      CHECK(std::abs(apply_activation(a, rot * z, -0.05) - rot * apply_activation(a, z, -0.05)) <=
            1e-14 * (1.0 + std::abs(z)));
    }
  }
}

TEST_CASE("diode solver: exact root at zero and cutoff saturation") {
  DiodeCircuitParams p;
  p.alpha_per_volt = 33;
  CHECK(diode_bandpass_response(p, 0.0) == 0.0);
  const double ri = p.antenna_resistance_ohm * p.saturation_current_a;
  CHECK(std::abs(diode_bandpass_response(p, -10.0) + ri) <= 1e-9 * ri);
}

TEST_CASE("diode solver: matches a bisection oracle") {
  DiodeCircuitParams p;
  p.alpha_per_volt = 33;
  const double u = diode_bandpass_response(p, 0.5);
  CHECK(std::abs(u - bisect_diode(p, 0.5)) <= 1e-10);
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    p.alpha_per_volt = uniform(rng, 18, 57);
    const double s = uniform(rng, -2.0, 2.0);
    CHECK(std::abs(diode_bandpass_response(p, s) - bisect_diode(p, s)) <= 1e-10);
  }
}

TEST_CASE("diode solver: residual below 1e-12 across alpha in [18, 57]") {
  Rng rng(1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    DiodeCircuitParams p;
    p.alpha_per_volt = uniform(rng, 18, 57);
    p.bias_volts = -uniform(rng, 0.0, 0.5);
    const double s = uniform(rng, -3.0, 3.0);
    worst = std::max(worst, diode_residual(p, s, diode_bandpass_response(p, s)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("diode parameters are validated") {
  DiodeCircuitParams p;
  p.bias_volts = 0.1;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = {};
  p.alpha_per_volt = 0.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
}

TEST_CASE("diode activation: zero at origin, monotone, alpha-dependent") {
  DiodeCircuitParams p18, p33;
  p18.alpha_per_volt = 18;
  p33.alpha_per_volt = 33;
  const Activation a18 = diode_activation(p18), a33 = diode_activation(p33);
  CHECK(a18(0.0) == 0.0);
  CHECK(a33(0.0) == 0.0);
  CHECK(a18.table()->amplitudes.size() >= 512);
  CHECK(diode_activation(p18, {.points = 512}).table()->amplitudes.size() == 512);
  CHECK(std::abs(a18(0.5) - a33(0.5)) > 1e-3);
  for (const Activation* a : {&a18, &a33}) {
    const auto& vals = a->table()->values;
    for (std::size_t i = 1; i < vals.size(); ++i) CHECK(vals[i] >= vals[i - 1]);
  }
}

TEST_CASE("diode activation: table agrees with direct quadrature") {
  DiodeCircuitParams p;
  p.alpha_per_volt = 33;
  p.bias_volts = -0.2;
  const Activation table = diode_activation(p);
  const BandpassNL direct = BandpassNL::diode(p);
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const double v = uniform(rng, 0.0, 2.0);
    const double ref = lowpass_from_bandpass(direct, v);
    CHECK(std::abs(table(v) - ref) <= 1e-4 * std::abs(ref));
  }
}

TEST_CASE("ReLU fit: self-fit, diode family and degenerate ranges") {
  const ReluFit self = fit_relu_approximation(Activation::envelope_relu(0.8, 0.3), 0.0, 2.0);
  CHECK(self.gain == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(self.knee == doctest::Approx(0.3).epsilon(1e-6));

  DiodeCircuitParams p;
  p.alpha_per_volt = 33;
  p.bias_volts = -0.4;
  const Activation diode = diode_activation(p);
  const ReluFit fit = fit_relu_approximation(diode, 0.0, 2.0);
  CHECK(fit.knee > 0.0);
  CHECK(fit.residual_rms < 0.05 * diode(2.0));

  CHECK_THROWS_AS(fit_relu_approximation(diode, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(fit_relu_approximation(Activation::absolute_value(), 0.0, 1.0), ConfigError);
}

TEST_CASE("static alphas: bounds, degenerate range and reproducibility") {
  Rng a(3), b(3);
  const auto x = sample_static_alphas(1000, 55, 57, a);
  for (double v : x) CHECK((v >= 55 && v <= 57));
  CHECK(x == sample_static_alphas(1000, 55, 57, b));
  for (double v : sample_static_alphas(10, 33, 33, a)) CHECK(v == 33.0);
}

TEST_CASE("trainable bias init: half-normal with std 1e-5 sqrt(1 - 2/pi)") {
  Rng rng(17), again(17);
  const auto b = sample_trainable_bias_init(100000, rng);
  double sum = 0.0, sq = 0.0;
  for (double v : b) {
    CHECK(v <= 0.0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / b.size();
  const double sd = std::sqrt(sq / b.size() - mean * mean);
  CHECK(sd == doctest::Approx(1e-5 * std::sqrt(1 - 2 / M_PI)).epsilon(0.02));
  CHECK(b == sample_trainable_bias_init(100000, again));
}

TEST_CASE("tabulated activation: knot slopes and clamped extrapolation") {
  const Activation t = Activation::tabulated({0.0, 1.0, 2.0}, {0.0, 1.0, 3.0});
  CHECK(t(0.5) == doctest::Approx(0.5));
  CHECK(t.derivative(1.0) == doctest::Approx(1.5));
  CHECK(t(5.0) == doctest::Approx(3.0));
  CHECK(t.derivative(5.0) == 0.0);
  CHECK_THROWS_AS(Activation::tabulated({0.0, 0.0}, {0.0, 1.0}), ConfigError);
}

TEST_CASE("activation CSV export") {
  std::ostringstream os;
  const double v[] = {0.0, 1.0};
  write_activation_csv(os, Activation::shifted_relu(0.0), v);
  const std::string text = os.str();
  CHECK(text.rfind("amplitude,C,dC/dv\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
