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

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace nlsim;

namespace {

SimGeometry small_geometry(int side, int layers) {
  GeometryConfig c;
  c.cells_per_side = side;
  c.num_layers = layers;
  return build_geometry(c);
}

SimModel linear_model(const SimGeometry& g, Rng* rng = nullptr) {
  SimModel m;
  m.geometry = g;
  m.propagation = build_propagation(g);
  for (int l = 0; l < g.num_layers; ++l) {
    LinearLayer layer;
    layer.phases = RealVector::Zero(g.num_cells());
    if (rng) {
      for (double& p : layer.phases) p = uniform(*rng, 0.0, kTwoPi);
    }
    m.layers.emplace_back(layer);
  }
  return m;
}

NonlinearLayer relu_layer(int cells, double bias, bool trainable) {
  NonlinearLayer nl;
  nl.activations.assign(cells, Activation::shifted_relu(0.0));
  nl.biases = RealVector::Constant(cells, bias);
  nl.trainable = trainable;
  return nl;
}

ComplexMatrix random_field(Rng& rng, int rows, int cols) {
  ComplexMatrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = complex_normal(rng, 1.0);
  return x;
}

// L = sum |y - t|^2 with cotangent 2 (y - t).
LossFn quadratic_loss(ComplexMatrix target) {
  return [target = std::move(target)](const ComplexMatrix& y) {
    LossEval out;
    out.value = (y - target).squaredNorm();
    out.cotangent = 2.0 * (y - target);
    return out;
  };
}

}  // namespace

TEST_CASE("forward: single linear layer is the output operator") {
  const SimGeometry g = small_geometry(3, 1);
  const SimModel m = linear_model(g);
  Rng rng(1);
  const ComplexMatrix x = random_field(rng, 9, 4);
  const ForwardTrace t = forward(m, x);
  CHECK((t.output - m.propagation->to_output * x).norm() <= 1e-14 * x.norm());
  CHECK(t.post[0] == x);
}

TEST_CASE("forward: two linear layers against a dense product") {
  const SimGeometry g = small_geometry(3, 2);
  const SimModel m = linear_model(g);
  Rng rng(2);
  const ComplexMatrix x = random_field(rng, 9, 3);
  const ForwardTrace t = forward(m, x);
  const ComplexMatrix w2 = rayleigh_sommerfeld_matrix(g, 0, 1).entries;
  ComplexMatrix expected = ComplexMatrix::Zero(9, 3);
  for (int i = 0; i < 9; ++i)
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 9; ++k) expected(i, b) += w2(i, k) * x(k, b);
  CHECK((t.post[2] - expected).norm() <= 1e-13 * expected.norm());
}

TEST_CASE("forward: ReLU layer halves magnitudes and keeps phases") {
  const SimGeometry g = small_geometry(3, 2);
  SimModel m = linear_model(g);
  m.layers[1] = relu_layer(9, 0.0, false);
  Rng rng(3);
  const ComplexMatrix x = random_field(rng, 9, 2);
  const ComplexMatrix w2 = m.propagation->inter_layer[0];
  const ComplexMatrix expected = m.propagation->to_output * (0.5 * (w2 * x));
  CHECK((forward(m, x).output - expected).norm() <= 1e-13 * expected.norm());
  CHECK((forward_output(m, x, 1) - expected).norm() <= 1e-13 * expected.norm());
}

TEST_CASE("readout endpoints") {
  const RegionBounds bounds{1.0, 3.0};
  ComplexVector y(2);
  y << 0.0, 0.5;
  PositionEstimate e = readout(y, 1.0, bounds);
  CHECK(e.range_m == 1.0);
  CHECK(e.azimuth_rad == 0.0);
  CHECK(e.position.x() == doctest::Approx(1.0));
  y << Complex(0.0, 2.0), Complex(-2.0, 0.0);
  e = readout(y, 0.5, bounds);
  CHECK(e.range_m == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(e.azimuth_rad == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(std::abs(e.position.x()) <= 1e-15);
  CHECK(e.position.y() == doctest::Approx(3.0));
  CHECK_THROWS_AS(readout(ComplexVector::Zero(1), 1.0, bounds), ConfigError);
  CHECK_THROWS_AS(readout(y, 0.0, bounds), ConfigError);
}

TEST_CASE("backward: frozen parameters yield no gradient") {
  const SimGeometry g = small_geometry(2, 3);
  SimModel m = linear_model(g);
  for (auto& layer : m.layers) std::get<LinearLayer>(layer).trainable = false;
  m.layers[1] = relu_layer(4, -0.01, false);
  Rng rng(4);
  const ComplexMatrix x = random_field(rng, 4, 2);
  const ForwardTrace t = forward(m, x);
  const GradientSet grads = backward(m, t, ComplexMatrix::Ones(2, 2));
  for (int l = 0; l < 3; ++l) CHECK_FALSE(grads.has(l));
  CHECK(parameter_kinds(m).empty());
  CHECK(pack_gradients(m, grads).size() == 0);
}

TEST_CASE("backward: single phase on a one-cell model matches central differences") {
  const SimGeometry g = small_geometry(1, 1);
  SimModel m = linear_model(g);
  std::get<LinearLayer>(m.layers[0]).phases(0) = 0.7;
  ComplexMatrix x(1, 1);
  x(0, 0) = Complex(0.8, -0.3);
  ComplexMatrix target(2, 1);
  target << Complex(1e-3, 2e-3), Complex(-1e-3, 0.0);
  const LossFn loss = quadratic_loss(target);
  const ForwardTrace t = forward(m, x);
  const double analytic = backward(m, t, loss(t.output).cotangent).layers[0](0);

  const double h = 1e-6;
  auto eval = [&](double theta) {
    SimModel p = m;
    std::get<LinearLayer>(p.layers[0]).phases(0) = theta;
    return loss(forward(p, x).output).value;
  };
  const double numeric = (eval(0.7 + h) - eval(0.7 - h)) / (2 * h);
  CHECK(analytic == doctest::Approx(numeric).epsilon(1e-5));
}

TEST_CASE("finite differences: linear models") {
  Rng rng(5);
  const SimGeometry g = small_geometry(3, 3);
  const SimModel m = linear_model(g, &rng);
  const ComplexMatrix x = random_field(rng, 9, 4);
  const LossFn loss = quadratic_loss(random_field(rng, 2, 4));
  const FiniteDifferenceReport r = finite_difference_check(m, x, loss, 1e-6, rng);
  CHECK(r.checked >= 27);
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("finite differences: trainable ReLU biases and phases away from the knee") {
  Rng rng(6);
  const SimGeometry g = small_geometry(3, 3);
  SimModel m = linear_model(g, &rng);
  m.layers[2] = relu_layer(9, 0.0, true);
  auto& nl = std::get<NonlinearLayer>(m.layers[2]);
  for (double& b : nl.biases) b = -1e-5 * std::abs(uniform(rng, 0.1, 1.0));
  const ComplexMatrix x = random_field(rng, 9, 8);
  m.beta = calibrate_beta(m, x);
  Eigen::Matrix2Xd targets(2, 8);
  for (int b = 0; b < 8; ++b) targets.col(b) << uniform(rng, 0.5, 3.0), uniform(rng, -1.0, 1.0);
  const FiniteDifferenceReport r =
      finite_difference_check(m, x, position_loss(targets, m.beta, {}), 1e-6, rng);
  CHECK(r.checked > 0);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("finite differences: zero input passes trivially") {
  Rng rng(7);
  const SimGeometry g = small_geometry(2, 2);
  SimModel m = linear_model(g, &rng);
  m.layers[1] = relu_layer(4, -1e-5, true);
  const ComplexMatrix x = ComplexMatrix::Zero(4, 3);
  const LossFn loss = quadratic_loss(random_field(rng, 2, 3));
  const ForwardTrace t = forward(m, x);
  const RealVector grad = pack_gradients(m, backward(m, t, loss(t.output).cotangent));
  CHECK(grad.size() == 8);
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(finite_difference_check(m, x, loss, 1e-6, rng).max_relative_error == 0.0);
}

TEST_CASE("linear homogeneity and nonlinear phase equivariance") {
  Rng rng(8);
  const SimGeometry g = small_geometry(3, 3);
  SimModel m = linear_model(g, &rng);
  const ComplexMatrix x = random_field(rng, 9, 5);
  const Complex c(-1.7, 0.4);
  const ComplexMatrix y = forward(m, x).output;
  CHECK((forward(m, c * x).output - c * y).norm() <= 1e-13 * std::abs(c) * y.norm());

  for (double bias : {0.0, -0.05}) {
    m.layers[1] = relu_layer(9, bias, false);
    const ComplexMatrix yn = forward(m, x).output;
    for (double psi : {0.3, -2.1, kPi}) {
      const Complex rot = std::polar(1.0, psi);
      CHECK((forward(m, rot * x).output - rot * yn).norm() <= 1e-13 * (1.0 + yn.norm()));
    }
  }
}

TEST_CASE("phase updates keep unit-modulus transmission") {
  Rng rng(9);
  const SimGeometry g = small_geometry(2, 1);
  SimModel m = linear_model(g, &rng);
  RealVector p = pack_parameters(m);
  p.array() += 123.456;
  unpack_parameters(m, p);
  ComplexMatrix x = ComplexMatrix::Identity(4, 4);
  // With one layer the output is G Phi; column k isolates phi_k.
  const ComplexMatrix y = forward(m, x).output;
  const ComplexMatrix gmat = m.propagation->to_output;
  for (int k = 0; k < 4; ++k) {
    const Complex phi = y(0, k) / gmat(0, k);
    CHECK(std::abs(phi) == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(pack_parameters(m) == p);
}

TEST_CASE("trace determinism and validation") {
  Rng rng(10);
  const SimGeometry g = small_geometry(3, 2);
  SimModel m = linear_model(g, &rng);
  m.layers[0] = relu_layer(9, -1e-3, true);
  const ComplexMatrix x = random_field(rng, 9, 6);
  const ForwardTrace a = forward(m, x), b = forward(m, x);
  CHECK(a.output == b.output);
  for (std::size_t l = 0; l < a.post.size(); ++l) CHECK(a.post[l] == b.post[l]);
  CHECK(m.nonlinear_layers() == std::vector<int>{0});

  CHECK_THROWS_AS(forward(m, random_field(rng, 8, 1)), ConfigError);
  SimModel bad = m;
  bad.layers.pop_back();
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = m;
  bad.beta = 0.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("calibrate_beta maps the percentile output to one") {
  Rng rng(11);
  const SimGeometry g = small_geometry(2, 2);
  SimModel m = linear_model(g, &rng);
  const ComplexMatrix x = random_field(rng, 4, 200);
  m.beta = calibrate_beta(m, x, 1.0);
  const ComplexMatrix y = forward_output(m, x);
  CHECK(m.beta * y.cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(12);
  const SimGeometry g = small_geometry(3, 3);
  SimModel m = linear_model(g, &rng);
  m.layers[1] = relu_layer(9, -2.5e-6, true);
  auto& nl = std::get<NonlinearLayer>(m.layers[1]);
  nl.activations[3] = Activation::tabulated({0.0, 0.1, 0.7}, {0.0, 0.01, 0.3});
  nl.activations[4] = Activation::envelope_relu(0.9, 1.0 / 3.0);
  nl.biases(5) = -std::nextafter(1e-5, 1.0);
  m.beta = 1.0 / 3.0;

  const std::string text = checkpoint_json(m);
  const SimModel back = model_from_json(text);
  CHECK(checkpoint_json(back) == text);
  CHECK(pack_parameters(back) == pack_parameters(m));
  CHECK(back.beta == m.beta);
  const ComplexMatrix x = random_field(rng, 9, 3);
  CHECK(forward(back, x).output == forward(m, x).output);

  const auto path = std::filesystem::temp_directory_path() / "nlsim-test-checkpoint.json";
  save_checkpoint(path, m);
  CHECK(checkpoint_json(load_checkpoint(path)) == text);
  std::filesystem::remove(path);
  CHECK_THROWS(model_from_json("{\"format\": \"other\"}"));
}
