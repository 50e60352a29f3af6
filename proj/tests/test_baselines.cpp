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

#include "nlsim/baselines.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace nlsim;

namespace {

SimGeometry geometry(int side) {
  GeometryConfig c;
  c.cells_per_side = side;
  c.num_layers = 2;
  return build_geometry(c);
}

double metric(const SimGeometry& g, const UePosition& p, const ComplexVector& s) {
  return std::norm(array_response(g, p).dot(s));
}

}  // namespace

TEST_CASE("search grid layout and validation") {
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, 1.2, 5, 7);
  CHECK(grid.size() == 35);
  CHECK(grid.ranges.front() == 1.0);
  CHECK(grid.ranges.back() == 3.0);
  CHECK(grid.azimuths.front() == -1.2);
  CHECK(grid.azimuths.back() == 1.2);
  CHECK(grid.point(7 * 2 + 3).range_m == grid.ranges[2]);
  CHECK(grid.point(7 * 2 + 3).azimuth_rad == grid.azimuths[3]);
  CHECK_THROWS_AS(SearchGrid::uniform(1.0, 3.0, 1.2, 0, 7), ConfigError);
  CHECK_THROWS_AS(SearchGrid::uniform(3.0, 1.0, 1.2, 5, 7), ConfigError);
}

TEST_CASE("ml_estimate recovers on-grid noiseless targets") {
  const SimGeometry g = geometry(8);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, deg_to_rad(70.0), 12, 15);
  const MlEstimator exhaustive(g, grid, {.mode = MlOptions::Mode::Exhaustive});
  for (Eigen::Index k : {0L, 17L, 93L, 179L}) {
    const ComplexVector s = array_response(g, grid.point(k));
    const MlResult r = ml_estimate(s, g, grid);
    CHECK(r.grid_index == k);
    CHECK(r.metric == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(exhaustive.estimate(s).grid_index == k);
  }
}

TEST_CASE("ml_estimate: zero input returns the first grid point") {
  const SimGeometry g = geometry(4);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, 1.0, 6, 6);
  const MlResult r = ml_estimate(ComplexVector::Zero(16), g, grid);
  CHECK(r.grid_index == 0);
  CHECK(r.metric == 0.0);
  CHECK(r.position.range_m == 1.0);
}

TEST_CASE("ml_estimate: off-grid targets land within one cell diagonal") {
  // The bound needs grid steps no finer than the aperture resolves: range is
  // barely resolved at 1-3 m, azimuth steps must stay below the beamwidth.
  const SimGeometry g = geometry(16);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, deg_to_rad(70.0), 5, 60);
  const double dr = grid.ranges[1] - grid.ranges[0], dth = grid.azimuths[1] - grid.azimuths[0];
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const UePosition truth{uniform(rng, 1.0, 3.0), uniform(rng, -1.2, 1.2)};
    const ComplexVector s = array_response(g, truth);
    const MlResult r = ml_estimate(s, g, grid);
    // Exhaustive oracle: the returned point maximizes the metric.
    double best = 0.0;
    for (Eigen::Index k = 0; k < grid.size(); ++k) best = std::max(best, metric(g, grid.point(k), s));
    CHECK(r.metric == doctest::Approx(best).epsilon(1e-12));
    CHECK(std::hypot(r.position.range_m - truth.range_m,
                     r.position.azimuth_rad - truth.azimuth_rad) <= std::hypot(dr, dth) * 1.0001);
  }
}

TEST_CASE("ml_estimate is invariant to input scaling") {
  const SimGeometry g = geometry(6);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, 1.2, 15, 15);
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    ComplexVector s = array_response(g, {uniform(rng, 1.0, 3.0), uniform(rng, -1.2, 1.2)});
    for (Complex& v : s) v += complex_normal(rng, 1e-3);
    const Eigen::Index k = ml_estimate(s, g, grid).grid_index;
    for (Complex c : {Complex(1e-6, 0.0), Complex(-3.0, 2.0), Complex(0.0, 1e4)}) {
      CHECK(ml_estimate(c * s, g, grid).grid_index == k);
    }
  }
}

TEST_CASE("ml_estimate is permutation-stable in its metric") {
  const SimGeometry g = geometry(6);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, 1.2, 9, 11);
  Rng rng(5);
  ComplexVector s = array_response(g, {2.1, 0.4});
  for (Complex& v : s) v += complex_normal(rng, 1e-2);
  const MlResult base = ml_estimate(s, g, grid);
  std::vector<Eigen::Index> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    double best = -1.0;
    for (Eigen::Index k : order) best = std::max(best, metric(g, grid.point(k), s));
    CHECK(best == doctest::Approx(base.metric).epsilon(1e-14));
  }
  const MlEstimator streamed(g, grid,
                             {.mode = MlOptions::Mode::Exhaustive, .cache_budget_bytes = 0});
  CHECK(streamed.estimate(s).metric == doctest::Approx(base.metric).epsilon(1e-14));
  CHECK(streamed.estimate(s).grid_index == base.grid_index);
}

TEST_CASE("coarse-to-fine never does worse than its coarse grid") {
  const SimGeometry g = geometry(8);
  const SearchGrid grid = SearchGrid::uniform(1.0, 3.0, 1.2, 10, 10);
  const MlEstimator c2f(g, grid, {.mode = MlOptions::Mode::CoarseToFine, .refine_points = 11});
  const MlEstimator uncached(g, grid, {.refine_points = 11, .cache_budget_bytes = 0});
  CHECK(c2f.cached());
  CHECK_FALSE(uncached.cached());
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const UePosition truth{uniform(rng, 1.0, 3.0), uniform(rng, -1.1, 1.1)};
    const ComplexVector s = array_response(g, truth);
    const MlResult fine = c2f.estimate(s);
    CHECK(fine.metric >= ml_estimate(s, g, grid).metric);
    const MlResult streamed = uncached.estimate(s);
    CHECK(streamed.metric == doctest::Approx(fine.metric).epsilon(1e-12));
  }
}

TEST_CASE("linear_sim_model: no nonlinear layers, shared geometry") {
  const SimGeometry g = geometry(4);
  Rng rng(7);
  const SimModel m = linear_sim_model(g, rng, 2.5);
  CHECK(m.nonlinear_layers().empty());
  CHECK(m.num_layers() == 2);
  CHECK(m.beta == 2.5);
  CHECK(m.geometry.fingerprint() == g.fingerprint());
  for (const LayerKind& l : m.layers) {
    for (double p : std::get<LinearLayer>(l).phases) CHECK((p >= 0.0 && p < kTwoPi));
  }
  ComplexMatrix x(16, 1);
  for (Complex& v : x.reshaped()) v = complex_normal(rng, 1.0);
  const Complex c(0.3, -2.0);
  CHECK((forward_output(m, c * x) - c * forward_output(m, x)).norm() <=
        1e-13 * forward_output(m, x).norm() * std::abs(c));
}
