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

#include <algorithm>
#include <cmath>

namespace nlsim {

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * i / (n - 1);
  out.back() = hi;
  return out;
}

struct Best {
  double metric = -1.0;
  Eigen::Index index = 0;

  void offer(double m, Eigen::Index i) {
    if (m > metric) {
      metric = m;
      index = i;
    }
  }
};

Best streamed_search(const Eigen::Ref<const ComplexVector>& input, const SimGeometry& geometry,
                     const SearchGrid& grid) {
  Best best;
  const auto n_az = static_cast<Eigen::Index>(grid.azimuths.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const UePosition p{grid.ranges[i / n_az], grid.azimuths[i % n_az]};
    best.offer(std::norm(array_response(geometry, p).dot(input)), i);
  }
  return best;
}

}  // namespace

SearchGrid SearchGrid::uniform(double r_min, double r_max, double theta_max, int n_range,
                               int n_azimuth) {
  if (n_range < 2 || n_azimuth < 2) throw ConfigError("search grid needs >= 2 points per axis");
  SearchGrid g{linspace(r_min, r_max, n_range), linspace(-theta_max, theta_max, n_azimuth)};
  validate(g);
  return g;
}

UePosition SearchGrid::point(Eigen::Index index) const {
  const auto n_az = static_cast<Eigen::Index>(azimuths.size());
  return {ranges[index / n_az], azimuths[index % n_az]};
}

void validate(const SearchGrid& grid) {
  auto increasing = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  if (grid.ranges.size() < 2 || grid.azimuths.size() < 2)
    throw ConfigError("search grid needs >= 2 points per axis");
  if (!increasing(grid.ranges) || !increasing(grid.azimuths))
    throw ConfigError("search grid axes must be strictly increasing");
  if (!(grid.ranges.front() > 0.0)) throw ConfigError("search grid ranges must be > 0");
  if (!(std::abs(grid.azimuths.front()) < kPi / 2) || !(std::abs(grid.azimuths.back()) < kPi / 2))
    throw ConfigError("search grid azimuths must satisfy |theta| < pi/2");
}

SimModel linear_sim_model(const SimGeometry& geometry, Rng& rng, double beta) {
  SimModel model;
  model.geometry = geometry;
  model.propagation = build_propagation(geometry);
  model.beta = beta;
  for (int l = 0; l < geometry.num_layers; ++l) {
    LinearLayer layer;
    layer.phases.resize(geometry.num_cells());
    for (Eigen::Index m = 0; m < layer.phases.size(); ++m) layer.phases(m) = uniform(rng, 0.0, kTwoPi);
    model.layers.emplace_back(std::move(layer));
  }
  return model;
}

MlResult ml_estimate(const Eigen::Ref<const ComplexVector>& input_field,
                     const SimGeometry& geometry, const SearchGrid& grid) {
  validate(grid);
  if (input_field.size() != geometry.num_cells()) throw ConfigError("input field must have M entries");
  const Best best = streamed_search(input_field, geometry, grid);
  return {grid.point(best.index), best.metric, best.index};
}

MlEstimator::MlEstimator(SimGeometry geometry, SearchGrid grid, MlOptions options)
    : geometry_(std::move(geometry)), grid_(std::move(grid)), options_(options) {
  validate(grid_);
  if (options_.mode == MlOptions::Mode::CoarseToFine && options_.refine_points < 2)
    throw ConfigError("refinement needs >= 2 points per axis");
  const std::size_t bytes = static_cast<std::size_t>(grid_.size()) *
                            static_cast<std::size_t>(geometry_.num_cells()) * sizeof(Complex);
  if (bytes <= options_.cache_budget_bytes) {
    ComplexMatrix s(geometry_.num_cells(), grid_.size());
    for (Eigen::Index i = 0; i < grid_.size(); ++i) s.col(i) = array_response(geometry_, grid_.point(i));
    steering_ = std::move(s);
  }
}

MlResult MlEstimator::search(const Eigen::Ref<const ComplexVector>& input) const {
  Best best;
  if (steering_) {
    const Eigen::VectorXd metric = (steering_->adjoint() * input).cwiseAbs2();
    for (Eigen::Index i = 0; i < metric.size(); ++i) best.offer(metric(i), i);
  } else {
    best = streamed_search(input, geometry_, grid_);
  }
  return {grid_.point(best.index), best.metric, best.index};
}

MlResult MlEstimator::estimate(const Eigen::Ref<const ComplexVector>& input) const {
  if (input.size() != geometry_.num_cells()) throw ConfigError("input field must have M entries");
  const MlResult coarse = search(input);
  if (options_.mode == MlOptions::Mode::Exhaustive) return coarse;

  const auto n_az = static_cast<Eigen::Index>(grid_.azimuths.size());
  const auto ir = static_cast<std::size_t>(coarse.grid_index / n_az);
  const auto ia = static_cast<std::size_t>(coarse.grid_index % n_az);
  auto window = [&](const std::vector<double>& axis, std::size_t i) {
    const double lo = axis[i == 0 ? 0 : i - 1];
    const double hi = axis[std::min(i + 1, axis.size() - 1)];
    return linspace(lo, hi, options_.refine_points);
  };
  const SearchGrid fine{window(grid_.ranges, ir), window(grid_.azimuths, ia)};
  const Best refined = streamed_search(input, geometry_, fine);
  if (refined.metric <= coarse.metric) return coarse;
  return {fine.point(refined.index), refined.metric, coarse.grid_index};
}

}  // namespace nlsim
