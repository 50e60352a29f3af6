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

#include <optional>
#include <vector>

namespace nlsim {

/// Candidate (r, theta) positions. Flat index = range_index * N_theta +
/// azimuth_index.
struct SearchGrid {
  std::vector<double> ranges;
  std::vector<double> azimuths;

  static SearchGrid uniform(double r_min, double r_max, double theta_max, int n_range,
                            int n_azimuth);

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(ranges.size() * azimuths.size());
  }
  UePosition point(Eigen::Index index) const;
};

void validate(const SearchGrid& grid);

/// All-linear SIM with phases drawn uniformly on [0, 2 pi).
SimModel linear_sim_model(const SimGeometry& geometry, Rng& rng, double beta = 1.0);

struct MlResult {
  UePosition position;
  double metric = 0.0;
  Eigen::Index grid_index = 0;
};

/// Exhaustive matched-filter search: argmax |a^H(r, theta) s|^2 over the
/// grid, ties to the smallest flat index.
MlResult ml_estimate(const Eigen::Ref<const ComplexVector>& input_field,
                     const SimGeometry& geometry, const SearchGrid& grid);

struct MlOptions {
  enum class Mode { Exhaustive, CoarseToFine };
  Mode mode = Mode::CoarseToFine;
  int refine_points = 21;
  /// Steering vectors are cached only if they fit in this many bytes.
  std::size_t cache_budget_bytes = std::size_t{256} << 20;
};

/// Reusable estimator over a fixed grid. In coarse-to-fine mode the grid is
/// the coarse stage and a refine_points^2 grid spanning one coarse cell on
/// each side of the peak is searched next.
class MlEstimator {
 public:
  MlEstimator(SimGeometry geometry, SearchGrid grid, MlOptions options = {});

  MlResult estimate(const Eigen::Ref<const ComplexVector>& input_field) const;
  bool cached() const { return steering_.has_value(); }
  const SearchGrid& grid() const { return grid_; }

 private:
  MlResult search(const Eigen::Ref<const ComplexVector>& input_field) const;

  SimGeometry geometry_;
  SearchGrid grid_;
  MlOptions options_;
  std::optional<ComplexMatrix> steering_;  // M x G
};

}  // namespace nlsim
