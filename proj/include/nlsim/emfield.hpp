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

#include <filesystem>
#include <vector>

namespace nlsim {

/// Physical layout parameters. Distances are given in wavelengths so a
/// scenario stays meaningful when the carrier changes.
struct GeometryConfig {
  double carrier_frequency_hz = 28e9;
  int cells_per_side = 40;
  int num_layers = 6;
  double layer_spacing_wavelengths = 1.0;
  double output_distance_wavelengths = 3.0;
  int num_output_antennas = 2;
  double output_spacing_wavelengths = 0.5;
};

/// Layers are square grids of cells in x-y planes stacked along +z; layer 0
/// sits at z = 0 and is centred on the origin. The output ULA lies along x,
/// at output_distance_m beyond the last layer. Users sit at z < 0.
struct SimGeometry {
  GeometryConfig config;
  double carrier_frequency_hz = 0.0;
  double wavelength_m = 0.0;
  int cells_per_side = 0;
  int num_layers = 0;
  double layer_spacing_m = 0.0;
  double output_distance_m = 0.0;
  int num_output_antennas = 0;
  std::vector<Eigen::Matrix3Xd> cell_positions;  // one 3 x M block per layer
  Eigen::Matrix3Xd output_positions;              // 3 x N_R

  int num_cells() const { return cells_per_side * cells_per_side; }
  double cell_pitch() const { return wavelength_m / 2.0; }
  double cell_area() const { return wavelength_m * wavelength_m / 4.0; }
  double wavenumber() const { return kTwoPi / wavelength_m; }
  double layer_z(int layer) const { return layer * layer_spacing_m; }
  /// Diagonal of the square layer aperture.
  double aperture_diagonal() const {
    return std::sqrt(2.0) * (cells_per_side - 1) * cell_pitch();
  }
  double fraunhofer_distance() const {
    const double d = aperture_diagonal();
    return 2.0 * d * d / wavelength_m;
  }
  /// Stable 64-bit hash of the defining parameters.
  std::uint64_t fingerprint() const;
};

SimGeometry build_geometry(const GeometryConfig& config);

/// Free-space coupling coefficient between two cells separated by
/// `distance`, where `cos_angle` is the cosine between the connecting ray and
/// the source-plane normal.
template <typename Scalar>
std::complex<Scalar> rayleigh_sommerfeld_coefficient(Scalar distance, Scalar cos_angle,
                                                     Scalar wavelength, Scalar area) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  const Scalar k = two_pi / wavelength;
  const std::complex<Scalar> radial(Scalar(1) / (two_pi * distance), -Scalar(1) / wavelength);
  return (area * cos_angle / distance) * radial * std::polar(Scalar(1), k * distance);
}

/// Coupling matrix from every source point (columns of `sources`) to every
/// destination point; entry (m, i) couples source i to destination m.
ComplexMatrix rayleigh_sommerfeld_matrix(const Eigen::Matrix3Xd& sources,
                                         const Eigen::Matrix3Xd& destinations,
                                         const Point3& source_normal, double wavelength,
                                         double cell_area);

struct PropagationMatrix {
  static constexpr int kOutputArray = -1;

  ComplexMatrix entries;
  int source_layer = 0;
  int dest_layer = 0;  // kOutputArray for the last-layer-to-ULA hop
};

/// Propagation from `source_layer` to the next layer, or to the output array
/// when `dest_layer == PropagationMatrix::kOutputArray`. Layers are 0-based.
PropagationMatrix rayleigh_sommerfeld_matrix(const SimGeometry& geometry, int source_layer,
                                             int dest_layer);

struct UePosition {
  double range_m = 1.0;
  double azimuth_rad = 0.0;

  Point3 point() const;
  /// Position in the horizontal plane with boresight on the first axis.
  Eigen::Vector2d planar() const;
};

void validate_position(const UePosition& position);
bool in_radiative_near_field(const SimGeometry& geometry, const UePosition& position);

ComplexVector array_response(const SimGeometry& geometry, const UePosition& position);

/// Free-space power path loss (4 pi r / lambda)^2.
double path_loss(const SimGeometry& geometry, const UePosition& position);

/// `rician_factor` is linear; pass infinity for a pure line-of-sight channel.
ComplexVector rician_channel(const SimGeometry& geometry, const UePosition& position,
                             double rician_factor, Rng& rng);

struct ChannelScenario {
  double r_min_m = 1.0;
  double r_max_m = 3.0;
  double theta_max_rad = deg_to_rad(70.0);
  double rician_factor = db_to_linear(20.0);
  double transmit_power_w = dbm_to_watts(30.0);
  double noise_power_w = dbm_to_watts(-110.0);
};

void validate_scenario(const ChannelScenario& scenario);

struct ChannelSample {
  UePosition position;
  ComplexVector channel;
  ComplexVector input_field;
  double noise_power_w = 0.0;
  Complex pilot;
};

ChannelSample draw_sample(const SimGeometry& geometry, const ChannelScenario& scenario,
                          Rng& rng);

/// Little-endian binary cache: two uint64 dims, then row-major interleaved
/// re/im float64.
void write_matrix_binary(const std::filesystem::path& path, const ComplexMatrix& matrix);
ComplexMatrix read_matrix_binary(const std::filesystem::path& path);

}  // namespace nlsim
