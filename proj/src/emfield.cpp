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

#include "nlsim/emfield.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace nlsim {

namespace {

class Fnv1a {
 public:
  template <typename T>
  void add(const T& value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (unsigned char b : bytes) {
      hash_ ^= b;
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

Eigen::Matrix3Xd square_grid(int per_side, double pitch, double z) {
  Eigen::Matrix3Xd pts(3, per_side * per_side);
  const double offset = 0.5 * (per_side - 1);
  for (int row = 0; row < per_side; ++row) {
    for (int col = 0; col < per_side; ++col) {
      pts.col(row * per_side + col) << (col - offset) * pitch, (row - offset) * pitch, z;
    }
  }
  return pts;
}

void put_le(std::ostream& os, std::uint64_t value) {
  if constexpr (std::endian::native == std::endian::big) value = __builtin_bswap64(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(value));
}

std::uint64_t get_le(std::istream& is) {
  std::uint64_t value = 0;
  is.read(reinterpret_cast<char*>(&value), sizeof(value));
  if (!is) throw ConfigError("truncated matrix file");
  if constexpr (std::endian::native == std::endian::big) value = __builtin_bswap64(value);
  return value;
}

}  // namespace

std::uint64_t SimGeometry::fingerprint() const {
  Fnv1a h;
  h.add(config.carrier_frequency_hz);
  h.add(config.cells_per_side);
  h.add(config.num_layers);
  h.add(config.layer_spacing_wavelengths);
  h.add(config.output_distance_wavelengths);
  h.add(config.num_output_antennas);
  h.add(config.output_spacing_wavelengths);
  return h.value();
}

SimGeometry build_geometry(const GeometryConfig& config) {
  if (!(config.carrier_frequency_hz > 0.0) || !std::isfinite(config.carrier_frequency_hz))
    throw ConfigError("carrier frequency must be positive");
  if (config.cells_per_side < 1) throw ConfigError("cells_per_side must be >= 1");
  if (config.num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (!(config.layer_spacing_wavelengths > 0.0)) throw ConfigError("layer spacing must be > 0");
  if (!(config.output_distance_wavelengths > 0.0))
    throw ConfigError("output distance must be > 0");
  if (config.num_output_antennas < 1) throw ConfigError("need at least one output antenna");
  if (config.num_output_antennas > 1 && !(config.output_spacing_wavelengths > 0.0))
    throw ConfigError("output antenna spacing must be > 0");

  SimGeometry g;
  g.config = config;
  g.carrier_frequency_hz = config.carrier_frequency_hz;
  g.wavelength_m = kSpeedOfLight / config.carrier_frequency_hz;
  g.cells_per_side = config.cells_per_side;
  g.num_layers = config.num_layers;
  g.layer_spacing_m = config.layer_spacing_wavelengths * g.wavelength_m;
  g.output_distance_m = config.output_distance_wavelengths * g.wavelength_m;
  g.num_output_antennas = config.num_output_antennas;

  g.cell_positions.reserve(config.num_layers);
  for (int l = 0; l < config.num_layers; ++l) {
    g.cell_positions.push_back(square_grid(config.cells_per_side, g.cell_pitch(), g.layer_z(l)));
  }

  const double out_z = g.layer_z(config.num_layers - 1) + g.output_distance_m;
  const double spacing = config.output_spacing_wavelengths * g.wavelength_m;
  const double offset = 0.5 * (config.num_output_antennas - 1);
  g.output_positions.resize(3, config.num_output_antennas);
  for (int n = 0; n < config.num_output_antennas; ++n) {
    g.output_positions.col(n) << (n - offset) * spacing, 0.0, out_z;
  }
  return g;
}

ComplexMatrix rayleigh_sommerfeld_matrix(const Eigen::Matrix3Xd& sources,
                                         const Eigen::Matrix3Xd& destinations,
                                         const Point3& source_normal, double wavelength,
                                         double cell_area) {
  const Point3 normal = source_normal.normalized();
  ComplexMatrix w(destinations.cols(), sources.cols());
  for (Eigen::Index i = 0; i < sources.cols(); ++i) {
    for (Eigen::Index m = 0; m < destinations.cols(); ++m) {
      const Point3 ray = destinations.col(m) - sources.col(i);
      const double d = ray.norm();
      if (!(d > 0.0)) throw NumericalError("zero propagation distance between cells");
      const double cos_chi = std::abs(ray.dot(normal)) / d;
      w(m, i) = rayleigh_sommerfeld_coefficient(d, cos_chi, wavelength, cell_area);
    }
  }
  return w;
}

PropagationMatrix rayleigh_sommerfeld_matrix(const SimGeometry& geometry, int source_layer,
                                             int dest_layer) {
  const int last = geometry.num_layers - 1;
  if (source_layer < 0 || source_layer > last) throw ConfigError("source layer out of range");
  const bool to_output = dest_layer == PropagationMatrix::kOutputArray;
  if (to_output && source_layer != last)
    throw ConfigError("only the last layer propagates to the output array");
  if (!to_output && dest_layer != source_layer + 1)
    throw ConfigError("destination must be the layer after the source");

  const Eigen::Matrix3Xd& dest =
      to_output ? geometry.output_positions : geometry.cell_positions[dest_layer];
  PropagationMatrix p;
  p.source_layer = source_layer;
  p.dest_layer = dest_layer;
  p.entries = rayleigh_sommerfeld_matrix(geometry.cell_positions[source_layer], dest,
                                         Point3::UnitZ(), geometry.wavelength_m,
                                         geometry.cell_area());
  return p;
}

Point3 UePosition::point() const {
  return {range_m * std::sin(azimuth_rad), 0.0, -range_m * std::cos(azimuth_rad)};
}

Eigen::Vector2d UePosition::planar() const {
  return {range_m * std::cos(azimuth_rad), range_m * std::sin(azimuth_rad)};
}

void validate_position(const UePosition& position) {
  if (!(position.range_m > 0.0) || !std::isfinite(position.range_m))
    throw ConfigError("UE range must be positive");
  if (!(std::abs(position.azimuth_rad) < kPi / 2.0))
    throw ConfigError("UE azimuth must satisfy |theta| < pi/2");
}

bool in_radiative_near_field(const SimGeometry& geometry, const UePosition& position) {
  return position.range_m < geometry.fraunhofer_distance();
}

ComplexVector array_response(const SimGeometry& geometry, const UePosition& position) {
  validate_position(position);
  const Eigen::Matrix3Xd& cells = geometry.cell_positions.front();
  const Point3 ue = position.point();
  const double k = geometry.wavenumber();
  const double r = position.range_m;
  const double amp = 1.0 / std::sqrt(static_cast<double>(cells.cols()));
  ComplexVector a(cells.cols());
  for (Eigen::Index m = 0; m < cells.cols(); ++m) {
    const double rm = (cells.col(m) - ue).norm();
    a(m) = std::polar(amp, -k * (r - rm));
  }
  return a;
}

double path_loss(const SimGeometry& geometry, const UePosition& position) {
  if (!(position.range_m > 0.0)) throw ConfigError("path loss needs r > 0");
  const double x = 4.0 * kPi * position.range_m / geometry.wavelength_m;
  return x * x;
}

ComplexVector rician_channel(const SimGeometry& geometry, const UePosition& position,
                             double rician_factor, Rng& rng) {
  if (!(rician_factor >= 0.0)) throw ConfigError("Rician factor must be >= 0");
  const Eigen::Index m = geometry.num_cells();
  const double gamma = uniform(rng, 0.0, kTwoPi);
  ComplexVector nlos(m);
  for (Eigen::Index i = 0; i < m; ++i) nlos(i) = complex_normal(rng, 1.0 / static_cast<double>(m));

  double los_w = 1.0;
  double nlos_w = 0.0;
  if (std::isfinite(rician_factor)) {
    los_w = std::sqrt(rician_factor / (rician_factor + 1.0));
    nlos_w = std::sqrt(1.0 / (rician_factor + 1.0));
  }
  const double scale = 1.0 / std::sqrt(path_loss(geometry, position));
  const Complex rot = std::polar(1.0, gamma);
  return scale * ((los_w * rot) * array_response(geometry, position) + nlos_w * nlos);
}

void validate_scenario(const ChannelScenario& s) {
  if (!(s.r_min_m > 0.0) || !(s.r_max_m > s.r_min_m))
    throw ConfigError("need 0 < r_min < r_max");
  if (!(s.theta_max_rad >= 0.0) || !(s.theta_max_rad < kPi / 2.0))
    throw ConfigError("theta_max must be in [0, pi/2)");
  if (!(s.rician_factor >= 0.0)) throw ConfigError("Rician factor must be >= 0");
  if (!(s.transmit_power_w > 0.0)) throw ConfigError("transmit power must be > 0");
  if (!(s.noise_power_w >= 0.0)) throw ConfigError("noise power must be >= 0");
}

ChannelSample draw_sample(const SimGeometry& geometry, const ChannelScenario& scenario,
                          Rng& rng) {
  validate_scenario(scenario);
  ChannelSample s;
  s.position.range_m = uniform(rng, scenario.r_min_m, scenario.r_max_m);
  s.position.azimuth_rad = uniform(rng, -scenario.theta_max_rad, scenario.theta_max_rad);
  s.channel = rician_channel(geometry, s.position, scenario.rician_factor, rng);
  s.pilot = Complex(std::sqrt(scenario.transmit_power_w), 0.0);
  s.noise_power_w = scenario.noise_power_w;
  s.input_field = s.channel * s.pilot;
  for (Eigen::Index i = 0; i < s.input_field.size(); ++i) {
    s.input_field(i) += complex_normal(rng, scenario.noise_power_w);
  }
  return s;
}

void write_matrix_binary(const std::filesystem::path& path, const ComplexMatrix& matrix) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  put_le(os, static_cast<std::uint64_t>(matrix.rows()));
  put_le(os, static_cast<std::uint64_t>(matrix.cols()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      put_le(os, std::bit_cast<std::uint64_t>(matrix(r, c).real()));
      put_le(os, std::bit_cast<std::uint64_t>(matrix(r, c).imag()));
    }
  }
}

ComplexMatrix read_matrix_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  const auto rows = get_le(is);
  const auto cols = get_le(is);
  ComplexMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double re = std::bit_cast<double>(get_le(is));
      const double im = std::bit_cast<double>(get_le(is));
      m(r, c) = Complex(re, im);
    }
  }
  return m;
}

}  // namespace nlsim
