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

#include "nlsim/baselines.hpp"
#include "nlsim/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nlsim {

enum class NlMode { Linear, Trainable, StaticRandom };
enum class SweepAxis { None, NlLayerIndex, DepthL };
enum class CellModel { Relu, Diode };

const char* to_string(NlMode mode);
const char* to_string(SweepAxis axis);
const char* to_string(CellModel model);

/// Everything needed to reproduce one experiment. The text form is an INI
/// file; README.md lists every key with its default.
struct ExperimentConfig {
  // [experiment]
  std::string name = "experiment";
  std::uint64_t seed = 1;
  SweepAxis sweep = SweepAxis::None;
  int repeats = 1;
  std::vector<int> depths = {2, 4, 6};
  std::filesystem::path output_dir = "results";
  bool parallel_sweep = false;
  bool write_svg = true;
  bool save_checkpoints = true;

  // [geometry], [scenario]
  GeometryConfig geometry;
  ChannelScenario scenario;
  int dataset_size = 2000;

  // [model]
  NlMode nl_mode = NlMode::Trainable;
  /// 1-based placements; empty means "the last layer".
  std::vector<int> nl_layers;
  CellModel cell_model = CellModel::Relu;
  double bias_scale = 1e-5;
  double alpha_min = 55.0;
  double alpha_max = 57.0;
  /// Volts per unit of field amplitude seen by a diode cell.
  double diode_field_gain = 1e4;
  int diode_table_points = 512;

  // [training]
  TrainConfig train;
  /// Unset means learning_rate * bias_scale.
  std::optional<double> bias_learning_rate;

  // [baseline]
  bool ml_baseline = true;
  int ml_range_points = 100;
  int ml_azimuth_points = 100;
  int ml_refine_points = 21;
  bool ml_exhaustive = false;

  // [curves]
  std::vector<double> curve_alphas = {18.0, 33.0, 57.0};
  double curve_bias_v = -0.4;
  double curve_max_amplitude_v = 2.0;
  int curve_points = 201;

  RegionBounds bounds() const { return {scenario.r_min_m, scenario.r_max_m}; }
  double effective_bias_learning_rate() const {
    return bias_learning_rate.value_or(train.learning_rate * bias_scale);
  }
};

void validate(const ExperimentConfig& config);

/// Parses INI text on top of `base`. Unknown sections or keys, duplicate
/// keys and malformed values raise ConfigError.
ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base = {});
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base = {});

/// Canonical INI text; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

/// FNV-1a of the canonical text without the output directory, as 16 hex
/// digits.
std::string config_hash(const ExperimentConfig& config);

/// Names accepted by preset(): smoke, desk, placement-desk, depth-desk, full.
std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);

/// Model for one sweep point. Phases are uniform on [0, 2 pi); NL cells
/// replace the linear layers named in `placements` (1-based).
SimModel build_model(const ExperimentConfig& config, const SimGeometry& geometry, NlMode mode,
                     const std::vector<int>& placements, Rng& rng);

struct ResultRow {
  int sweep_value = 0;
  std::string variant;
  int repeat = 0;
  double test_rmse = 0.0;
  double val_rmse = 0.0;
  int best_epoch = 0;
};

struct SummaryRow {
  int sweep_value = 0;
  std::string variant;
  double mean_test_rmse = 0.0;
  double std_test_rmse = 0.0;
  int repeats = 0;
};

struct ExperimentResult {
  std::filesystem::path directory;
  std::string config_hash;
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;

  /// Mean test RMSE of (sweep_value, variant), or nullopt if absent.
  std::optional<double> mean(int sweep_value, const std::string& variant) const;
};

/// Runs the configured sweep and writes results.csv, summary.csv, per-point
/// histories, evaluations and checkpoints into a fresh directory
/// <output_dir>/<name>-<hash>[-<n>]. Rows are flushed as points complete.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Dataset of one repeat; every sweep point of that repeat shares it.
Dataset experiment_dataset(const ExperimentConfig& config, int repeat);

/// ML baseline on the test split, searching the configured grid over the
/// aperture field.
EvalReport run_ml_baseline(const ExperimentConfig& config, const Dataset& dataset);

/// Diode lowpass curves for config.curve_alphas at config.curve_bias_v plus
/// their ReLU fits; returns the directory holding curves.csv, fits.csv and
/// curves.svg.
std::filesystem::path export_activation_curves(const ExperimentConfig& config);

/// Fresh versioned output directory for `config`.
std::filesystem::path make_output_directory(const ExperimentConfig& config,
                                            const std::string& suffix = "");

/// "# config_hash=<hash> seed=<seed>".
std::string provenance_line(const ExperimentConfig& config);

// Plain SVG line plots.
struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

void write_svg_plot(std::ostream& os, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series);

}  // namespace nlsim
