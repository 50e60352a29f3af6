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

#include "nlsim/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <ostream>
#include <sstream>

namespace nlsim {

namespace {

namespace fs = std::filesystem;

enum SeedTag : std::uint32_t { kDataSeed = 1, kModelSeed = 2, kTrainSeed = 3 };

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t tag, int repeat, int depth) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag,
                    static_cast<std::uint32_t>(repeat), static_cast<std::uint32_t>(depth)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::ofstream open_csv(const fs::path& path, const ExperimentConfig& config) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << provenance_line(config) << '\n';
  os.precision(12);
  return os;
}

Activation scaled_diode_cell(const ExperimentConfig& config, double alpha) {
  DiodeCircuitParams p;
  p.alpha_per_volt = alpha;
  DiodeTableOptions opt;
  opt.points = config.diode_table_points;
  const Activation volts = diode_activation(p, opt);
  std::vector<double> amps = volts.table()->amplitudes;
  std::vector<double> vals = volts.table()->values;
  for (double& a : amps) a /= config.diode_field_gain;
  for (double& v : vals) v /= config.diode_field_gain;
  return Activation::tabulated(std::move(amps), std::move(vals));
}

struct Point {
  int sweep_value = 0;
  int depth = 0;
  NlMode mode = NlMode::Linear;
  std::vector<int> placements;
  int repeat = 0;
  std::string stem;
};

struct PointOutcome {
  ResultRow row;
  TrainResult train;
  EvalReport test;
  bool recalibrated = false;
};

std::vector<int> resolve_placements(const ExperimentConfig& c, int depth) {
  return c.nl_layers.empty() ? std::vector<int>{depth} : c.nl_layers;
}

std::vector<Point> enumerate_points(const ExperimentConfig& c, int repeat) {
  std::vector<Point> points;
  const int L = c.geometry.num_layers;
  auto stem = [&](int depth, NlMode mode, const std::vector<int>& q) {
    std::string s = "L" + std::to_string(depth) + "-" + to_string(mode);
    if (mode != NlMode::Linear) {
      for (int l : q) s += "-q" + std::to_string(l);
    }
    return s + "-r" + std::to_string(repeat);
  };
  switch (c.sweep) {
    case SweepAxis::None: {
      const auto q = resolve_placements(c, L);
      points.push_back({L, L, c.nl_mode, q, repeat, stem(L, c.nl_mode, q)});
      break;
    }
    case SweepAxis::NlLayerIndex:
      for (int l = 1; l <= L; ++l) points.push_back({l, L, c.nl_mode, {l}, repeat, stem(L, c.nl_mode, {l})});
      break;
    case SweepAxis::DepthL:
      for (int depth : c.depths) {
        const auto q = resolve_placements(c, depth);
        for (NlMode m : {NlMode::Trainable, NlMode::StaticRandom, NlMode::Linear})
          points.push_back({depth, depth, m, q, repeat, stem(depth, m, q)});
      }
      break;
  }
  return points;
}

PointOutcome run_point(const ExperimentConfig& c, const Dataset& dataset, const Point& p) {
  GeometryConfig gc = c.geometry;
  gc.num_layers = p.depth;
  const SimGeometry geometry = build_geometry(gc);

  Rng model_rng(derive_seed(c.seed, kModelSeed, p.repeat, p.depth));
  SimModel model = build_model(c, geometry, p.mode, p.placements, model_rng);
  model.beta = calibrate_beta(model, dataset.inputs(Eigen::all, dataset.train));

  TrainConfig tc = c.train;
  tc.bias_learning_rate = c.effective_bias_learning_rate();
  tc.seed = derive_seed(c.seed, kTrainSeed, p.repeat, p.depth);

  PointOutcome out;
  out.train = train(model, dataset, c.bounds(), tc);
  if (out.train.diverged) {
    // One retry with beta set from the largest training output.
    model.beta = calibrate_beta(model, dataset.inputs(Eigen::all, dataset.train), 1.0);
    out.train = train(model, dataset, c.bounds(), tc);
    out.recalibrated = true;
    if (out.train.diverged) return out;
  }
  out.test = evaluate(out.train.best_model, dataset, dataset.test, c.bounds());
  out.row = {p.sweep_value, to_string(p.mode), p.repeat, out.test.rmse, out.train.best_val_rmse,
             out.train.best_epoch};
  return out;
}

void write_point_files(const ExperimentConfig& c, const fs::path& dir, const Point& p,
                       const PointOutcome& o) {
  {
    std::ofstream os = open_csv(dir / ("history-" + p.stem + ".csv"), c);
    write_history_csv(os, o.train.history);
  }
  {
    std::ofstream os = open_csv(dir / ("eval-" + p.stem + ".csv"), c);
    write_eval_csv(os, o.test);
  }
  if (c.save_checkpoints) save_checkpoint(dir / ("model-" + p.stem + ".json"), o.train.best_model);
}

void write_row(std::ostream& os, const ResultRow& r, bool has_val) {
  os << r.sweep_value << ',' << r.variant << ',' << r.repeat << ',' << r.test_rmse << ',';
  if (has_val) os << r.val_rmse;
  os << ',' << r.best_epoch << '\n';
  os.flush();
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> out;
  std::map<std::pair<int, std::string>, std::size_t> where;
  std::vector<std::vector<double>> values;
  for (const ResultRow& r : rows) {
    const auto key = std::make_pair(r.sweep_value, r.variant);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, out.size()).first;
      out.push_back({r.sweep_value, r.variant, 0.0, 0.0, 0});
      values.emplace_back();
    }
    values[it->second].push_back(r.test_rmse);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    const Eigen::Map<const RealVector> m(v.data(), static_cast<Eigen::Index>(v.size()));
    out[i].repeats = static_cast<int>(v.size());
    out[i].mean_test_rmse = m.mean();
    out[i].std_test_rmse =
        v.size() > 1 ? std::sqrt((m.array() - m.mean()).square().sum() / (v.size() - 1.0)) : 0.0;
  }
  return out;
}

}  // namespace

std::optional<double> ExperimentResult::mean(int sweep_value, const std::string& variant) const {
  for (const SummaryRow& s : summary) {
    if (s.sweep_value == sweep_value && s.variant == variant) return s.mean_test_rmse;
  }
  return std::nullopt;
}

std::string provenance_line(const ExperimentConfig& config) {
  return "# config_hash=" + config_hash(config) + " seed=" + std::to_string(config.seed);
}

fs::path make_output_directory(const ExperimentConfig& config, const std::string& suffix) {
  fs::create_directories(config.output_dir);
  const std::string base = config.name + "-" + config_hash(config) + suffix;
  for (int n = 1;; ++n) {
    const fs::path dir = config.output_dir / (n == 1 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir)) {
      std::ofstream(dir / "config.ini") << to_ini(config);
      return dir;
    }
  }
}

SimModel build_model(const ExperimentConfig& config, const SimGeometry& geometry, NlMode mode,
                     const std::vector<int>& placements, Rng& rng) {
  SimModel model = linear_sim_model(geometry, rng);
  if (mode == NlMode::Linear) return model;
  const int M = geometry.num_cells();
  for (int l : placements) {
    if (l < 1 || l > geometry.num_layers) throw ConfigError("NL placement outside 1..L");
    NonlinearLayer nl;
    nl.trainable = mode == NlMode::Trainable;
    const std::vector<double> b = sample_trainable_bias_init(M, rng, config.bias_scale);
    nl.biases = Eigen::Map<const RealVector>(b.data(), M);
    if (config.cell_model == CellModel::Relu) {
      nl.activations.assign(M, Activation::shifted_relu(0.0));
    } else {
      for (double alpha : sample_static_alphas(M, config.alpha_min, config.alpha_max, rng))
        nl.activations.push_back(scaled_diode_cell(config, alpha));
      if (!nl.trainable) nl.biases.setZero();
    }
    model.layers[l - 1] = std::move(nl);
  }
  validate(model);
  return model;
}

Dataset experiment_dataset(const ExperimentConfig& config, int repeat) {
  return generate_dataset(build_geometry(config.geometry), config.scenario, config.dataset_size,
                          derive_seed(config.seed, kDataSeed, repeat, 0));
}

EvalReport run_ml_baseline(const ExperimentConfig& config, const Dataset& dataset) {
  const SimGeometry geometry = build_geometry(config.geometry);
  const SearchGrid grid =
      SearchGrid::uniform(config.scenario.r_min_m, config.scenario.r_max_m,
                          config.scenario.theta_max_rad, config.ml_range_points, config.ml_azimuth_points);
  MlOptions opt;
  opt.mode = config.ml_exhaustive ? MlOptions::Mode::Exhaustive : MlOptions::Mode::CoarseToFine;
  opt.refine_points = config.ml_refine_points;
  const MlEstimator ml(geometry, grid, opt);
  return evaluate_estimator(dataset, dataset.test, [&](Eigen::Index i) {
    const UePosition p = ml.estimate(dataset.inputs.col(i)).position;
    return PositionEstimate{p.range_m, p.azimuth_rad, p.planar()};
  });
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log) {
  validate(config);
  if (config.sweep == SweepAxis::NlLayerIndex && config.nl_mode == NlMode::Linear)
    throw ConfigError("nl-layer-index sweep needs a nonlinear mode");

  ExperimentResult result;
  result.config_hash = config_hash(config);
  result.directory = make_output_directory(config);
  const fs::path& dir = result.directory;
  if (log) *log << "output: " << dir.string() << '\n';

  std::ofstream rows_csv = open_csv(dir / "results.csv", config);
  rows_csv << "sweep_value,variant,repeat,test_rmse,val_rmse,best_epoch\n";

  for (int repeat = 0; repeat < config.repeats; ++repeat) {
    const Dataset dataset = experiment_dataset(config, repeat);
    const std::vector<Point> points = enumerate_points(config, repeat);

    auto finish = [&](const Point& p, const PointOutcome& o) {
      if (o.train.diverged) {
        if (config.save_checkpoints)
          save_checkpoint(dir / ("model-" + p.stem + "-last-good.json"), o.train.best_model);
        throw NumericalError("training diverged at " + p.stem + " (completed rows kept in " +
                             (dir / "results.csv").string() + ")");
      }
      if (log && o.recalibrated) *log << p.stem << ": diverged once, beta recalibrated\n";
      write_point_files(config, dir, p, o);
      write_row(rows_csv, o.row, true);
      result.rows.push_back(o.row);
      if (log)
        *log << p.stem << ": test RMSE " << o.row.test_rmse << " m (best epoch " << o.row.best_epoch
             << ")\n";
    };

    if (config.parallel_sweep) {
      std::vector<std::future<PointOutcome>> jobs;
      for (const Point& p : points)
        jobs.push_back(std::async(std::launch::async, run_point, std::cref(config), std::cref(dataset),
                                  std::cref(p)));
      for (std::size_t k = 0; k < points.size(); ++k) finish(points[k], jobs[k].get());
    } else {
      for (const Point& p : points) finish(p, run_point(config, dataset, p));
    }

    if (config.ml_baseline) {
      const EvalReport ml = run_ml_baseline(config, dataset);
      {
        std::ofstream os = open_csv(dir / ("eval-ml-r" + std::to_string(repeat) + ".csv"), config);
        write_eval_csv(os, ml);
      }
      const ResultRow row{0, "ml", repeat, ml.rmse, 0.0, 0};
      write_row(rows_csv, row, false);
      result.rows.push_back(row);
      if (log) *log << "ml-r" << repeat << ": test RMSE " << ml.rmse << " m\n";
    }
  }

  result.summary = summarize(result.rows);
  {
    std::ofstream os = open_csv(dir / "summary.csv", config);
    os << "sweep_value,variant,mean_test_rmse,std_test_rmse,repeats\n";
    for (const SummaryRow& s : result.summary) {
      os << s.sweep_value << ',' << s.variant << ',' << s.mean_test_rmse << ',' << s.std_test_rmse
         << ',' << s.repeats << '\n';
    }
  }

  if (config.write_svg && config.sweep != SweepAxis::None) {
    std::map<std::string, PlotSeries> by_variant;
    for (const SummaryRow& s : result.summary) {
      if (s.variant == "ml") continue;
      PlotSeries& series = by_variant[s.variant];
      series.name = s.variant;
      series.x.push_back(s.sweep_value);
      series.y.push_back(s.mean_test_rmse);
    }
    std::vector<PlotSeries> series;
    for (auto& [name, s] : by_variant) series.push_back(std::move(s));
    std::ofstream os(dir / "summary.svg");
    write_svg_plot(os, config.name + " (" + to_string(config.sweep) + ")",
                   config.sweep == SweepAxis::DepthL ? "layers L" : "NL layer index",
                   "test RMSE [m]", series);
  }
  return result;
}

fs::path export_activation_curves(const ExperimentConfig& config) {
  if (config.curve_alphas.empty()) throw ConfigError("curves need at least one alpha");
  validate(config);
  const fs::path dir = make_output_directory(config, "-curves");

  std::vector<double> amps(config.curve_points);
  for (int i = 0; i < config.curve_points; ++i)
    amps[i] = config.curve_max_amplitude_v * i / (config.curve_points - 1);

  std::vector<Activation> cells;
  std::vector<ReluFit> fits;
  for (double alpha : config.curve_alphas) {
    DiodeCircuitParams p;
    p.alpha_per_volt = alpha;
    p.bias_volts = config.curve_bias_v;
    DiodeTableOptions opt;
    opt.max_amplitude_v = config.curve_max_amplitude_v;
    cells.push_back(diode_activation(p, opt));
    fits.push_back(fit_relu_approximation(cells.back(), 0.0, config.curve_max_amplitude_v));
  }

  auto label = [](double alpha) {
    std::ostringstream s;
    s << alpha;
    return s.str();
  };

  {
    std::ofstream os = open_csv(dir / "curves.csv", config);
    os << "amplitude_v";
    for (double a : config.curve_alphas) os << ",alpha_" << label(a);
    os << '\n';
    for (double v : amps) {
      os << v;
      for (const Activation& c : cells) os << ',' << c(v);
      os << '\n';
    }
  }
  {
    std::ofstream os = open_csv(dir / "fits.csv", config);
    os << "alpha,bias_v,gain,knee_v,residual_rms\n";
    for (std::size_t k = 0; k < fits.size(); ++k) {
      os << config.curve_alphas[k] << ',' << config.curve_bias_v << ',' << fits[k].gain << ','
         << fits[k].knee << ',' << fits[k].residual_rms << '\n';
    }
  }
  if (config.write_svg) {
    std::vector<PlotSeries> series;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      PlotSeries curve{"alpha = " + label(config.curve_alphas[k]), amps, {}, false};
      PlotSeries fit{"ReLU fit, alpha = " + label(config.curve_alphas[k]), amps, {}, true};
      for (double v : amps) {
        curve.y.push_back(cells[k](v));
        fit.y.push_back(fits[k].gain * std::max(v - fits[k].knee, 0.0));
      }
      series.push_back(std::move(curve));
      series.push_back(std::move(fit));
    }
    std::ofstream os(dir / "curves.svg");
    write_svg_plot(os, "diode cell lowpass response, b = " + label(config.curve_bias_v) + " V",
                   "input amplitude [V]", "output amplitude [V]", series);
  }
  return dir;
}

}  // namespace nlsim
