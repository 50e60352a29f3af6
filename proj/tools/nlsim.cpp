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
//
// Command-line front end: run, curves, check, ml-baseline, show-config.
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include "nlsim/experiment.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

using namespace nlsim;

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "INI experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset_name, "smoke | desk | placement-desk | depth-desk | full");
  cmd->add_option("--seed", o.seed, "Top-level seed (overrides the config)");
  cmd->add_option("--out", o.out_dir, "Output directory (overrides the config)");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.preset_name.empty() ? ExperimentConfig{} : preset(o.preset_name);
  if (!o.config_path.empty()) c = load_config(o.config_path, c);
  if (o.seed) c.seed = *o.seed;
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  validate(c);
  return c;
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

bool report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
  return ok;
}

// Quick self-test of the core invariants; the full suite lives in tests/.
bool self_check(std::uint64_t seed) {
  Rng rng(seed);
  bool ok = true;

  double quad_err = 0.0;
  for (double a : {-0.5, 0.0, 0.5}) {
    const Activation closed = closed_form_lowpass(BandpassNL::shifted_relu(a));
    for (int i = 0; i < 20; ++i) {
      const double v = uniform(rng, 0.0, 3.0);
      quad_err = std::max(quad_err, std::abs(lowpass_from_bandpass(BandpassNL::shifted_relu(a), v) -
                                             closed(v)));
    }
  }
  ok &= report("lowpass quadrature vs closed form", quad_err <= 1e-7,
               "max abs error " + sci(quad_err));

  double residual = 0.0;
  for (int i = 0; i < 200; ++i) {
    DiodeCircuitParams p;
    p.alpha_per_volt = uniform(rng, 18.0, 57.0);
    const double s = uniform(rng, -1.0, 1.0);
    residual = std::max(residual, std::abs(diode_residual(p, s, diode_bandpass_response(p, s))));
  }
  ok &= report("diode circuit residual", residual <= 1e-12, "max " + sci(residual));

  GeometryConfig gc;
  gc.cells_per_side = 4;
  gc.num_layers = 3;
  const SimGeometry g = build_geometry(gc);
  const double norm_err = std::abs(array_response(g, {2.0, 0.3}).norm() - 1.0);
  ok &= report("array response unit norm", norm_err <= 1e-12, sci(norm_err));

  ExperimentConfig c;
  c.geometry = gc;
  c.bias_scale = 1e-5;
  const Dataset d = generate_dataset(g, c.scenario, 16, seed);
  double fd = 0.0;
  for (NlMode mode : {NlMode::Linear, NlMode::Trainable}) {
    SimModel m = build_model(c, g, mode, {2}, rng);
    m.beta = calibrate_beta(m, d.inputs);
    const LossFn loss = position_loss(d.positions, m.beta, c.bounds());
    fd = std::max(fd, finite_difference_check(m, d.inputs, loss, 1e-6, rng).max_relative_error);
  }
  ok &= report("gradient vs finite differences", fd < 1e-4, "max rel error " + sci(fd));
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlsim: nonlinear stacked-metasurface simulator, trainer and benchmarks"};
  app.require_subcommand(1);

  CommonOptions run_opt, curves_opt, ml_opt, show_opt;
  std::uint64_t check_seed = 1;

  auto* run = app.add_subcommand("run", "Train and evaluate the configured sweep");
  add_common(run, run_opt);
  auto* curves = app.add_subcommand("curves", "Export diode activation curves and ReLU fits");
  add_common(curves, curves_opt);
  auto* check = app.add_subcommand("check", "Invariant and gradient self-test");
  check->add_option("--seed", check_seed, "Seed for the randomized checks");
  auto* ml = app.add_subcommand("ml-baseline", "Grid-search ML baseline on the test split");
  add_common(ml, ml_opt);
  auto* show = app.add_subcommand("show-config", "Print the resolved config as INI");
  add_common(show, show_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      const ExperimentResult r = run_experiment(resolve(run_opt), &std::cerr);
      std::cout << "sweep_value,variant,mean_test_rmse,std_test_rmse,repeats\n";
      for (const SummaryRow& s : r.summary) {
        std::cout << s.sweep_value << ',' << s.variant << ',' << s.mean_test_rmse << ','
                  << s.std_test_rmse << ',' << s.repeats << '\n';
      }
      std::cout << "results in " << r.directory.string() << '\n';
    } else if (*curves) {
      std::cout << "curves in " << export_activation_curves(resolve(curves_opt)).string() << '\n';
    } else if (*check) {
      return self_check(check_seed) ? 0 : 2;
    } else if (*show) {
      const ExperimentConfig c = resolve(show_opt);
      std::cout << "# config_hash=" << config_hash(c) << '\n' << to_ini(c);
    } else if (*ml) {
      const ExperimentConfig c = resolve(ml_opt);
      const EvalReport rep = run_ml_baseline(c, experiment_dataset(c, 0));
      const auto dir = make_output_directory(c, "-ml");
      std::ofstream os(dir / "eval-ml.csv");
      os << provenance_line(c) << '\n';
      write_eval_csv(os, rep);
      std::cout << "ml test RMSE " << rep.rmse << " m, rows in " << (dir / "eval-ml.csv").string()
                << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
