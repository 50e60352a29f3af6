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

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <limits>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace nlsim {

namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// Unit conversions do not round-trip bit-exactly; 15 digits are stable.
std::string format_derived(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 15);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  if (s.empty()) return parts;
  boost::split(parts, s, boost::is_any_of(","));
  for (auto& p : parts) boost::trim(p);
  return parts;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F&& one) {
  std::vector<T> out;
  for (const auto& p : split_list(s)) out.push_back(one(p));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <class E>
E parse_enum(const std::string& key, const std::string& s, std::initializer_list<E> values) {
  for (E e : values) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError(key + ": unknown value '" + s + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define NLSIM_DOUBLE(sec, name, member)                                                     \
  Field {                                                                                   \
    sec, name, [](ExperimentConfig& c, const std::string& s) { c.member = parse_double(name, s); }, \
        [](const ExperimentConfig& c) { return format_double(c.member); }                   \
  }
#define NLSIM_INT(sec, name, member)                                                        \
  Field {                                                                                   \
    sec, name,                                                                              \
        [](ExperimentConfig& c, const std::string& s) {                                     \
          c.member = parse_int<decltype(c.member)>(name, s);                                \
        },                                                                                  \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                  \
  }
#define NLSIM_BOOL(sec, name, member)                                                       \
  Field {                                                                                   \
    sec, name, [](ExperimentConfig& c, const std::string& s) { c.member = parse_bool(name, s); }, \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"experiment", "name", [](ExperimentConfig& c, const std::string& s) { c.name = s; },
       [](const ExperimentConfig& c) { return c.name; }},
      NLSIM_INT("experiment", "seed", seed),
      {"experiment", "sweep",
       [](ExperimentConfig& c, const std::string& s) {
         c.sweep = parse_enum("sweep", s,
                              {SweepAxis::None, SweepAxis::NlLayerIndex, SweepAxis::DepthL});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.sweep)); }},
      NLSIM_INT("experiment", "repeats", repeats),
      {"experiment", "depths",
       [](ExperimentConfig& c, const std::string& s) {
         c.depths = parse_list<int>(s, [](const std::string& p) { return parse_int<int>("depths", p); });
       },
       [](const ExperimentConfig& c) { return join(c.depths); }},
      {"experiment", "output_dir",
       [](ExperimentConfig& c, const std::string& s) { c.output_dir = s; },
       [](const ExperimentConfig& c) { return c.output_dir.string(); }},
      NLSIM_BOOL("experiment", "parallel_sweep", parallel_sweep),
      NLSIM_BOOL("experiment", "write_svg", write_svg),
      NLSIM_BOOL("experiment", "save_checkpoints", save_checkpoints),

      {"geometry", "frequency_ghz",
       [](ExperimentConfig& c, const std::string& s) {
         c.geometry.carrier_frequency_hz = parse_double("frequency_ghz", s) * 1e9;
       },
       [](const ExperimentConfig& c) { return format_derived(c.geometry.carrier_frequency_hz / 1e9); }},
      NLSIM_INT("geometry", "cells_per_side", geometry.cells_per_side),
      NLSIM_INT("geometry", "num_layers", geometry.num_layers),
      NLSIM_DOUBLE("geometry", "layer_spacing_wavelengths", geometry.layer_spacing_wavelengths),
      NLSIM_DOUBLE("geometry", "output_distance_wavelengths", geometry.output_distance_wavelengths),
      NLSIM_INT("geometry", "num_output_antennas", geometry.num_output_antennas),
      NLSIM_DOUBLE("geometry", "output_spacing_wavelengths", geometry.output_spacing_wavelengths),

      NLSIM_DOUBLE("scenario", "r_min_m", scenario.r_min_m),
      NLSIM_DOUBLE("scenario", "r_max_m", scenario.r_max_m),
      {"scenario", "theta_max_deg",
       [](ExperimentConfig& c, const std::string& s) {
         c.scenario.theta_max_rad = deg_to_rad(parse_double("theta_max_deg", s));
       },
       [](const ExperimentConfig& c) { return format_derived(c.scenario.theta_max_rad * 180.0 / kPi); }},
      {"scenario", "rician_factor_db",
       [](ExperimentConfig& c, const std::string& s) {
         c.scenario.rician_factor = s == "inf" ? std::numeric_limits<double>::infinity()
                                               : db_to_linear(parse_double("rician_factor_db", s));
       },
       [](const ExperimentConfig& c) {
         return std::isinf(c.scenario.rician_factor)
                    ? std::string("inf")
                    : format_derived(10.0 * std::log10(c.scenario.rician_factor));
       }},
      {"scenario", "transmit_power_dbm",
       [](ExperimentConfig& c, const std::string& s) {
         c.scenario.transmit_power_w = dbm_to_watts(parse_double("transmit_power_dbm", s));
       },
       [](const ExperimentConfig& c) {
         return format_derived(10.0 * std::log10(c.scenario.transmit_power_w) + 30.0);
       }},
      {"scenario", "noise_power_dbm",
       [](ExperimentConfig& c, const std::string& s) {
         c.scenario.noise_power_w = s == "off" ? 0.0 : dbm_to_watts(parse_double("noise_power_dbm", s));
       },
       [](const ExperimentConfig& c) {
         return c.scenario.noise_power_w == 0.0
                    ? std::string("off")
                    : format_derived(10.0 * std::log10(c.scenario.noise_power_w) + 30.0);
       }},
      NLSIM_INT("scenario", "dataset_size", dataset_size),

      {"model", "nl_mode",
       [](ExperimentConfig& c, const std::string& s) {
         c.nl_mode = parse_enum("nl_mode", s, {NlMode::Linear, NlMode::Trainable, NlMode::StaticRandom});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.nl_mode)); }},
      {"model", "nl_layers",
       [](ExperimentConfig& c, const std::string& s) {
         c.nl_layers = s == "last" ? std::vector<int>{}
                                   : parse_list<int>(s, [](const std::string& p) {
                                       return parse_int<int>("nl_layers", p);
                                     });
       },
       [](const ExperimentConfig& c) { return c.nl_layers.empty() ? std::string("last") : join(c.nl_layers); }},
      {"model", "cell_model",
       [](ExperimentConfig& c, const std::string& s) {
         c.cell_model = parse_enum("cell_model", s, {CellModel::Relu, CellModel::Diode});
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.cell_model)); }},
      NLSIM_DOUBLE("model", "bias_scale", bias_scale),
      NLSIM_DOUBLE("model", "alpha_min", alpha_min),
      NLSIM_DOUBLE("model", "alpha_max", alpha_max),
      NLSIM_DOUBLE("model", "diode_field_gain", diode_field_gain),
      NLSIM_INT("model", "diode_table_points", diode_table_points),

      NLSIM_DOUBLE("training", "learning_rate", train.learning_rate),
      {"training", "bias_learning_rate",
       [](ExperimentConfig& c, const std::string& s) {
         c.bias_learning_rate = s == "auto" ? std::nullopt
                                            : std::optional<double>(parse_double("bias_learning_rate", s));
       },
       [](const ExperimentConfig& c) {
         return c.bias_learning_rate ? format_double(*c.bias_learning_rate) : std::string("auto");
       }},
      NLSIM_INT("training", "batch_size", train.batch_size),
      NLSIM_INT("training", "epochs", train.epochs),
      NLSIM_DOUBLE("training", "adam_beta1", train.adam_beta1),
      NLSIM_DOUBLE("training", "adam_beta2", train.adam_beta2),
      NLSIM_DOUBLE("training", "adam_epsilon", train.adam_epsilon),
      NLSIM_INT("training", "patience", train.patience),
      NLSIM_BOOL("training", "redraw_noise", train.redraw_noise),

      NLSIM_BOOL("baseline", "ml_baseline", ml_baseline),
      NLSIM_INT("baseline", "ml_range_points", ml_range_points),
      NLSIM_INT("baseline", "ml_azimuth_points", ml_azimuth_points),
      NLSIM_INT("baseline", "ml_refine_points", ml_refine_points),
      NLSIM_BOOL("baseline", "ml_exhaustive", ml_exhaustive),

      {"curves", "alphas",
       [](ExperimentConfig& c, const std::string& s) {
         c.curve_alphas =
             parse_list<double>(s, [](const std::string& p) { return parse_double("alphas", p); });
       },
       [](const ExperimentConfig& c) { return join(c.curve_alphas); }},
      NLSIM_DOUBLE("curves", "bias_v", curve_bias_v),
      NLSIM_DOUBLE("curves", "max_amplitude_v", curve_max_amplitude_v),
      NLSIM_INT("curves", "points", curve_points),
  };
  return table;
}

#undef NLSIM_DOUBLE
#undef NLSIM_INT
#undef NLSIM_BOOL

std::string canonical(const ExperimentConfig& c, bool with_output_dir) {
  std::ostringstream os;
  std::string section;
  for (const Field& f : fields()) {
    if (!with_output_dir && std::string_view(f.key) == "output_dir") continue;
    if (section != f.section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

}  // namespace

const char* to_string(NlMode mode) {
  switch (mode) {
    case NlMode::Linear: return "linear";
    case NlMode::Trainable: return "trainable";
    case NlMode::StaticRandom: return "static-random";
  }
  return "?";
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::None: return "none";
    case SweepAxis::NlLayerIndex: return "nl-layer-index";
    case SweepAxis::DepthL: return "depth-L";
  }
  return "?";
}

const char* to_string(CellModel model) {
  switch (model) {
    case CellModel::Relu: return "relu";
    case CellModel::Diode: return "diode";
  }
  return "?";
}

void validate(const ExperimentConfig& c) {
  if (c.name.empty() || c.name.find_first_of("/\\ ") != std::string::npos)
    throw ConfigError("name must be non-empty without spaces or slashes");
  if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (c.dataset_size < 10) throw ConfigError("dataset_size must be >= 10");
  build_geometry(c.geometry);
  validate_scenario(c.scenario);
  validate(c.train);
  if (c.bias_learning_rate && !(*c.bias_learning_rate >= 0.0))
    throw ConfigError("bias_learning_rate must be >= 0");
  if (!(c.bias_scale >= 0.0)) throw ConfigError("bias_scale must be >= 0");
  if (!(c.alpha_min > 0.0) || c.alpha_min > c.alpha_max)
    throw ConfigError("alpha range must satisfy 0 < alpha_min <= alpha_max");
  if (!(c.diode_field_gain > 0.0)) throw ConfigError("diode_field_gain must be > 0");
  if (c.diode_table_points < 3) throw ConfigError("diode_table_points must be >= 3");
  if (c.sweep == SweepAxis::DepthL) {
    if (c.depths.empty()) throw ConfigError("depth-L sweep needs at least one depth");
    for (int d : c.depths) {
      if (d < 1) throw ConfigError("depths must be >= 1");
    }
  }
  const int min_depth = c.sweep == SweepAxis::DepthL
                            ? *std::min_element(c.depths.begin(), c.depths.end())
                            : c.geometry.num_layers;
  for (int l : c.nl_layers) {
    if (l < 1 || l > min_depth) throw ConfigError("nl_layers entries must lie in 1..L");
  }
  if (c.ml_range_points < 2 || c.ml_azimuth_points < 2 || c.ml_refine_points < 2)
    throw ConfigError("ML grid needs >= 2 points per axis");
  if (c.curve_points < 2) throw ConfigError("curves.points must be >= 2");
  if (!(c.curve_max_amplitude_v > 0.0)) throw ConfigError("curves.max_amplitude_v must be > 0");
  if (c.curve_bias_v > 0.0) throw ConfigError("curves.bias_v must be <= 0");
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
  // Boost's INI reader only knows ';' comments.
  std::string cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (boost::trim_left_copy(line).starts_with('#')) line.clear();
    cleaned += line + '\n';
  }
  pt::ptree tree;
  std::istringstream is(cleaned);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  std::map<std::pair<std::string, std::string>, const Field*> index;
  for (const Field& f : fields()) index[{f.section, f.key}] = &f;

  ExperimentConfig c = base;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const auto it = index.find({section, key});
      if (it == index.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      it->second->set(c, boost::trim_copy(value.data()));
    }
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), base);
}

std::string to_ini(const ExperimentConfig& config) { return canonical(config, true); }

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical(config, false)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> preset_names() { return {"smoke", "desk", "placement-desk", "depth-desk", "full"}; }

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "full") {
    c.geometry.cells_per_side = 40;
    c.geometry.num_layers = 6;
    c.dataset_size = 10000;
    c.sweep = SweepAxis::DepthL;
    c.depths = {6};
    c.train.learning_rate = 1e-2;
    c.train.epochs = 100;
    c.bias_scale = 1e-5;
    c.ml_baseline = true;
    validate(c);
    return c;
  }

  // Desk scale: 8 x 8 cells, 4 layers, 2000 samples, 50 epochs.
  c.geometry.cells_per_side = 8;
  c.geometry.num_layers = 4;
  c.dataset_size = 2000;
  c.train.learning_rate = 3e-2;
  c.train.epochs = 50;
  c.bias_scale = 5e-5;
  if (name == "desk") {
  } else if (name == "placement-desk") {
    c.sweep = SweepAxis::NlLayerIndex;
    c.repeats = 3;
    c.ml_baseline = false;
  } else if (name == "depth-desk") {
    c.sweep = SweepAxis::DepthL;
    c.depths = {2, 4, 6};
    c.repeats = 3;
    c.ml_baseline = false;
  } else if (name == "smoke") {
    c.geometry.cells_per_side = 4;
    c.geometry.num_layers = 2;
    c.dataset_size = 200;
    c.train.epochs = 3;
    c.ml_range_points = 20;
    c.ml_azimuth_points = 20;
    c.ml_refine_points = 5;
    c.curve_points = 41;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  validate(c);
  return c;
}

}  // namespace nlsim
