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

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace nlsim {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json to_json(const RealVector& v) { return std::vector<double>(v.begin(), v.end()); }

RealVector vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const RealVector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json to_json(const Activation& a) {
  json j;
  j["kind"] = to_string(a.kind());
  switch (a.kind()) {
    case Activation::Kind::ShiftedRelu:
      j["shift"] = a.shift();
      break;
    case Activation::Kind::OddPower:
      j["exponent"] = a.exponent();
      j["catalog_coefficient"] = a.catalog_coefficient();
      break;
    case Activation::Kind::EnvelopeRelu:
      j["gain"] = a.gain();
      j["knee"] = a.knee_point();
      break;
    case Activation::Kind::Tabulated:
      j["amplitudes"] = a.table()->amplitudes;
      j["values"] = a.table()->values;
      break;
    case Activation::Kind::Sign:
    case Activation::Kind::AbsoluteValue:
      break;
  }
  return j;
}

Activation activation_from(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "shifted_relu") return Activation::shifted_relu(j.at("shift").get<double>());
  if (kind == "sign") return Activation::sign();
  if (kind == "absolute_value") return Activation::absolute_value();
  if (kind == "odd_power")
    return Activation::odd_power(j.at("exponent").get<int>(), j.at("catalog_coefficient").get<bool>());
  if (kind == "envelope_relu")
    return Activation::envelope_relu(j.at("gain").get<double>(), j.at("knee").get<double>());
  if (kind == "tabulated")
    return Activation::tabulated(j.at("amplitudes").get<std::vector<double>>(),
                                 j.at("values").get<std::vector<double>>());
  throw ConfigError("unknown activation kind '" + kind + "' in checkpoint");
}

}  // namespace

std::string checkpoint_json(const SimModel& model) {
  validate(model);
  const GeometryConfig& g = model.geometry.config;
  json j;
  j["format"] = "nlsim-checkpoint";
  j["version"] = kFormatVersion;
  j["geometry"] = {
      {"carrier_frequency_hz", g.carrier_frequency_hz},
      {"cells_per_side", g.cells_per_side},
      {"num_layers", g.num_layers},
      {"layer_spacing_wavelengths", g.layer_spacing_wavelengths},
      {"output_distance_wavelengths", g.output_distance_wavelengths},
      {"num_output_antennas", g.num_output_antennas},
      {"output_spacing_wavelengths", g.output_spacing_wavelengths},
  };
  j["beta"] = model.beta;
  json layers = json::array();
  for (const LayerKind& layer : model.layers) {
    json lj;
    if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
      lj["type"] = "linear";
      lj["trainable"] = lin->trainable;
      lj["phases"] = to_json(lin->phases);
    } else {
      const auto& nl = std::get<NonlinearLayer>(layer);
      lj["type"] = "nonlinear";
      lj["trainable"] = nl.trainable;
      lj["biases"] = to_json(nl.biases);
      json acts = json::array();
      for (const Activation& a : nl.activations) acts.push_back(to_json(a));
      lj["activations"] = std::move(acts);
    }
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump(1);
}

SimModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "nlsim-checkpoint") throw ConfigError("not an nlsim checkpoint");
  if (j.value("version", 0) != kFormatVersion) throw ConfigError("unsupported checkpoint version");

  try {
    const json& gj = j.at("geometry");
    GeometryConfig g;
    g.carrier_frequency_hz = gj.at("carrier_frequency_hz").get<double>();
    g.cells_per_side = gj.at("cells_per_side").get<int>();
    g.num_layers = gj.at("num_layers").get<int>();
    g.layer_spacing_wavelengths = gj.at("layer_spacing_wavelengths").get<double>();
    g.output_distance_wavelengths = gj.at("output_distance_wavelengths").get<double>();
    g.num_output_antennas = gj.at("num_output_antennas").get<int>();
    g.output_spacing_wavelengths = gj.at("output_spacing_wavelengths").get<double>();

    SimModel model;
    model.geometry = build_geometry(g);
    model.propagation = build_propagation(model.geometry);
    model.beta = j.at("beta").get<double>();
    for (const json& lj : j.at("layers")) {
      const std::string type = lj.at("type").get<std::string>();
      if (type == "linear") {
        LinearLayer lin;
        lin.trainable = lj.at("trainable").get<bool>();
        lin.phases = vector_from(lj.at("phases"));
        model.layers.emplace_back(std::move(lin));
      } else if (type == "nonlinear") {
        NonlinearLayer nl;
        nl.trainable = lj.at("trainable").get<bool>();
        nl.biases = vector_from(lj.at("biases"));
        for (const json& aj : lj.at("activations")) nl.activations.push_back(activation_from(aj));
        model.layers.emplace_back(std::move(nl));
      } else {
        throw ConfigError("unknown layer type '" + type + "' in checkpoint");
      }
    }
    validate(model);
    return model;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const SimModel& model) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os << checkpoint_json(model) << '\n';
}

SimModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace nlsim
