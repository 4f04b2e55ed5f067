// Copyright 2026 The Prefshare Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "prefshare/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <type_traits>

#include "json.hpp"
#include "prefshare/errors.hpp"

namespace prefshare {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "prefshare-checkpoint";
constexpr int kVersion = 1;

template <typename T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::kF32 : Precision::kF64;
}

json config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},             {"rope_theta", c.rope_theta},
          {"norm_eps", c.norm_eps},     {"init_std", c.init_std},
          {"precision", to_string(c.precision)}, {"seed", c.seed}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.rope_theta = j.at("rope_theta").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.init_std = j.at("init_std").get<double>();
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

template <typename T>
json tensors_json(const ModelParams<T>& p) {
  json out = json::object();
  p.for_each([&](const std::string& name, const Matrix<T>& m) {
    out[name] = {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
  });
  return out;
}

template <typename T>
void fill_tensors(ModelParams<T>& p, const json& j) {
  p.for_each([&](const std::string& name, Matrix<T>& m) {
    if (!j.contains(name)) throw DataError("checkpoint lacks tensor " + name);
    const json& t = j.at(name);
    if (t.at("rows").get<std::size_t>() != m.rows ||
        t.at("cols").get<std::size_t>() != m.cols) {
      throw DataError("checkpoint tensor " + name + " has the wrong shape");
    }
    auto data = t.at("data").get<std::vector<T>>();
    if (data.size() != m.data.size()) {
      throw DataError("checkpoint tensor " + name + " has the wrong size");
    }
    m.data = std::move(data);
  });
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  try {
    json j = json::parse(in);
    if (j.value("format", "") != kFormat) {
      throw DataError(path + " is not a prefshare checkpoint");
    }
    if (j.value("version", 0) != kVersion) {
      throw DataError(path + ": unsupported checkpoint version");
    }
    return j;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const AdamWState<T>& adam, std::size_t step,
                     const std::string& run_json) {
  ModelConfig cfg = params.config;
  cfg.precision = precision_of<T>();
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config"] = config_json(cfg);
  j["step"] = step;
  j["adam_step"] = adam.step;
  j["run"] = json::parse(run_json);
  j["tensors"] = tensors_json(params);
  j["adam_m"] = tensors_json(adam.m);
  j["adam_v"] = tensors_json(adam.v);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write checkpoint " + path);
    out << j.dump();
    if (!out) throw DataError("failed writing checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move checkpoint into place at " + path);
  }
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  const json j = read_json(path);
  try {
    ModelConfig cfg = config_from(j.at("config"));
    if (cfg.precision != precision_of<T>()) {
      throw ConfigError("checkpoint precision is " + to_string(cfg.precision));
    }
    Checkpoint<T> ck{ModelParams<T>::zeros(cfg), AdamWState<T>::zeros(cfg),
                     j.at("step").get<std::size_t>(), j.at("run").dump()};
    fill_tensors(ck.params, j.at("tensors"));
    fill_tensors(ck.adam.m, j.at("adam_m"));
    fill_tensors(ck.adam.v, j.at("adam_v"));
    ck.adam.step = j.at("adam_step").get<std::size_t>();
    return ck;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
}

Precision checkpoint_precision(const std::string& path) {
  const json j = read_json(path);
  try {
    return parse_precision(j.at("config").at("precision").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
}

template void save_checkpoint<float>(const std::string&,
                                     const ModelParams<float>&,
                                     const AdamWState<float>&, std::size_t,
                                     const std::string&);
template void save_checkpoint<double>(const std::string&,
                                      const ModelParams<double>&,
                                      const AdamWState<double>&, std::size_t,
                                      const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace prefshare
