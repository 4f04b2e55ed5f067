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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "prefshare/checkpoint.hpp"
#include "prefshare/errors.hpp"

using namespace prefshare;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() /
          ("prefshare_ck_" + name + ".json"))
      .string();
}

ModelConfig tiny(Precision p) {
  ModelConfig c;
  c.vocab_size = 10;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.precision = p;
  c.seed = 21;
  return c;
}

template <typename T>
void check_round_trip(Precision p) {
  const std::string path = temp_path(to_string(p));
  auto params = init_params<T>(tiny(p));
  auto adam = AdamWState<T>::zeros(tiny(p));
  adam.m.output.data[1] = T(0.125);
  adam.v.layers[1].wk.data[5] = T(1e-7);
  adam.step = 4;
  save_checkpoint(path, params, adam, 4, "{\"lr\":0.01}");
  CHECK(checkpoint_precision(path) == p);
  const auto ck = load_checkpoint<T>(path);
  CHECK(ck.step == 4);
  CHECK(ck.adam.step == 4);
  CHECK(ck.params.config == params.config);
  std::size_t i = 0;
  std::vector<const Matrix<T>*> loaded;
  ck.params.for_each(
      [&](const std::string&, const Matrix<T>& m) { loaded.push_back(&m); });
  params.for_each([&](const std::string&, const Matrix<T>& m) {
    CHECK(loaded[i++]->data == m.data);
  });
  CHECK(ck.adam.m.output.data == adam.m.output.data);
  CHECK(ck.adam.v.layers[1].wk.data == adam.v.layers[1].wk.data);
  CHECK(ck.run_json == "{\"lr\":0.01}");
  std::remove(path.c_str());
}

}  // namespace

TEST_CASE("checkpoints round-trip bit for bit") {
  check_round_trip<double>(Precision::kF64);
  check_round_trip<float>(Precision::kF32);
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_AS(load_checkpoint<double>("/nonexistent/ck.json"), DataError);
  const std::string path = temp_path("bad");
  {
    std::ofstream(path) << "{\"format\": \"something-else\"}";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);
  {
    std::ofstream(path) << "not json";
  }
  CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);

  const auto p = init_params<double>(tiny(Precision::kF64));
  save_checkpoint(path, p, AdamWState<double>::zeros(p.config), 1);
  CHECK_THROWS_AS(load_checkpoint<float>(path), ConfigError);
  std::remove(path.c_str());
}
