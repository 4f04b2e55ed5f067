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

// Training checkpoints: model config, parameters, AdamW moments and the step
// counter, stored as a single JSON document. Numbers are written with
// shortest round-trip formatting so reloading is bit-exact.

#pragma once

#include <cstddef>
#include <string>

#include "prefshare/model.hpp"
#include "prefshare/optim.hpp"

namespace prefshare {

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  AdamWState<T> adam;
  std::size_t step = 0;
  // Opaque JSON object describing the run (data path, lr, ...); "{}" if unset.
  std::string run_json = "{}";
};

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& params,
                     const AdamWState<T>& adam, std::size_t step,
                     const std::string& run_json = "{}");

// Throws DataError on unreadable or malformed files and ConfigError when the
// stored precision differs from T.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Precision recorded in a checkpoint file.
Precision checkpoint_precision(const std::string& path);

}  // namespace prefshare
