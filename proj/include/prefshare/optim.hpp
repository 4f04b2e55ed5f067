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

#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "prefshare/model.hpp"

namespace prefshare {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// params -= lr * grads.
template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr);

// One AdamW update with bias correction; `step` is the 1-based step count
// after this update. Decoupled weight decay: p -= lr * wd * p.
template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads,
                  std::span<T> m, std::span<T> v, std::size_t step, double lr,
                  const AdamWConfig& cfg);

template <typename T>
struct AdamWState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::size_t step = 0;

  static AdamWState zeros(const ModelConfig& config) {
    return {ModelParams<T>::zeros(config), ModelParams<T>::zeros(config), 0};
  }
};

// Both throw NonFiniteError naming the tensor if any gradient is NaN/Inf,
// before touching params. Both bump params.version.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr);

template <typename T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads,
                AdamWState<T>& state, double lr, const AdamWConfig& cfg = {});

}  // namespace prefshare
