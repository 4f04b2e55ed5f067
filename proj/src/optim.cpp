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

#include "prefshare/optim.hpp"

#include <cmath>
#include <vector>

#include "prefshare/errors.hpp"

namespace prefshare {

template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd: size mismatch");
  const T step = T(lr);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * grads[i];
}

template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads,
                  std::span<T> m, std::span<T> v, std::size_t step, double lr,
                  const AdamWConfig& cfg) {
  if (params.size() != grads.size() || m.size() != params.size() ||
      v.size() != params.size()) {
    throw ShapeError("adamw: size mismatch");
  }
  if (step == 0) throw InvariantError("adamw: step count starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const double m_hat = double(m[i]) / bc1;
    const double v_hat = double(v[i]) / bc2;
    double p = double(params[i]);
    p -= lr * cfg.weight_decay * p;
    p -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    params[i] = T(p);
  }
}

namespace {

template <typename T>
void check_grads(const ModelParams<T>& params, const ModelParams<T>& grads) {
  if (!(params.config == grads.config)) {
    throw ShapeError("optimizer: gradient shapes do not match parameters");
  }
  grads.for_each([](const std::string& name, const Matrix<T>& g) {
    check_finite<T>(g.data, ("gradient of " + name).c_str());
  });
}

template <typename T>
std::vector<Matrix<T>*> tensors(ModelParams<T>& p) {
  std::vector<Matrix<T>*> out;
  p.for_each([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> tensors(const ModelParams<T>& p) {
  std::vector<const Matrix<T>*> out;
  p.for_each(
      [&](const std::string&, const Matrix<T>& m) { out.push_back(&m); });
  return out;
}

}  // namespace

template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
  check_grads(params, grads);
  auto p = tensors(params);
  auto g = tensors(grads);
  for (std::size_t i = 0; i < p.size(); ++i) {
    sgd_update<T>(p[i]->data, g[i]->data, lr);
  }
  ++params.version;
}

template <typename T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads,
                AdamWState<T>& state, double lr, const AdamWConfig& cfg) {
  check_grads(params, grads);
  auto p = tensors(params);
  auto g = tensors(grads);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    adamw_update<T>(p[i]->data, g[i]->data, m[i]->data, v[i]->data,
                    state.step, lr, cfg);
  }
  ++params.version;
}

#define PREFSHARE_INSTANTIATE(T)                                              \
  template void sgd_update<T>(std::span<T>, std::span<const T>, double);      \
  template void adamw_update<T>(std::span<T>, std::span<const T>,             \
                                std::span<T>, std::span<T>, std::size_t,      \
                                double, const AdamWConfig&);                  \
  template void sgd_step<T>(ModelParams<T>&, const ModelParams<T>&, double);  \
  template void adamw_step<T>(ModelParams<T>&, const ModelParams<T>&,         \
                              AdamWState<T>&, double, const AdamWConfig&);

PREFSHARE_INSTANTIATE(float)
PREFSHARE_INSTANTIATE(double)

#undef PREFSHARE_INSTANTIATE

}  // namespace prefshare
