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

// Dense CPU kernels shared by the forward and backward passes.
//
// Every kernel accumulates in a fixed order that depends only on the row
// being computed, never on how many other rows share the call. Two layouts
// that present the same row contents therefore produce bit-identical rows,
// which is what the paired/shared equivalence checks rely on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace prefshare {

enum class Precision { kF32, kF64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0))
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<T> values);

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  std::size_t size() const { return data.size(); }
  void fill(T v);
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

// Throws NonFiniteError naming `what` if any entry is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const char* what);

// C = A * B.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

// C = A * B^T.
template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b);

// C += A^T * B. Weight-gradient accumulation.
template <typename T>
void matmul_at_accumulate(const Matrix<T>& a, const Matrix<T>& b,
                          Matrix<T>& c);

// Softmax over the entries where `allowed` is set; disallowed entries get
// exactly zero. Throws InvariantError when nothing is allowed.
template <typename T>
void masked_softmax_row(std::span<const T> scores,
                        std::span<const std::uint8_t> allowed,
                        std::span<T> out);

template <typename T>
std::vector<T> masked_softmax_row(const std::vector<T>& scores,
                                  const std::vector<bool>& allowed);

// y = x / sqrt(mean(x^2) + eps) * gain. Returns the inverse RMS factor so the
// backward pass need not recompute it.
template <typename T>
T rms_norm(std::span<const T> x, std::span<const T> gain, T eps,
           std::span<T> out);

template <typename T>
std::vector<T> rms_norm(const std::vector<T>& x, const std::vector<T>& gain,
                        T eps);

// Given dL/dy for y = rms_norm(x), accumulates dL/dgain and writes dL/dx.
template <typename T>
void rms_norm_backward(std::span<const T> x, std::span<const T> gain,
                       T inv_rms, std::span<const T> dy, std::span<T> dgain,
                       std::span<T> dx);

template <typename T>
T silu(T x);
template <typename T>
T silu_grad(T x);

// Rotary embedding over interleaved pairs (x[2i], x[2i+1]) of each
// `head_dim`-wide column block, angle = position * theta^(-2i/head_dim).
// With `inverse` the rotation is transposed, which is its own backward.
template <typename T>
void rope_apply_inplace(Matrix<T>& m, std::span<const std::int32_t> positions,
                        double theta_base, std::size_t head_dim,
                        bool inverse = false);

template <typename T>
Matrix<T> rope_apply(const Matrix<T>& m,
                     std::span<const std::int32_t> positions,
                     double theta_base);

// log(sum(exp(row))) with max subtraction.
template <typename T>
T log_sum_exp(std::span<const T> row);

}  // namespace prefshare
