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

#include "prefshare/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefshare/errors.hpp"

namespace prefshare {

std::string to_string(Precision p) {
  return p == Precision::kF32 ? "f32" : "f64";
}

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "fp32" || s == "float32") return Precision::kF32;
  if (s == "f64" || s == "fp64" || s == "float64") return Precision::kF64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

template <typename T>
Matrix<T>::Matrix(std::size_t r, std::size_t c, std::vector<T> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) {
    throw ShapeError("matrix data length " + std::to_string(data.size()) +
                     " != " + std::to_string(r) + "x" + std::to_string(c));
  }
}

template <typename T>
void Matrix<T>::fill(T v) {
  std::fill(data.begin(), data.end(), v);
}

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError(std::string(what) + ": non-finite value at index " +
                           std::to_string(i));
    }
  }
}

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// c[i, :] += sum_k a[i, k] * b[k, :], k ascending. Rows are processed four at
// a time so each row of b is loaded once per group; the per-element
// accumulation order is unchanged by the grouping.
template <typename T>
void gemm_rows(const T* a, std::size_t a_stride, const T* b, std::size_t n,
               std::size_t k_dim, T* c, std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + (i + 0) * a_stride;
    const T* a1 = a + (i + 1) * a_stride;
    const T* a2 = a + (i + 2) * a_stride;
    const T* a3 = a + (i + 3) * a_stride;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T* bk = b + k * n;
      const T s0 = a0[k], s1 = a1[k], s2 = a2[k], s3 = a3[k];
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = bk[j];
        c0[j] += s0 * bv;
        c1[j] += s1 * bv;
        c2[j] += s2 * bv;
        c3[j] += s3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * a_stride;
    T* ci = c + i * n;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const T* bk = b + k * n;
      const T s = ai[k];
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bk[j];
    }
  }
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

}  // namespace

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + shape_str(a.rows, a.cols) + " * " +
                     shape_str(b.rows, b.cols));
  }
  Matrix<T> c(a.rows, b.cols);
  gemm_rows(a.data.data(), a.cols, b.data.data(), b.cols, a.cols,
            c.data.data(), a.rows);
  check_finite<T>(c.data, "matmul");
  return c;
}

template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.cols) {
    throw ShapeError("matmul_bt: " + shape_str(a.rows, a.cols) + " * (" +
                     shape_str(b.rows, b.cols) + ")^T");
  }
  return matmul(a, transpose(b));
}

template <typename T>
void matmul_at_accumulate(const Matrix<T>& a, const Matrix<T>& b,
                          Matrix<T>& c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) {
    throw ShapeError("matmul_at_accumulate: (" + shape_str(a.rows, a.cols) +
                     ")^T * " + shape_str(b.rows, b.cols) + " -> " +
                     shape_str(c.rows, c.cols));
  }
  const std::size_t n = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.data.data() + i * a.cols;
    const T* bi = b.data.data() + i * n;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T s = ai[k];
      T* ck = c.data.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) ck[j] += s * bi[j];
    }
  }
}

template <typename T>
void masked_softmax_row(std::span<const T> scores,
                        std::span<const std::uint8_t> allowed,
                        std::span<T> out) {
  if (scores.size() != allowed.size() || scores.size() != out.size()) {
    throw ShapeError("masked_softmax_row: length mismatch");
  }
  T max_v = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (allowed[i]) {
      any = true;
      max_v = std::max(max_v, scores[i]);
    }
  }
  if (!any) throw InvariantError("masked_softmax_row: every entry is masked");
  T sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (allowed[i]) {
      out[i] = std::exp(scores[i] - max_v);
      sum += out[i];
    } else {
      out[i] = 0;
    }
  }
  const T inv = T(1) / sum;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (allowed[i]) out[i] *= inv;
  }
}

template <typename T>
std::vector<T> masked_softmax_row(const std::vector<T>& scores,
                                  const std::vector<bool>& allowed) {
  if (scores.size() != allowed.size()) {
    throw ShapeError("masked_softmax_row: length mismatch");
  }
  std::vector<std::uint8_t> flags(allowed.begin(), allowed.end());
  std::vector<T> out(scores.size());
  masked_softmax_row<T>(scores, flags, out);
  return out;
}

template <typename T>
T rms_norm(std::span<const T> x, std::span<const T> gain, T eps,
           std::span<T> out) {
  if (x.size() != gain.size() || x.size() != out.size() || x.empty()) {
    throw ShapeError("rms_norm: length mismatch");
  }
  T ss = 0;
  for (T v : x) ss += v * v;
  const T inv = T(1) / std::sqrt(ss / T(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
  return inv;
}

template <typename T>
std::vector<T> rms_norm(const std::vector<T>& x, const std::vector<T>& gain,
                        T eps) {
  std::vector<T> out(x.size());
  rms_norm<T>(x, gain, eps, out);
  return out;
}

template <typename T>
void rms_norm_backward(std::span<const T> x, std::span<const T> gain,
                       T inv_rms, std::span<const T> dy, std::span<T> dgain,
                       std::span<T> dx) {
  const std::size_t n = x.size();
  T dot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dgain[i] += dy[i] * x[i] * inv_rms;
    dot += dy[i] * gain[i] * x[i];
  }
  const T coef = inv_rms * inv_rms * inv_rms * dot / T(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = inv_rms * gain[i] * dy[i] - coef * x[i];
  }
}

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
void rope_apply_inplace(Matrix<T>& m, std::span<const std::int32_t> positions,
                        double theta_base, std::size_t head_dim,
                        bool inverse) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rope: head dimension must be even, got " +
                      std::to_string(head_dim));
  }
  if (m.cols % head_dim != 0) {
    throw ShapeError("rope: width " + std::to_string(m.cols) +
                     " is not a multiple of head_dim " +
                     std::to_string(head_dim));
  }
  if (positions.size() != m.rows) {
    throw ShapeError("rope: " + std::to_string(positions.size()) +
                     " positions for " + std::to_string(m.rows) + " tokens");
  }
  const std::size_t half = head_dim / 2;
  std::vector<double> freq(half);
  for (std::size_t i = 0; i < half; ++i) {
    freq[i] = std::pow(theta_base, -2.0 * double(i) / double(head_dim));
  }
  std::vector<T> cos_v(half), sin_v(half);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double pos = positions[r];
    for (std::size_t i = 0; i < half; ++i) {
      const double angle = pos * freq[i];
      cos_v[i] = T(std::cos(angle));
      sin_v[i] = T(inverse ? -std::sin(angle) : std::sin(angle));
    }
    T* row = m.data.data() + r * m.cols;
    for (std::size_t h = 0; h < m.cols; h += head_dim) {
      for (std::size_t i = 0; i < half; ++i) {
        const T x0 = row[h + 2 * i];
        const T x1 = row[h + 2 * i + 1];
        row[h + 2 * i] = x0 * cos_v[i] - x1 * sin_v[i];
        row[h + 2 * i + 1] = x0 * sin_v[i] + x1 * cos_v[i];
      }
    }
  }
}

template <typename T>
Matrix<T> rope_apply(const Matrix<T>& m,
                     std::span<const std::int32_t> positions,
                     double theta_base) {
  Matrix<T> out = m;
  rope_apply_inplace(out, positions, theta_base, m.cols);
  return out;
}

template <typename T>
T log_sum_exp(std::span<const T> row) {
  T max_v = -std::numeric_limits<T>::infinity();
  for (T v : row) max_v = std::max(max_v, v);
  T sum = 0;
  for (T v : row) sum += std::exp(v - max_v);
  return max_v + std::log(sum);
}

#define PREFSHARE_INSTANTIATE(T)                                              \
  template struct Matrix<T>;                                                  \
  template void check_finite<T>(std::span<const T>, const char*);             \
  template Matrix<T> matmul<T>(const Matrix<T>&, const Matrix<T>&);           \
  template Matrix<T> matmul_bt<T>(const Matrix<T>&, const Matrix<T>&);        \
  template void matmul_at_accumulate<T>(const Matrix<T>&, const Matrix<T>&,   \
                                        Matrix<T>&);                          \
  template void masked_softmax_row<T>(std::span<const T>,                     \
                                      std::span<const std::uint8_t>,          \
                                      std::span<T>);                          \
  template std::vector<T> masked_softmax_row<T>(const std::vector<T>&,        \
                                                const std::vector<bool>&);    \
  template T rms_norm<T>(std::span<const T>, std::span<const T>, T,           \
                         std::span<T>);                                       \
  template std::vector<T> rms_norm<T>(const std::vector<T>&,                  \
                                      const std::vector<T>&, T);              \
  template void rms_norm_backward<T>(std::span<const T>, std::span<const T>,  \
                                     T, std::span<const T>, std::span<T>,     \
                                     std::span<T>);                           \
  template T silu<T>(T);                                                      \
  template T silu_grad<T>(T);                                                 \
  template void rope_apply_inplace<T>(Matrix<T>&,                             \
                                      std::span<const std::int32_t>, double,  \
                                      std::size_t, bool);                     \
  template Matrix<T> rope_apply<T>(const Matrix<T>&,                          \
                                   std::span<const std::int32_t>, double);    \
  template T log_sum_exp<T>(std::span<const T>);

PREFSHARE_INSTANTIATE(float)
PREFSHARE_INSTANTIATE(double)

#undef PREFSHARE_INSTANTIATE

}  // namespace prefshare
