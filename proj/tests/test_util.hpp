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

#include <cmath>
#include <random>
#include <vector>

#include "prefshare/layout.hpp"
#include "prefshare/masks.hpp"
#include "prefshare/numerics.hpp"

namespace testutil {

inline prefshare::PreferenceSample random_sample(std::mt19937_64& rng,
                                                 std::size_t max_prompt,
                                                 std::size_t max_completion,
                                                 int vocab,
                                                 std::size_t min_prompt = 0) {
  std::uniform_int_distribution<std::size_t> plen(min_prompt, max_prompt);
  std::uniform_int_distribution<std::size_t> clen(1, max_completion);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  prefshare::PreferenceSample s;
  s.prompt.resize(plen(rng));
  s.chosen.resize(clen(rng));
  s.rejected.resize(clen(rng));
  for (auto* v : {&s.prompt, &s.chosen, &s.rejected}) {
    for (auto& t : *v) t = tok(rng);
  }
  return s;
}

inline prefshare::PreferenceSample make_sample(std::size_t p, std::size_t c1,
                                               std::size_t c2) {
  prefshare::PreferenceSample s;
  for (std::size_t i = 0; i < p; ++i) s.prompt.push_back(int(1 + i % 50));
  for (std::size_t i = 0; i < c1; ++i) s.chosen.push_back(int(2 + i % 40));
  for (std::size_t i = 0; i < c2; ++i) s.rejected.push_back(int(3 + i % 30));
  return s;
}

// Dense attention straight from the predicate, no tiles.
inline prefshare::Matrix<double> dense_attention(
    const prefshare::Matrix<double>& q, const prefshare::Matrix<double>& k,
    const prefshare::Matrix<double>& v, std::size_t heads, std::size_t B,
    std::size_t L, const prefshare::MaskFn& pred) {
  const std::size_t D = q.cols, dh = D / heads;
  prefshare::Matrix<double> out(B * L, D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> s(L, 0.0);
        std::vector<bool> allowed(L);
        for (std::size_t j = 0; j < L; ++j) {
          allowed[j] = pred(b, i, j);
          double dot = 0;
          for (std::size_t d = 0; d < dh; ++d) {
            dot += q(b * L + i, h * dh + d) * k(b * L + j, h * dh + d);
          }
          s[j] = dot / std::sqrt(double(dh));
        }
        const auto p = prefshare::masked_softmax_row(s, allowed);
        for (std::size_t j = 0; j < L; ++j) {
          for (std::size_t d = 0; d < dh; ++d) {
            out(b * L + i, h * dh + d) += p[j] * v(b * L + j, h * dh + d);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace testutil
