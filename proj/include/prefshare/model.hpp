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

// A small decoder-only transformer with a hand-written backward pass.
//
//   embedding
//   n_layers x [ x += Wo * attn(rope(Wq h), rope(Wk h), Wv h), h = rms(x)
//                x += Wdown (silu(Wgate h) * Wup h),          h = rms(x) ]
//   logits = Wout * rms(x)
//
// Attention walks the BlockMask tile by tile: Empty tiles are skipped,
// Partial tiles check the predicate per element, Full tiles do not.
// Activations are row-vectors; every weight maps y = x * W.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefshare/layout.hpp"
#include "prefshare/masks.hpp"
#include "prefshare/numerics.hpp"

namespace prefshare {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  double rope_theta = 10000.0;
  double norm_eps = 1e-6;
  double init_std = 0.02;
  Precision precision = Precision::kF64;
  std::uint64_t seed = 0;

  std::size_t d_head() const { return n_heads == 0 ? 0 : d_model / n_heads; }
  // Throws ConfigError on zero sizes, d_model % n_heads != 0 or odd d_head.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Matrix<T> attn_norm;  // 1 x D
  Matrix<T> wq, wk, wv, wo;  // D x D
  Matrix<T> mlp_norm;  // 1 x D
  Matrix<T> w_gate, w_up;  // D x F
  Matrix<T> w_down;  // F x D
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Matrix<T> embedding;  // V x D
  std::vector<LayerParams<T>> layers;
  Matrix<T> final_norm;  // 1 x D
  Matrix<T> output;  // D x V
  // Bumped by every in-place update so stale forward caches are detected.
  std::uint64_t version = 0;

  // Same shapes as `config` describes, all entries zero.
  static ModelParams zeros(const ModelConfig& config);

  template <typename F>
  void for_each(F&& f) {
    f(std::string("embedding"), embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& l = layers[i];
      f(p + "attn_norm", l.attn_norm);
      f(p + "wq", l.wq);
      f(p + "wk", l.wk);
      f(p + "wv", l.wv);
      f(p + "wo", l.wo);
      f(p + "mlp_norm", l.mlp_norm);
      f(p + "w_gate", l.w_gate);
      f(p + "w_up", l.w_up);
      f(p + "w_down", l.w_down);
    }
    f(std::string("final_norm"), final_norm);
    f(std::string("output"), output);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& name, Matrix<T>& m) {
          f(name, static_cast<const Matrix<T>&>(m));
        });
  }

  std::size_t num_parameters() const;
};

// Normal(0, init_std) projections and embeddings, unit norm gains, all drawn
// from the "init/params" stream of config.seed.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config);

template <typename T>
struct AttentionResult {
  Matrix<T> out;  // (B*L) x D
  // Softmax probabilities, B x H x L x L, zero wherever the mask blocks.
  std::vector<T> probs;
};

// Multi-head attention over rows laid out as (b * L + t). q and k must
// already carry rotary positions.
template <typename T>
AttentionResult<T> block_sparse_attention(const Matrix<T>& q,
                                          const Matrix<T>& k,
                                          const Matrix<T>& v,
                                          std::size_t n_heads,
                                          const BlockMask& mask);

template <typename T>
struct LayerCache {
  Matrix<T> x_in;  // residual stream entering the layer
  std::vector<T> attn_inv_rms;
  Matrix<T> h_attn;  // normalized input to Q/K/V
  Matrix<T> q, k, v;  // q, k after rotary
  std::vector<T> probs;
  Matrix<T> attn_out;  // before Wo
  Matrix<T> x_mid;  // after attention residual
  std::vector<T> mlp_inv_rms;
  Matrix<T> h_mlp;
  Matrix<T> gate, up, act;
};

template <typename T>
struct ForwardCache {
  const ModelParams<T>* params = nullptr;
  std::uint64_t params_version = 0;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> positions;
  const BlockMask* mask = nullptr;
  std::vector<LayerCache<T>> layers;
  Matrix<T> x_final;
  std::vector<T> final_inv_rms;
  Matrix<T> h_final;

  bool valid() const { return params != nullptr; }
};

template <typename T>
struct ForwardResult {
  Matrix<T> logits;  // (B*L) x V
  ForwardCache<T> cache;
};

// tokens and positions are B*L long, B and L taken from `mask`. The mask
// must outlive the returned cache.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params,
                         std::span<const TokenId> tokens,
                         std::span<const std::int32_t> positions,
                         const BlockMask& mask);

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params,
                         const CollatedBatch& batch, const BlockMask& mask);

// Gradients of a scalar loss given dL/dlogits. Throws InvariantError when the
// cache is missing or was produced with different (or since-updated) params.
template <typename T>
ModelParams<T> backward(const ModelParams<T>& params,
                        const ForwardCache<T>& cache,
                        const Matrix<T>& dlogits);

}  // namespace prefshare
