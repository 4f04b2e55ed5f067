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

#include "prefshare/model.hpp"

#include <cmath>
#include <random>

#include "prefshare/errors.hpp"
#include "prefshare/random.hpp"

namespace prefshare {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || d_ff == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (d_head() % 2 != 0) {
    throw ConfigError("head dimension " + std::to_string(d_head()) +
                      " must be even for rotary embeddings");
  }
  if (!(rope_theta > 0) || !(norm_eps >= 0) || !(init_std >= 0)) {
    throw ConfigError("rope_theta must be > 0, norm_eps and init_std >= 0");
  }
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams<T> p;
  p.config = c;
  p.embedding = Matrix<T>(c.vocab_size, c.d_model);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.attn_norm = Matrix<T>(1, c.d_model);
    l.wq = Matrix<T>(c.d_model, c.d_model);
    l.wk = Matrix<T>(c.d_model, c.d_model);
    l.wv = Matrix<T>(c.d_model, c.d_model);
    l.wo = Matrix<T>(c.d_model, c.d_model);
    l.mlp_norm = Matrix<T>(1, c.d_model);
    l.w_gate = Matrix<T>(c.d_model, c.d_ff);
    l.w_up = Matrix<T>(c.d_model, c.d_ff);
    l.w_down = Matrix<T>(c.d_ff, c.d_model);
  }
  p.final_norm = Matrix<T>(1, c.d_model);
  p.output = Matrix<T>(c.d_model, c.vocab_size);
  return p;
}

template <typename T>
std::size_t ModelParams<T>::num_parameters() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config) {
  ModelParams<T> p = ModelParams<T>::zeros(config);
  auto rng = make_stream(config.seed, "init/params");
  std::normal_distribution<double> normal(0.0, config.init_std);
  p.for_each([&](const std::string& name, Matrix<T>& m) {
    const bool is_gain = name.ends_with("norm");
    for (auto& v : m.data) v = is_gain ? T(1) : T(normal(rng));
  });
  return p;
}

namespace {

struct KvRange {
  std::size_t begin;
  std::size_t end;
  bool full;
};

// Non-empty kv tiles for query tile `qb` of row `b`, in ascending order.
std::vector<KvRange> live_ranges(const BlockMask& mask, std::size_t b,
                                 std::size_t qb) {
  std::vector<KvRange> out;
  for (std::size_t kb = 0; kb < mask.num_kv_blocks(); ++kb) {
    const BlockClass c = mask.at(b, qb, kb);
    if (c == BlockClass::kEmpty) continue;
    out.push_back({mask.block_begin(kb), mask.block_end(kb),
                   c == BlockClass::kFull});
  }
  return out;
}

template <typename T>
void check_attention_shapes(const Matrix<T>& q, const Matrix<T>& k,
                            const Matrix<T>& v, std::size_t n_heads,
                            const BlockMask& mask) {
  const std::size_t n = mask.batch() * mask.seq_len();
  if (q.rows != n || k.rows != n || v.rows != n || !q.same_shape(k) ||
      !q.same_shape(v)) {
    throw ShapeError("attention: q/k/v must all be (B*L) x D with B*L = " +
                     std::to_string(n));
  }
  if (n_heads == 0 || q.cols % n_heads != 0) {
    throw ShapeError("attention: width not divisible by head count");
  }
}

template <typename T>
void attention_backward(const LayerCache<T>& c, const Matrix<T>& dout,
                        std::size_t n_heads, const BlockMask& mask,
                        Matrix<T>& dq, Matrix<T>& dk, Matrix<T>& dv) {
  const std::size_t B = mask.batch();
  const std::size_t L = mask.seq_len();
  const std::size_t D = c.q.cols;
  const std::size_t dh = D / n_heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::vector<T> dp(L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t qb = 0; qb < mask.num_q_blocks(); ++qb) {
      const auto ranges = live_ranges(mask, b, qb);
      for (std::size_t q = mask.block_begin(qb); q < mask.block_end(qb); ++q) {
        const std::size_t qi = b * L + q;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const T* prow = c.probs.data() + ((b * n_heads + h) * L + q) * L;
          const T* go = dout.data.data() + qi * D + h * dh;
          T s = 0;
          for (const auto& r : ranges) {
            for (std::size_t kv = r.begin; kv < r.end; ++kv) {
              if (prow[kv] == T(0)) continue;
              const T* vr = c.v.data.data() + (b * L + kv) * D + h * dh;
              T acc = 0;
              for (std::size_t j = 0; j < dh; ++j) acc += go[j] * vr[j];
              dp[kv] = acc;
              s += prow[kv] * acc;
            }
          }
          const T* qr = c.q.data.data() + qi * D + h * dh;
          T* gq = dq.data.data() + qi * D + h * dh;
          for (const auto& r : ranges) {
            for (std::size_t kv = r.begin; kv < r.end; ++kv) {
              const T p = prow[kv];
              if (p == T(0)) continue;
              const std::size_t ki = b * L + kv;
              const T ds = p * (dp[kv] - s) * scale;
              const T* kr = c.k.data.data() + ki * D + h * dh;
              T* gk = dk.data.data() + ki * D + h * dh;
              T* gv = dv.data.data() + ki * D + h * dh;
              for (std::size_t j = 0; j < dh; ++j) {
                gq[j] += ds * kr[j];
                gk[j] += ds * qr[j];
                gv[j] += p * go[j];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// Row-wise rms_norm of x with a 1 x D gain; returns per-row inverse RMS.
template <typename T>
std::vector<T> norm_rows(const Matrix<T>& x, const Matrix<T>& gain, T eps,
                         Matrix<T>& out) {
  out = Matrix<T>(x.rows, x.cols);
  std::vector<T> inv(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    inv[i] = rms_norm<T>(x.row(i), gain.row(0), eps, out.row(i));
  }
  return inv;
}

// dx = d(rms_norm)/dx applied to dy; accumulates the gain gradient.
template <typename T>
Matrix<T> norm_rows_backward(const Matrix<T>& x, const Matrix<T>& gain,
                             const std::vector<T>& inv, const Matrix<T>& dy,
                             Matrix<T>& dgain) {
  Matrix<T> dx(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    rms_norm_backward<T>(x.row(i), gain.row(0), inv[i], dy.row(i),
                         dgain.row(0), dx.row(i));
  }
  return dx;
}

}  // namespace

template <typename T>
AttentionResult<T> block_sparse_attention(const Matrix<T>& q,
                                          const Matrix<T>& k,
                                          const Matrix<T>& v,
                                          std::size_t n_heads,
                                          const BlockMask& mask) {
  check_attention_shapes(q, k, v, n_heads, mask);
  const std::size_t B = mask.batch();
  const std::size_t L = mask.seq_len();
  const std::size_t D = q.cols;
  const std::size_t dh = D / n_heads;
  const T scale = T(1) / std::sqrt(T(dh));
  AttentionResult<T> res;
  res.out = Matrix<T>(B * L, D);
  res.probs.assign(B * n_heads * L * L, T(0));
  std::vector<T> scores(L);
  std::vector<std::uint8_t> allowed(L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t qb = 0; qb < mask.num_q_blocks(); ++qb) {
      const auto ranges = live_ranges(mask, b, qb);
      if (ranges.empty()) {
        throw InvariantError("attention: query tile " + std::to_string(qb) +
                             " of row " + std::to_string(b) +
                             " sees no keys");
      }
      const std::size_t lo = ranges.front().begin;
      const std::size_t hi = ranges.back().end;
      for (std::size_t q_pos = mask.block_begin(qb);
           q_pos < mask.block_end(qb); ++q_pos) {
        std::fill(allowed.begin() + lo, allowed.begin() + hi, 0);
        for (const auto& r : ranges) {
          for (std::size_t kv = r.begin; kv < r.end; ++kv) {
            allowed[kv] = r.full || mask.allowed(b, q_pos, kv);
          }
        }
        const std::size_t qi = b * L + q_pos;
        for (std::size_t h = 0; h < n_heads; ++h) {
          const T* qr = q.data.data() + qi * D + h * dh;
          for (std::size_t kv = lo; kv < hi; ++kv) {
            if (!allowed[kv]) continue;
            const T* kr = k.data.data() + (b * L + kv) * D + h * dh;
            T acc = 0;
            for (std::size_t j = 0; j < dh; ++j) acc += qr[j] * kr[j];
            scores[kv] = acc * scale;
          }
          T* prow = res.probs.data() + ((b * n_heads + h) * L + q_pos) * L;
          masked_softmax_row<T>(
              std::span<const T>(scores.data() + lo, hi - lo),
              std::span<const std::uint8_t>(allowed.data() + lo, hi - lo),
              std::span<T>(prow + lo, hi - lo));
          T* orow = res.out.data.data() + qi * D + h * dh;
          for (std::size_t kv = lo; kv < hi; ++kv) {
            if (!allowed[kv]) continue;
            const T p = prow[kv];
            const T* vr = v.data.data() + (b * L + kv) * D + h * dh;
            for (std::size_t j = 0; j < dh; ++j) orow[j] += p * vr[j];
          }
        }
      }
    }
  }
  check_finite<T>(res.out.data, "attention");
  return res;
}

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params,
                         std::span<const TokenId> tokens,
                         std::span<const std::int32_t> positions,
                         const BlockMask& mask) {
  const ModelConfig& cfg = params.config;
  const std::size_t B = mask.batch();
  const std::size_t L = mask.seq_len();
  const std::size_t N = B * L;
  const std::size_t D = cfg.d_model;
  if (tokens.size() != N || positions.size() != N) {
    throw ShapeError("forward: expected " + std::to_string(N) +
                     " tokens and positions, got " +
                     std::to_string(tokens.size()) + " and " +
                     std::to_string(positions.size()));
  }
  const T eps = T(cfg.norm_eps);
  ForwardResult<T> res;
  ForwardCache<T>& c = res.cache;
  c.params = &params;
  c.params_version = params.version;
  c.batch = B;
  c.seq_len = L;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.positions.assign(positions.begin(), positions.end());
  c.mask = &mask;

  Matrix<T> x(N, D);
  for (std::size_t i = 0; i < N; ++i) {
    const TokenId t = tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
      throw ShapeError("forward: token id " + std::to_string(t) +
                       " outside vocabulary of " +
                       std::to_string(cfg.vocab_size));
    }
    const auto src = params.embedding.row(static_cast<std::size_t>(t));
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }

  c.layers.resize(params.layers.size());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const LayerParams<T>& lp = params.layers[li];
    LayerCache<T>& lc = c.layers[li];
    lc.x_in = x;
    lc.attn_inv_rms = norm_rows(x, lp.attn_norm, eps, lc.h_attn);
    lc.q = matmul(lc.h_attn, lp.wq);
    lc.k = matmul(lc.h_attn, lp.wk);
    lc.v = matmul(lc.h_attn, lp.wv);
    rope_apply_inplace(lc.q, positions, cfg.rope_theta, cfg.d_head());
    rope_apply_inplace(lc.k, positions, cfg.rope_theta, cfg.d_head());
    AttentionResult<T> att =
        block_sparse_attention(lc.q, lc.k, lc.v, cfg.n_heads, mask);
    lc.probs = std::move(att.probs);
    lc.attn_out = std::move(att.out);
    x = lc.x_in;
    add_inplace(x, matmul(lc.attn_out, lp.wo));
    lc.x_mid = x;
    lc.mlp_inv_rms = norm_rows(x, lp.mlp_norm, eps, lc.h_mlp);
    lc.gate = matmul(lc.h_mlp, lp.w_gate);
    lc.up = matmul(lc.h_mlp, lp.w_up);
    lc.act = Matrix<T>(N, cfg.d_ff);
    for (std::size_t i = 0; i < lc.act.data.size(); ++i) {
      lc.act.data[i] = silu(lc.gate.data[i]) * lc.up.data[i];
    }
    add_inplace(x, matmul(lc.act, lp.w_down));
  }
  c.x_final = std::move(x);
  c.final_inv_rms = norm_rows(c.x_final, params.final_norm, eps, c.h_final);
  res.logits = matmul(c.h_final, params.output);
  return res;
}

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params,
                         const CollatedBatch& batch, const BlockMask& mask) {
  if (mask.batch() != batch.batch || mask.seq_len() != batch.seq_len) {
    throw ShapeError("forward: block mask does not match the batch shape");
  }
  return forward(params, std::span<const TokenId>(batch.tokens),
                 std::span<const std::int32_t>(batch.position_ids), mask);
}

template <typename T>
ModelParams<T> backward(const ModelParams<T>& params,
                        const ForwardCache<T>& cache,
                        const Matrix<T>& dlogits) {
  if (!cache.valid()) throw InvariantError("backward: missing forward cache");
  if (cache.params != &params || cache.params_version != params.version) {
    throw InvariantError(
        "backward: forward cache is stale (params changed since forward)");
  }
  const ModelConfig& cfg = params.config;
  const std::size_t N = cache.batch * cache.seq_len;
  if (dlogits.rows != N || dlogits.cols != cfg.vocab_size) {
    throw ShapeError("backward: dlogits must be (B*L) x vocab");
  }
  ModelParams<T> g = ModelParams<T>::zeros(cfg);

  matmul_at_accumulate(cache.h_final, dlogits, g.output);
  Matrix<T> dx =
      norm_rows_backward(cache.x_final, params.final_norm, cache.final_inv_rms,
                         matmul_bt(dlogits, params.output), g.final_norm);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const LayerParams<T>& lp = params.layers[li];
    const LayerCache<T>& lc = cache.layers[li];
    LayerParams<T>& lg = g.layers[li];

    // MLP branch: x_out = x_mid + act * w_down.
    matmul_at_accumulate(lc.act, dx, lg.w_down);
    Matrix<T> dact = matmul_bt(dx, lp.w_down);
    Matrix<T> dgate(N, cfg.d_ff), dup(N, cfg.d_ff);
    for (std::size_t i = 0; i < dact.data.size(); ++i) {
      const T gv = lc.gate.data[i];
      dgate.data[i] = dact.data[i] * lc.up.data[i] * silu_grad(gv);
      dup.data[i] = dact.data[i] * silu(gv);
    }
    matmul_at_accumulate(lc.h_mlp, dgate, lg.w_gate);
    matmul_at_accumulate(lc.h_mlp, dup, lg.w_up);
    Matrix<T> dh_mlp = matmul_bt(dgate, lp.w_gate);
    add_inplace(dh_mlp, matmul_bt(dup, lp.w_up));
    Matrix<T> dx_mid = norm_rows_backward(lc.x_mid, lp.mlp_norm,
                                          lc.mlp_inv_rms, dh_mlp, lg.mlp_norm);
    add_inplace(dx_mid, dx);

    // Attention branch: x_mid = x_in + attn_out * wo.
    matmul_at_accumulate(lc.attn_out, dx_mid, lg.wo);
    Matrix<T> dattn = matmul_bt(dx_mid, lp.wo);
    Matrix<T> dq(N, cfg.d_model), dk(N, cfg.d_model), dv(N, cfg.d_model);
    attention_backward(lc, dattn, cfg.n_heads, *cache.mask, dq, dk, dv);
    rope_apply_inplace(dq, std::span<const std::int32_t>(cache.positions),
                       cfg.rope_theta, cfg.d_head(), /*inverse=*/true);
    rope_apply_inplace(dk, std::span<const std::int32_t>(cache.positions),
                       cfg.rope_theta, cfg.d_head(), /*inverse=*/true);
    matmul_at_accumulate(lc.h_attn, dq, lg.wq);
    matmul_at_accumulate(lc.h_attn, dk, lg.wk);
    matmul_at_accumulate(lc.h_attn, dv, lg.wv);
    Matrix<T> dh_attn = matmul_bt(dq, lp.wq);
    add_inplace(dh_attn, matmul_bt(dk, lp.wk));
    add_inplace(dh_attn, matmul_bt(dv, lp.wv));
    dx = norm_rows_backward(lc.x_in, lp.attn_norm, lc.attn_inv_rms, dh_attn,
                            lg.attn_norm);
    add_inplace(dx, dx_mid);
  }

  for (std::size_t i = 0; i < N; ++i) {
    auto dst = g.embedding.row(static_cast<std::size_t>(cache.tokens[i]));
    const auto src = dx.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return g;
}

#define PREFSHARE_INSTANTIATE(T)                                              \
  template struct ModelParams<T>;                                             \
  template ModelParams<T> init_params<T>(const ModelConfig&);                 \
  template AttentionResult<T> block_sparse_attention<T>(                      \
      const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, std::size_t,      \
      const BlockMask&);                                                      \
  template ForwardResult<T> forward<T>(const ModelParams<T>&,                 \
                                       std::span<const TokenId>,              \
                                       std::span<const std::int32_t>,         \
                                       const BlockMask&);                     \
  template ForwardResult<T> forward<T>(const ModelParams<T>&,                 \
                                       const CollatedBatch&,                  \
                                       const BlockMask&);                     \
  template ModelParams<T> backward<T>(const ModelParams<T>&,                  \
                                      const ForwardCache<T>&,                 \
                                      const Matrix<T>&);

PREFSHARE_INSTANTIATE(float)
PREFSHARE_INSTANTIATE(double)

#undef PREFSHARE_INSTANTIATE

}  // namespace prefshare
