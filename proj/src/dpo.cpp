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

#include "prefshare/dpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/random.hpp"

namespace prefshare {

namespace {

double log_sigmoid(double x) {
  // log(1 / (1 + e^-x)) without overflow for large |x|.
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
void check_logits(const Matrix<T>& logits, const CollatedBatch& batch) {
  if (logits.rows != batch.num_tokens()) {
    throw ShapeError("logits have " + std::to_string(logits.rows) +
                     " rows, batch has " + std::to_string(batch.num_tokens()) +
                     " tokens");
  }
  for (const auto& t : batch.targets) {
    if (t.target < 0 || static_cast<std::size_t>(t.target) >= logits.cols) {
      throw ShapeError("target token " + std::to_string(t.target) +
                       " outside the logit vocabulary");
    }
  }
}

}  // namespace

template <typename T>
ResponseLogprobs completion_logprobs(const Matrix<T>& logits,
                                     const CollatedBatch& batch) {
  check_logits(logits, batch);
  ResponseLogprobs out;
  out.samples = batch.samples;
  out.chosen.assign(batch.samples.size(), 0.0);
  out.rejected.assign(batch.samples.size(), 0.0);
  std::vector<std::size_t> n_chosen(batch.samples.size(), 0);
  std::vector<std::size_t> n_rejected(batch.samples.size(), 0);
  std::unordered_map<std::size_t, T> lse;
  for (const auto& t : batch.targets) {
    auto it = lse.find(t.flat_source);
    if (it == lse.end()) {
      it = lse.emplace(t.flat_source, log_sum_exp<T>(logits.row(t.flat_source)))
               .first;
    }
    const T lp = logits(t.flat_source, static_cast<std::size_t>(t.target)) -
                 it->second;
    if (t.branch == Branch::kChosen) {
      out.chosen[t.slot] += double(lp);
      ++n_chosen[t.slot];
    } else {
      out.rejected[t.slot] += double(lp);
      ++n_rejected[t.slot];
    }
  }
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    if (n_chosen[s] == 0 || n_rejected[s] == 0) {
      throw DataError("sample " + std::to_string(batch.samples[s]) +
                      " has no scored completion token");
    }
  }
  return out;
}

template <typename T>
ResponseLogprobs evaluate_logprobs(const ModelParams<T>& params,
                                   const CollatedBatch& batch,
                                   std::size_t block_size) {
  const BlockMask mask = build_batch_block_mask(batch, block_size);
  const ForwardResult<T> fwd = forward(params, batch, mask);
  return completion_logprobs(fwd.logits, batch);
}

double DpoBatchResult::mean_margin() const {
  if (margin.empty()) return 0;
  return std::accumulate(margin.begin(), margin.end(), 0.0) /
         double(margin.size());
}

DpoBatchResult dpo_loss(const std::vector<double>& pc,
                        const std::vector<double>& pr,
                        const std::vector<double>& rc,
                        const std::vector<double>& rr, double beta) {
  const std::size_t n = pc.size();
  if (n == 0 || pr.size() != n || rc.size() != n || rr.size() != n) {
    throw ShapeError("dpo_loss: inputs must be non-empty and equal length");
  }
  if (!(beta >= 0) || !std::isfinite(beta)) {
    throw ConfigError("dpo_loss: beta must be finite and >= 0");
  }
  for (const auto* v : {&pc, &pr, &rc, &rr}) {
    check_finite<double>(*v, "dpo_loss input");
  }
  DpoBatchResult r;
  r.policy_chosen = pc;
  r.policy_rejected = pr;
  r.ref_chosen = rc;
  r.ref_rejected = rr;
  r.margin.resize(n);
  r.grad_chosen.resize(n);
  r.grad_rejected.resize(n);
  double total = 0;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = beta * ((pc[i] - rc[i]) - (pr[i] - rr[i]));
    r.margin[i] = m;
    total += -log_sigmoid(m);
    if (m > 0) ++wins;
    // d(-log sigmoid(m))/dm = -sigmoid(-m).
    const double dm = -sigmoid(-m) / double(n);
    r.grad_chosen[i] = dm * beta;
    r.grad_rejected[i] = -dm * beta;
  }
  r.loss = total / double(n);
  r.accuracy = double(wins) / double(n);
  if (!std::isfinite(r.loss)) throw NonFiniteError("dpo_loss: loss overflow");
  return r;
}

void ReferenceCache::put(std::size_t sample, double chosen, double rejected) {
  entries_[sample] = {chosen, rejected};
}

std::pair<double, double> ReferenceCache::get(std::size_t sample) const {
  auto it = entries_.find(sample);
  if (it == entries_.end()) throw CacheMissError(sample);
  return it->second;
}

double ReferenceCache::max_abs_diff(const ReferenceCache& other) const {
  if (size() != other.size()) {
    throw DataError("reference caches cover different samples");
  }
  double worst = 0;
  for (const auto& [sample, v] : entries_) {
    const auto w = other.get(sample);
    worst = std::max({worst, std::abs(v.first - w.first),
                      std::abs(v.second - w.second)});
  }
  return worst;
}

template <typename T>
ReferenceCache reference_logprobs(const ModelParams<T>& ref,
                                  const std::vector<CollatedBatch>& batches,
                                  std::size_t block_size) {
  ReferenceCache cache;
  for (const auto& batch : batches) {
    const ResponseLogprobs lp = evaluate_logprobs(ref, batch, block_size);
    for (std::size_t i = 0; i < lp.samples.size(); ++i) {
      cache.put(lp.samples[i], lp.chosen[i], lp.rejected[i]);
    }
  }
  return cache;
}

std::vector<CollatedBatch> epoch_batches(const Dataset& dataset,
                                         const BatchingConfig& cfg,
                                         std::size_t epoch) {
  if (dataset.empty()) throw DataError("epoch_batches: empty dataset");
  if (cfg.bsz == 0) throw ConfigError("bsz must be >= 1");
  std::vector<CollatedBatch> out;
  if (cfg.packing) {
    PackPlan plan = plan_dataset(dataset, cfg.format, cfg.bsz);
    if (cfg.shuffle) plan = shuffle_bins(plan, cfg.seed, epoch);
    for (std::size_t b = 0; b < plan.bins.size(); ++b) {
      out.push_back(
          materialize_bin(plan, b, dataset, cfg.format, cfg.pad_token));
    }
    return out;
  }
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle) {
    auto rng = make_stream(cfg.seed, "data/shuffle/epoch" + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  for (std::size_t start = 0; start < order.size(); start += cfg.bsz) {
    const std::size_t stop = std::min(order.size(), start + cfg.bsz);
    std::vector<SequenceLayout> rows;
    for (std::size_t i = start; i < stop; ++i) {
      const std::size_t idx = order[i];
      if (cfg.format == LayoutFormat::kPaired) {
        auto pair = to_paired(dataset[idx], idx);
        rows.push_back(std::move(pair[0]));
        rows.push_back(std::move(pair[1]));
      } else {
        rows.push_back(to_shared(dataset[idx], idx));
      }
    }
    std::size_t longest = 0;
    for (const auto& r : rows) longest = std::max(longest, r.size());
    out.push_back(collate(rows, cfg.pad_token, longest));
  }
  return out;
}

template <typename T>
Matrix<T> dpo_logit_grad(const Matrix<T>& logits, const CollatedBatch& batch,
                         const DpoBatchResult& result) {
  check_logits(logits, batch);
  if (result.samples != batch.samples) {
    throw ShapeError("dpo_logit_grad: result does not belong to this batch");
  }
  Matrix<T> grad(logits.rows, logits.cols);
  const std::size_t V = logits.cols;
  std::unordered_map<std::size_t, std::vector<T>> softmax;
  for (const auto& t : batch.targets) {
    const double w = t.branch == Branch::kChosen
                         ? result.grad_chosen[t.slot]
                         : result.grad_rejected[t.slot];
    if (w == 0.0) continue;
    auto it = softmax.find(t.flat_source);
    if (it == softmax.end()) {
      const auto row = logits.row(t.flat_source);
      const T lse = log_sum_exp<T>(row);
      std::vector<T> p(V);
      for (std::size_t j = 0; j < V; ++j) p[j] = std::exp(row[j] - lse);
      it = softmax.emplace(t.flat_source, std::move(p)).first;
    }
    // d(log p[target])/dlogits = onehot(target) - softmax.
    auto g = grad.row(t.flat_source);
    const T wt = T(w);
    for (std::size_t j = 0; j < V; ++j) g[j] -= wt * it->second[j];
    g[static_cast<std::size_t>(t.target)] += wt;
  }
  return grad;
}

template <typename T>
DpoEvaluation<T> dpo_evaluate(const ModelParams<T>& policy,
                              const CollatedBatch& batch,
                              const ReferenceCache& ref, double beta,
                              std::size_t block_size, bool want_grads) {
  const BlockMask mask = build_batch_block_mask(batch, block_size);
  ForwardResult<T> fwd = forward(policy, batch, mask);
  const ResponseLogprobs lp = completion_logprobs(fwd.logits, batch);
  std::vector<double> rc, rr;
  for (std::size_t s : lp.samples) {
    const auto [c, r] = ref.get(s);
    rc.push_back(c);
    rr.push_back(r);
  }
  DpoEvaluation<T> ev;
  ev.result = dpo_loss(lp.chosen, lp.rejected, rc, rr, beta);
  ev.result.samples = lp.samples;
  if (want_grads) {
    const Matrix<T> dlogits = dpo_logit_grad(fwd.logits, batch, ev.result);
    ev.grads = backward(policy, fwd.cache, dlogits);
  }
  return ev;
}

std::string metrics_to_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["accuracy"] = m.accuracy;
  j["mean_margin"] = m.mean_margin;
  j["tokens_processed"] = m.tokens_processed;
  j["samples_per_sec"] = m.samples_per_sec;
  return j.dump();
}

template <typename T>
DpoTrainer<T>::DpoTrainer(ModelParams<T> policy, ReferenceCache cache,
                          TrainConfig cfg)
    : policy_(std::move(policy)),
      cache_(std::move(cache)),
      cfg_(cfg),
      adam_(AdamWState<T>::zeros(policy_.config)) {}

template <typename T>
DpoTrainer<T>::DpoTrainer(ModelParams<T> policy, ModelParams<T> live_reference,
                          TrainConfig cfg)
    : policy_(std::move(policy)),
      live_ref_(std::move(live_reference)),
      cfg_(cfg),
      adam_(AdamWState<T>::zeros(policy_.config)) {}

template <typename T>
StepMetrics DpoTrainer<T>::train_step(const CollatedBatch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  ReferenceCache step_ref;
  const ReferenceCache* ref = &cache_;
  if (live_ref_) {
    const ResponseLogprobs lp =
        evaluate_logprobs(*live_ref_, batch, cfg_.block_size);
    for (std::size_t i = 0; i < lp.samples.size(); ++i) {
      step_ref.put(lp.samples[i], lp.chosen[i], lp.rejected[i]);
    }
    ref = &step_ref;
  }
  DpoEvaluation<T> ev = dpo_evaluate(policy_, batch, *ref, cfg_.beta,
                                     cfg_.block_size, /*want_grads=*/true);
  if (cfg_.optimizer == OptimizerKind::kAdamW) {
    adamw_step(policy_, ev.grads, adam_, cfg_.lr, cfg_.adamw);
  } else {
    sgd_step(policy_, ev.grads, cfg_.lr);
  }
  const auto t1 = std::chrono::steady_clock::now();
  ++step_;
  StepMetrics m;
  m.step = step_;
  m.loss = ev.result.loss;
  m.accuracy = ev.result.accuracy;
  m.mean_margin = ev.result.mean_margin();
  m.tokens_processed = batch.num_tokens();
  m.samples = batch.samples.size();
  m.seconds = std::chrono::duration<double>(t1 - t0).count();
  m.samples_per_sec = m.seconds > 0 ? double(m.samples) / m.seconds : 0.0;
  last_ = std::move(ev.result);
  return m;
}

template <typename T>
void DpoTrainer<T>::restore(ModelParams<T> policy, AdamWState<T> state,
                            std::size_t step) {
  if (!(policy.config == policy_.config)) {
    throw ConfigError("restore: checkpoint config differs from trainer");
  }
  const std::uint64_t version = policy_.version + 1;
  policy_ = std::move(policy);
  policy_.version = version;
  adam_ = std::move(state);
  step_ = step;
}

#define PREFSHARE_INSTANTIATE(T)                                              \
  template ResponseLogprobs completion_logprobs<T>(const Matrix<T>&,          \
                                                   const CollatedBatch&);     \
  template ResponseLogprobs evaluate_logprobs<T>(                             \
      const ModelParams<T>&, const CollatedBatch&, std::size_t);              \
  template ReferenceCache reference_logprobs<T>(                              \
      const ModelParams<T>&, const std::vector<CollatedBatch>&, std::size_t); \
  template Matrix<T> dpo_logit_grad<T>(const Matrix<T>&,                      \
                                       const CollatedBatch&,                  \
                                       const DpoBatchResult&);                \
  template DpoEvaluation<T> dpo_evaluate<T>(                                  \
      const ModelParams<T>&, const CollatedBatch&, const ReferenceCache&,     \
      double, std::size_t, bool);                                             \
  template class DpoTrainer<T>;

PREFSHARE_INSTANTIATE(float)
PREFSHARE_INSTANTIATE(double)

#undef PREFSHARE_INSTANTIATE

}  // namespace prefshare
