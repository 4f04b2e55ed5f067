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

// Direct Preference Optimization on top of the toy model.
//
// Per sample, with log-prob sums over completion tokens:
//   margin = beta * ((pi_c - ref_c) - (pi_r - ref_r))
//   loss   = -log sigmoid(margin)
// and the batch loss is the mean over samples. Reference log-probs come from
// a frozen model and are cached by sample index.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prefshare/dataset.hpp"
#include "prefshare/layout.hpp"
#include "prefshare/model.hpp"
#include "prefshare/optim.hpp"
#include "prefshare/packing.hpp"

namespace prefshare {

// Per-sample completion log-prob sums, aligned with `samples`.
struct ResponseLogprobs {
  std::vector<std::size_t> samples;
  std::vector<double> chosen;
  std::vector<double> rejected;
};

// Sums log softmax(logits[source])[target] over every scored target of the
// batch. Throws ShapeError if logits do not match the batch and DataError if
// a sample has no scored token on either side.
template <typename T>
ResponseLogprobs completion_logprobs(const Matrix<T>& logits,
                                     const CollatedBatch& batch);

// Builds the batch's block mask, runs forward and gathers log-probs.
template <typename T>
ResponseLogprobs evaluate_logprobs(const ModelParams<T>& params,
                                   const CollatedBatch& batch,
                                   std::size_t block_size = kDefaultBlockSize);

struct DpoBatchResult {
  std::vector<std::size_t> samples;
  std::vector<double> policy_chosen, policy_rejected;
  std::vector<double> ref_chosen, ref_rejected;
  std::vector<double> margin;
  double loss = 0;
  double accuracy = 0;  // share of samples with margin > 0
  // dLoss/d(policy log-prob sum); the reference side is detached.
  std::vector<double> grad_chosen, grad_rejected;

  double mean_margin() const;
};

// Throws NonFiniteError on non-finite inputs, ConfigError on beta < 0,
// ShapeError on length mismatch or an empty batch.
DpoBatchResult dpo_loss(const std::vector<double>& policy_chosen,
                        const std::vector<double>& policy_rejected,
                        const std::vector<double>& ref_chosen,
                        const std::vector<double>& ref_rejected, double beta);

class ReferenceCache {
 public:
  void put(std::size_t sample, double chosen, double rejected);
  // Throws CacheMissError when absent.
  std::pair<double, double> get(std::size_t sample) const;
  bool contains(std::size_t sample) const { return entries_.contains(sample); }
  std::size_t size() const { return entries_.size(); }
  // Largest |difference| over samples present in both; throws DataError if
  // the key sets differ.
  double max_abs_diff(const ReferenceCache& other) const;

 private:
  std::unordered_map<std::size_t, std::pair<double, double>> entries_;
};

template <typename T>
ReferenceCache reference_logprobs(const ModelParams<T>& ref,
                                  const std::vector<CollatedBatch>& batches,
                                  std::size_t block_size = kDefaultBlockSize);

struct BatchingConfig {
  LayoutFormat format = LayoutFormat::kShared;
  bool packing = false;
  std::size_t bsz = 4;
  TokenId pad_token = kDefaultPadToken;
  std::uint64_t seed = 0;
  // Unpacked: permute samples per epoch. Packed: permute bins per epoch.
  bool shuffle = false;
};

// Unpacked batches take bsz consecutive samples (after the optional seeded
// permutation, which is the same for both formats) and pad to the longest
// row; packed batches are the FFD bins.
std::vector<CollatedBatch> epoch_batches(const Dataset& dataset,
                                         const BatchingConfig& cfg,
                                         std::size_t epoch);

// dL/dlogits for the mean DPO loss of `result` over `batch`.
template <typename T>
Matrix<T> dpo_logit_grad(const Matrix<T>& logits, const CollatedBatch& batch,
                         const DpoBatchResult& result);

template <typename T>
struct DpoEvaluation {
  DpoBatchResult result;
  ModelParams<T> grads;
};

// Forward + loss (+ backward when want_grads). Reference values come from
// `ref` for every sample of the batch.
template <typename T>
DpoEvaluation<T> dpo_evaluate(const ModelParams<T>& policy,
                              const CollatedBatch& batch,
                              const ReferenceCache& ref, double beta,
                              std::size_t block_size, bool want_grads);

enum class OptimizerKind { kAdamW, kSgd };

struct TrainConfig {
  double beta = 0.1;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  AdamWConfig adamw;
  std::size_t block_size = kDefaultBlockSize;
};

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0;
  double accuracy = 0;
  double mean_margin = 0;
  std::size_t tokens_processed = 0;  // B x L including padding
  std::size_t samples = 0;
  double seconds = 0;
  double samples_per_sec = 0;
};

std::string metrics_to_json(const StepMetrics& m);

// Owns the single mutable policy. With a reference model attached the
// reference log-probs are recomputed every step; otherwise they are read
// from the cache.
template <typename T>
class DpoTrainer {
 public:
  DpoTrainer(ModelParams<T> policy, ReferenceCache cache, TrainConfig cfg);
  DpoTrainer(ModelParams<T> policy, ModelParams<T> live_reference,
             TrainConfig cfg);

  // One forward, one loss, one backward, one optimizer update.
  StepMetrics train_step(const CollatedBatch& batch);

  const ModelParams<T>& policy() const { return policy_; }
  const AdamWState<T>& optimizer_state() const { return adam_; }
  std::size_t step() const { return step_; }
  const DpoBatchResult& last_result() const { return last_; }

  // Restores a checkpointed run.
  void restore(ModelParams<T> policy, AdamWState<T> state, std::size_t step);

 private:
  ModelParams<T> policy_;
  ReferenceCache cache_;
  std::optional<ModelParams<T>> live_ref_;
  TrainConfig cfg_;
  AdamWState<T> adam_;
  std::size_t step_ = 0;
  DpoBatchResult last_;
};

}  // namespace prefshare
