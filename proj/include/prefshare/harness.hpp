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

// Higher-level drivers shared by the command-line tool and the acceptance
// suite: epoch-cycling batch streams, the paired-vs-shared equivalence check,
// DPO training runs and the throughput bench.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prefshare/analytics.hpp"
#include "prefshare/dataset.hpp"
#include "prefshare/dpo.hpp"
#include "prefshare/model.hpp"

namespace prefshare {

// Serves the batch for any global step; step k belongs to epoch
// k / batches_per_epoch. Only the current epoch is kept in memory.
class BatchStream {
 public:
  BatchStream(const Dataset& dataset, BatchingConfig cfg);
  std::size_t batches_per_epoch() const { return per_epoch_; }
  const CollatedBatch& at(std::size_t step);

 private:
  const Dataset* dataset_;
  BatchingConfig cfg_;
  std::size_t per_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::vector<CollatedBatch> batches_;
};

// Reference log-probs for every sample, computed with one epoch of the given
// batching (order does not matter for the result).
template <typename T>
ReferenceCache build_reference_cache(const ModelParams<T>& ref,
                                     const Dataset& dataset,
                                     const BatchingConfig& batching,
                                     std::size_t block_size);

struct VerifyConfig {
  ModelConfig model;  // seed is the base; model m uses a derived stream
  std::size_t num_models = 4;
  std::size_t num_samples = 16;  // first K samples of the dataset
  std::size_t bsz = 2;
  std::size_t block_size = kDefaultBlockSize;
  bool packing = true;  // also compare the packed layouts
  // Negative control: run shared rows under a plain causal mask.
  bool corrupt_mask = false;
};

struct VerifyArm {
  std::string name;  // e.g. "shared/packed"
  double max_abs_dev = 0;  // against paired/unpacked
};

struct VerifyReport {
  std::vector<VerifyArm> arms;
  double max_abs_dev = 0;
  double tolerance = 0;
  std::size_t models = 0;
  std::size_t samples = 0;
  bool passed = false;

  std::string to_json() const;
};

double equivalence_tolerance(Precision p);

VerifyReport verify_equivalence(const Dataset& dataset,
                                const VerifyConfig& cfg);

struct TrainRunConfig {
  ModelConfig model;
  BatchingConfig batching;
  TrainConfig train;
  std::size_t steps = 50;
};

// Fresh run: policy and reference both start from init_params(model).
// `on_step` sees every step's metrics as they are produced.
template <typename T>
std::vector<StepMetrics> run_training(
    const Dataset& dataset, const TrainRunConfig& cfg,
    const std::function<void(const StepMetrics&)>& on_step = {});

struct BenchConfig {
  ModelConfig model;
  BatchingConfig batching;
  TrainConfig train;
  std::size_t steps = 8;
  std::size_t warmup = 3;
  // Include a reference forward in every timed step instead of reading the
  // precomputed cache.
  bool live_reference = false;
};

// Times `steps` training steps and reports the median samples/sec over the
// steps after the warmup. Throws ConfigError if steps <= warmup.
ThroughputEntry run_bench(const Dataset& dataset, const BenchConfig& cfg);

std::string bench_name(const BatchingConfig& batching);

}  // namespace prefshare
