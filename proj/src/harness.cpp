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

#include "prefshare/harness.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "json.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/random.hpp"

namespace prefshare {

BatchStream::BatchStream(const Dataset& dataset, BatchingConfig cfg)
    : dataset_(&dataset), cfg_(cfg) {
  batches_ = epoch_batches(dataset, cfg_, 0);
  per_epoch_ = batches_.size();
}

const CollatedBatch& BatchStream::at(std::size_t step) {
  const std::size_t epoch = step / per_epoch_;
  if (epoch != epoch_) {
    batches_ = epoch_batches(*dataset_, cfg_, epoch);
    epoch_ = epoch;
  }
  return batches_[step % per_epoch_];
}

template <typename T>
ReferenceCache build_reference_cache(const ModelParams<T>& ref,
                                     const Dataset& dataset,
                                     const BatchingConfig& batching,
                                     std::size_t block_size) {
  BatchingConfig plain = batching;
  plain.shuffle = false;
  return reference_logprobs(ref, epoch_batches(dataset, plain, 0), block_size);
}

double equivalence_tolerance(Precision p) {
  return p == Precision::kF64 ? 1e-10 : 1e-4;
}

std::string VerifyReport::to_json() const {
  nlohmann::json j;
  j["models"] = models;
  j["samples"] = samples;
  j["tolerance"] = tolerance;
  j["max_abs_dev"] = max_abs_dev;
  j["passed"] = passed;
  j["arms"] = nlohmann::json::array();
  for (const auto& a : arms) {
    j["arms"].push_back({{"name", a.name}, {"max_abs_dev", a.max_abs_dev}});
  }
  return j.dump(2);
}

namespace {

template <typename T>
ReferenceCache arm_logprobs(const ModelParams<T>& params,
                            const std::vector<CollatedBatch>& batches,
                            std::size_t block_size, bool causal_only) {
  if (!causal_only) return reference_logprobs(params, batches, block_size);
  ReferenceCache out;
  for (const auto& batch : batches) {
    const BlockMask mask =
        build_block_mask(causal, batch.batch, batch.seq_len, block_size);
    const auto fwd = forward(params, batch, mask);
    const ResponseLogprobs lp = completion_logprobs(fwd.logits, batch);
    for (std::size_t i = 0; i < lp.samples.size(); ++i) {
      out.put(lp.samples[i], lp.chosen[i], lp.rejected[i]);
    }
  }
  return out;
}

template <typename T>
VerifyReport verify_impl(const Dataset& subset, const VerifyConfig& cfg) {
  struct Arm {
    LayoutFormat format;
    bool packed;
  };
  std::vector<Arm> arms = {{LayoutFormat::kShared, false}};
  if (cfg.packing) {
    arms.push_back({LayoutFormat::kPaired, true});
    arms.push_back({LayoutFormat::kShared, true});
  }
  VerifyReport report;
  report.models = cfg.num_models;
  report.samples = subset.size();
  report.tolerance = equivalence_tolerance(cfg.model.precision);
  for (const auto& a : arms) {
    report.arms.push_back(
        {bench_name({a.format, a.packed, cfg.bsz, kDefaultPadToken, 0, false}),
         0.0});
  }
  for (std::size_t m = 0; m < cfg.num_models; ++m) {
    ModelConfig mc = cfg.model;
    mc.seed = stream_seed(cfg.model.seed, "verify/model" + std::to_string(m));
    const ModelParams<T> params = init_params<T>(mc);
    BatchingConfig base{LayoutFormat::kPaired, false, cfg.bsz,
                        kDefaultPadToken, 0, false};
    const ReferenceCache baseline = reference_logprobs(
        params, epoch_batches(subset, base, 0), cfg.block_size);
    for (std::size_t i = 0; i < arms.size(); ++i) {
      BatchingConfig bc = base;
      bc.format = arms[i].format;
      bc.packing = arms[i].packed;
      const bool corrupt =
          cfg.corrupt_mask && arms[i].format == LayoutFormat::kShared;
      const ReferenceCache got = arm_logprobs(
          params, epoch_batches(subset, bc, 0), cfg.block_size, corrupt);
      const double dev = got.max_abs_diff(baseline);
      report.arms[i].max_abs_dev = std::max(report.arms[i].max_abs_dev, dev);
    }
  }
  for (const auto& a : report.arms) {
    report.max_abs_dev = std::max(report.max_abs_dev, a.max_abs_dev);
  }
  report.passed = std::isfinite(report.max_abs_dev) &&
                  report.max_abs_dev <= report.tolerance;
  return report;
}

}  // namespace

VerifyReport verify_equivalence(const Dataset& dataset,
                                const VerifyConfig& cfg) {
  if (dataset.empty()) throw DataError("verify: empty dataset");
  if (cfg.num_models == 0) throw ConfigError("verify: need at least one model");
  cfg.model.validate();
  Dataset subset;
  const std::size_t k =
      cfg.num_samples == 0 ? dataset.size()
                           : std::min(cfg.num_samples, dataset.size());
  subset.samples.assign(dataset.samples.begin(), dataset.samples.begin() + k);
  if (static_cast<std::size_t>(subset.max_token()) >= cfg.model.vocab_size) {
    throw ConfigError("verify: dataset token ids exceed the model vocabulary");
  }
  return cfg.model.precision == Precision::kF64
             ? verify_impl<double>(subset, cfg)
             : verify_impl<float>(subset, cfg);
}

template <typename T>
std::vector<StepMetrics> run_training(
    const Dataset& dataset, const TrainRunConfig& cfg,
    const std::function<void(const StepMetrics&)>& on_step) {
  cfg.model.validate();
  ModelParams<T> policy = init_params<T>(cfg.model);
  ReferenceCache cache = build_reference_cache(policy, dataset, cfg.batching,
                                               cfg.train.block_size);
  DpoTrainer<T> trainer(std::move(policy), std::move(cache), cfg.train);
  BatchStream stream(dataset, cfg.batching);
  std::vector<StepMetrics> out;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    out.push_back(trainer.train_step(stream.at(s)));
    if (on_step) on_step(out.back());
  }
  return out;
}

std::string bench_name(const BatchingConfig& batching) {
  return to_string(batching.format) +
         (batching.packing ? "/packed" : "/unpacked");
}

namespace {

template <typename T>
ThroughputEntry bench_impl(const Dataset& dataset, const BenchConfig& cfg) {
  ModelParams<T> policy = init_params<T>(cfg.model);
  std::unique_ptr<DpoTrainer<T>> trainer;
  if (cfg.live_reference) {
    ModelParams<T> ref = policy;
    trainer = std::make_unique<DpoTrainer<T>>(std::move(policy),
                                              std::move(ref), cfg.train);
  } else {
    ReferenceCache cache = build_reference_cache(policy, dataset, cfg.batching,
                                                 cfg.train.block_size);
    trainer = std::make_unique<DpoTrainer<T>>(std::move(policy),
                                              std::move(cache), cfg.train);
  }
  BatchStream stream(dataset, cfg.batching);
  std::vector<double> rates;
  double tokens = 0;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const CollatedBatch& batch = stream.at(s);
    const StepMetrics m = trainer->train_step(batch);
    if (s >= cfg.warmup) {
      rates.push_back(m.samples_per_sec);
      tokens += double(m.tokens_processed);
    }
  }
  ThroughputEntry e;
  e.name = bench_name(cfg.batching);
  e.samples_per_sec = median(rates);
  e.measured_steps = rates.size();
  e.dataset_samples = dataset.size();
  e.tokens_per_step = tokens / double(rates.size());
  return e;
}

}  // namespace

ThroughputEntry run_bench(const Dataset& dataset, const BenchConfig& cfg) {
  if (cfg.steps <= cfg.warmup) {
    throw ConfigError("bench: steps (" + std::to_string(cfg.steps) +
                      ") must exceed the " + std::to_string(cfg.warmup) +
                      " warmup steps");
  }
  if (dataset.empty()) throw DataError("bench: empty dataset");
  cfg.model.validate();
  return cfg.model.precision == Precision::kF64
             ? bench_impl<double>(dataset, cfg)
             : bench_impl<float>(dataset, cfg);
}

template ReferenceCache build_reference_cache<float>(
    const ModelParams<float>&, const Dataset&, const BatchingConfig&,
    std::size_t);
template ReferenceCache build_reference_cache<double>(
    const ModelParams<double>&, const Dataset&, const BatchingConfig&,
    std::size_t);
template std::vector<StepMetrics> run_training<float>(
    const Dataset&, const TrainRunConfig&,
    const std::function<void(const StepMetrics&)>&);
template std::vector<StepMetrics> run_training<double>(
    const Dataset&, const TrainRunConfig&,
    const std::function<void(const StepMetrics&)>&);

}  // namespace prefshare
