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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "prefshare/analytics.hpp"
#include "prefshare/dpo.hpp"
#include "prefshare/harness.hpp"
#include "prefshare/packing.hpp"
#include "test_util.hpp"

using namespace prefshare;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0,
                double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Rows for one arm: each sample alone (unpacked) or FFD bins of at most
// `capacity` tokens (packed), each batch collated to its own length.
std::vector<CollatedBatch> arm_batches(const Dataset& ds, LayoutFormat format,
                                       bool packed, std::size_t capacity) {
  std::vector<CollatedBatch> out;
  if (!packed) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      std::vector<SequenceLayout> rows;
      if (format == LayoutFormat::kPaired) {
        auto pr = to_paired(ds[i], i);
        rows = {pr[0], pr[1]};
      } else {
        rows = {to_shared(ds[i], i)};
      }
      std::size_t len = 0;
      for (const auto& r : rows) len = std::max(len, r.size());
      out.push_back(collate(rows, kDefaultPadToken, len));
    }
    return out;
  }
  std::vector<std::size_t> lengths;
  for (const auto& u : pack_units(ds, format)) lengths.push_back(u.length);
  const PackPlan plan = ffd_pack(lengths, capacity);
  for (const auto& bin : plan.bins) {
    std::vector<const PreferenceSample*> ptrs;
    for (std::size_t i : bin) ptrs.push_back(&ds[i]);
    const std::vector<SequenceLayout> rows = {
        to_packed_row(ptrs, bin, row_format(format, true))};
    out.push_back(collate(rows, kDefaultPadToken, rows[0].size()));
  }
  return out;
}

template <typename T>
double max_arm_deviation(const ModelParams<T>& params, const Dataset& ds,
                         std::size_t block_size, std::size_t capacity) {
  const ReferenceCache base = reference_logprobs(
      params, arm_batches(ds, LayoutFormat::kPaired, false, capacity),
      block_size);
  double worst = 0;
  for (auto f : {LayoutFormat::kShared, LayoutFormat::kPaired}) {
    for (bool packed : {false, true}) {
      if (f == LayoutFormat::kPaired && !packed) continue;
      const ReferenceCache got = reference_logprobs(
          params, arm_batches(ds, f, packed, capacity), block_size);
      worst = std::max(worst, got.max_abs_diff(base));
    }
  }
  return worst;
}

Outcome criterion_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20261018);
  const std::size_t kModels = 400, kPerModel = 4, kCapacity = 128;
  double worst64 = 0, worst32 = 0;
  std::size_t instances = 0;
  for (std::size_t m = 0; m < kModels; ++m) {
    ModelConfig cfg;
    cfg.vocab_size = 8 + rng() % 57;  // 8..64
    cfg.n_heads = 1 + rng() % 2;
    cfg.d_model = cfg.n_heads * (2 + 2 * (rng() % 4));
    cfg.n_layers = 1 + rng() % 3;
    cfg.d_ff = 4 + rng() % 29;
    cfg.init_std = 0.05 + 0.3 * double(rng() % 100) / 100.0;
    cfg.seed = rng();
    const std::size_t block = std::vector<std::size_t>{4, 16, 128}[rng() % 3];
    Dataset ds;
    // every fourth model gets one long sample; paired units stay <= 128
    const bool long_form = m % 4 == 0;
    for (std::size_t k = 0; k < (long_form ? 1 : kPerModel); ++k) {
      ds.samples.push_back(testutil::random_sample(
          rng, long_form ? 50 : 12, long_form ? 14 : 6, int(cfg.vocab_size), 1));
    }
    instances += ds.size();
    cfg.precision = Precision::kF64;
    worst64 = std::max(worst64, max_arm_deviation(init_params<double>(cfg), ds,
                                                  block, kCapacity));
    cfg.precision = Precision::kF32;
    worst32 = std::max(worst32, max_arm_deviation(init_params<float>(cfg), ds,
                                                  block, kCapacity));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = instances >= 1000 && worst64 <= 1e-10 && worst32 <= 1e-4 &&
           secs < 300;
  o.detail = std::to_string(instances) +
             " (model, sample) instances x 4 layouts; max |dev| f64 " +
             fmt("%.3g, f32 %.3g; %.1fs", worst64, worst32, secs);
  return o;
}

Outcome criterion_training_parity() {
  const auto t0 = Clock::now();
  SyntheticConfig synth;
  synth.num_samples = 64;
  synth.max_prompt = 24;
  synth.max_completion = 8;
  synth.vocab_size = 64;
  synth.seed = 7;
  const Dataset ds = synthetic_dataset(synth);
  TrainRunConfig cfg;
  cfg.model.vocab_size = 64;
  cfg.model.d_model = 32;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 4;
  cfg.model.d_ff = 64;
  cfg.model.seed = 7;
  cfg.steps = 50;
  cfg.train.lr = 5e-3;
  cfg.train.beta = 0.1;
  cfg.batching.bsz = 4;
  cfg.batching.seed = 7;
  cfg.batching.shuffle = true;
  cfg.batching.format = LayoutFormat::kPaired;
  const auto paired = run_training<double>(ds, cfg);
  cfg.batching.format = LayoutFormat::kShared;
  const auto shared = run_training<double>(ds, cfg);
  double worst = 0;
  for (std::size_t i = 0; i < paired.size(); ++i) {
    worst = std::max(worst, std::abs(paired[i].loss - shared[i].loss));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = paired.size() == 50 && shared.size() == 50 && worst < 1e-8 &&
           secs < 120;
  o.detail = fmt("50 steps, max |loss diff| %.3g; loss %.5f -> %.5f; %.1fs",
                 worst, paired.front().loss, paired.back().loss, secs);
  return o;
}

Outcome criterion_mask_oracle() {
  std::mt19937_64 rng(33);
  std::size_t pairs = 0, mismatches = 0, isolation_failures = 0;
  double worst_attn = 0;
  const FormatTag tags[] = {FormatTag::kPairedRow, FormatTag::kSharedRow,
                            FormatTag::kPackedPairedRow,
                            FormatTag::kPackedSharedRow};
  for (int trial = 0; trial < 200; ++trial) {
    const FormatTag tag = tags[trial % 4];
    std::vector<PreferenceSample> samples;
    const std::size_t n = is_packed(tag) ? 1 + rng() % 3 : 1 + rng() % 3;
    for (std::size_t i = 0; i < n; ++i) {
      samples.push_back(testutil::random_sample(rng, 6, 4, 32));
    }
    std::vector<SequenceLayout> rows;
    if (tag == FormatTag::kPairedRow) {
      for (std::size_t i = 0; i < n; ++i) {
        auto pr = to_paired(samples[i], i);
        rows.push_back(pr[0]);
        rows.push_back(pr[1]);
      }
    } else if (tag == FormatTag::kSharedRow) {
      for (std::size_t i = 0; i < n; ++i) rows.push_back(to_shared(samples[i], i));
    } else {
      std::vector<const PreferenceSample*> ptrs;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        ptrs.push_back(&samples[i]);
        idx.push_back(i);
      }
      rows.push_back(to_packed_row(ptrs, idx, tag));
    }
    std::size_t L = 0;
    for (const auto& r : rows) L = std::max(L, r.size());
    L = std::min<std::size_t>(64, L + rng() % 4);
    const CollatedBatch batch = collate(rows, kDefaultPadToken, L);
    const MaskFn fn = batch.mask_fn();
    const std::size_t bs = 1 + rng() % 16;
    const BlockMask mask = build_block_mask(fn, batch.batch, L, bs);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      for (std::size_t q = 0; q < L; ++q) {
        for (std::size_t kv = 0; kv < L; ++kv) {
          const BlockClass c = mask.at(b, q / bs, kv / bs);
          const bool sparse = c == BlockClass::kFull    ? true
                              : c == BlockClass::kEmpty ? false
                                                        : fn(b, q, kv);
          ++pairs;
          if (sparse != fn(b, q, kv)) ++mismatches;
        }
      }
    }
    std::normal_distribution<double> nd;
    Matrix<double> q(batch.num_tokens(), 8), k(q.rows, 8), v(q.rows, 8);
    for (auto* m : {&q, &k, &v}) {
      for (auto& x : m->data) x = nd(rng);
    }
    const auto got = block_sparse_attention(q, k, v, 2, mask);
    const auto want =
        testutil::dense_attention(q, k, v, 2, batch.batch, L, fn);
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst_attn = std::max(worst_attn, std::abs(got.out.data[i] - want.data[i]));
    }
  }

  // Branch isolation: perturbing one response never moves the other's logits.
  ModelConfig cfg;
  cfg.vocab_size = 32;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.init_std = 0.3;
  const auto params = init_params<double>(cfg);
  auto logits = [&](const PreferenceSample& s) {
    const std::vector<SequenceLayout> rows = {to_shared(s)};
    const auto batch = collate(rows, 0, rows[0].size());
    const BlockMask m = build_batch_block_mask(batch, 8);
    return forward(params, batch, m).logits;
  };
  std::size_t perturbations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = testutil::random_sample(rng, 10, 6, 32, 1);
    const std::size_t p = s.prompt.size(), c1 = s.chosen.size(),
                      c2 = s.rejected.size();
    const auto base = logits(s);
    for (int side = 0; side < 2; ++side) {
      auto t = s;
      auto& span = side == 0 ? t.chosen : t.rejected;
      span[rng() % span.size()] ^= 1;
      const auto l = logits(t);
      const std::size_t lo = side == 0 ? p + c1 : 0;
      const std::size_t hi = side == 0 ? p + c1 + c2 : p + c1;
      ++perturbations;
      bool same = true;
      for (std::size_t r = lo; r < hi; ++r) {
        for (std::size_t j = 0; j < cfg.vocab_size; ++j) {
          same &= l(r, j) == base(r, j);
        }
      }
      if (!same) ++isolation_failures;
    }
  }
  Outcome o;
  o.pass = mismatches == 0 && worst_attn <= 1e-12 && isolation_failures == 0;
  o.detail = std::to_string(pairs) + " (b,q,kv) pairs, " +
             std::to_string(mismatches) + " tile mismatches; attention max " +
             fmt("|dev| %.3g; ", worst_attn) +
             std::to_string(perturbations - isolation_failures) + "/" +
             std::to_string(perturbations) + " isolation perturbations clean";
  return o;
}

Outcome criterion_gradients() {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.init_std = 0.3;
  cfg.seed = 4;
  const auto params = init_params<double>(cfg);
  std::mt19937_64 rng(4);
  std::vector<SequenceLayout> rows;
  for (std::size_t i = 0; i < 2; ++i) {
    rows.push_back(to_shared(testutil::random_sample(rng, 6, 4, 20, 2), i));
  }
  const std::size_t L = std::max(rows[0].size(), rows[1].size());
  const CollatedBatch batch = collate(rows, 0, L);
  const BlockMask mask = build_batch_block_mask(batch, 4);
  Matrix<double> w(batch.num_tokens(), cfg.vocab_size);
  std::normal_distribution<double> nd;
  for (auto& x : w.data) x = nd(rng);
  auto loss = [&](const ModelParams<double>& p) {
    const auto l = forward(p, batch, mask).logits;
    double acc = 0;
    for (std::size_t i = 0; i < l.size(); ++i) acc += w.data[i] * l.data[i];
    return acc;
  };
  const auto fwd = forward(params, batch, mask);
  const auto grads = backward(params, fwd.cache, w);
  ModelParams<double> probe = params;
  std::vector<Matrix<double>*> tensors;
  probe.for_each(
      [&](const std::string&, Matrix<double>& m) { tensors.push_back(&m); });
  const double eps = 1e-5;
  double worst = 0;
  std::string worst_name;
  std::size_t idx = 0, count = 0;
  grads.for_each([&](const std::string& name, const Matrix<double>& g) {
    Matrix<double>& m = *tensors[idx++];
    double max_err = 0, max_fd = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double orig = m.data[i];
      m.data[i] = orig + eps;
      const double up = loss(probe);
      m.data[i] = orig - eps;
      const double down = loss(probe);
      m.data[i] = orig;
      const double fd = (up - down) / (2 * eps);
      max_err = std::max(max_err, std::abs(fd - g.data[i]));
      max_fd = std::max(max_fd, std::abs(fd));
    }
    const double rel = max_err / std::max(max_fd, 1e-300);
    if (rel >= worst) {
      worst = rel;
      worst_name = name;
    }
    ++count;
  });
  Outcome o;
  o.pass = worst < 1e-4;
  o.detail = std::to_string(count) + " tensors, worst relative error " +
             fmt("%.3g", worst) + " (" + worst_name + ")";
  return o;
}

Outcome criterion_formulas() {
  const bool exact = ideal_linear_speedup(512, 512) == 4.0 / 3.0 &&
                     ideal_attention_speedup(512, 512) == 8.0 / 7.0;
  bool monotone = true, bounded = true;
  std::size_t points = 0;
  for (double c = 128; c <= 4096; c += 128) {
    double prev_l = 0, prev_a = 0;
    for (double p = 128; p <= 4096; p += 128) {
      const double l = ideal_linear_speedup(p, c);
      const double a = ideal_attention_speedup(p, c);
      monotone &= l > prev_l && a > prev_a;
      bounded &= l >= 1 && l <= 2 && a >= 1 && a <= 2;
      prev_l = l;
      prev_a = a;
      ++points;
    }
  }
  Outcome o;
  o.pass = exact && monotone && bounded;
  o.detail = fmt("linear(512,512)=%.17g attention(512,512)=%.17g; ",
                 ideal_linear_speedup(512, 512),
                 ideal_attention_speedup(512, 512)) +
             std::to_string(points) + " grid points, monotone " +
             (monotone ? "yes" : "no") + ", bounded " +
             (bounded ? "yes" : "no");
  return o;
}

Outcome criterion_token_accounting() {
  SyntheticConfig synth;
  synth.num_samples = 32;
  synth.min_prompt = synth.max_prompt = 512;
  synth.min_completion = synth.max_completion = 256;
  synth.vocab_size = 64;
  const DatasetStats s = dataset_stats(synthetic_dataset(synth));
  const double ideal = ideal_linear_speedup(512, 256);
  Outcome o;
  o.pass = s.predicted_token_reduction == 1.5 && ideal == 1.5;
  o.detail = fmt("predicted reduction %.17g, ideal_linear_speedup(512,256) "
                 "%.17g",
                 s.predicted_token_reduction, ideal);
  return o;
}

Outcome criterion_ffd() {
  const std::vector<std::size_t> ex = {5, 4, 3, 2};
  const PackPlan worked = ffd_pack(ex, 7);
  const bool example =
      worked.bins == std::vector<std::vector<std::size_t>>{{0, 3}, {1, 2}};
  std::mt19937_64 rng(77);
  std::size_t failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t cap = 8 + rng() % 200;
    std::vector<std::size_t> lengths(n);
    for (auto& l : lengths) l = 1 + rng() % cap;
    const PackPlan plan = ffd_pack(lengths, cap);
    std::vector<std::size_t> seen;
    bool ok = true;
    for (const auto& bin : plan.bins) {
      std::size_t fill = 0;
      for (std::size_t i : bin) {
        fill += lengths[i];
        seen.push_back(i);
      }
      ok &= fill <= cap && !bin.empty();
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    ok &= seen == all;
    const double total =
        std::accumulate(lengths.begin(), lengths.end(), 0.0);
    const double lb = std::ceil(total / double(cap));
    ok &= double(plan.bins.size()) <= std::ceil(11.0 / 9.0 * lb) + 1;
    if (!ok) ++failures;
  }
  Outcome o;
  o.pass = example && failures == 0;
  o.detail = std::string("worked example ") + (example ? "ok" : "wrong") +
             "; " + std::to_string(200 - failures) +
             "/200 random instances within capacity, exact cover and bound";
  return o;
}

Outcome criterion_throughput() {
  SyntheticConfig synth;
  synth.num_samples = 16;
  synth.min_prompt = synth.max_prompt = 512;
  synth.min_completion = synth.max_completion = 64;
  synth.vocab_size = 64;
  synth.seed = 5;
  const Dataset ds = synthetic_dataset(synth);
  const double predicted = dataset_stats(ds).predicted_token_reduction;
  BenchConfig bc;
  bc.model.vocab_size = 64;
  bc.model.d_model = 512;
  bc.model.n_layers = 1;
  bc.model.n_heads = 8;
  bc.model.d_ff = 512;
  bc.model.precision = Precision::kF32;
  bc.train.lr = 1e-4;
  bc.steps = 8;
  bc.warmup = 3;
  bc.batching.bsz = 1;
  std::vector<ThroughputEntry> entries;
  for (auto f : {LayoutFormat::kPaired, LayoutFormat::kShared}) {
    bc.batching.format = f;
    entries.push_back(run_bench(ds, bc));
  }
  const ThroughputReport r = throughput_report(entries);
  const double speedup = r.speedup[1];
  Outcome o;
  o.pass = entries[1].samples_per_sec >= entries[0].samples_per_sec &&
           std::abs(speedup / predicted - 1.0) <= 0.25;
  o.detail = fmt("paired %.3f samples/s, shared %.3f samples/s, speedup "
                 "%.3fx vs predicted %.3fx",
                 entries[0].samples_per_sec, entries[1].samples_per_sec,
                 speedup, predicted);
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "format equivalence", criterion_equivalence},
      {2, "training parity", criterion_training_parity},
      {3, "mask oracle and branch isolation", criterion_mask_oracle},
      {4, "gradient correctness", criterion_gradients},
      {5, "speedup formulas", criterion_formulas},
      {6, "token accounting", criterion_token_accounting},
      {7, "FFD packing", criterion_ffd},
      {8, "throughput direction", criterion_throughput},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf(
      "NOTE [9] downstream chat-benchmark scores are not reproduced; covered "
      "by [2] and the packed arms of [1]\n");
  return failed == 0 ? 0 : 1;
}
