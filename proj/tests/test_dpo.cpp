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

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "prefshare/dpo.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/harness.hpp"
#include "test_util.hpp"

using namespace prefshare;
using testutil::make_sample;
using testutil::random_sample;

namespace {

ModelConfig toy(Precision p = Precision::kF64) {
  ModelConfig c;
  c.vocab_size = 32;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.init_std = 0.2;
  c.precision = p;
  c.seed = 9;
  return c;
}

Dataset random_dataset(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    ds.samples.push_back(random_sample(rng, 10, 6, 32, 1));
  }
  return ds;
}

BatchingConfig batching(LayoutFormat f, bool packed, std::size_t bsz = 3) {
  BatchingConfig b;
  b.format = f;
  b.packing = packed;
  b.bsz = bsz;
  return b;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("uniform logits give -c ln V") {
  const std::vector<SequenceLayout> rows = {to_shared(make_sample(2, 3, 4))};
  const auto batch = collate(rows, 0, rows[0].size());
  const Matrix<double> logits(batch.num_tokens(), 16, 0.0);
  const auto lp = completion_logprobs(logits, batch);
  CHECK(lp.chosen[0] == doctest::Approx(-3 * std::log(16.0)).epsilon(1e-14));
  CHECK(lp.rejected[0] == doctest::Approx(-4 * std::log(16.0)).epsilon(1e-14));
  CHECK_THROWS_AS(completion_logprobs(Matrix<double>(3, 16), batch),
                  ShapeError);
  CHECK_THROWS_AS(completion_logprobs(Matrix<double>(batch.num_tokens(), 2),
                                      batch),
                  ShapeError);
}

TEST_CASE("a sample with nothing to score is an error") {
  const std::vector<SequenceLayout> rows = {to_shared(make_sample(0, 1, 2))};
  const auto batch = collate(rows, 0, rows[0].size());
  CHECK_THROWS_AS(
      completion_logprobs(Matrix<double>(batch.num_tokens(), 8), batch),
      DataError);
}

TEST_CASE_TEMPLATE("log-probs agree across all four layouts", T, float,
                   double) {
  const Precision prec =
      sizeof(T) == 8 ? Precision::kF64 : Precision::kF32;
  const double tol = equivalence_tolerance(prec);
  const Dataset ds = random_dataset(3, 11);
  const auto params = init_params<T>(toy(prec));
  const auto base = build_reference_cache(
      params, ds, batching(LayoutFormat::kPaired, false), 16);
  REQUIRE(base.size() == ds.size());
  for (auto f : {LayoutFormat::kPaired, LayoutFormat::kShared}) {
    for (bool packed : {false, true}) {
      const auto got = build_reference_cache(params, ds, batching(f, packed), 16);
      CHECK(got.max_abs_diff(base) <= tol);
    }
  }
}

TEST_CASE("dpo loss examples") {
  const auto zero = dpo_loss({-3.0, -9.0}, {-4.0, -1.0}, {-2.0, -5.0},
                             {-6.0, -1.5}, 0.0);
  CHECK(zero.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(zero.accuracy == 0.0);

  // policy - ref: chosen +1, rejected -1
  const auto r = dpo_loss({-4.0}, {-6.0}, {-5.0}, {-5.0}, 0.1);
  CHECK(r.margin[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(-std::log(sigmoid(0.2))).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(0.59814).epsilon(1e-5));
  CHECK(r.accuracy == 1.0);

  const auto swapped = dpo_loss({-6.0}, {-4.0}, {-5.0}, {-5.0}, 0.1);
  CHECK(swapped.margin[0] == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(swapped.loss == doctest::Approx(-std::log(sigmoid(-0.2))).epsilon(1e-14));
}

TEST_CASE("dpo loss contract") {
  CHECK_THROWS_AS(dpo_loss({NAN}, {0}, {0}, {0}, 0.1), NonFiniteError);
  CHECK_THROWS_AS(dpo_loss({INFINITY}, {0}, {0}, {0}, 0.1), NonFiniteError);
  CHECK_THROWS_AS(dpo_loss({0}, {0}, {0}, {0}, -0.1), ConfigError);
  CHECK_THROWS_AS(dpo_loss({0, 1}, {0}, {0}, {0}, 0.1), ShapeError);
  CHECK_THROWS_AS(dpo_loss({}, {}, {}, {}, 0.1), ShapeError);
  // extreme margins stay finite
  const auto big = dpo_loss({-1e5}, {0}, {0}, {0}, 1.0);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss == doctest::Approx(1e5));
  const auto tiny = dpo_loss({1e5}, {0}, {0}, {0}, 1.0);
  CHECK(tiny.loss >= 0.0);
}

TEST_CASE("loss is decreasing in margin and gradients are antisymmetric") {
  double prev = INFINITY;
  for (double d = -20; d <= 20; d += 0.5) {
    const auto r = dpo_loss({d}, {0.0}, {0.0}, {0.0}, 0.3);
    CHECK(r.loss > 0.0);
    CHECK(r.loss < prev);
    prev = r.loss;
    CHECK(r.grad_chosen[0] == -r.grad_rejected[0]);
    CHECK(r.grad_chosen[0] ==
          doctest::Approx(-0.3 * sigmoid(-r.margin[0])).epsilon(1e-14));
  }
}

TEST_CASE("reference cache") {
  const Dataset ds = random_dataset(5, 7);
  const auto ref = init_params<double>(toy());
  const auto a =
      build_reference_cache(ref, ds, batching(LayoutFormat::kShared, false), 16);
  const auto b =
      build_reference_cache(ref, ds, batching(LayoutFormat::kShared, false), 16);
  CHECK(a.max_abs_diff(b) == 0.0);
  const auto p =
      build_reference_cache(ref, ds, batching(LayoutFormat::kPaired, false), 16);
  CHECK(a.max_abs_diff(p) <= 1e-10);
  CHECK_THROWS_AS(a.get(99), CacheMissError);
  ReferenceCache partial;
  partial.put(0, 1.0, 2.0);
  CHECK_THROWS_AS(partial.max_abs_diff(a), DataError);
}

TEST_CASE("unpacked batches follow the same sample order in both formats") {
  const Dataset ds = random_dataset(6, 10);
  for (bool shuffle : {false, true}) {
    auto bp = batching(LayoutFormat::kPaired, false, 4);
    auto bs = batching(LayoutFormat::kShared, false, 4);
    bp.shuffle = bs.shuffle = shuffle;
    bp.seed = bs.seed = 17;
    const auto p = epoch_batches(ds, bp, 2);
    const auto s = epoch_batches(ds, bs, 2);
    REQUIRE(p.size() == 3);
    REQUIRE(s.size() == 3);
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i].samples == s[i].samples);
      CHECK(p[i].batch == 2 * s[i].batch);
      seen.insert(s[i].samples.begin(), s[i].samples.end());
    }
    CHECK(seen.size() == 10);
  }
  auto packed = batching(LayoutFormat::kShared, true, 2);
  std::multiset<std::size_t> all;
  for (const auto& b : epoch_batches(ds, packed, 0)) {
    CHECK(b.batch == 1);
    all.insert(b.samples.begin(), b.samples.end());
  }
  CHECK(all.size() == 10);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 10);
  CHECK_THROWS_AS(epoch_batches(Dataset{}, packed, 0), DataError);
}

TEST_CASE("dpo gradient matches finite differences through the model") {
  const Dataset ds = random_dataset(8, 3);
  auto cfg = toy();
  cfg.n_layers = 1;
  const auto ref = init_params<double>(cfg);
  auto cfg2 = cfg;
  cfg2.seed = 10;
  const auto policy = init_params<double>(cfg2);
  const auto bc = batching(LayoutFormat::kShared, false, 3);
  const auto cache = build_reference_cache(ref, ds, bc, 16);
  const auto batch = epoch_batches(ds, bc, 0).front();
  const auto ev = dpo_evaluate(policy, batch, cache, 0.5, 16, true);
  ModelParams<double> probe = policy;
  const double eps = 1e-5;
  auto check_tensor = [&](Matrix<double>& m, const Matrix<double>& g) {
    double max_err = 0, max_fd = 0;
    for (std::size_t i = 0; i < m.size(); i += 3) {
      const double orig = m.data[i];
      m.data[i] = orig + eps;
      const double up = dpo_evaluate(probe, batch, cache, 0.5, 16, false).result.loss;
      m.data[i] = orig - eps;
      const double down =
          dpo_evaluate(probe, batch, cache, 0.5, 16, false).result.loss;
      m.data[i] = orig;
      const double fd = (up - down) / (2 * eps);
      max_err = std::max(max_err, std::abs(fd - g.data[i]));
      max_fd = std::max(max_fd, std::abs(fd));
    }
    CHECK(max_err / max_fd < 1e-4);
  };
  check_tensor(probe.output, ev.grads.output);
  check_tensor(probe.layers[0].wq, ev.grads.layers[0].wq);
  check_tensor(probe.embedding, ev.grads.embedding);
}

TEST_CASE("training parity between paired and shared over a short run") {
  const Dataset ds = random_dataset(11, 12);
  TrainRunConfig cfg;
  cfg.model = toy();
  cfg.steps = 10;
  cfg.train.lr = 1e-2;
  cfg.train.block_size = 16;
  cfg.batching = batching(LayoutFormat::kPaired, false, 4);
  const auto paired = run_training<double>(ds, cfg);
  cfg.batching.format = LayoutFormat::kShared;
  const auto shared = run_training<double>(ds, cfg);
  REQUIRE(paired.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::abs(paired[i].loss - shared[i].loss) < 1e-8);
    CHECK(paired[i].step == i + 1);
  }
  CHECK(paired.back().loss != paired.front().loss);
}

TEST_CASE("beta zero freezes the policy") {
  const Dataset ds = random_dataset(12, 4);
  const auto init = init_params<double>(toy());
  const auto bc = batching(LayoutFormat::kShared, false, 4);
  TrainConfig tc;
  tc.beta = 0.0;
  tc.lr = 0.1;
  tc.block_size = 16;
  DpoTrainer<double> trainer(init, build_reference_cache(init, ds, bc, 16), tc);
  const auto batches = epoch_batches(ds, bc, 0);
  for (int s = 0; s < 3; ++s) {
    const auto m = trainer.train_step(batches[0]);
    CHECK(m.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  CHECK(trainer.policy().embedding.data == init.embedding.data);
  CHECK(trainer.policy().layers[1].w_up.data == init.layers[1].w_up.data);
  CHECK(trainer.step() == 3);
}

TEST_CASE("repeated steps on one sample lower its loss") {
  Dataset ds;
  ds.samples.push_back(make_sample(4, 3, 3));
  const auto init = init_params<double>(toy());
  const auto bc = batching(LayoutFormat::kShared, false, 1);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.block_size = 16;
  DpoTrainer<double> trainer(init, build_reference_cache(init, ds, bc, 16), tc);
  const auto batch = epoch_batches(ds, bc, 0).front();
  const double first = trainer.train_step(batch).loss;
  StepMetrics last;
  for (int s = 0; s < 30; ++s) last = trainer.train_step(batch);
  CHECK(last.loss < first);
  CHECK(last.mean_margin > 0.0);
  CHECK(last.accuracy == 1.0);
}

TEST_CASE("live reference matches the cached reference") {
  const Dataset ds = random_dataset(13, 6);
  const auto init = init_params<double>(toy());
  const auto bc = batching(LayoutFormat::kShared, false, 3);
  TrainConfig tc;
  tc.block_size = 16;
  DpoTrainer<double> cached(init, build_reference_cache(init, ds, bc, 16), tc);
  DpoTrainer<double> live(init, init, tc);
  BatchStream stream(ds, bc);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(cached.train_step(stream.at(s)).loss ==
          live.train_step(stream.at(s)).loss);
  }
}

TEST_CASE("missing reference entries surface as cache misses") {
  const Dataset ds = random_dataset(14, 4);
  const auto init = init_params<double>(toy());
  DpoTrainer<double> trainer(init, ReferenceCache{}, TrainConfig{});
  const auto batch =
      epoch_batches(ds, batching(LayoutFormat::kShared, false, 2), 0).front();
  CHECK_THROWS_AS(trainer.train_step(batch), CacheMissError);
}

TEST_CASE("metrics line carries the documented keys") {
  StepMetrics m;
  m.step = 3;
  m.loss = 0.5;
  const auto j = nlohmann::json::parse(metrics_to_json(m));
  for (const char* k : {"step", "loss", "accuracy", "mean_margin",
                        "tokens_processed", "samples_per_sec"}) {
    CHECK(j.contains(k));
  }
  CHECK(j["step"] == 3);
}
