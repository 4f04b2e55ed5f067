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

#include "prefshare/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "prefshare/analytics.hpp"
#include "prefshare/checkpoint.hpp"
#include "prefshare/dataset.hpp"
#include "prefshare/dpo.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/harness.hpp"
#include "prefshare/packing.hpp"

namespace prefshare {

namespace {

struct RunConfig {
  // data
  std::string dataset;
  std::string tokenizer = "none";
  std::size_t max_prompt_len = 0;
  std::size_t max_seq_len = 0;
  // layout
  std::string format = "shared";
  bool packing = false;
  std::size_t bsz = 4;
  std::uint64_t seed = 0;
  bool shuffle = false;
  // model
  std::string precision = "f64";
  std::size_t vocab_size = 0;  // 0: one past the largest token id
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  double rope_theta = 10000.0;
  std::size_t block_size = kDefaultBlockSize;
  // optimization
  double beta = 0.1;
  double lr = 1e-3;
  std::size_t steps = 50;
  std::string optimizer = "adamw";
  double weight_decay = 0.0;
  // output
  std::string out;
  std::string report;
  // stats
  std::string overall = "longer-paired";
  std::string ratio = "mean";
  // pack-plan
  std::size_t capacity = 0;
  // verify
  std::size_t models = 4;
  std::size_t samples = 16;
  std::string dump_mask;
  bool corrupt_mask = false;
  // bench
  std::vector<std::string> configs = {"paired/unpacked", "shared/unpacked",
                                      "paired/packed", "shared/packed"};
  std::size_t warmup = 3;
  std::string ref_mode = "cached";
  // train
  std::string metrics;
  std::string resume;
  // synth
  SyntheticConfig synth;
};

// Writes to --out when given, otherwise to the default stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw DataError("cannot open output file " + path);
      stream_ = file_.get();
    }
  }
  std::ostream& operator*() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_;
};

void add_data_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--dataset", rc.dataset, "Preference dataset (JSONL)")
      ->required();
  app->add_option("--tokenizer", rc.tokenizer,
                  "Tokenizer for string fields")
      ->check(CLI::IsMember({"none", "byte", "whitespace"}))
      ->capture_default_str();
  app->add_option("--max-prompt-len", rc.max_prompt_len,
                  "Left-truncate prompts to this length (0: unlimited)")
      ->capture_default_str();
  app->add_option("--max-seq-len", rc.max_seq_len,
                  "Longest prompt+completion allowed (0: unlimited)")
      ->capture_default_str();
}

void add_layout_options(CLI::App* app, RunConfig& rc, bool with_format) {
  if (with_format) {
    app->add_option("--format", rc.format, "Row layout")
        ->check(CLI::IsMember({"paired", "shared"}))
        ->capture_default_str();
    app->add_flag("--packing", rc.packing, "Pack units with FFD");
  }
  app->add_option("--bsz", rc.bsz, "Batch size (rows' worth of samples)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--seed", rc.seed, "Seed for every random stream")
      ->capture_default_str();
}

void add_model_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--precision", rc.precision, "Floating point width")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  app->add_option("--vocab-size", rc.vocab_size,
                  "Vocabulary size (0: largest token id + 1)")
      ->capture_default_str();
  app->add_option("--d-model", rc.d_model)->capture_default_str();
  app->add_option("--layers", rc.n_layers)->capture_default_str();
  app->add_option("--heads", rc.n_heads)->capture_default_str();
  app->add_option("--d-ff", rc.d_ff)->capture_default_str();
  app->add_option("--rope-theta", rc.rope_theta)->capture_default_str();
  app->add_option("--block-size", rc.block_size,
                  "Attention tile size for the block mask")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

void add_optim_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--beta", rc.beta, "DPO temperature")->capture_default_str();
  app->add_option("--lr", rc.lr, "Learning rate")->capture_default_str();
  app->add_option("--steps", rc.steps, "Optimizer steps")
      ->capture_default_str();
  app->add_option("--optimizer", rc.optimizer)
      ->check(CLI::IsMember({"adamw", "sgd"}))
      ->capture_default_str();
  app->add_option("--weight-decay", rc.weight_decay)->capture_default_str();
  app->add_flag("--shuffle", rc.shuffle,
                "Reshuffle samples (or packed bins) every epoch");
}

Dataset load_dataset(const RunConfig& rc) {
  Dataset ds = load_jsonl(rc.dataset, parse_tokenizer(rc.tokenizer));
  if (ds.empty()) throw DataError(rc.dataset + " contains no samples");
  if (rc.max_prompt_len || rc.max_seq_len) {
    ds = truncate_dataset(ds, rc.max_prompt_len, rc.max_seq_len);
  }
  return ds;
}

BatchingConfig batching_config(const RunConfig& rc) {
  BatchingConfig b;
  b.format = parse_layout_format(rc.format);
  b.packing = rc.packing;
  b.bsz = rc.bsz;
  b.seed = rc.seed;
  b.shuffle = rc.shuffle;
  return b;
}

ModelConfig model_config(const RunConfig& rc, const Dataset& ds) {
  ModelConfig m;
  const std::size_t needed = static_cast<std::size_t>(ds.max_token()) + 1;
  m.vocab_size = rc.vocab_size ? rc.vocab_size : std::max<std::size_t>(needed, 2);
  if (needed > m.vocab_size) {
    throw ConfigError("--vocab-size " + std::to_string(m.vocab_size) +
                      " is smaller than the dataset's largest token id + 1 (" +
                      std::to_string(needed) + ")");
  }
  m.d_model = rc.d_model;
  m.n_layers = rc.n_layers;
  m.n_heads = rc.n_heads;
  m.d_ff = rc.d_ff;
  m.rope_theta = rc.rope_theta;
  m.precision = parse_precision(rc.precision);
  m.seed = rc.seed;
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& rc) {
  if (!(rc.beta >= 0)) throw ConfigError("--beta must be >= 0");
  if (!(rc.lr >= 0)) throw ConfigError("--lr must be >= 0");
  TrainConfig t;
  t.beta = rc.beta;
  t.lr = rc.lr;
  t.optimizer =
      rc.optimizer == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdamW;
  t.adamw.weight_decay = rc.weight_decay;
  t.block_size = rc.block_size;
  return t;
}

int cmd_stats(const RunConfig& rc, std::ostream& out) {
  const Dataset ds = load_dataset(rc);
  StatsOptions opts;
  if (rc.overall == "prompt-mean") {
    opts.overall = OverallLength::kPromptMeanCompletion;
  } else if (rc.overall == "shared") {
    opts.overall = OverallLength::kSharedRow;
  }
  if (rc.ratio == "max") opts.ratio_completion = CompletionMeasure::kMax;
  const DatasetStats stats = dataset_stats(ds, opts);
  if (!rc.report.empty() && rc.report != "json" && rc.report != "md") {
    throw ConfigError("stats supports --report json or md");
  }
  Sink sink(rc.out, out);
  if (rc.report.empty() || rc.report == "json") {
    *sink << stats_to_json(stats) << "\n";
  }
  if (rc.report.empty() || rc.report == "md") {
    if (rc.report.empty()) *sink << "\n";
    *sink << stats_to_markdown(std::filesystem::path(rc.dataset).stem().string(),
                               stats);
  }
  return kExitOk;
}

int cmd_pack_plan(const RunConfig& rc, std::ostream& out) {
  const Dataset ds = load_dataset(rc);
  const LayoutFormat format = parse_layout_format(rc.format);
  PackPlan plan;
  if (rc.capacity == 0) {
    plan = plan_dataset(ds, format, rc.bsz);
  } else {
    std::vector<std::size_t> lengths;
    for (const auto& u : pack_units(ds, format)) lengths.push_back(u.length);
    plan = ffd_pack(lengths, rc.capacity);
  }
  if (rc.shuffle) plan = shuffle_bins(plan, rc.seed, 0);
  Sink sink(rc.out, out);
  *sink << plan_to_json(plan) << "\n";
  return kExitOk;
}

int cmd_verify(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(rc);
  VerifyConfig vc;
  vc.model = model_config(rc, ds);
  vc.num_models = rc.models;
  vc.num_samples = rc.samples;
  vc.bsz = rc.bsz;
  vc.block_size = rc.block_size;
  vc.packing = true;
  vc.corrupt_mask = rc.corrupt_mask;
  if (!rc.dump_mask.empty()) {
    Dataset first;
    first.samples.assign(ds.samples.begin(),
                         ds.samples.begin() +
                             std::min(ds.size(), std::max<std::size_t>(rc.bsz, 1)));
    BatchingConfig b{LayoutFormat::kShared, rc.packing, rc.bsz,
                     kDefaultPadToken, rc.seed, false};
    const auto batches = epoch_batches(first, b, 0);
    std::ofstream dump(rc.dump_mask);
    if (!dump) throw DataError("cannot open " + rc.dump_mask);
    dump << build_batch_block_mask(batches.front(), rc.block_size).to_json()
         << "\n";
  }
  const VerifyReport report = verify_equivalence(ds, vc);
  Sink sink(rc.out, out);
  *sink << report.to_json() << "\n";
  if (!report.passed) {
    err << "verify: max deviation " << report.max_abs_dev
        << " exceeds tolerance " << report.tolerance << "\n";
    return kExitVerify;
  }
  return kExitOk;
}

int cmd_bench(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(rc);
  std::vector<ThroughputEntry> entries;
  const ReportFormat fmt =
      parse_report_format(rc.report.empty() ? "md" : rc.report);
  for (const auto& name : rc.configs) {
    const auto slash = name.find('/');
    const std::string mode = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (mode != "packed" && mode != "unpacked") {
      throw ConfigError("bench config '" + name +
                        "' must look like paired/unpacked");
    }
    RunConfig arm = rc;
    arm.format = name.substr(0, slash);
    arm.packing = mode == "packed";
    BenchConfig bc;
    bc.model = model_config(rc, ds);
    bc.batching = batching_config(arm);
    bc.train = train_config(rc);
    bc.steps = rc.steps;
    bc.warmup = rc.warmup;
    bc.live_reference = rc.ref_mode == "live";
    entries.push_back(run_bench(ds, bc));
    err << "bench: " << entries.back().name << " "
        << entries.back().samples_per_sec << " samples/s\n";
  }
  const ThroughputReport report = throughput_report(entries);
  err << "bench: predicted token reduction (paired/shared) "
      << dataset_stats(ds).predicted_token_reduction << "\n";
  Sink sink(rc.out, out);
  *sink << render_report(report, fmt);
  return kExitOk;
}

std::string run_json(const RunConfig& rc) {
  nlohmann::json j;
  j["dataset"] = rc.dataset;
  j["format"] = rc.format;
  j["packing"] = rc.packing;
  j["bsz"] = rc.bsz;
  j["beta"] = rc.beta;
  j["lr"] = rc.lr;
  j["seed"] = rc.seed;
  j["optimizer"] = rc.optimizer;
  return j.dump();
}

template <typename T>
int train_impl(const RunConfig& rc, const Dataset& ds, std::ostream& out,
               std::ostream& err) {
  const BatchingConfig batching = batching_config(rc);
  const TrainConfig tc = train_config(rc);
  std::optional<Checkpoint<T>> ck;
  ModelConfig mc;
  if (!rc.resume.empty()) {
    ck = load_checkpoint<T>(rc.resume);
    mc = ck->params.config;
    if (static_cast<std::size_t>(ds.max_token()) >= mc.vocab_size) {
      throw ConfigError("dataset token ids exceed the checkpoint vocabulary");
    }
  } else {
    mc = model_config(rc, ds);
  }
  // The reference is always the initialization the run started from.
  ModelParams<T> init = init_params<T>(mc);
  ReferenceCache cache =
      build_reference_cache(init, ds, batching, tc.block_size);
  DpoTrainer<T> trainer(std::move(init), std::move(cache), tc);
  std::size_t start = 0;
  if (ck) {
    start = ck->step;
    trainer.restore(std::move(ck->params), std::move(ck->adam), ck->step);
    err << "train: resumed at step " << start << "\n";
  }
  BatchStream stream(ds, batching);
  Sink sink(rc.metrics, out);
  for (std::size_t s = start; s < start + rc.steps; ++s) {
    const StepMetrics m = trainer.train_step(stream.at(s));
    *sink << metrics_to_json(m) << "\n";
  }
  if (!rc.out.empty()) {
    save_checkpoint(rc.out, trainer.policy(), trainer.optimizer_state(),
                    trainer.step(), run_json(rc));
  }
  return kExitOk;
}

int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const Dataset ds = load_dataset(rc);
  Precision p = parse_precision(rc.precision);
  if (!rc.resume.empty()) p = checkpoint_precision(rc.resume);
  return p == Precision::kF64 ? train_impl<double>(rc, ds, out, err)
                              : train_impl<float>(rc, ds, out, err);
}

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  const Dataset ds = synthetic_dataset(rc.synth);
  Sink sink(rc.out, out);
  write_jsonl(ds, *sink);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  RunConfig rc;
  CLI::App app{"prefshare: prefix-shared preference tuning toolkit"};
  app.set_config("--config", "", "Read options from a TOML/INI file");
  app.require_subcommand(1);

  auto* stats = app.add_subcommand("stats", "Dataset length statistics");
  add_data_options(stats, rc);
  stats->add_option("--out", rc.out, "Write the report here");
  stats->add_option("--report", rc.report, "json or md (default: both)");
  stats->add_option("--overall", rc.overall, "Median overall length measure")
      ->check(CLI::IsMember({"longer-paired", "prompt-mean", "shared"}))
      ->capture_default_str();
  stats->add_option("--ratio", rc.ratio,
                    "Completion length used in the prefix/completion ratio")
      ->check(CLI::IsMember({"mean", "max"}))
      ->capture_default_str();

  auto* plan = app.add_subcommand("pack-plan", "First-fit-decreasing plan");
  add_data_options(plan, rc);
  add_layout_options(plan, rc, true);
  plan->add_option("--capacity", rc.capacity,
                   "Bin capacity in tokens (0: bsz x longest unit)")
      ->capture_default_str();
  plan->add_flag("--shuffle", rc.shuffle, "Permute bins with the seed");
  plan->add_option("--out", rc.out, "Write the plan here");

  auto* verify = app.add_subcommand(
      "verify", "Check paired and shared layouts give identical log-probs");
  add_data_options(verify, rc);
  add_layout_options(verify, rc, false);
  add_model_options(verify, rc);
  verify->add_option("--models", rc.models, "Random models to test")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  verify->add_option("--samples", rc.samples,
                     "Leading samples to test (0: all)")
      ->capture_default_str();
  verify->add_option("--dump-mask", rc.dump_mask,
                     "Write the first shared batch's block mask as JSON");
  verify->add_flag("--packing", rc.packing, "Dump the packed mask instead");
  verify->add_flag("--corrupt-mask", rc.corrupt_mask)->group("");
  verify->add_option("--out", rc.out, "Write the report here");

  auto* bench = app.add_subcommand("bench", "Training throughput matrix");
  add_data_options(bench, rc);
  add_layout_options(bench, rc, false);
  add_model_options(bench, rc);
  add_optim_options(bench, rc);
  bench->add_option("--configs", rc.configs,
                    "Configurations such as shared/packed")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--warmup", rc.warmup, "Untimed leading steps")
      ->capture_default_str();
  bench->add_option("--ref-mode", rc.ref_mode,
                    "cached: reference log-probs precomputed; live: reference "
                    "forward inside every step")
      ->check(CLI::IsMember({"cached", "live"}))
      ->capture_default_str();
  bench->add_option("--report", rc.report, "json, csv or md")
      ->check(CLI::IsMember({"json", "csv", "md"}));
  bench->add_option("--out", rc.out, "Write the report here");

  auto* train = app.add_subcommand("train", "DPO training run");
  add_data_options(train, rc);
  add_layout_options(train, rc, true);
  add_model_options(train, rc);
  add_optim_options(train, rc);
  train->add_option("--out", rc.out, "Checkpoint written after the run");
  train->add_option("--metrics", rc.metrics,
                    "Per-step metrics JSONL (default: stdout)");
  train->add_option("--resume", rc.resume, "Continue from this checkpoint");

  auto* synth = app.add_subcommand("synth", "Write a random token dataset");
  synth->add_option("--num-samples", rc.synth.num_samples)->capture_default_str();
  synth->add_option("--min-prompt", rc.synth.min_prompt)->capture_default_str();
  synth->add_option("--max-prompt", rc.synth.max_prompt)->capture_default_str();
  synth->add_option("--min-completion", rc.synth.min_completion)
      ->capture_default_str();
  synth->add_option("--max-completion", rc.synth.max_completion)
      ->capture_default_str();
  synth->add_option("--vocab-size", rc.synth.vocab_size)->capture_default_str();
  synth->add_option("--seed", rc.synth.seed)->capture_default_str();
  synth->add_flag("--equal-completions", rc.synth.equal_completions);
  synth->add_option("--out", rc.out, "Write JSONL here");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (const auto* sub : app.get_subcommands()) {
    err << "# effective configuration: " << sub->get_name() << "\n"
        << sub->config_to_str(true, false);
  }

  try {
    if (*stats) return cmd_stats(rc, out);
    if (*plan) return cmd_pack_plan(rc, out);
    if (*verify) return cmd_verify(rc, out, err);
    if (*bench) return cmd_bench(rc, out, err);
    if (*train) return cmd_train(rc, out, err);
    if (*synth) return cmd_synth(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace prefshare
