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

#include <cstddef>
#include <string>
#include <vector>

#include "prefshare/dataset.hpp"

namespace prefshare {

// Speedup of the shared layout when runtime is linear in token count:
// 2(p + c) / (p + 2c). Throws DomainError for c <= 0 or p < 0.
double ideal_linear_speedup(double prompt_len, double completion_len);

// Speedup when runtime is quadratic in sequence length (self-attention):
// 2(p + c)^2 / (2(p + c)^2 - p^2).
double ideal_attention_speedup(double prompt_len, double completion_len);

// Median of a non-empty list; the mean of the middle two for even sizes.
double median(std::vector<double> values);

// Which length the "median overall length" column reports per sample.
enum class OverallLength {
  kLongerPairedRow,      // p + max(c1, c2)
  kPromptMeanCompletion, // p + (c1 + c2) / 2
  kSharedRow,            // p + c1 + c2
};

// Denominator of the per-sample prefix / completion ratio.
enum class CompletionMeasure { kMean, kMax };

struct StatsOptions {
  OverallLength overall = OverallLength::kLongerPairedRow;
  CompletionMeasure ratio_completion = CompletionMeasure::kMean;
};

struct DatasetStats {
  std::size_t n_samples = 0;
  double median_overall_len = 0;
  double median_prefix_completion_ratio = 0;
  std::size_t total_paired_tokens = 0;
  std::size_t total_shared_tokens = 0;
  double predicted_token_reduction = 1;
};

// Throws DataError on an empty dataset.
DatasetStats dataset_stats(const Dataset& dataset, const StatsOptions& opts = {});

std::string stats_to_json(const DatasetStats& stats);
std::string stats_to_markdown(const std::string& name,
                              const DatasetStats& stats);

struct ThroughputEntry {
  std::string name;
  double samples_per_sec = 0;
  std::size_t measured_steps = 0;
  std::size_t dataset_samples = 0;
  double tokens_per_step = 0;
};

struct ThroughputReport {
  std::vector<ThroughputEntry> entries;
  // speedup[i] = entries[i].samples_per_sec / entries[0].samples_per_sec.
  std::vector<double> speedup;
};

// Needs at least two entries measured on the same data for the same number
// of steps; throws ConfigError otherwise.
ThroughputReport throughput_report(std::vector<ThroughputEntry> entries);

enum class ReportFormat { kJson, kCsv, kMarkdown };
ReportFormat parse_report_format(const std::string& s);
std::string render_report(const ThroughputReport& report, ReportFormat format);

}  // namespace prefshare
