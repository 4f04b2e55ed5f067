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

#include "prefshare/analytics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "prefshare/errors.hpp"

namespace prefshare {

namespace {

void check_lengths(double p, double c) {
  if (!(c > 0)) throw DomainError("completion length must be > 0");
  if (!(p >= 0)) throw DomainError("prompt length must be >= 0");
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

double ideal_linear_speedup(double p, double c) {
  check_lengths(p, c);
  return 2 * (p + c) / (p + 2 * c);
}

double ideal_attention_speedup(double p, double c) {
  check_lengths(p, c);
  const double full = 2 * (p + c) * (p + c);
  return full / (full - p * p);
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2;
}

DatasetStats dataset_stats(const Dataset& dataset, const StatsOptions& opts) {
  if (dataset.empty()) throw DataError("dataset_stats: empty dataset");
  DatasetStats s;
  s.n_samples = dataset.size();
  std::vector<double> overall, ratio;
  overall.reserve(dataset.size());
  ratio.reserve(dataset.size());
  for (const auto& sample : dataset.samples) {
    const double p = double(sample.prompt.size());
    const double c1 = double(sample.chosen.size());
    const double c2 = double(sample.rejected.size());
    switch (opts.overall) {
      case OverallLength::kLongerPairedRow:
        overall.push_back(p + std::max(c1, c2));
        break;
      case OverallLength::kPromptMeanCompletion:
        overall.push_back(p + (c1 + c2) / 2);
        break;
      case OverallLength::kSharedRow:
        overall.push_back(p + c1 + c2);
        break;
    }
    const double denom = opts.ratio_completion == CompletionMeasure::kMean
                             ? (c1 + c2) / 2
                             : std::max(c1, c2);
    ratio.push_back(p / denom);
    s.total_paired_tokens += 2 * sample.prompt.size() + sample.chosen.size() +
                             sample.rejected.size();
    s.total_shared_tokens +=
        sample.prompt.size() + sample.chosen.size() + sample.rejected.size();
  }
  s.median_overall_len = median(std::move(overall));
  s.median_prefix_completion_ratio = median(std::move(ratio));
  s.predicted_token_reduction =
      double(s.total_paired_tokens) / double(s.total_shared_tokens);
  return s;
}

std::string stats_to_json(const DatasetStats& s) {
  nlohmann::json j;
  j["n_samples"] = s.n_samples;
  j["median_overall_len"] = s.median_overall_len;
  j["median_prefix_completion_ratio"] = s.median_prefix_completion_ratio;
  j["total_paired_tokens"] = s.total_paired_tokens;
  j["total_shared_tokens"] = s.total_shared_tokens;
  j["predicted_token_reduction"] = s.predicted_token_reduction;
  return j.dump();
}

std::string stats_to_markdown(const std::string& name, const DatasetStats& s) {
  std::ostringstream os;
  os << "| Dataset | Samples | Median Overall Len | Prefix / Completion | "
        "Paired Tokens | Shared Tokens | Token Reduction |\n";
  os << "|---|---:|---:|---:|---:|---:|---:|\n";
  os << "| " << name << " | " << s.n_samples << " | "
     << fmt(s.median_overall_len, 1) << " | "
     << fmt(s.median_prefix_completion_ratio, 2) << " | "
     << s.total_paired_tokens << " | " << s.total_shared_tokens << " | "
     << fmt(s.predicted_token_reduction, 3) << "x |\n";
  return os.str();
}

ThroughputReport throughput_report(std::vector<ThroughputEntry> entries) {
  if (entries.size() < 2) {
    throw ConfigError("throughput_report needs at least two configurations");
  }
  for (const auto& e : entries) {
    if (e.measured_steps != entries.front().measured_steps ||
        e.dataset_samples != entries.front().dataset_samples) {
      throw ConfigError("throughput_report: configuration '" + e.name +
                        "' was measured on different data or step counts");
    }
    if (!(e.samples_per_sec > 0)) {
      throw ConfigError("throughput_report: configuration '" + e.name +
                        "' has no positive throughput");
    }
  }
  ThroughputReport r;
  r.entries = std::move(entries);
  for (const auto& e : r.entries) {
    r.speedup.push_back(e.samples_per_sec / r.entries.front().samples_per_sec);
  }
  return r;
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "md" || s == "markdown") return ReportFormat::kMarkdown;
  throw ConfigError("unknown report format '" + s + "' (json, csv or md)");
}

std::string render_report(const ThroughputReport& r, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::kJson: {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        rows.push_back({{"config", e.name},
                        {"samples_per_sec", e.samples_per_sec},
                        {"speedup", r.speedup[i]},
                        {"tokens_per_step", e.tokens_per_step},
                        {"measured_steps", e.measured_steps}});
      }
      os << nlohmann::json{{"baseline", r.entries.front().name},
                           {"rows", rows}}
                .dump()
         << '\n';
      break;
    }
    case ReportFormat::kCsv:
      os << "config,samples_per_sec,speedup,tokens_per_step,measured_steps\n";
      for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        os << e.name << ',' << fmt(e.samples_per_sec) << ','
           << fmt(r.speedup[i]) << ',' << fmt(e.tokens_per_step, 1) << ','
           << e.measured_steps << '\n';
      }
      break;
    case ReportFormat::kMarkdown:
      os << "| Config | Samples/sec | Speedup vs " << r.entries.front().name
         << " | Tokens/step |\n";
      os << "|---|---:|---:|---:|\n";
      for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        os << "| " << e.name << " | " << fmt(e.samples_per_sec, 3) << " | "
           << fmt(r.speedup[i], 2) << "x | " << fmt(e.tokens_per_step, 0)
           << " |\n";
      }
      break;
  }
  return os.str();
}

}  // namespace prefshare
