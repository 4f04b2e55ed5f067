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

#include "prefshare/packing.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/random.hpp"

namespace prefshare {

std::string to_string(LayoutFormat f) {
  return f == LayoutFormat::kPaired ? "paired" : "shared";
}

LayoutFormat parse_layout_format(const std::string& s) {
  if (s == "paired") return LayoutFormat::kPaired;
  if (s == "shared") return LayoutFormat::kShared;
  throw ConfigError("unknown format '" + s + "' (expected paired or shared)");
}

FormatTag row_format(LayoutFormat f, bool packed) {
  if (f == LayoutFormat::kPaired) {
    return packed ? FormatTag::kPackedPairedRow : FormatTag::kPairedRow;
  }
  return packed ? FormatTag::kPackedSharedRow : FormatTag::kSharedRow;
}

std::size_t unit_length(const PreferenceSample& sample, LayoutFormat format) {
  const std::size_t p = sample.prompt.size();
  const std::size_t c = sample.chosen.size() + sample.rejected.size();
  return format == LayoutFormat::kPaired ? 2 * p + c : p + c;
}

std::vector<PackUnit> pack_units(const Dataset& dataset, LayoutFormat format) {
  std::vector<PackUnit> units;
  units.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    units.push_back({i, unit_length(dataset[i], format)});
  }
  return units;
}

std::size_t packing_capacity(const Dataset& dataset, LayoutFormat format,
                             std::size_t bsz) {
  if (bsz == 0) throw ConfigError("packing requires bsz >= 1");
  std::size_t longest = 0;
  for (const auto& s : dataset.samples) {
    longest = std::max(longest, unit_length(s, format));
  }
  return bsz * longest;
}

PackPlan ffd_pack(std::span<const std::size_t> lengths, std::size_t capacity) {
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > capacity) {
      throw UnpackableSampleError(i, lengths[i], capacity);
    }
  }
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return lengths[a] > lengths[b];
                   });
  PackPlan plan;
  plan.capacity = capacity;
  for (std::size_t idx : order) {
    std::size_t bin = 0;
    while (bin < plan.bins.size() && plan.fill[bin] + lengths[idx] > capacity) {
      ++bin;
    }
    if (bin == plan.bins.size()) {
      plan.bins.emplace_back();
      plan.fill.push_back(0);
    }
    plan.bins[bin].push_back(idx);
    plan.fill[bin] += lengths[idx];
  }
  return plan;
}

PackPlan plan_dataset(const Dataset& dataset, LayoutFormat format,
                      std::size_t bsz) {
  std::vector<std::size_t> lengths;
  lengths.reserve(dataset.size());
  for (const auto& s : dataset.samples) lengths.push_back(unit_length(s, format));
  return ffd_pack(lengths, packing_capacity(dataset, format, bsz));
}

PackPlan shuffle_bins(const PackPlan& plan, std::uint64_t seed,
                      std::size_t epoch) {
  std::vector<std::size_t> order(plan.bins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, "pack/shuffle/epoch" + std::to_string(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  PackPlan out;
  out.capacity = plan.capacity;
  for (std::size_t i : order) {
    out.bins.push_back(plan.bins[i]);
    out.fill.push_back(plan.fill[i]);
  }
  return out;
}

double packing_efficiency(const PackPlan& plan) {
  if (plan.bins.empty() || plan.capacity == 0) {
    throw DataError("packing_efficiency: plan has no bins");
  }
  const std::size_t used =
      std::accumulate(plan.fill.begin(), plan.fill.end(), std::size_t{0});
  return double(used) / (double(plan.bins.size()) * double(plan.capacity));
}

namespace {

SequenceLayout bin_row(const PackPlan& plan, std::size_t bin,
                       const Dataset& dataset, LayoutFormat format) {
  std::vector<const PreferenceSample*> ptrs;
  for (std::size_t idx : plan.bins.at(bin)) ptrs.push_back(&dataset.samples.at(idx));
  return to_packed_row(ptrs, plan.bins[bin], row_format(format, true));
}

}  // namespace

std::vector<SequenceLayout> materialize_packed_rows(const PackPlan& plan,
                                                    const Dataset& dataset,
                                                    LayoutFormat format) {
  std::vector<SequenceLayout> rows;
  rows.reserve(plan.bins.size());
  for (std::size_t b = 0; b < plan.bins.size(); ++b) {
    rows.push_back(bin_row(plan, b, dataset, format));
  }
  return rows;
}

CollatedBatch materialize_bin(const PackPlan& plan, std::size_t bin,
                              const Dataset& dataset, LayoutFormat format,
                              TokenId pad_token) {
  SequenceLayout row = bin_row(plan, bin, dataset, format);
  return collate(std::span<const SequenceLayout>(&row, 1), pad_token,
                 plan.capacity);
}

std::string plan_to_json(const PackPlan& plan) {
  nlohmann::json j;
  j["capacity"] = plan.capacity;
  j["bins"] = plan.bins;
  j["fill"] = plan.fill;
  j["efficiency"] = plan.bins.empty() ? 0.0 : packing_efficiency(plan);
  return j.dump();
}

}  // namespace prefshare
