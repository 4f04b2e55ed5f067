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

// First-Fit-Decreasing sequence packing.
//
// The packing unit is a whole preference sample: prompt|chosen|prompt|rejected
// in the paired format, prompt|chosen|rejected in the shared format. Bins hold
// bsz x (longest unit in the dataset) tokens, so one bin is one mini-batch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefshare/dataset.hpp"
#include "prefshare/layout.hpp"

namespace prefshare {

enum class LayoutFormat { kPaired, kShared };

std::string to_string(LayoutFormat f);
LayoutFormat parse_layout_format(const std::string& s);
FormatTag row_format(LayoutFormat f, bool packed);

struct PackUnit {
  std::size_t sample_index = 0;
  std::size_t length = 0;
};

struct PackPlan {
  std::size_t capacity = 0;
  std::vector<std::vector<std::size_t>> bins;  // sample indices
  std::vector<std::size_t> fill;               // tokens used per bin
};

std::size_t unit_length(const PreferenceSample& sample, LayoutFormat format);

std::vector<PackUnit> pack_units(const Dataset& dataset, LayoutFormat format);

// bsz x longest unit under `format`.
std::size_t packing_capacity(const Dataset& dataset, LayoutFormat format,
                             std::size_t bsz);

// Visits lengths longest first (ties: lower index first) and puts each into
// the first bin with room, opening a new bin when none fits. Bin entries are
// indices into `lengths`. Throws UnpackableSampleError for length > capacity.
PackPlan ffd_pack(std::span<const std::size_t> lengths, std::size_t capacity);

PackPlan plan_dataset(const Dataset& dataset, LayoutFormat format,
                      std::size_t bsz);

// Permutes bins (never their contents) with the "pack/shuffle/epoch<k>"
// stream of `seed`.
PackPlan shuffle_bins(const PackPlan& plan, std::uint64_t seed,
                      std::size_t epoch);

// total unit tokens / (bins x capacity). Throws DataError on an empty plan.
double packing_efficiency(const PackPlan& plan);

// One row per bin, padded to plan.capacity.
std::vector<SequenceLayout> materialize_packed_rows(const PackPlan& plan,
                                                    const Dataset& dataset,
                                                    LayoutFormat format);

CollatedBatch materialize_bin(const PackPlan& plan, std::size_t bin,
                              const Dataset& dataset, LayoutFormat format,
                              TokenId pad_token = kDefaultPadToken);

std::string plan_to_json(const PackPlan& plan);

}  // namespace prefshare
