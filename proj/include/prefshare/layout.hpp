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

// Sequence layouts for preference samples.
//
// Paired rows repeat the prompt once per completion:
//   row 1: prompt | chosen       row 2: prompt | rejected
// A shared row stores the prompt once:
//   prompt | chosen | rejected
// with the rejected span's position ids restarting at len(prompt), so every
// token sees the same positions it would see in its paired row. The mask
// keeps rejected queries away from chosen keys.
//
// The first token of each completion is scored from the last prompt
// position. In a shared row that position serves both completions; it is
// gathered twice, never duplicated in the sequence.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prefshare/masks.hpp"

namespace prefshare {

using TokenId = std::int32_t;

struct PreferenceSample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;

  // Throws DataError on an empty completion or a negative token id.
  void validate() const;

  bool operator==(const PreferenceSample&) const = default;
};

enum class FormatTag { kPairedRow, kSharedRow, kPackedPairedRow, kPackedSharedRow };

std::string to_string(FormatTag tag);
bool is_packed(FormatTag tag);
MaskKind mask_kind_for(FormatTag tag);

enum class Branch : std::uint8_t { kChosen = 0, kRejected = 1 };

// One completion inside a row. Tokens [begin, end) are the completion;
// token `begin` is scored by the logit at `first_predictor` (-1 when the
// prompt is empty and the first token has no context), every later token
// k by the logit at k - 1.
struct ResponseSpan {
  std::size_t sample = 0;
  Branch branch = Branch::kChosen;
  std::int32_t first_predictor = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct SequenceLayout {
  FormatTag format = FormatTag::kPairedRow;
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> position_ids;
  // Dense per-token completion start indices. In a shared row they are
  // constant: chosen_start = len(prompt), rejected_start = len(prompt) +
  // len(chosen). Paired rows carry an empty range (start == start).
  std::vector<std::int32_t> chosen_start;
  std::vector<std::int32_t> rejected_start;
  std::vector<std::uint8_t> loss_mask_chosen;
  std::vector<std::uint8_t> loss_mask_rejected;
  std::vector<std::int32_t> doc_ids;
  std::vector<std::int32_t> response_ids;
  std::vector<ResponseSpan> spans;

  std::size_t size() const { return tokens.size(); }
};

// Row 1 is prompt|chosen, row 2 is prompt|rejected.
std::array<SequenceLayout, 2> to_paired(const PreferenceSample& sample,
                                        std::size_t sample_index = 0);

SequenceLayout to_shared(const PreferenceSample& sample,
                         std::size_t sample_index = 0);

// Concatenates packing units into one row: prompt|chosen|prompt|rejected per
// sample for kPackedPairedRow, prompt|chosen|rejected for kPackedSharedRow.
// Each sample gets its own document id (0, 1, ...) and position ids restart
// per unit. sample_indices[i] labels samples[i].
SequenceLayout to_packed_row(std::span<const PreferenceSample* const> samples,
                             std::span<const std::size_t> sample_indices,
                             FormatTag format);

// Splits a shared row back into its sample. Inverse of to_shared.
PreferenceSample split_shared(const SequenceLayout& row);

struct ScoredTarget {
  std::size_t source = 0;  // position whose logit is read
  TokenId target = 0;      // token it must predict
  Branch branch = Branch::kChosen;
  std::size_t sample = 0;
};

// Every (logit position, target) pair that enters the loss, ordered by span
// then by token. Positions whose next token lies in another response or
// document never appear as a source except as a span's first_predictor.
std::vector<ScoredTarget> next_token_targets(const SequenceLayout& layout);

// Left-truncates the prompt to max_prompt_len and to whatever room the longer
// completion leaves under max_seq_len. A zero limit means unlimited. Throws
// DataError when a completion alone exceeds max_seq_len.
PreferenceSample truncate_sample(const PreferenceSample& sample,
                                 std::size_t max_prompt_len,
                                 std::size_t max_seq_len);

inline constexpr TokenId kDefaultPadToken = 0;

struct BatchTarget {
  std::size_t flat_source = 0;  // row * seq_len + source
  TokenId target = 0;
  Branch branch = Branch::kChosen;
  std::size_t slot = 0;  // index into CollatedBatch::samples
};

// Right-padded B x L arrays ready for the model, plus the mask inputs for the
// batch's format.
struct CollatedBatch {
  FormatTag format = FormatTag::kPairedRow;
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> position_ids;
  std::vector<std::uint8_t> loss_mask_chosen;
  std::vector<std::uint8_t> loss_mask_rejected;
  std::vector<std::uint8_t> is_padding;
  std::shared_ptr<const MaskInputs> mask_inputs;
  // Sample ids in order of first appearance; BatchTarget::slot indexes here.
  std::vector<std::size_t> samples;
  std::vector<BatchTarget> targets;

  std::size_t num_tokens() const { return batch * seq_len; }
  std::size_t num_real_tokens() const;
  MaskKind mask_kind() const { return mask_kind_for(format); }
  MaskFn mask_fn() const { return make_mask_fn(mask_kind(), mask_inputs); }
};

// Throws OverflowError if a row is longer than fixed_len, DataError if rows
// are empty or mix formats. Padding gets doc_id and response_id -1, position
// 0, and no loss.
CollatedBatch collate(std::span<const SequenceLayout> rows,
                      TokenId pad_token, std::size_t fixed_len);

BlockMask build_batch_block_mask(const CollatedBatch& batch,
                                 std::size_t block_size = kDefaultBlockSize);

}  // namespace prefshare
