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

// Attention-mask predicates and their block-sparse summary.
//
// A predicate answers "may query q of row b attend to key kv?". Four are
// provided: plain causal, prefix sharing (one chosen/rejected pair per row),
// packed paired units keyed by response id, and packed prefix-shared units
// keyed by document id. build_block_mask() classifies fixed-size tiles of
// the L x L grid so attention can skip tiles that are entirely masked and
// drop the per-element check on tiles that are entirely visible.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace prefshare {

inline constexpr std::size_t kDefaultBlockSize = 128;

// Per-batch metadata read by the predicates. All B x L arrays are row-major.
struct MaskInputs {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  // One (chosen, rejected) start pair per row; read by prefix_sharing_mask.
  std::vector<std::int32_t> row_chosen_start;
  std::vector<std::int32_t> row_rejected_start;
  // Dense per-token start indices; read by packed_prefix_mask at the query.
  std::vector<std::int32_t> chosen_start;
  std::vector<std::int32_t> rejected_start;
  // Document ids; padding carries -1.
  std::vector<std::int32_t> doc_ids;
  // One id per (prompt + single response) unit; padding carries -1.
  std::vector<std::int32_t> response_ids;

  MaskInputs() = default;
  MaskInputs(std::size_t b, std::size_t l);

  std::size_t at(std::size_t b, std::size_t t) const { return b * seq_len + t; }

  // Throws InvariantError when an index is out of range, a document is
  // non-contiguous, or chosen_start > rejected_start.
  void validate() const;
};

enum class MaskKind { kCausal, kPrefixSharing, kPackedBaseline, kPackedPrefix };

std::string to_string(MaskKind kind);

bool causal(std::size_t b, std::size_t q, std::size_t kv);
bool prefix_sharing_mask(std::size_t b, std::size_t q, std::size_t kv,
                         const MaskInputs& in);
bool packed_baseline_mask(std::size_t b, std::size_t q, std::size_t kv,
                          const MaskInputs& in);
bool packed_prefix_mask(std::size_t b, std::size_t q, std::size_t kv,
                        const MaskInputs& in);

using MaskFn = std::function<bool(std::size_t b, std::size_t q,
                                  std::size_t kv)>;

// Binds one of the predicates above to its inputs.
MaskFn make_mask_fn(MaskKind kind, std::shared_ptr<const MaskInputs> inputs);

enum class BlockClass : std::uint8_t { kEmpty = 0, kPartial = 1, kFull = 2 };

char to_char(BlockClass c);

class BlockMask {
 public:
  BlockMask() = default;
  BlockMask(MaskFn predicate, std::size_t batch, std::size_t seq_len,
            std::size_t block_size, std::vector<BlockClass> classes);

  std::size_t batch() const { return batch_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t block_size() const { return block_size_; }
  std::size_t num_q_blocks() const { return num_blocks_; }
  std::size_t num_kv_blocks() const { return num_blocks_; }

  BlockClass at(std::size_t b, std::size_t qb, std::size_t kb) const {
    return classes_[(b * num_blocks_ + qb) * num_blocks_ + kb];
  }
  bool allowed(std::size_t b, std::size_t q, std::size_t kv) const {
    return predicate_(b, q, kv);
  }
  const MaskFn& predicate() const { return predicate_; }

  // [begin, end) token range of block index `blk`, clipped to seq_len.
  std::size_t block_begin(std::size_t blk) const { return blk * block_size_; }
  std::size_t block_end(std::size_t blk) const;

  // {"block_size", "seq_len", "rows": [[["P","E"], ...], ...]}
  std::string to_json() const;

 private:
  MaskFn predicate_;
  std::size_t batch_ = 0;
  std::size_t seq_len_ = 0;
  std::size_t block_size_ = 0;
  std::size_t num_blocks_ = 0;
  std::vector<BlockClass> classes_;
};

// Evaluates `predicate` over every in-range (q, kv) pair of each tile.
// Pairs past seq_len in a ragged edge tile are ignored.
BlockMask build_block_mask(MaskFn predicate, std::size_t batch,
                           std::size_t seq_len,
                           std::size_t block_size = kDefaultBlockSize);

struct BlockMaskStats {
  double empty_fraction = 0;
  double partial_fraction = 0;
  double full_fraction = 0;
  // Share of (q, kv) element pairs that lie in Empty tiles.
  double skipped_flop_fraction = 0;
};

BlockMaskStats block_mask_stats(const BlockMask& mask);

}  // namespace prefshare
