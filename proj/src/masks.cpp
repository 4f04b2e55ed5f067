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

#include "prefshare/masks.hpp"

#include <algorithm>
#include <utility>

#include "json.hpp"
#include "prefshare/errors.hpp"

namespace prefshare {

MaskInputs::MaskInputs(std::size_t b, std::size_t l)
    : batch(b),
      seq_len(l),
      row_chosen_start(b, 0),
      row_rejected_start(b, 0),
      chosen_start(b * l, 0),
      rejected_start(b * l, 0),
      doc_ids(b * l, -1),
      response_ids(b * l, -1) {}

void MaskInputs::validate() const {
  const std::size_t n = batch * seq_len;
  if (row_chosen_start.size() != batch || row_rejected_start.size() != batch ||
      chosen_start.size() != n || rejected_start.size() != n ||
      doc_ids.size() != n || response_ids.size() != n) {
    throw InvariantError("MaskInputs: array sizes do not match B x L");
  }
  const auto in_range = [&](std::int32_t v) {
    return v >= 0 && static_cast<std::size_t>(v) < seq_len;
  };
  for (std::size_t b = 0; b < batch; ++b) {
    if (seq_len > 0 &&
        (!in_range(row_chosen_start[b]) || !in_range(row_rejected_start[b]) ||
         row_chosen_start[b] > row_rejected_start[b])) {
      throw InvariantError("MaskInputs: bad row start indices in row " +
                           std::to_string(b));
    }
    std::int32_t last_doc = -1;
    bool in_padding = false;
    for (std::size_t t = 0; t < seq_len; ++t) {
      const std::size_t i = at(b, t);
      if (!in_range(chosen_start[i]) || !in_range(rejected_start[i]) ||
          chosen_start[i] > rejected_start[i]) {
        throw InvariantError("MaskInputs: bad start indices at row " +
                             std::to_string(b) + " token " + std::to_string(t));
      }
      const std::int32_t d = doc_ids[i];
      if (d < 0) {
        in_padding = true;
        continue;
      }
      if (in_padding || d < last_doc) {
        throw InvariantError("MaskInputs: document ids not contiguous in row " +
                             std::to_string(b));
      }
      last_doc = d;
    }
  }
}

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::kCausal:
      return "causal";
    case MaskKind::kPrefixSharing:
      return "prefix_sharing";
    case MaskKind::kPackedBaseline:
      return "packed_baseline";
    case MaskKind::kPackedPrefix:
      return "packed_prefix";
  }
  return "unknown";
}

bool causal(std::size_t /*b*/, std::size_t q, std::size_t kv) {
  return kv <= q;
}

bool prefix_sharing_mask(std::size_t b, std::size_t q, std::size_t kv,
                         const MaskInputs& in) {
  const bool causal_mask = kv <= q;
  const auto chosen_ind = static_cast<std::size_t>(in.row_chosen_start[b]);
  const auto rejected_ind = static_cast<std::size_t>(in.row_rejected_start[b]);
  const bool dpo_mask =
      !((rejected_ind <= q) && (chosen_ind <= kv && kv < rejected_ind));
  return causal_mask && dpo_mask;
}

bool packed_baseline_mask(std::size_t b, std::size_t q, std::size_t kv,
                          const MaskInputs& in) {
  const bool causal_mask = kv <= q;
  const bool response_mask =
      in.response_ids[in.at(b, q)] == in.response_ids[in.at(b, kv)];
  return causal_mask && response_mask;
}

bool packed_prefix_mask(std::size_t b, std::size_t q, std::size_t kv,
                        const MaskInputs& in) {
  const bool causal_mask = kv <= q;
  const std::size_t qi = in.at(b, q);
  const bool document_mask = in.doc_ids[qi] == in.doc_ids[in.at(b, kv)];
  const auto chosen_ind = static_cast<std::size_t>(in.chosen_start[qi]);
  const auto rejected_ind = static_cast<std::size_t>(in.rejected_start[qi]);
  const bool dpo_mask =
      !((rejected_ind <= q) && (chosen_ind <= kv && kv < rejected_ind));
  return causal_mask && document_mask && dpo_mask;
}

MaskFn make_mask_fn(MaskKind kind, std::shared_ptr<const MaskInputs> inputs) {
  switch (kind) {
    case MaskKind::kCausal:
      return [](std::size_t b, std::size_t q, std::size_t kv) {
        return causal(b, q, kv);
      };
    case MaskKind::kPrefixSharing:
      return [in = std::move(inputs)](std::size_t b, std::size_t q,
                                      std::size_t kv) {
        return prefix_sharing_mask(b, q, kv, *in);
      };
    case MaskKind::kPackedBaseline:
      return [in = std::move(inputs)](std::size_t b, std::size_t q,
                                      std::size_t kv) {
        return packed_baseline_mask(b, q, kv, *in);
      };
    case MaskKind::kPackedPrefix:
      return [in = std::move(inputs)](std::size_t b, std::size_t q,
                                      std::size_t kv) {
        return packed_prefix_mask(b, q, kv, *in);
      };
  }
  throw InvariantError("make_mask_fn: unknown mask kind");
}

char to_char(BlockClass c) {
  switch (c) {
    case BlockClass::kEmpty:
      return 'E';
    case BlockClass::kPartial:
      return 'P';
    case BlockClass::kFull:
      return 'F';
  }
  return '?';
}

BlockMask::BlockMask(MaskFn predicate, std::size_t batch, std::size_t seq_len,
                     std::size_t block_size, std::vector<BlockClass> classes)
    : predicate_(std::move(predicate)),
      batch_(batch),
      seq_len_(seq_len),
      block_size_(block_size),
      num_blocks_(block_size == 0 ? 0 : (seq_len + block_size - 1) / block_size),
      classes_(std::move(classes)) {
  if (classes_.size() != batch_ * num_blocks_ * num_blocks_) {
    throw ShapeError("BlockMask: classification grid has wrong size");
  }
}

std::size_t BlockMask::block_end(std::size_t blk) const {
  const std::size_t end = (blk + 1) * block_size_;
  return end < seq_len_ ? end : seq_len_;
}

std::string BlockMask::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t b = 0; b < batch_; ++b) {
    nlohmann::json grid = nlohmann::json::array();
    for (std::size_t qb = 0; qb < num_blocks_; ++qb) {
      nlohmann::json line = nlohmann::json::array();
      for (std::size_t kb = 0; kb < num_blocks_; ++kb) {
        line.push_back(std::string(1, to_char(at(b, qb, kb))));
      }
      grid.push_back(std::move(line));
    }
    rows.push_back(std::move(grid));
  }
  nlohmann::json j;
  j["block_size"] = block_size_;
  j["seq_len"] = seq_len_;
  j["rows"] = std::move(rows);
  return j.dump();
}

BlockMask build_block_mask(MaskFn predicate, std::size_t batch,
                           std::size_t seq_len, std::size_t block_size) {
  if (block_size == 0) throw ConfigError("block_size must be >= 1");
  const std::size_t nb = (seq_len + block_size - 1) / block_size;
  std::vector<BlockClass> classes(batch * nb * nb, BlockClass::kEmpty);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t qb = 0; qb < nb; ++qb) {
      const std::size_t q0 = qb * block_size;
      const std::size_t q1 = std::min(seq_len, q0 + block_size);
      for (std::size_t kb = 0; kb < nb; ++kb) {
        const std::size_t k0 = kb * block_size;
        const std::size_t k1 = std::min(seq_len, k0 + block_size);
        bool any_true = false;
        bool any_false = false;
        for (std::size_t q = q0; q < q1 && !(any_true && any_false); ++q) {
          for (std::size_t kv = k0; kv < k1; ++kv) {
            if (predicate(b, q, kv)) {
              any_true = true;
            } else {
              any_false = true;
            }
            if (any_true && any_false) break;
          }
        }
        BlockClass c = BlockClass::kPartial;
        if (!any_true) c = BlockClass::kEmpty;
        if (!any_false && any_true) c = BlockClass::kFull;
        classes[(b * nb + qb) * nb + kb] = c;
      }
    }
  }
  return BlockMask(std::move(predicate), batch, seq_len, block_size,
                   std::move(classes));
}

BlockMaskStats block_mask_stats(const BlockMask& mask) {
  BlockMaskStats s;
  const std::size_t nb = mask.num_q_blocks();
  const double total_blocks = double(mask.batch()) * double(nb) * double(nb);
  const double total_pairs =
      double(mask.batch()) * double(mask.seq_len()) * double(mask.seq_len());
  if (total_blocks == 0) return s;
  std::size_t empty = 0, partial = 0, full = 0;
  double skipped_pairs = 0;
  for (std::size_t b = 0; b < mask.batch(); ++b) {
    for (std::size_t qb = 0; qb < nb; ++qb) {
      for (std::size_t kb = 0; kb < nb; ++kb) {
        switch (mask.at(b, qb, kb)) {
          case BlockClass::kEmpty:
            ++empty;
            skipped_pairs +=
                double(mask.block_end(qb) - mask.block_begin(qb)) *
                double(mask.block_end(kb) - mask.block_begin(kb));
            break;
          case BlockClass::kPartial:
            ++partial;
            break;
          case BlockClass::kFull:
            ++full;
            break;
        }
      }
    }
  }
  s.empty_fraction = double(empty) / total_blocks;
  s.partial_fraction = double(partial) / total_blocks;
  s.full_fraction = double(full) / total_blocks;
  s.skipped_flop_fraction = skipped_pairs / total_pairs;
  return s;
}

}  // namespace prefshare
