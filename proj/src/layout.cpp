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

#include "prefshare/layout.hpp"

#include <algorithm>
#include <unordered_map>

#include "prefshare/errors.hpp"

namespace prefshare {

void PreferenceSample::validate() const {
  if (chosen.empty()) throw DataError("sample has an empty chosen completion");
  if (rejected.empty()) {
    throw DataError("sample has an empty rejected completion");
  }
  for (const auto* part : {&prompt, &chosen, &rejected}) {
    for (TokenId t : *part) {
      if (t < 0) throw DataError("negative token id " + std::to_string(t));
    }
  }
}

std::string to_string(FormatTag tag) {
  switch (tag) {
    case FormatTag::kPairedRow:
      return "paired";
    case FormatTag::kSharedRow:
      return "shared";
    case FormatTag::kPackedPairedRow:
      return "packed_paired";
    case FormatTag::kPackedSharedRow:
      return "packed_shared";
  }
  return "unknown";
}

bool is_packed(FormatTag tag) {
  return tag == FormatTag::kPackedPairedRow ||
         tag == FormatTag::kPackedSharedRow;
}

MaskKind mask_kind_for(FormatTag tag) {
  switch (tag) {
    case FormatTag::kPairedRow:
      return MaskKind::kCausal;
    case FormatTag::kSharedRow:
      return MaskKind::kPrefixSharing;
    case FormatTag::kPackedPairedRow:
      return MaskKind::kPackedBaseline;
    case FormatTag::kPackedSharedRow:
      return MaskKind::kPackedPrefix;
  }
  throw InvariantError("mask_kind_for: unknown format");
}

namespace {

// Appends `tokens` to the row with consecutive positions starting at
// `first_pos`, all sharing the given metadata.
void append_span(SequenceLayout& row, const std::vector<TokenId>& tokens,
                 std::int32_t first_pos, std::int32_t doc,
                 std::int32_t response, std::int32_t chosen_start,
                 std::int32_t rejected_start, bool chosen_loss,
                 bool rejected_loss) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    row.tokens.push_back(tokens[i]);
    row.position_ids.push_back(first_pos + static_cast<std::int32_t>(i));
    row.doc_ids.push_back(doc);
    row.response_ids.push_back(response);
    row.chosen_start.push_back(chosen_start);
    row.rejected_start.push_back(rejected_start);
    row.loss_mask_chosen.push_back(chosen_loss ? 1 : 0);
    row.loss_mask_rejected.push_back(rejected_loss ? 1 : 0);
  }
}

// prompt|completion starting at the row's current end.
void append_paired_unit(SequenceLayout& row, const PreferenceSample& s,
                        std::size_t sample_index, Branch branch,
                        std::int32_t doc, std::int32_t response) {
  const auto& completion = branch == Branch::kChosen ? s.chosen : s.rejected;
  const auto base = static_cast<std::int32_t>(row.size());
  const auto p = static_cast<std::int32_t>(s.prompt.size());
  const std::int32_t start = base + p;
  const bool chosen = branch == Branch::kChosen;
  append_span(row, s.prompt, 0, doc, response, start, start, false, false);
  append_span(row, completion, p, doc, response, start, start, chosen, !chosen);
  ResponseSpan span;
  span.sample = sample_index;
  span.branch = branch;
  span.first_predictor = p > 0 ? start - 1 : -1;
  span.begin = static_cast<std::size_t>(start);
  span.end = row.size();
  row.spans.push_back(span);
}

// prompt|chosen|rejected starting at the row's current end.
void append_shared_unit(SequenceLayout& row, const PreferenceSample& s,
                        std::size_t sample_index, std::int32_t doc) {
  const auto base = static_cast<std::int32_t>(row.size());
  const auto p = static_cast<std::int32_t>(s.prompt.size());
  const auto c1 = static_cast<std::int32_t>(s.chosen.size());
  const std::int32_t chosen_start = base + p;
  const std::int32_t rejected_start = chosen_start + c1;
  const std::int32_t predictor = p > 0 ? chosen_start - 1 : -1;
  append_span(row, s.prompt, 0, doc, doc, chosen_start, rejected_start, false,
              false);
  append_span(row, s.chosen, p, doc, doc, chosen_start, rejected_start, true,
              false);
  append_span(row, s.rejected, p, doc, doc, chosen_start, rejected_start,
              false, true);
  row.spans.push_back({sample_index, Branch::kChosen, predictor,
                       static_cast<std::size_t>(chosen_start),
                       static_cast<std::size_t>(rejected_start)});
  row.spans.push_back({sample_index, Branch::kRejected, predictor,
                       static_cast<std::size_t>(rejected_start), row.size()});
}

}  // namespace

std::array<SequenceLayout, 2> to_paired(const PreferenceSample& sample,
                                        std::size_t sample_index) {
  sample.validate();
  std::array<SequenceLayout, 2> rows;
  rows[0].format = FormatTag::kPairedRow;
  rows[1].format = FormatTag::kPairedRow;
  append_paired_unit(rows[0], sample, sample_index, Branch::kChosen, 0, 0);
  append_paired_unit(rows[1], sample, sample_index, Branch::kRejected, 0, 0);
  return rows;
}

SequenceLayout to_shared(const PreferenceSample& sample,
                         std::size_t sample_index) {
  sample.validate();
  SequenceLayout row;
  row.format = FormatTag::kSharedRow;
  append_shared_unit(row, sample, sample_index, 0);
  return row;
}

SequenceLayout to_packed_row(std::span<const PreferenceSample* const> samples,
                             std::span<const std::size_t> sample_indices,
                             FormatTag format) {
  if (samples.size() != sample_indices.size()) {
    throw ShapeError("to_packed_row: samples and indices differ in length");
  }
  if (!is_packed(format)) {
    throw ConfigError("to_packed_row: format must be a packed format");
  }
  SequenceLayout row;
  row.format = format;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const PreferenceSample& s = *samples[k];
    s.validate();
    const auto doc = static_cast<std::int32_t>(k);
    if (format == FormatTag::kPackedPairedRow) {
      append_paired_unit(row, s, sample_indices[k], Branch::kChosen, doc,
                         2 * doc);
      append_paired_unit(row, s, sample_indices[k], Branch::kRejected, doc,
                         2 * doc + 1);
    } else {
      append_shared_unit(row, s, sample_indices[k], doc);
    }
  }
  return row;
}

PreferenceSample split_shared(const SequenceLayout& row) {
  if (row.format != FormatTag::kSharedRow || row.size() == 0) {
    throw DataError("split_shared: not a shared row");
  }
  const auto cs = static_cast<std::size_t>(row.chosen_start.front());
  const auto rs = static_cast<std::size_t>(row.rejected_start.front());
  PreferenceSample s;
  s.prompt.assign(row.tokens.begin(), row.tokens.begin() + cs);
  s.chosen.assign(row.tokens.begin() + cs, row.tokens.begin() + rs);
  s.rejected.assign(row.tokens.begin() + rs, row.tokens.end());
  return s;
}

std::vector<ScoredTarget> next_token_targets(const SequenceLayout& layout) {
  std::vector<ScoredTarget> out;
  for (const ResponseSpan& span : layout.spans) {
    for (std::size_t k = span.begin; k < span.end; ++k) {
      std::int32_t source = k == span.begin
                                ? span.first_predictor
                                : static_cast<std::int32_t>(k) - 1;
      if (source < 0) continue;
      out.push_back({static_cast<std::size_t>(source), layout.tokens[k],
                     span.branch, span.sample});
    }
  }
  return out;
}

PreferenceSample truncate_sample(const PreferenceSample& sample,
                                 std::size_t max_prompt_len,
                                 std::size_t max_seq_len) {
  sample.validate();
  const std::size_t longest =
      std::max(sample.chosen.size(), sample.rejected.size());
  std::size_t keep = sample.prompt.size();
  if (max_prompt_len > 0) keep = std::min(keep, max_prompt_len);
  if (max_seq_len > 0) {
    if (longest > max_seq_len) {
      throw DataError("completion length " + std::to_string(longest) +
                      " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
    keep = std::min(keep, max_seq_len - longest);
  }
  PreferenceSample out = sample;
  out.prompt.assign(sample.prompt.end() - static_cast<std::ptrdiff_t>(keep),
                    sample.prompt.end());
  return out;
}

std::size_t CollatedBatch::num_real_tokens() const {
  return static_cast<std::size_t>(
      std::count(is_padding.begin(), is_padding.end(), std::uint8_t{0}));
}

CollatedBatch collate(std::span<const SequenceLayout> rows,
                      TokenId pad_token, std::size_t fixed_len) {
  if (rows.empty()) throw DataError("collate: no rows");
  const FormatTag format = rows.front().format;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b].format != format) {
      throw DataError("collate: rows mix formats " + to_string(format) +
                      " and " + to_string(rows[b].format));
    }
    if (rows[b].size() > fixed_len) {
      throw OverflowError("collate: row " + std::to_string(b) + " has " +
                          std::to_string(rows[b].size()) +
                          " tokens, fixed length is " +
                          std::to_string(fixed_len));
    }
    if (rows[b].size() == 0) throw DataError("collate: empty row");
  }
  const std::size_t B = rows.size();
  const std::size_t L = fixed_len;
  CollatedBatch out;
  out.format = format;
  out.batch = B;
  out.seq_len = L;
  out.tokens.assign(B * L, pad_token);
  out.position_ids.assign(B * L, 0);
  out.loss_mask_chosen.assign(B * L, 0);
  out.loss_mask_rejected.assign(B * L, 0);
  out.is_padding.assign(B * L, 1);
  auto mi = std::make_shared<MaskInputs>(B, L);
  std::unordered_map<std::size_t, std::size_t> slot_of;
  for (std::size_t b = 0; b < B; ++b) {
    const SequenceLayout& row = rows[b];
    mi->row_chosen_start[b] = row.chosen_start.front();
    mi->row_rejected_start[b] = row.rejected_start.front();
    for (std::size_t t = 0; t < row.size(); ++t) {
      const std::size_t i = b * L + t;
      out.tokens[i] = row.tokens[t];
      out.position_ids[i] = row.position_ids[t];
      out.loss_mask_chosen[i] = row.loss_mask_chosen[t];
      out.loss_mask_rejected[i] = row.loss_mask_rejected[t];
      out.is_padding[i] = 0;
      mi->chosen_start[i] = row.chosen_start[t];
      mi->rejected_start[i] = row.rejected_start[t];
      mi->doc_ids[i] = row.doc_ids[t];
      mi->response_ids[i] = row.response_ids[t];
    }
    for (const ResponseSpan& span : row.spans) {
      if (slot_of.try_emplace(span.sample, out.samples.size()).second) {
        out.samples.push_back(span.sample);
      }
    }
    for (const ScoredTarget& st : next_token_targets(row)) {
      out.targets.push_back({b * L + st.source, st.target, st.branch,
                             slot_of.at(st.sample)});
    }
  }
  mi->validate();
  out.mask_inputs = std::move(mi);
  return out;
}

BlockMask build_batch_block_mask(const CollatedBatch& batch,
                                 std::size_t block_size) {
  return build_block_mask(batch.mask_fn(), batch.batch, batch.seq_len,
                          block_size);
}

}  // namespace prefshare
