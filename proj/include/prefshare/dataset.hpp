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

// JSON-Lines preference datasets.
//
// Each line is one object with "prompt", "chosen" and "rejected", given
// either as integer arrays (pre-tokenized) or as strings run through one of
// the built-in tokenizers. No BOS/EOS tokens are inserted.

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "prefshare/layout.hpp"

namespace prefshare {

enum class TokenizerKind {
  kNone,        // integer arrays only; strings are an error
  kByte,        // one token per UTF-8 byte, ids 0..255
  kWhitespace,  // whitespace-split words, ids assigned by first appearance
};

TokenizerKind parse_tokenizer(const std::string& s);

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerKind kind) : kind_(kind) {}

  TokenizerKind kind() const { return kind_; }
  std::vector<TokenId> encode(const std::string& text);
  std::size_t vocab_size() const;

 private:
  TokenizerKind kind_;
  std::map<std::string, TokenId> words_;
};

struct Dataset {
  std::vector<PreferenceSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const PreferenceSample& operator[](std::size_t i) const { return samples[i]; }
  TokenId max_token() const;
};

// Throws DataError naming the 1-based line number on malformed input. Blank
// lines are skipped.
Dataset parse_jsonl(std::istream& in, Tokenizer& tokenizer);
Dataset load_jsonl(const std::string& path, TokenizerKind tokenizer);

// Integer-array JSONL, one sample per line.
void write_jsonl(const Dataset& dataset, std::ostream& out);

// Applies truncate_sample to every sample.
Dataset truncate_dataset(const Dataset& dataset, std::size_t max_prompt_len,
                         std::size_t max_seq_len);

struct SyntheticConfig {
  std::size_t num_samples = 64;
  // At least one prompt token so a one-token completion still gets scored.
  std::size_t min_prompt = 1;
  std::size_t max_prompt = 16;
  std::size_t min_completion = 1;
  std::size_t max_completion = 8;
  std::int32_t vocab_size = 64;
  std::uint64_t seed = 0;
  // Chosen and rejected draw the same length when set.
  bool equal_completions = false;
};

// Uniform lengths and tokens from the "synthetic/data" stream of `seed`.
Dataset synthetic_dataset(const SyntheticConfig& synth);

}  // namespace prefshare
