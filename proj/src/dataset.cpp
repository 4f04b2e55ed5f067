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

#include "prefshare/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "prefshare/errors.hpp"
#include "prefshare/random.hpp"

namespace prefshare {

TokenizerKind parse_tokenizer(const std::string& s) {
  if (s == "none" || s.empty()) return TokenizerKind::kNone;
  if (s == "byte") return TokenizerKind::kByte;
  if (s == "whitespace") return TokenizerKind::kWhitespace;
  throw ConfigError("unknown tokenizer '" + s +
                    "' (expected none, byte or whitespace)");
}

std::vector<TokenId> Tokenizer::encode(const std::string& text) {
  std::vector<TokenId> ids;
  switch (kind_) {
    case TokenizerKind::kNone:
      throw DataError(
          "string field found but no tokenizer selected (use --tokenizer)");
    case TokenizerKind::kByte:
      for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
      break;
    case TokenizerKind::kWhitespace: {
      std::istringstream words(text);
      std::string w;
      while (words >> w) {
        auto [it, inserted] =
            words_.try_emplace(w, static_cast<TokenId>(words_.size()));
        ids.push_back(it->second);
      }
      break;
    }
  }
  return ids;
}

std::size_t Tokenizer::vocab_size() const {
  switch (kind_) {
    case TokenizerKind::kByte:
      return 256;
    case TokenizerKind::kWhitespace:
      return words_.size();
    case TokenizerKind::kNone:
      return 0;
  }
  return 0;
}

TokenId Dataset::max_token() const {
  TokenId m = -1;
  for (const auto& s : samples) {
    for (const auto* part : {&s.prompt, &s.chosen, &s.rejected}) {
      for (TokenId t : *part) m = std::max(m, t);
    }
  }
  return m;
}

namespace {

std::vector<TokenId> read_field(const nlohmann::json& obj, const char* key,
                                Tokenizer& tokenizer, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!obj.contains(key)) {
    throw DataError(where + "missing field \"" + key + "\"");
  }
  const auto& v = obj.at(key);
  if (v.is_string()) {
    try {
      return tokenizer.encode(v.get<std::string>());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  if (!v.is_array()) {
    throw DataError(where + "field \"" + key +
                    "\" must be a string or an integer array");
  }
  std::vector<TokenId> ids;
  ids.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<std::int64_t>() < 0 ||
        e.get<std::int64_t>() > std::numeric_limits<TokenId>::max()) {
      throw DataError(where + "field \"" + key +
                      "\" contains a non-token value " + e.dump());
    }
    ids.push_back(static_cast<TokenId>(e.get<std::int64_t>()));
  }
  return ids;
}

}  // namespace

Dataset parse_jsonl(std::istream& in, Tokenizer& tokenizer) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(),
                    [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line) +
                      ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw DataError("line " + std::to_string(line) +
                      ": expected a JSON object");
    }
    PreferenceSample s;
    s.prompt = read_field(obj, "prompt", tokenizer, line);
    s.chosen = read_field(obj, "chosen", tokenizer, line);
    s.rejected = read_field(obj, "rejected", tokenizer, line);
    try {
      s.validate();
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line) + ": " + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset load_jsonl(const std::string& path, TokenizerKind tokenizer) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  Tokenizer tok(tokenizer);
  return parse_jsonl(in, tok);
}

void write_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const auto& s : dataset.samples) {
    nlohmann::json j;
    j["prompt"] = s.prompt;
    j["chosen"] = s.chosen;
    j["rejected"] = s.rejected;
    out << j.dump() << '\n';
  }
}

Dataset truncate_dataset(const Dataset& dataset, std::size_t max_prompt_len,
                         std::size_t max_seq_len) {
  Dataset out;
  out.samples.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    try {
      out.samples.push_back(
          truncate_sample(dataset[i], max_prompt_len, max_seq_len));
    } catch (const DataError& e) {
      throw DataError("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

Dataset synthetic_dataset(const SyntheticConfig& synth) {
  if (synth.max_prompt < synth.min_prompt ||
      synth.max_completion < synth.min_completion || synth.min_completion == 0 ||
      synth.vocab_size <= 0) {
    throw ConfigError("synthetic_dataset: inconsistent length ranges");
  }
  auto rng = make_stream(synth.seed, "synthetic/data");
  std::uniform_int_distribution<std::size_t> prompt_len(synth.min_prompt,
                                                        synth.max_prompt);
  std::uniform_int_distribution<std::size_t> completion_len(
      synth.min_completion, synth.max_completion);
  std::uniform_int_distribution<TokenId> token(0, synth.vocab_size - 1);
  const auto draw = [&](std::size_t n) {
    std::vector<TokenId> v(n);
    for (auto& t : v) t = token(rng);
    return v;
  };
  Dataset ds;
  ds.samples.reserve(synth.num_samples);
  for (std::size_t i = 0; i < synth.num_samples; ++i) {
    const std::size_t p = prompt_len(rng);
    const std::size_t c1 = completion_len(rng);
    const std::size_t c2 = synth.equal_completions ? c1 : completion_len(rng);
    PreferenceSample s;
    s.prompt = draw(p);
    s.chosen = draw(c1);
    s.rejected = draw(c2);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace prefshare
