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
#include <stdexcept>
#include <string>

namespace prefshare {

// Exception hierarchy. The CLI maps each family onto a distinct exit code,
// so throw the most specific type that applies.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree (matmul, layout/logits mismatch, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A runtime invariant that no valid input can break was broken anyway.
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Bad input data: empty completions, malformed dataset lines, etc.
class DataError : public Error {
 public:
  using Error::Error;
};

// A layout row does not fit the requested fixed length.
class OverflowError : public DataError {
 public:
  using DataError::DataError;
};

class UnpackableSampleError : public DataError {
 public:
  UnpackableSampleError(std::size_t sample, std::size_t length,
                        std::size_t capacity)
      : DataError("sample " + std::to_string(sample) + " has unit length " +
                  std::to_string(length) + " > packing capacity " +
                  std::to_string(capacity)),
        sample_(sample) {}

  std::size_t sample() const { return sample_; }

 private:
  std::size_t sample_;
};

// Argument outside the mathematical domain of a closed-form model.
class DomainError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class CacheMissError : public Error {
 public:
  explicit CacheMissError(std::size_t sample)
      : Error("reference cache has no entry for sample " +
              std::to_string(sample)),
        sample_(sample) {}

  std::size_t sample() const { return sample_; }

 private:
  std::size_t sample_;
};

}  // namespace prefshare
