// Copyright 2026 The curvedetect Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CURVEDETECT_UTIL_H_
#define CURVEDETECT_UTIL_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace curvedetect {

inline constexpr std::string_view kEngineVersion = CURVEDETECT_VERSION;

enum class ErrorKind {
  kValidation,  // bad input or configuration
  kBackend,     // generator/scorer/filler failure after retries
  kProtocol,    // malformed wire response
  kCapability,  // backend lacks a required feature (permanent)
  kIo,
  kPartial,     // results emitted with holes
  kOffline,     // cache miss under --offline
};

// All engine failures are reported through this type. The kind selects the
// CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// 0 success, 2 validation, 3 backend failure, 4 partial results.
int ExitCodeFor(ErrorKind kind);

// ---- text ----

// Whitespace-delimited words (any run of ASCII whitespace separates).
std::vector<std::string> SplitWords(std::string_view text);
std::string JoinWords(const std::vector<std::string>& words, size_t begin = 0,
                      size_t end = std::numeric_limits<size_t>::max());
std::string NormalizeWhitespace(std::string_view text);
size_t CountWords(std::string_view text);

// ---- randomness ----

// Stable 64-bit FNV-1a; used to key RNG substreams by record id.
uint64_t Fnv1a64(std::string_view data);
uint64_t SplitMix64(uint64_t x);
uint64_t DeriveSeed(uint64_t seed, std::string_view key, uint64_t index = 0);

// Portable random stream. std::mt19937_64 output is fully specified by the
// standard; the distributions are not, so they are implemented here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t Next() { return engine_(); }
  // Uniform integer in [0, bound). bound must be > 0.
  uint64_t UniformInt(uint64_t bound);
  // Uniform double in [0, 1) with 53 random bits.
  double UniformDouble();
  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[UniformInt(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ---- hashing & files ----

std::string Sha256Hex(std::string_view data);
std::string ReadFile(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the target.
void WriteFileAtomic(const std::filesystem::path& path, std::string_view data);

// ---- parallelism ----

// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions thrown by
// fn are rethrown (lowest index first) after all work finishes.
void ParallelFor(size_t n, int workers, const std::function<void(size_t)>& fn);

}  // namespace curvedetect

#endif  // CURVEDETECT_UTIL_H_
