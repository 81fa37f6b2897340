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

#ifndef CURVEDETECT_TEXTPOOL_H_
#define CURVEDETECT_TEXTPOOL_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "curvedetect/backend.h"
#include "json.hpp"

namespace curvedetect {

enum class Label { kHuman, kMachine };
std::string_view LabelName(Label label);
Label ParseLabel(std::string_view s);

struct TextRecord {
  std::string id;
  std::string text;
  Label label = Label::kHuman;
  std::optional<std::string> generator_id;  // iff label == kMachine
  std::optional<std::string> prompt;        // iff label == kMachine

  void Validate() const;
  nlohmann::json ToJson() const;
  static TextRecord FromJson(const nlohmann::json& j);
  bool operator==(const TextRecord&) const = default;
};

struct CorpusManifest {
  std::string path;
  size_t min_words = 0;
  size_t max_records = 0;
  uint64_t seed = 0;
};

// Shared by all detectors. Human record i and machine record i come from the
// same human text; the pairing is kept for audit only.
struct TargetPool {
  std::vector<TextRecord> records;
  uint64_t seed = 0;
  CorpusManifest source;
  std::vector<std::string> generator_labels;
  std::vector<std::string> generator_identities;
  GenerationParams gen_params;

  size_t CountLabel(Label label) const;
  // Throws on duplicate ids or records that violate their invariants.
  void Validate() const;
};

// Reads JSONL ({"text": ...} per line) or plain text (blank-line separated
// documents); format is chosen by the .jsonl/.json extension or a leading
// '{'. Keeps texts with >= min_words words and returns a uniform subsample
// of at most max_records (0 = all) in corpus order, whitespace-normalized.
std::vector<std::string> LoadCorpus(const std::filesystem::path& path,
                                    size_t min_words, size_t max_records,
                                    uint64_t seed);

// First n_tokens whitespace words joined by single spaces.
std::string ExtractPrompt(std::string_view text, size_t n_tokens = 20);

struct PoolOptions {
  size_t n_per_class = 300;
  size_t prompt_words = 20;
  size_t min_generation_words = 150;
  size_t max_generation_words = 200;
  int max_retries = 3;
  int workers = 1;
  GenerationParams gen_params;
  uint64_t seed = 0;
  CorpusManifest source;  // recorded in the pool, not read
  // Record-id prefix and generator_id per generator; defaults to the backend
  // identity.
  std::vector<std::string> generator_labels;
};

// Builds a pool with n_per_class human and n_per_class machine records per
// generator. A human text is admitted only if every generator produced an
// acceptable completion for its prompt (within max_retries retries);
// otherwise the next spare text is tried. Output is independent of workers.
TargetPool BuildPool(std::span<const std::string> human_texts,
                     std::span<const GenerationBackend* const> generators,
                     const PoolOptions& options);
TargetPool BuildPool(std::span<const std::string> human_texts,
                     const GenerationBackend& generator,
                     const PoolOptions& options);

// Pool JSONL: one TextRecord per line. An optional leading {"_meta": ...}
// line is skipped by the reader. WritePool also writes the sidecar
// <path>.manifest.json (seed, corpus, generators, gen_params).
std::string PoolToJsonl(const TargetPool& pool, const nlohmann::json& meta = {});
TargetPool PoolFromJsonl(std::string_view data);
void WritePool(const std::filesystem::path& path, const TargetPool& pool,
               const nlohmann::json& meta = {});
TargetPool ReadPool(const std::filesystem::path& path);

}  // namespace curvedetect

#endif  // CURVEDETECT_TEXTPOOL_H_
