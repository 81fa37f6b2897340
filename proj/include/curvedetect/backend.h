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

#ifndef CURVEDETECT_BACKEND_H_
#define CURVEDETECT_BACKEND_H_

// Abstract contracts shared by the pool builder, the scorers and the wire
// clients.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace curvedetect {

struct GenerationParams {
  int max_tokens = 200;
  // Suppresses end-of-text before this many tokens (0 = off). Sent to remote
  // servers only when non-zero.
  int min_tokens = 0;
  double temperature = 1.0;
  double top_p = 1.0;
  std::vector<std::string> stop;
  std::optional<int64_t> seed;

  // Throws Error(kValidation) when an invariant fails.
  void Validate() const;
  nlohmann::json ToJson() const;
  static GenerationParams FromJson(const nlohmann::json& j);
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string identity() const = 0;
  // Returns the completion only, without the prompt.
  virtual std::string Generate(const std::string& prompt,
                               const GenerationParams& params) const = 0;
};

struct ScoreReport {
  double total_logprob = 0.0;  // natural log
  int64_t token_count = 0;
  std::optional<std::vector<std::pair<std::string, double>>> per_token;

  double mean_logprob() const {
    return token_count > 0 ? total_logprob / static_cast<double>(token_count)
                           : 0.0;
  }
  bool operator==(const ScoreReport&) const = default;
};

// How a ScoreReport becomes log p(x) in the curvature statistic.
enum class LogprobMode { kSum, kMean };

inline double LogprobValue(const ScoreReport& r, LogprobMode mode) {
  return mode == LogprobMode::kSum ? r.total_logprob : r.mean_logprob();
}
LogprobMode ParseLogprobMode(std::string_view s);
std::string_view LogprobModeName(LogprobMode mode);

class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual std::string identity() const = 0;
  virtual ScoreReport Score(std::string_view text,
                            bool keep_per_token = false) const = 0;
  // False means the engine must not call Score concurrently.
  virtual bool concurrent_safe() const { return true; }
};

}  // namespace curvedetect

#endif  // CURVEDETECT_BACKEND_H_
