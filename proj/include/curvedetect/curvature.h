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

#ifndef CURVEDETECT_CURVATURE_H_
#define CURVEDETECT_CURVATURE_H_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curvedetect/backend.h"
#include "json.hpp"

namespace curvedetect {

// d = log p(x) - mean_i log p(x~_i) for one record under one detector.
struct CurvatureResult {
  std::string record_id;
  std::string detector_id;
  double target_logprob = 0.0;
  std::vector<double> perturb_logprobs;
  double d = 0.0;
  // d / population stdev of perturb_logprobs; absent when the stdev is 0.
  std::optional<double> d_normalized;

  nlohmann::json ToJson() const;
  static CurvatureResult FromJson(const nlohmann::json& j);
};

// Pure evaluation from precomputed log-probabilities. Throws kValidation
// when perturb_logprobs is empty.
CurvatureResult CurvatureFromLogprobs(std::string record_id, std::string detector_id,
                                      double target_logprob,
                                      std::vector<double> perturb_logprobs);

// Scores the target and every neighbor; any scoring failure fails the whole
// record.
CurvatureResult ComputeCurvature(const ScorerBackend& scorer, std::string_view record_id,
                                 std::string_view text,
                                 std::span<const std::string> perturbations,
                                 LogprobMode mode = LogprobMode::kSum);

enum class Prediction { kHuman, kMachine };

struct Verdict {
  std::string record_id;
  double d = 0.0;
  double threshold = 0.0;
  Prediction predicted = Prediction::kHuman;
};

// Machine iff d >= threshold.
std::vector<Verdict> Classify(std::span<const CurvatureResult> results, double threshold);

}  // namespace curvedetect

#endif  // CURVEDETECT_CURVATURE_H_
