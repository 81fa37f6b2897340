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

#include "curvedetect/curvature.h"

#include <cmath>

#include "curvedetect/scorer.h"
#include "curvedetect/util.h"

namespace curvedetect {

using nlohmann::json;

json CurvatureResult::ToJson() const {
  json j = {{"record_id", record_id},
            {"detector_id", detector_id},
            {"target_logprob", target_logprob},
            {"perturb_logprobs", perturb_logprobs},
            {"d", d}};
  j["d_normalized"] = d_normalized ? json(*d_normalized) : json(nullptr);
  return j;
}

CurvatureResult CurvatureResult::FromJson(const json& j) {
  CurvatureResult r;
  r.record_id = j.at("record_id").get<std::string>();
  r.detector_id = j.at("detector_id").get<std::string>();
  r.target_logprob = j.at("target_logprob").get<double>();
  r.perturb_logprobs = j.at("perturb_logprobs").get<std::vector<double>>();
  r.d = j.at("d").get<double>();
  if (j.contains("d_normalized") && !j["d_normalized"].is_null()) {
    r.d_normalized = j["d_normalized"].get<double>();
  }
  return r;
}

CurvatureResult CurvatureFromLogprobs(std::string record_id, std::string detector_id,
                                      double target_logprob,
                                      std::vector<double> perturb_logprobs) {
  if (perturb_logprobs.empty()) {
    throw Error(ErrorKind::kValidation, "curvature needs at least one perturbation");
  }
  const auto k = static_cast<long double>(perturb_logprobs.size());
  long double sum = 0.0L;
  for (double lp : perturb_logprobs) sum += lp;
  const long double mean = sum / k;
  long double sq = 0.0L;
  for (double lp : perturb_logprobs) sq += (lp - mean) * (lp - mean);
  const auto stdev = static_cast<double>(std::sqrt(sq / k));

  CurvatureResult r;
  r.record_id = std::move(record_id);
  r.detector_id = std::move(detector_id);
  r.target_logprob = target_logprob;
  r.perturb_logprobs = std::move(perturb_logprobs);
  r.d = static_cast<double>(target_logprob - mean);
  if (stdev > 0.0) r.d_normalized = r.d / stdev;
  return r;
}

CurvatureResult ComputeCurvature(const ScorerBackend& scorer, std::string_view record_id,
                                 std::string_view text,
                                 std::span<const std::string> perturbations,
                                 LogprobMode mode) {
  if (perturbations.empty()) {
    throw Error(ErrorKind::kValidation, "curvature needs at least one perturbation");
  }
  const double target = LogprobValue(Logprob(scorer, text), mode);
  std::vector<double> lps;
  lps.reserve(perturbations.size());
  for (const auto& p : perturbations) lps.push_back(LogprobValue(Logprob(scorer, p), mode));
  return CurvatureFromLogprobs(std::string(record_id), scorer.identity(), target,
                               std::move(lps));
}

std::vector<Verdict> Classify(std::span<const CurvatureResult> results, double threshold) {
  std::vector<Verdict> out;
  out.reserve(results.size());
  for (const auto& r : results) {
    out.push_back({r.record_id, r.d, threshold,
                   r.d >= threshold ? Prediction::kMachine : Prediction::kHuman});
  }
  return out;
}

}  // namespace curvedetect
