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

#ifndef CURVEDETECT_RUNNER_H_
#define CURVEDETECT_RUNNER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "curvedetect/backend.h"
#include "curvedetect/evalstats.h"
#include "curvedetect/modelclient.h"
#include "curvedetect/perturb.h"
#include "curvedetect/scorer.h"
#include "curvedetect/textpool.h"
#include "json.hpp"

namespace curvedetect {

// A built-in n-gram model or a remote endpoint, usable as generator and/or
// detector.
struct ModelSpec {
  std::string alias;
  std::string type;  // "ngram" | "endpoint"
  // ngram
  std::vector<std::string> corpora;
  size_t min_words = 0;
  NGramOptions ngram;
  bool exclude_pool = true;  // drop pool candidate texts from training
  double fraction = 1.0;     // train on the leading fraction of documents
  // endpoint
  std::optional<EndpointConfig> endpoint;
  // training step label for checkpoint sweeps
  std::optional<int64_t> step;

  nlohmann::json ToJson() const;
  static ModelSpec FromJson(const std::string& alias, const nlohmann::json& j);
};

struct FillerSpec {
  std::string name;
  std::string type;  // "unigram" | "echo" | "endpoint"
  std::vector<std::string> corpora;
  size_t min_words = 0;
  double smoothing_k = 1.0;
  bool exclude_pool = true;
  std::optional<EndpointConfig> endpoint;

  nlohmann::json ToJson() const;
  static FillerSpec FromJson(const std::string& name, const nlohmann::json& j);
};

struct PoolSpec {
  std::string corpus;
  size_t min_words = 50;
  size_t max_records = 0;
  size_t n_per_class = 300;
  size_t prompt_words = 20;
  size_t min_generation_words = 150;
  size_t max_generation_words = 200;
  int max_retries = 3;
  GenerationParams gen_params;

  nlohmann::json ToJson() const;
  static PoolSpec FromJson(const nlohmann::json& j);
};

// Declarative description of one experiment. Relative paths resolve
// against base_dir (the manifest's directory).
struct ExperimentManifest {
  std::string name;
  uint64_t seed = 0;
  std::optional<std::string> created;
  std::filesystem::path output_dir;
  std::filesystem::path base_dir;
  PoolSpec pool;
  std::map<std::string, ModelSpec> models;
  std::vector<std::string> generators;
  std::vector<std::string> detectors;
  FillerSpec filler;
  std::map<std::string, FillerSpec> fillers;  // named alternatives for ablations
  PerturbationConfig perturbation;
  LogprobMode logprob_mode = LogprobMode::kSum;
  int workers = 1;
  std::optional<std::filesystem::path> cache_dir;

  void Validate() const;
  nlohmann::json ToJson() const;
  // Hash of ToJson() without output_dir, created, cache_dir and workers.
  std::string Hash() const;
  std::filesystem::path Resolve(const std::string& path) const;

  static ExperimentManifest FromJson(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir);
  static ExperimentManifest Load(const std::filesystem::path& path);
};

struct RunOptions {
  std::optional<uint64_t> seed;  // overrides manifest seed
  std::optional<std::filesystem::path> cache_dir;
  std::optional<int> workers;
  bool offline = false;
  // Replaces the HTTP transport (tests); ignored when offline.
  std::shared_ptr<Transport> transport;
  // Use this pool file instead of building one.
  std::optional<std::filesystem::path> pool_from;
  // Stop (as if interrupted) after the named stage has been written.
  std::optional<std::string> stop_after;
};

struct RunResult {
  DetectionMatrix matrix;
  ScoreBreakdown breakdown;
  std::vector<std::string> executed;  // stages that ran
  std::vector<std::string> skipped;   // stages satisfied from stages.json
  std::vector<std::string> warnings;
  bool partial = false;
  bool stopped = false;  // stop_after hit
  int64_t network_calls = 0;
};

// Staged pipeline: pool -> perturb -> score:<detector>... -> evaluate. Each
// stage records the hash of its inputs and outputs in stages.json and is
// skipped when both still match.
class Experiment {
 public:
  Experiment(ExperimentManifest manifest, RunOptions options = {});
  ~Experiment();
  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  void BuildPool();
  void Perturb();
  void Score(const std::string& detector);
  void Evaluate();
  // All stages in order; stops early when stop_after is hit.
  RunResult Run();

  const ExperimentManifest& manifest() const { return manifest_; }
  const RunResult& result() const { return result_; }

 private:
  class Impl;
  ExperimentManifest manifest_;
  std::unique_ptr<Impl> impl_;
  RunResult result_;
};

RunResult RunMatrix(const ExperimentManifest& manifest, const RunOptions& options = {});

struct AblationRow {
  std::string setting;  // pct value or filler name
  std::string generator;
  std::string detector;
  std::optional<double> auc;
  MeanStd machine_d;
  MeanStd human_d;
};

struct AblationTable {
  std::string kind;  // "mask_pct" | "filler"
  std::vector<AblationRow> rows;
  bool partial = false;
  int64_t network_calls = 0;
  std::string ToCsv(const std::string& comment = "") const;
  nlohmann::json ToJson() const;
};

// Self-detection (detectors = generators) with contiguous masking at each
// percentage. Outputs go to <output_dir>/ablation_mask_pct/.
AblationTable RunAblationMaskPct(const ExperimentManifest& manifest,
                                 const std::vector<double>& pcts,
                                 const RunOptions& options = {});

// The manifest's pipeline once per named filler (manifest.fillers).
AblationTable RunAblationFiller(const ExperimentManifest& manifest,
                                const std::vector<std::string>& fillers,
                                const RunOptions& options = {});

struct SweepTable {
  std::vector<std::string> detectors;
  std::vector<int64_t> steps;
  std::vector<std::string> generators;
  Grid auc;  // [generator][step]
  bool partial = false;
  std::string ToCsv(const std::string& comment = "") const;
  nlohmann::json ToJson() const;
};

// Matrix restricted to the given detectors, which must carry strictly
// increasing step labels.
SweepTable RunCheckpointSweep(const ExperimentManifest& manifest,
                              const std::vector<std::string>& detectors,
                              const RunOptions& options = {});

}  // namespace curvedetect

#endif  // CURVEDETECT_RUNNER_H_
