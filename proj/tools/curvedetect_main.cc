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

// Command-line entry point for running detection experiments.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "curvedetect/runner.h"
#include "curvedetect/scorer.h"
#include "curvedetect/textpool.h"
#include "curvedetect/util.h"

namespace cd = curvedetect;
namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
  std::optional<uint64_t> seed;
  std::string cache_dir;
  std::optional<int> workers;
  bool offline = false;
  bool verbose = false;
};

cd::RunOptions ToOptions(const GlobalFlags& g) {
  cd::RunOptions o;
  o.seed = g.seed;
  if (!g.cache_dir.empty()) o.cache_dir = g.cache_dir;
  o.workers = g.workers;
  o.offline = g.offline;
  return o;
}

int Finish(bool partial, int64_t network_calls) {
  spdlog::info("network calls: {}", network_calls);
  if (partial) {
    std::fprintf(stderr, "partial results emitted\n");
    return 4;
  }
  return 0;
}

void PrintMatrix(const cd::DetectionMatrix& m) { std::cout << m.ToCsv(); }

void PrintAblation(const cd::AblationTable& t) { std::cout << t.ToCsv(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curvature-based detection of machine-generated text"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--seed", g.seed, "Override the manifest seed");
  app.add_option("--cache-dir", g.cache_dir, "Response cache directory");
  app.add_option("--workers", g.workers, "Parallel workers per stage")->check(CLI::PositiveNumber);
  app.add_flag("--offline", g.offline, "Fail instead of calling the network");
  app.add_flag("-v,--verbose", g.verbose, "Log progress");

  std::string manifest_path;
  auto add_manifest = [&](CLI::App* sub) {
    sub->add_option("manifest", manifest_path, "Experiment manifest (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
  };

  auto* pool = app.add_subcommand("pool", "Target pool commands");
  pool->require_subcommand(1);
  auto* pool_build = pool->add_subcommand("build", "Build the target pool");
  add_manifest(pool_build);

  auto* perturb = app.add_subcommand("perturb", "Generate perturbations for the pool");
  add_manifest(perturb);

  std::vector<std::string> score_detectors;
  auto* score = app.add_subcommand("score", "Score pool and perturbations with detectors");
  add_manifest(score);
  score->add_option("--detector", score_detectors, "Detector alias (repeatable)")->required();

  auto* eval = app.add_subcommand("eval", "Build the detection matrix and plots");
  add_manifest(eval);

  auto* run = app.add_subcommand("run", "Run every stage of a manifest");
  add_manifest(run);

  auto* ablate = app.add_subcommand("ablate", "Ablation studies");
  ablate->require_subcommand(1);
  std::vector<double> pcts = {0.01, 0.02, 0.15, 0.50, 0.90};
  auto* mask_pct = ablate->add_subcommand("mask-pct", "Contiguous masking percentage sweep");
  add_manifest(mask_pct);
  mask_pct->add_option("--pcts", pcts, "Masking fractions")->delimiter(',');
  std::vector<std::string> filler_names;
  auto* filler = ablate->add_subcommand("filler", "Compare fill backends");
  add_manifest(filler);
  filler->add_option("--fillers", filler_names, "Filler names from the manifest")
      ->delimiter(',')
      ->required();

  auto* sweep = app.add_subcommand("sweep", "Detector sweeps");
  sweep->require_subcommand(1);
  std::vector<std::string> sweep_detectors;
  auto* checkpoints = sweep->add_subcommand("checkpoints", "AUC per detector checkpoint");
  add_manifest(checkpoints);
  checkpoints->add_option("--detectors", sweep_detectors, "Detector aliases in step order")
      ->delimiter(',')
      ->required();

  auto* report = app.add_subcommand("report", "Print the matrix of a finished run");
  add_manifest(report);

  auto* ngram = app.add_subcommand("ngram", "Built-in n-gram models");
  ngram->require_subcommand(1);
  std::vector<std::string> train_corpora;
  std::string train_out;
  cd::NGramOptions train_opts;
  size_t train_min_words = 1;
  auto* train = ngram->add_subcommand("train", "Train and serialize an n-gram model");
  train->add_option("--corpus", train_corpora, "Corpus file (repeatable)")->required();
  train->add_option("--order", train_opts.order, "Model order");
  train->add_option("--smoothing-k", train_opts.smoothing_k, "Add-k constant");
  train->add_option("--interpolation", train_opts.interpolation, "Per-order weights")
      ->delimiter(',');
  train->add_option("--min-words", train_min_words, "Drop shorter documents");
  train->add_option("--out", train_out, "Output path")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);
  spdlog::set_pattern("%l: %v");

  try {
    if (train->parsed()) {
      std::vector<std::string> texts;
      for (const auto& c : train_corpora) {
        for (auto& t : cd::LoadCorpus(c, train_min_words, 0, 0)) texts.push_back(std::move(t));
      }
      cd::NGramModel model = cd::TrainNGram(texts, train_opts);
      cd::WriteFileAtomic(train_out, model.Serialize());
      std::cout << model.identity() << "\n";
      return 0;
    }

    const cd::ExperimentManifest manifest = cd::ExperimentManifest::Load(manifest_path);
    const cd::RunOptions options = ToOptions(g);

    if (run->parsed()) {
      cd::RunResult r = cd::RunMatrix(manifest, options);
      PrintMatrix(r.matrix);
      return Finish(r.partial, r.network_calls);
    }
    if (mask_pct->parsed()) {
      cd::AblationTable t = cd::RunAblationMaskPct(manifest, pcts, options);
      PrintAblation(t);
      return Finish(t.partial, t.network_calls);
    }
    if (filler->parsed()) {
      cd::AblationTable t = cd::RunAblationFiller(manifest, filler_names, options);
      PrintAblation(t);
      return Finish(t.partial, t.network_calls);
    }
    if (checkpoints->parsed()) {
      cd::SweepTable t = cd::RunCheckpointSweep(manifest, sweep_detectors, options);
      std::cout << t.ToCsv();
      return Finish(t.partial, 0);
    }
    if (report->parsed()) {
      const fs::path path = manifest.output_dir / "matrix.csv";
      if (!fs::exists(path)) {
        throw cd::Error(cd::ErrorKind::kValidation, "no matrix at " + path.string());
      }
      std::cout << cd::ReadFile(path);
      return 0;
    }

    cd::Experiment e(manifest, options);
    if (pool_build->parsed()) {
      e.BuildPool();
    } else if (perturb->parsed()) {
      e.Perturb();
    } else if (score->parsed()) {
      for (const auto& d : score_detectors) e.Score(d);
    } else if (eval->parsed()) {
      e.Evaluate();
      PrintMatrix(e.result().matrix);
      return Finish(e.result().partial, e.result().network_calls);
    }
    return 0;
  } catch (const cd::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return cd::ExitCodeFor(err.kind());
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  }
}
