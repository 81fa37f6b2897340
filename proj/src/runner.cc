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

#include "curvedetect/runner.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>

#include "curvedetect/curvature.h"
#include "curvedetect/svg.h"
#include "curvedetect/util.h"

namespace curvedetect {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- manifest ----

json ModelSpec::ToJson() const {
  json j = {{"type", type}};
  if (type == "ngram") {
    j["corpora"] = corpora;
    j["min_words"] = min_words;
    j["order"] = ngram.order;
    j["smoothing_k"] = ngram.smoothing_k;
    j["interpolation"] = ngram.interpolation;
    j["exclude_pool"] = exclude_pool;
    j["fraction"] = fraction;
  } else if (endpoint) {
    j["endpoint"] = endpoint->ToJson();
  }
  if (step) j["step"] = *step;
  return j;
}

namespace {

std::vector<std::string> CorporaField(const json& j) {
  if (j.contains("corpora")) return j["corpora"].get<std::vector<std::string>>();
  if (j.contains("corpus")) return {j["corpus"].get<std::string>()};
  return {};
}

EndpointConfig EndpointField(const std::string& alias, const json& j) {
  json e = j.contains("endpoint") ? j["endpoint"] : j;
  if (!e.contains("alias")) e["alias"] = alias;
  return EndpointConfig::FromJson(e);
}

}  // namespace

ModelSpec ModelSpec::FromJson(const std::string& alias, const json& j) {
  ModelSpec m;
  m.alias = alias;
  m.type = j.value("type", "ngram");
  if (m.type == "ngram") {
    m.corpora = CorporaField(j);
    if (m.corpora.empty()) {
      throw Error(ErrorKind::kValidation, "model " + alias + ": ngram needs a corpus");
    }
    m.min_words = j.value("min_words", m.min_words);
    m.ngram.order = j.value("order", 3);
    m.ngram.smoothing_k = j.value("smoothing_k", 1.0);
    m.ngram.interpolation = j.value("interpolation", std::vector<double>{});
    m.exclude_pool = j.value("exclude_pool", true);
    m.fraction = j.value("fraction", 1.0);
    if (!(m.fraction > 0.0 && m.fraction <= 1.0)) {
      throw Error(ErrorKind::kValidation, "model " + alias + ": fraction must be in (0, 1]");
    }
  } else if (m.type == "endpoint") {
    m.endpoint = EndpointField(alias, j);
  } else {
    throw Error(ErrorKind::kValidation, "model " + alias + ": unknown type " + m.type);
  }
  if (j.contains("step")) m.step = j["step"].get<int64_t>();
  return m;
}

json FillerSpec::ToJson() const {
  json j = {{"type", type}};
  if (type == "unigram") {
    j["corpora"] = corpora;
    j["min_words"] = min_words;
    j["smoothing_k"] = smoothing_k;
    j["exclude_pool"] = exclude_pool;
  } else if (type == "endpoint" && endpoint) {
    j["endpoint"] = endpoint->ToJson();
  }
  return j;
}

FillerSpec FillerSpec::FromJson(const std::string& name, const json& j) {
  FillerSpec f;
  f.name = name;
  f.type = j.value("type", "unigram");
  if (f.type == "unigram") {
    f.corpora = CorporaField(j);
    if (f.corpora.empty()) {
      throw Error(ErrorKind::kValidation, "filler " + name + ": unigram needs a corpus");
    }
    f.min_words = j.value("min_words", f.min_words);
    f.smoothing_k = j.value("smoothing_k", f.smoothing_k);
    f.exclude_pool = j.value("exclude_pool", true);
  } else if (f.type == "endpoint") {
    f.endpoint = EndpointField(name, j);
  } else if (f.type != "echo") {
    throw Error(ErrorKind::kValidation, "filler " + name + ": unknown type " + f.type);
  }
  return f;
}

json PoolSpec::ToJson() const {
  return {{"corpus", corpus},
          {"min_words", min_words},
          {"max_records", max_records},
          {"n_per_class", n_per_class},
          {"prompt_words", prompt_words},
          {"min_generation_words", min_generation_words},
          {"max_generation_words", max_generation_words},
          {"max_retries", max_retries},
          {"gen_params", gen_params.ToJson()}};
}

PoolSpec PoolSpec::FromJson(const json& j) {
  PoolSpec p;
  p.corpus = j.at("corpus").get<std::string>();
  p.min_words = j.value("min_words", p.min_words);
  p.max_records = j.value("max_records", p.max_records);
  p.n_per_class = j.value("n_per_class", p.n_per_class);
  p.prompt_words = j.value("prompt_words", p.prompt_words);
  p.min_generation_words = j.value("min_generation_words", p.min_generation_words);
  p.max_generation_words = j.value("max_generation_words", p.max_generation_words);
  p.max_retries = j.value("max_retries", p.max_retries);
  if (j.contains("gen_params")) p.gen_params = GenerationParams::FromJson(j["gen_params"]);
  return p;
}

void ExperimentManifest::Validate() const {
  if (name.empty()) throw Error(ErrorKind::kValidation, "manifest needs a name");
  if (generators.empty()) throw Error(ErrorKind::kValidation, "manifest lists no generators");
  if (detectors.empty()) throw Error(ErrorKind::kValidation, "manifest lists no detectors");
  for (const auto& g : generators) {
    if (!models.count(g)) throw Error(ErrorKind::kValidation, "unknown generator model " + g);
  }
  std::set<std::string> seen;
  for (const auto& d : detectors) {
    auto it = models.find(d);
    if (it == models.end()) throw Error(ErrorKind::kValidation, "unknown detector model " + d);
    if (it->second.endpoint && !it->second.endpoint->can_score) {
      throw Error(ErrorKind::kCapability, "model " + d + " is generate-only; cannot detect");
    }
    if (!seen.insert(d).second) throw Error(ErrorKind::kValidation, "duplicate detector " + d);
  }
  if (pool.n_per_class == 0) throw Error(ErrorKind::kValidation, "n_per_class must be >= 1");
  pool.gen_params.Validate();
  perturbation.Validate();
  if (workers < 1) throw Error(ErrorKind::kValidation, "workers must be >= 1");
}

json ExperimentManifest::ToJson() const {
  json models_json = json::object();
  for (const auto& [alias, m] : models) models_json[alias] = m.ToJson();
  json fillers_json = json::object();
  for (const auto& [n, f] : fillers) fillers_json[n] = f.ToJson();
  json perturb = perturbation.ToJson();
  perturb.erase("seed");
  json j = {{"name", name},
            {"seed", seed},
            {"output_dir", output_dir.string()},
            {"pool", pool.ToJson()},
            {"models", models_json},
            {"generators", generators},
            {"detectors", detectors},
            {"filler", filler.ToJson()},
            {"fillers", fillers_json},
            {"perturbation", perturb},
            {"logprob_mode", LogprobModeName(logprob_mode)},
            {"workers", workers}};
  if (created) j["created"] = *created;
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  return j;
}

std::string ExperimentManifest::Hash() const {
  json j = ToJson();
  for (const char* k : {"output_dir", "created", "cache_dir", "workers"}) j.erase(k);
  return Sha256Hex(j.dump());
}

fs::path ExperimentManifest::Resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

ExperimentManifest ExperimentManifest::FromJson(const json& j, const fs::path& base_dir) {
  ExperimentManifest m;
  try {
    m.base_dir = base_dir;
    m.name = j.at("name").get<std::string>();
    m.seed = j.value("seed", uint64_t{0});
    if (j.contains("created")) m.created = j["created"].get<std::string>();
    m.output_dir = m.Resolve(j.value("output_dir", "runs/" + m.name));
    m.pool = PoolSpec::FromJson(j.at("pool"));
    for (const auto& [alias, spec] : j.at("models").items()) {
      m.models.emplace(alias, ModelSpec::FromJson(alias, spec));
    }
    m.generators = j.at("generators").get<std::vector<std::string>>();
    m.detectors = j.at("detectors").get<std::vector<std::string>>();
    m.filler = FillerSpec::FromJson("filler", j.at("filler"));
    if (j.contains("fillers")) {
      for (const auto& [n, spec] : j["fillers"].items()) {
        m.fillers.emplace(n, FillerSpec::FromJson(n, spec));
      }
    }
    if (j.contains("perturbation")) m.perturbation = PerturbationConfig::FromJson(j["perturbation"]);
    m.logprob_mode = ParseLogprobMode(j.value("logprob_mode", "sum"));
    m.workers = j.value("workers", 1);
    if (j.contains("cache_dir")) m.cache_dir = m.Resolve(j["cache_dir"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("invalid manifest: ") + e.what());
  }
  m.Validate();
  return m;
}

ExperimentManifest ExperimentManifest::Load(const fs::path& path) {
  json j;
  try {
    j = json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, path.string() + ": " + e.what());
  }
  return FromJson(j, fs::absolute(path).parent_path());
}

// ---- artifact helpers ----

namespace {

struct StopRequested {};

std::string SafeName(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'
                      ? c
                      : '_');
  }
  return out;
}

bool IsMetaLine(std::string_view line) {
  return line.starts_with("{\"_meta\"") || line.starts_with("# curvedetect") ||
         line.starts_with("<!-- curvedetect");
}

// Hash of an artifact's content with its provenance stamp removed, so a
// changed manifest hash alone does not invalidate downstream stages.
std::string BodyHash(const fs::path& path) {
  const std::string data = ReadFile(path);
  if (path.extension() == ".json") {
    try {
      json j = json::parse(data);
      if (j.is_object()) j.erase("_meta");
      return Sha256Hex(j.dump());
    } catch (const json::exception&) {
      return Sha256Hex(data);
    }
  }
  std::string body;
  size_t pos = 0;
  while (pos < data.size()) {
    size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    std::string_view line(data.data() + pos, end - pos);
    if (!IsMetaLine(line)) {
      body.append(line);
      body.push_back('\n');
    }
    pos = end + 1;
  }
  return Sha256Hex(body);
}

// Rewrites the leading {"_meta"} line of a JSONL artifact.
void Restamp(const fs::path& path, const json& meta) {
  const std::string data = ReadFile(path);
  const std::string stamp = json{{"_meta", meta}}.dump();
  const size_t nl = data.find('\n');
  const std::string_view first(data.data(), nl == std::string::npos ? data.size() : nl);
  if (!first.starts_with("{\"_meta\"") || first == stamp) return;
  WriteFileAtomic(path, stamp + data.substr(nl == std::string::npos ? data.size() : nl));
}

}  // namespace

// ---- experiment ----

class Experiment::Impl {
 public:
  Impl(const ExperimentManifest& manifest, RunOptions options, RunResult& result)
      : m_(manifest), options_(std::move(options)), result_(result) {
    out_ = m_.output_dir;
    fs::create_directories(out_);
    manifest_hash_ = m_.Hash();
    meta_ = {{"engine_version", kEngineVersion}, {"manifest_sha256", manifest_hash_}};
    comment_ = "curvedetect " + std::string(kEngineVersion) + " manifest_sha256=" + manifest_hash_;
    workers_ = options_.workers.value_or(m_.workers);
    if (options_.offline) {
      transport_ = std::make_shared<OfflineTransport>();
    } else if (options_.transport) {
      transport_ = options_.transport;
    } else {
      transport_ = std::make_shared<HttpTransport>();
    }
    const fs::path cache_dir = options_.cache_dir ? *options_.cache_dir
                               : m_.cache_dir     ? *m_.cache_dir
                                                  : out_ / "cache";
    cache_ = std::make_shared<ResponseCache>(cache_dir);
    LoadStages();
    json manifest_json = m_.ToJson();
    manifest_json["_meta"] = meta_;
    WriteFileAtomic(out_ / "manifest.json", manifest_json.dump(2) + "\n");
  }

  int64_t NetworkCalls() const {
    int64_t total = 0;
    for (const auto& [alias, c] : clients_) total += c->stats().network_calls.load();
    return total;
  }

  // ---- stages ----

  void BuildPool() {
    json input;
    if (options_.pool_from) {
      input = {{"pool_from", Sha256Hex(ReadFile(*options_.pool_from))}};
    } else {
      json gens = json::array();
      for (const auto& g : m_.generators) gens.push_back({{"alias", g}, {"spec", ModelInput(g)}});
      input = {{"pool", m_.pool.ToJson()},
               {"seed", m_.seed},
               {"corpus_sha256", FileSha(m_.Resolve(m_.pool.corpus))},
               {"generators", gens}};
    }
    const std::string input_hash = Sha256Hex(input.dump());
    if (UpToDate("pool", input_hash)) {
      Skip("pool");
      return;
    }
    TargetPool pool;
    if (options_.pool_from) {
      pool = ReadPool(*options_.pool_from);
    } else {
      std::vector<const GenerationBackend*> gens;
      for (const auto& g : m_.generators) gens.push_back(&Generator(g));
      PoolOptions po;
      po.n_per_class = m_.pool.n_per_class;
      po.prompt_words = m_.pool.prompt_words;
      po.min_generation_words = m_.pool.min_generation_words;
      po.max_generation_words = m_.pool.max_generation_words;
      po.max_retries = m_.pool.max_retries;
      po.workers = workers_;
      po.gen_params = m_.pool.gen_params;
      po.seed = DeriveSeed(m_.seed, "pool");
      po.source = {m_.pool.corpus, m_.pool.min_words, m_.pool.max_records, m_.seed};
      po.generator_labels = m_.generators;
      pool = curvedetect::BuildPool(Candidates(), gens, po);
    }
    WritePool(out_ / "pool.jsonl", pool, Meta("pool"));
    pool_.reset();
    Record("pool", input_hash, {"pool.jsonl", "pool.jsonl.manifest.json"});
  }

  void Perturb() {
    const json input = {{"pool", OutputHash("pool", "pool.jsonl")},
                        {"perturbation", PerturbConfig().ToJson()},
                        {"filler", FillerInput(m_.filler)}};
    const std::string input_hash = Sha256Hex(input.dump());
    if (UpToDate("perturb", input_hash)) {
      Skip("perturb");
      return;
    }
    const TargetPool& pool = Pool();
    const FillBackend& filler = Filler(m_.filler);
    const PerturbationConfig cfg = PerturbConfig();
    std::vector<std::vector<PerturbedText>> per_record(pool.records.size());
    std::vector<std::string> errors(pool.records.size());
    ParallelFor(pool.records.size(), workers_, [&](size_t i) {
      const auto& r = pool.records[i];
      try {
        per_record[i] = PerturbK(r.text, r.id, cfg, filler);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kCapability || e.kind() == ErrorKind::kOffline) throw;
        errors[i] = e.what();
      }
    });
    std::string out = json{{"_meta", Meta("perturbations")}}.dump() + "\n";
    json excluded = json::array();
    for (size_t i = 0; i < per_record.size(); ++i) {
      if (!errors[i].empty()) {
        Warn("perturb: excluding " + pool.records[i].id + ": " + errors[i]);
        excluded.push_back(pool.records[i].id);
        continue;
      }
      for (const auto& p : per_record[i]) out += p.ToJson().dump() + "\n";
    }
    WriteFileAtomic(out_ / "perturbations.jsonl", out);
    perturbations_.reset();
    Record("perturb", input_hash, {"perturbations.jsonl"}, {{"excluded", excluded}});
  }

  void Score(const std::string& detector) {
    if (std::find(m_.detectors.begin(), m_.detectors.end(), detector) == m_.detectors.end()) {
      throw Error(ErrorKind::kValidation, "detector " + detector + " is not in the manifest");
    }
    const std::string stage = "score:" + detector;
    const json input = {{"pool", OutputHash("pool", "pool.jsonl")},
                        {"perturbations", OutputHash("perturb", "perturbations.jsonl")},
                        {"detector", ModelInput(detector)},
                        {"logprob_mode", LogprobModeName(m_.logprob_mode)}};
    const std::string input_hash = Sha256Hex(input.dump());
    if (UpToDate(stage, input_hash)) {
      Skip(stage);
      return;
    }
    const TargetPool& pool = Pool();
    const auto& perturbations = Perturbations();
    const ScorerBackend& scorer = Scorer(detector);
    const int workers = scorer.concurrent_safe() ? workers_ : 1;

    struct Scored {
      ScoreReport target;
      std::vector<ScoreReport> neighbors;
      std::string error;
    };
    std::vector<Scored> scored(pool.records.size());
    ParallelFor(pool.records.size(), workers, [&](size_t i) {
      const auto& r = pool.records[i];
      auto it = perturbations.find(r.id);
      if (it == perturbations.end()) {
        scored[i].error = "no perturbations";
        return;
      }
      try {
        scored[i].target = Logprob(scorer, r.text);
        for (const auto& p : it->second) scored[i].neighbors.push_back(Logprob(scorer, p.text));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kCapability || e.kind() == ErrorKind::kOffline) throw;
        scored[i].error = e.what();
      }
    });

    std::string scores = json{{"_meta", Meta("scores:" + detector)}}.dump() + "\n";
    std::string curv = json{{"_meta", Meta("curvature:" + detector)}}.dump() + "\n";
    json excluded = json::array();
    for (size_t i = 0; i < pool.records.size(); ++i) {
      const auto& r = pool.records[i];
      const auto& s = scored[i];
      if (!s.error.empty()) {
        Warn("score " + detector + ": excluding " + r.id + ": " + s.error);
        excluded.push_back(r.id);
        continue;
      }
      json neighbors = json::array();
      std::vector<double> lps;
      for (const auto& n : s.neighbors) {
        neighbors.push_back({n.total_logprob, n.token_count});
        lps.push_back(LogprobValue(n, m_.logprob_mode));
      }
      scores += json{{"record_id", r.id},
                     {"target", {s.target.total_logprob, s.target.token_count}},
                     {"perturbations", neighbors}}
                    .dump() +
                "\n";
      CurvatureResult c = CurvatureFromLogprobs(
          r.id, scorer.identity(), LogprobValue(s.target, m_.logprob_mode), std::move(lps));
      json cj = c.ToJson();
      cj["label"] = LabelName(r.label);
      if (r.generator_id) cj["generator_id"] = *r.generator_id;
      cj["target_total_logprob"] = s.target.total_logprob;
      cj["target_mean_logprob"] = s.target.mean_logprob();
      curv += cj.dump() + "\n";
    }
    const std::string name = SafeName(detector);
    WriteFileAtomic(out_ / "scores" / (name + ".jsonl"), scores);
    WriteFileAtomic(out_ / "curvature" / (name + ".jsonl"), curv);
    Record(stage, input_hash, {"scores/" + name + ".jsonl", "curvature/" + name + ".jsonl"},
           {{"excluded", excluded}});
  }

  void Evaluate() {
    json curv_hashes = json::object();
    for (const auto& d : m_.detectors) {
      const std::string stage = "score:" + d;
      if (StageRecorded(stage)) {
        curv_hashes[d] = OutputHash(stage, "curvature/" + SafeName(d) + ".jsonl");
      }
    }
    const json input = {{"pool", OutputHash("pool", "pool.jsonl")},
                        {"generators", m_.generators},
                        {"detectors", m_.detectors},
                        {"curvature", curv_hashes}};
    const std::string input_hash = Sha256Hex(input.dump());

    const TargetPool& pool = Pool();
    ResultStore store;
    for (const auto& g : m_.generators) store.AddGenerator(g);
    for (const auto& d : m_.detectors) store.AddDetector(d);
    size_t scored_records = 0;
    for (const auto& d : m_.detectors) {
      const fs::path path = out_ / "curvature" / (SafeName(d) + ".jsonl");
      if (!curv_hashes.contains(d) || !fs::exists(path)) continue;
      const std::string data = ReadFile(path);
      std::istringstream in(data);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || IsMetaLine(line)) continue;
        json j = json::parse(line);
        const double d_value = j.at("d").get<double>();
        const double ll = j.at("target_logprob").get<double>();
        ++scored_records;
        if (j.at("label").get<std::string>() == "human") {
          for (const auto& g : m_.generators) {
            auto& cell = store.Cell(g, d);
            cell.human_d.push_back(d_value);
            cell.human_ll.push_back(ll);
          }
        } else {
          const std::string g = j.at("generator_id").get<std::string>();
          if (std::find(m_.generators.begin(), m_.generators.end(), g) == m_.generators.end()) {
            continue;
          }
          auto& cell = store.Cell(g, d);
          cell.machine_d.push_back(d_value);
          cell.machine_ll.push_back(ll);
        }
      }
    }
    result_.matrix = BuildMatrix(store);
    result_.breakdown = Breakdown(store);
    for (const auto& miss : result_.matrix.missing) Warn("matrix hole " + miss);
    if (!result_.matrix.complete() ||
        scored_records < pool.records.size() * m_.detectors.size()) {
      result_.partial = true;
    }

    if (UpToDate("evaluate", input_hash)) {
      Skip("evaluate");
      return;
    }
    std::vector<std::string> outputs;
    auto write = [&](const std::string& rel, const std::string& data) {
      WriteFileAtomic(out_ / rel, data);
      outputs.push_back(rel);
    };
    const auto& mx = result_.matrix;
    write("matrix.csv", mx.ToCsv(comment_));
    json mj = mx.ToJson();
    mj["_meta"] = meta_;
    write("matrix.json", mj.dump(2) + "\n");
    write("matrix_diff.csv", mx.DiffToCsv(comment_));
    write("breakdown.csv", result_.breakdown.ToCsv(comment_));
    json bj = {{"cells", result_.breakdown.ToJson()}, {"_meta", meta_}};
    write("breakdown.json", bj.dump(2) + "\n");
    for (const auto& g : store.generators()) {
      for (const auto& d : store.detectors()) {
        const CellData* cell = store.Find(g, d);
        if (!cell || cell->machine_d.empty() || cell->human_d.empty()) continue;
        write("roc/" + SafeName(g) + "__" + SafeName(d) + ".csv",
              RocToCsv(ComputeRoc(cell->machine_d, cell->human_d), comment_));
      }
    }
    write("plots/heatmap.svg", svg::Heatmap(m_.name + ": AUC (rows generators, columns detectors)",
                                            mx.generators, mx.detectors, mx.auc, 0.5, 1.0, comment_));
    Grid diff_rows;
    std::vector<std::string> diff_labels;
    for (size_t g = 0; g < mx.generators.size(); ++g) {
      if (mx.diff[g]) {
        diff_rows.push_back(*mx.diff[g]);
        diff_labels.push_back(mx.generators[g]);
      }
    }
    write("plots/diff_heatmap.svg",
          svg::Heatmap(m_.name + ": self AUC minus cross AUC", diff_labels, mx.detectors,
                       diff_rows, 0.0, 0.5, comment_));
    write("plots/mean_auc.svg", svg::BarChart(m_.name + ": mean AUC per detector", mx.detectors,
                                              mx.mean_row, 0.0, 1.0, comment_));
    std::vector<svg::ErrorBarGroup> curv_groups;
    std::vector<svg::ErrorBarGroup> ll_groups;
    for (const auto& c : result_.breakdown.cells) {
      const std::string label = c.generator + " / " + c.detector;
      curv_groups.push_back({label, c.machine_d, c.human_d});
      ll_groups.push_back({label, c.machine_ll, c.human_ll});
    }
    write("plots/breakdown_curvature.svg",
          svg::MeanStdChart(m_.name + ": curvature mean +- std", curv_groups, comment_));
    write("plots/breakdown_loglik.svg",
          svg::MeanStdChart(m_.name + ": log-likelihood mean +- std", ll_groups, comment_));
    Record("evaluate", input_hash, outputs);
  }

  void FinishRun() {
    // Artifacts kept from earlier runs carry the stamp of the manifest that
    // produced them; refresh it so every artifact names the current manifest.
    for (const auto& [name, st] : stages_["stages"].items()) {
      for (const auto& [rel, h] : st["outputs"].items()) {
        if (fs::path(rel).extension() == ".jsonl" && fs::exists(out_ / rel)) {
          Restamp(out_ / rel, Meta(ArtifactName(rel)));
        }
      }
    }
    std::string log = "# " + comment_ + "\n";
    for (const auto& s : result_.executed) log += "ran " + s + "\n";
    for (const auto& s : result_.skipped) log += "up-to-date " + s + "\n";
    for (const auto& w : result_.warnings) log += "warning " + w + "\n";
    if (result_.partial) log += "partial results\n";
    WriteFileAtomic(out_ / "run.log", log);
    result_.network_calls = NetworkCalls();
  }

 private:
  static std::string ArtifactName(const std::string& rel) {
    if (rel == "pool.jsonl") return "pool";
    if (rel == "perturbations.jsonl") return "perturbations";
    const fs::path p(rel);
    return p.parent_path().string() + ":" + p.stem().string();
  }

  json Meta(const std::string& artifact) const {
    json m = meta_;
    m["artifact"] = artifact;
    return m;
  }

  void Warn(const std::string& message) {
    spdlog::warn("{}", message);
    std::lock_guard lock(mu_);
    result_.warnings.push_back(message);
  }

  // ---- stage bookkeeping ----

  void LoadStages() {
    const fs::path path = out_ / "stages.json";
    if (fs::exists(path)) {
      try {
        stages_ = json::parse(ReadFile(path));
      } catch (const json::exception&) {
        spdlog::warn("ignoring unreadable {}", path.string());
      }
    }
    if (!stages_.is_object() || !stages_.contains("stages")) {
      stages_ = {{"stages", json::object()}};
    }
  }

  bool StageRecorded(const std::string& stage) const {
    return stages_["stages"].contains(stage);
  }

  bool UpToDate(const std::string& stage, const std::string& input_hash) const {
    if (!StageRecorded(stage)) return false;
    const auto& st = stages_["stages"][stage];
    if (st.value("input", "") != input_hash) return false;
    for (const auto& [rel, h] : st["outputs"].items()) {
      const fs::path p = out_ / rel;
      if (!fs::exists(p) || BodyHash(p) != h.get<std::string>()) return false;
    }
    return true;
  }

  std::string OutputHash(const std::string& stage, const std::string& rel) const {
    if (!StageRecorded(stage) || !stages_["stages"][stage]["outputs"].contains(rel)) {
      throw Error(ErrorKind::kValidation, "stage " + stage + " has not produced " + rel);
    }
    return stages_["stages"][stage]["outputs"][rel].get<std::string>();
  }

  void Record(const std::string& stage, const std::string& input_hash,
              const std::vector<std::string>& outputs, const json& extra = json::object()) {
    json outs = json::object();
    for (const auto& rel : outputs) outs[rel] = BodyHash(out_ / rel);
    json st = {{"input", input_hash}, {"outputs", outs}};
    for (const auto& [k, v] : extra.items()) st[k] = v;
    stages_["stages"][stage] = st;
    stages_["_meta"] = meta_;
    WriteFileAtomic(out_ / "stages.json", stages_.dump(2) + "\n");
    result_.executed.push_back(stage);
    spdlog::info("stage {} done", stage);
    if (options_.stop_after && *options_.stop_after == stage) throw StopRequested{};
  }

  void Skip(const std::string& stage) {
    result_.skipped.push_back(stage);
    spdlog::info("stage {} up to date", stage);
    if (options_.stop_after && *options_.stop_after == stage) throw StopRequested{};
  }

  // ---- inputs ----

  std::string FileSha(const fs::path& path) {
    std::lock_guard lock(mu_);
    auto it = file_sha_.find(path.string());
    if (it != file_sha_.end()) return it->second;
    return file_sha_[path.string()] = Sha256Hex(ReadFile(path));
  }

  json CorporaInput(const std::vector<std::string>& corpora) {
    json out = json::array();
    for (const auto& c : corpora) out.push_back(FileSha(m_.Resolve(c)));
    return out;
  }

  json ModelInput(const std::string& alias) {
    const ModelSpec& spec = m_.models.at(alias);
    json j = spec.ToJson();
    j.erase("step");
    if (spec.type == "ngram") {
      j["corpora_sha256"] = CorporaInput(spec.corpora);
      if (spec.exclude_pool) {
        j["pool_corpus_sha256"] = FileSha(m_.Resolve(m_.pool.corpus));
        j["pool_selection"] = {m_.pool.min_words, m_.pool.max_records, m_.seed};
      }
    }
    return j;
  }

  json FillerInput(const FillerSpec& spec) {
    json j = spec.ToJson();
    if (spec.type == "unigram") {
      j["corpora_sha256"] = CorporaInput(spec.corpora);
      if (spec.exclude_pool) {
        j["pool_corpus_sha256"] = FileSha(m_.Resolve(m_.pool.corpus));
        j["pool_selection"] = {m_.pool.min_words, m_.pool.max_records, m_.seed};
      }
    }
    return j;
  }

  PerturbationConfig PerturbConfig() const {
    PerturbationConfig cfg = m_.perturbation;
    cfg.seed = DeriveSeed(m_.seed, "perturb");
    return cfg;
  }

  // ---- lazily built resources ----

  const std::vector<std::string>& Candidates() {
    std::lock_guard lock(mu_);
    if (!candidates_) {
      candidates_ = LoadCorpus(m_.Resolve(m_.pool.corpus), m_.pool.min_words,
                               m_.pool.max_records, m_.seed);
    }
    return *candidates_;
  }

  std::vector<std::string> TrainingTexts(const std::vector<std::string>& corpora,
                                         size_t min_words, bool exclude_pool, double fraction) {
    std::set<std::string> excluded;
    if (exclude_pool) {
      const auto& cands = Candidates();
      excluded.insert(cands.begin(), cands.end());
    }
    std::vector<std::string> texts;
    for (const auto& c : corpora) {
      for (auto& t : LoadCorpus(m_.Resolve(c), min_words, 0, m_.seed)) {
        if (!excluded.count(t)) texts.push_back(std::move(t));
      }
    }
    const auto keep = static_cast<size_t>(
        std::max(1.0, std::ceil(fraction * static_cast<double>(texts.size()))));
    if (texts.size() > keep) texts.resize(keep);
    if (texts.empty()) throw Error(ErrorKind::kValidation, "training corpus is empty after exclusion");
    return texts;
  }

  std::shared_ptr<const NGramModel> NGram(const std::string& alias) {
    if (auto it = ngrams_.find(alias); it != ngrams_.end()) return it->second;
    const ModelSpec& spec = m_.models.at(alias);
    auto texts = TrainingTexts(spec.corpora, spec.min_words, spec.exclude_pool, spec.fraction);
    spdlog::info("training {} on {} documents", alias, texts.size());
    auto model = std::make_shared<const NGramModel>(TrainNGram(texts, spec.ngram));
    ngrams_[alias] = model;
    return model;
  }

  std::shared_ptr<ModelClient> Client(const EndpointConfig& cfg) {
    auto& slot = clients_[cfg.alias + "|" + cfg.identity()];
    if (!slot) slot = std::make_shared<ModelClient>(cfg, transport_, cache_);
    return slot;
  }

  const GenerationBackend& Generator(const std::string& alias) {
    auto& slot = generators_[alias];
    if (!slot) {
      const ModelSpec& spec = m_.models.at(alias);
      if (spec.type == "ngram") {
        slot = std::make_unique<NGramGenerator>(NGram(alias));
      } else {
        slot = std::make_unique<RemoteGenerator>(Client(*spec.endpoint));
      }
    }
    return *slot;
  }

  const ScorerBackend& Scorer(const std::string& alias) {
    auto& slot = scorers_[alias];
    if (!slot) {
      const ModelSpec& spec = m_.models.at(alias);
      if (spec.type == "ngram") {
        slot = std::make_unique<NGramScorer>(NGram(alias));
      } else {
        slot = std::make_unique<RemoteScorer>(Client(*spec.endpoint));
      }
    }
    return *slot;
  }

  const FillBackend& Filler(const FillerSpec& spec) {
    if (!filler_) {
      if (spec.type == "echo") {
        filler_ = std::make_unique<EchoFiller>();
      } else if (spec.type == "unigram") {
        NGramOptions o;
        o.order = 1;
        o.smoothing_k = spec.smoothing_k;
        auto texts = TrainingTexts(spec.corpora, spec.min_words, spec.exclude_pool, 1.0);
        filler_ = std::make_unique<UnigramFiller>(
            std::make_shared<const NGramModel>(TrainNGram(texts, o)));
      } else {
        filler_ = std::make_unique<RemoteFiller>(Client(*spec.endpoint));
      }
    }
    return *filler_;
  }

  const TargetPool& Pool() {
    if (!pool_) pool_ = ReadPool(out_ / "pool.jsonl");
    return *pool_;
  }

  const std::map<std::string, std::vector<PerturbedText>>& Perturbations() {
    if (!perturbations_) {
      perturbations_.emplace();
      for (auto& p : PerturbationsFromJsonl(ReadFile(out_ / "perturbations.jsonl"))) {
        (*perturbations_)[p.record_id].push_back(std::move(p));
      }
    }
    return *perturbations_;
  }

  const ExperimentManifest& m_;
  RunOptions options_;
  RunResult& result_;
  fs::path out_;
  std::string manifest_hash_;
  json meta_;
  std::string comment_;
  int workers_ = 1;
  json stages_;
  std::mutex mu_;
  std::map<std::string, std::string> file_sha_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  std::optional<std::vector<std::string>> candidates_;
  std::map<std::string, std::shared_ptr<const NGramModel>> ngrams_;
  std::map<std::string, std::shared_ptr<ModelClient>> clients_;
  std::map<std::string, std::unique_ptr<GenerationBackend>> generators_;
  std::map<std::string, std::unique_ptr<ScorerBackend>> scorers_;
  std::unique_ptr<FillBackend> filler_;
  std::optional<TargetPool> pool_;
  std::optional<std::map<std::string, std::vector<PerturbedText>>> perturbations_;
};

Experiment::Experiment(ExperimentManifest manifest, RunOptions options)
    : manifest_(std::move(manifest)) {
  if (options.seed) manifest_.seed = *options.seed;
  manifest_.Validate();
  impl_ = std::make_unique<Impl>(manifest_, std::move(options), result_);
}

Experiment::~Experiment() = default;

void Experiment::BuildPool() { impl_->BuildPool(); }
void Experiment::Perturb() { impl_->Perturb(); }
void Experiment::Score(const std::string& detector) { impl_->Score(detector); }
void Experiment::Evaluate() {
  impl_->Evaluate();
  impl_->FinishRun();
}

RunResult Experiment::Run() {
  try {
    impl_->BuildPool();
    impl_->Perturb();
    for (const auto& d : manifest_.detectors) impl_->Score(d);
    impl_->Evaluate();
  } catch (const StopRequested&) {
    result_.stopped = true;
  }
  impl_->FinishRun();
  return result_;
}

RunResult RunMatrix(const ExperimentManifest& manifest, const RunOptions& options) {
  Experiment e(manifest, options);
  return e.Run();
}

// ---- ablations ----

namespace {

std::string Fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string PctLabel(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pct_%g", pct);
  return buf;
}

std::string Comment(const ExperimentManifest& m) {
  return "curvedetect " + std::string(kEngineVersion) + " manifest_sha256=" + m.Hash();
}

json MetaOf(const ExperimentManifest& m) {
  return {{"engine_version", kEngineVersion}, {"manifest_sha256", m.Hash()}};
}

// Builds (or reuses) the parent pool that every sub-run shares.
fs::path SharedPool(const ExperimentManifest& manifest, const RunOptions& options) {
  RunOptions o = options;
  o.stop_after.reset();
  Experiment parent(manifest, o);
  parent.BuildPool();
  return parent.manifest().output_dir / "pool.jsonl";
}

RunOptions SubOptions(const RunOptions& options, const fs::path& pool) {
  RunOptions o = options;
  o.pool_from = pool;
  o.stop_after.reset();
  return o;
}

void AddRows(AblationTable& table, const std::string& setting, const RunResult& r) {
  const auto& mx = r.matrix;
  for (size_t g = 0; g < mx.generators.size(); ++g) {
    for (size_t j = 0; j < mx.detectors.size(); ++j) {
      AblationRow row{setting, mx.generators[g], mx.detectors[j], mx.auc[g][j], {}, {}};
      for (const auto& c : r.breakdown.cells) {
        if (c.generator == row.generator && c.detector == row.detector) {
          row.machine_d = c.machine_d;
          row.human_d = c.human_d;
        }
      }
      table.rows.push_back(row);
    }
  }
  table.partial = table.partial || r.partial;
  table.network_calls += r.network_calls;
}

}  // namespace

std::string AblationTable::ToCsv(const std::string& comment) const {
  std::string out = comment.empty() ? "" : "# " + comment + "\n";
  out += kind + ",generator,detector,auc,machine_d_mean,machine_d_std,human_d_mean,human_d_std\n";
  for (const auto& r : rows) {
    out += r.setting + "," + r.generator + "," + r.detector + "," +
           (r.auc ? Fmt6(*r.auc) : std::string()) + "," + Fmt6(r.machine_d.mean) + "," +
           Fmt6(r.machine_d.stdev) + "," + Fmt6(r.human_d.mean) + "," + Fmt6(r.human_d.stdev) +
           "\n";
  }
  return out;
}

json AblationTable::ToJson() const {
  json rs = json::array();
  for (const auto& r : rows) {
    rs.push_back({{"setting", r.setting},
                  {"generator", r.generator},
                  {"detector", r.detector},
                  {"auc", r.auc ? json(*r.auc) : json(nullptr)},
                  {"machine_d", {{"mean", r.machine_d.mean}, {"std", r.machine_d.stdev}}},
                  {"human_d", {{"mean", r.human_d.mean}, {"std", r.human_d.stdev}}}});
  }
  return {{"kind", kind}, {"rows", rs}, {"partial", partial}};
}

AblationTable RunAblationMaskPct(const ExperimentManifest& manifest,
                                 const std::vector<double>& pcts, const RunOptions& options) {
  if (pcts.empty()) throw Error(ErrorKind::kValidation, "no masking percentages given");
  for (double p : pcts) {
    if (!(p > 0.0 && p < 1.0)) {
      throw Error(ErrorKind::kValidation, "masking percentage must be in (0, 1)");
    }
  }
  ExperimentManifest base = manifest;
  if (options.seed) base.seed = *options.seed;
  std::vector<std::string> self;
  for (const auto& g : base.generators) {
    const auto& spec = base.models.at(g);
    if (!spec.endpoint || spec.endpoint->can_score) self.push_back(g);
  }
  if (self.empty()) {
    throw Error(ErrorKind::kValidation, "mask-pct ablation needs a generator that can score");
  }
  const fs::path pool = SharedPool(base, options);
  AblationTable table;
  table.kind = "mask_pct";
  std::vector<svg::Series> auc_series(self.size());
  for (size_t i = 0; i < self.size(); ++i) auc_series[i].name = self[i];
  std::vector<svg::ErrorBarGroup> groups;
  for (double pct : pcts) {
    ExperimentManifest sub = base;
    sub.perturbation.mask_pct = pct;
    sub.perturbation.contiguous = true;
    sub.detectors = self;
    sub.output_dir = base.output_dir / "ablation_mask_pct" / PctLabel(pct);
    RunResult r = RunMatrix(sub, SubOptions(options, pool));
    AddRows(table, PctLabel(pct).substr(4), r);
    for (size_t i = 0; i < self.size(); ++i) {
      const size_t g = static_cast<size_t>(
          std::find(r.matrix.generators.begin(), r.matrix.generators.end(), self[i]) -
          r.matrix.generators.begin());
      if (const auto& a = r.matrix.auc[g][i]) {
        auc_series[i].x.push_back(pct * 100);
        auc_series[i].y.push_back(*a);
      }
    }
    for (const auto& c : r.breakdown.cells) {
      if (c.generator == c.detector) {
        groups.push_back({PctLabel(pct).substr(4) + " " + c.generator, c.machine_d, c.human_d});
      }
    }
  }
  const fs::path out = base.output_dir;
  WriteFileAtomic(out / "ablation_mask_pct.csv", table.ToCsv(Comment(base)));
  json j = table.ToJson();
  j["_meta"] = MetaOf(base);
  WriteFileAtomic(out / "ablation_mask_pct.json", j.dump(2) + "\n");
  WriteFileAtomic(out / "plots" / "ablation_mask_pct_auc.svg",
                  svg::LineChart(base.name + ": self-detection AUC vs masking %", "masked %",
                                 "AUC", auc_series, true, Comment(base)));
  WriteFileAtomic(out / "plots" / "ablation_mask_pct_curvature.svg",
                  svg::MeanStdChart(base.name + ": curvature by masking %", groups, Comment(base)));
  return table;
}

AblationTable RunAblationFiller(const ExperimentManifest& manifest,
                                const std::vector<std::string>& fillers,
                                const RunOptions& options) {
  if (fillers.size() < 2) throw Error(ErrorKind::kValidation, "filler ablation needs >= 2 fillers");
  for (const auto& f : fillers) {
    if (!manifest.fillers.count(f)) {
      throw Error(ErrorKind::kValidation, "filler " + f + " is not defined in the manifest");
    }
  }
  ExperimentManifest base = manifest;
  if (options.seed) base.seed = *options.seed;
  const fs::path pool = SharedPool(base, options);
  AblationTable table;
  table.kind = "filler";
  std::vector<svg::ErrorBarGroup> groups;
  std::vector<std::string> labels;
  std::vector<std::optional<double>> aucs;
  for (const auto& name : fillers) {
    ExperimentManifest sub = base;
    sub.filler = base.fillers.at(name);
    sub.output_dir = base.output_dir / "ablation_filler" / SafeName(name);
    RunResult r = RunMatrix(sub, SubOptions(options, pool));
    AddRows(table, name, r);
    for (const auto& c : r.breakdown.cells) {
      groups.push_back({name + " " + c.generator + "/" + c.detector, c.machine_d, c.human_d});
    }
    for (size_t g = 0; g < r.matrix.generators.size(); ++g) {
      for (size_t d = 0; d < r.matrix.detectors.size(); ++d) {
        labels.push_back(name + " " + r.matrix.generators[g] + "/" + r.matrix.detectors[d]);
        aucs.push_back(r.matrix.auc[g][d]);
      }
    }
  }
  const fs::path out = base.output_dir;
  WriteFileAtomic(out / "ablation_filler.csv", table.ToCsv(Comment(base)));
  json j = table.ToJson();
  j["_meta"] = MetaOf(base);
  WriteFileAtomic(out / "ablation_filler.json", j.dump(2) + "\n");
  WriteFileAtomic(out / "plots" / "ablation_filler_curvature.svg",
                  svg::MeanStdChart(base.name + ": curvature per filler", groups, Comment(base)));
  WriteFileAtomic(out / "plots" / "ablation_filler_auc.svg",
                  svg::BarChart(base.name + ": AUC per filler", labels, aucs, 0.0, 1.0,
                                Comment(base)));
  return table;
}

std::string SweepTable::ToCsv(const std::string& comment) const {
  std::string out = comment.empty() ? "" : "# " + comment + "\n";
  out += "step,detector";
  for (const auto& g : generators) out += "," + g;
  out += "\n";
  for (size_t s = 0; s < steps.size(); ++s) {
    out += std::to_string(steps[s]) + "," + detectors[s];
    for (size_t g = 0; g < generators.size(); ++g) {
      out += "," + (auc[g][s] ? Fmt6(*auc[g][s]) : std::string());
    }
    out += "\n";
  }
  return out;
}

json SweepTable::ToJson() const {
  json grid = json::array();
  for (const auto& row : auc) {
    json r = json::array();
    for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
    grid.push_back(r);
  }
  return {{"steps", steps}, {"detectors", detectors}, {"generators", generators},
          {"auc", grid},    {"partial", partial}};
}

SweepTable RunCheckpointSweep(const ExperimentManifest& manifest,
                              const std::vector<std::string>& detectors,
                              const RunOptions& options) {
  if (detectors.empty()) throw Error(ErrorKind::kValidation, "sweep needs at least one detector");
  SweepTable table;
  for (const auto& d : detectors) {
    auto it = manifest.models.find(d);
    if (it == manifest.models.end()) throw Error(ErrorKind::kValidation, "unknown model " + d);
    if (!it->second.step) {
      throw Error(ErrorKind::kValidation, "model " + d + " has no step label");
    }
    if (!table.steps.empty() && *it->second.step <= table.steps.back()) {
      throw Error(ErrorKind::kValidation,
                  "checkpoint steps must be strictly increasing (" + d + ")");
    }
    table.steps.push_back(*it->second.step);
  }
  ExperimentManifest base = manifest;
  if (options.seed) base.seed = *options.seed;
  const fs::path pool = SharedPool(base, options);
  ExperimentManifest sub = base;
  sub.detectors = detectors;
  sub.output_dir = base.output_dir / "checkpoint_sweep";
  RunResult r = RunMatrix(sub, SubOptions(options, pool));
  table.detectors = detectors;
  table.generators = r.matrix.generators;
  table.auc = r.matrix.auc;
  table.partial = r.partial;

  std::vector<svg::Series> series;
  for (size_t g = 0; g < table.generators.size(); ++g) {
    svg::Series s{table.generators[g], {}, {}};
    for (size_t i = 0; i < table.steps.size(); ++i) {
      if (table.auc[g][i]) {
        s.x.push_back(static_cast<double>(table.steps[i]));
        s.y.push_back(*table.auc[g][i]);
      }
    }
    series.push_back(s);
  }
  const fs::path out = base.output_dir;
  WriteFileAtomic(out / "checkpoint_sweep.csv", table.ToCsv(Comment(base)));
  json j = table.ToJson();
  j["_meta"] = MetaOf(base);
  WriteFileAtomic(out / "checkpoint_sweep.json", j.dump(2) + "\n");
  WriteFileAtomic(out / "plots" / "checkpoint_sweep.svg",
                  svg::LineChart(base.name + ": AUC by detector training step", "step", "AUC",
                                 series, false, Comment(base)));
  return table;
}

}  // namespace curvedetect
