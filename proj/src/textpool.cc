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

#include "curvedetect/textpool.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "curvedetect/util.h"

namespace curvedetect {

using nlohmann::json;

std::string_view LabelName(Label label) {
  return label == Label::kHuman ? "human" : "machine";
}

Label ParseLabel(std::string_view s) {
  if (s == "human") return Label::kHuman;
  if (s == "machine") return Label::kMachine;
  throw Error(ErrorKind::kValidation, "unknown label '" + std::string(s) + "'");
}

void TextRecord::Validate() const {
  if (id.empty()) throw Error(ErrorKind::kValidation, "record without id");
  if (NormalizeWhitespace(text).empty()) {
    throw Error(ErrorKind::kValidation, "record " + id + " has empty text");
  }
  if ((label == Label::kMachine) != generator_id.has_value()) {
    throw Error(ErrorKind::kValidation,
                "record " + id + ": generator_id must be present iff machine");
  }
  if ((label == Label::kMachine) != prompt.has_value()) {
    throw Error(ErrorKind::kValidation,
                "record " + id + ": prompt must be present iff machine");
  }
  if (prompt && text.compare(0, prompt->size(), *prompt) != 0) {
    throw Error(ErrorKind::kValidation,
                "record " + id + ": prompt is not a prefix of the text");
  }
}

json TextRecord::ToJson() const {
  json j = {{"id", id}, {"text", text}, {"label", LabelName(label)}};
  if (generator_id) j["generator_id"] = *generator_id;
  if (prompt) j["prompt"] = *prompt;
  return j;
}

TextRecord TextRecord::FromJson(const json& j) {
  TextRecord r;
  r.id = j.at("id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.label = ParseLabel(j.at("label").get<std::string>());
  if (j.contains("generator_id")) r.generator_id = j["generator_id"].get<std::string>();
  if (j.contains("prompt")) r.prompt = j["prompt"].get<std::string>();
  r.Validate();
  return r;
}

size_t TargetPool::CountLabel(Label label) const {
  return static_cast<size_t>(std::count_if(
      records.begin(), records.end(),
      [label](const TextRecord& r) { return r.label == label; }));
}

void TargetPool::Validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    r.Validate();
    if (!ids.insert(r.id).second) {
      throw Error(ErrorKind::kValidation, "duplicate record id " + r.id);
    }
  }
}

// ---- corpus ----

namespace {

bool LooksLikeJsonl(const std::filesystem::path& path, std::string_view data) {
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return true;
  const auto first = data.find_first_not_of(" \t\r\n");
  return first != std::string_view::npos && data[first] == '{';
}

std::vector<std::string> ParseJsonl(std::string_view data,
                                    const std::filesystem::path& path) {
  std::vector<std::string> texts;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= data.size()) {
    size_t end = data.find('\n', pos);
    if (end == std::string_view::npos) end = data.size();
    std::string_view line = data.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == data.size()) break;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kValidation, path.string() + ": line " +
                                              std::to_string(line_no) +
                                              ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorKind::kValidation, path.string() + ": line " +
                                              std::to_string(line_no) +
                                              ": missing string field \"text\"");
    }
    texts.push_back(j["text"].get<std::string>());
    if (end == data.size()) break;
  }
  return texts;
}

std::vector<std::string> ParsePlainText(std::string_view data) {
  std::vector<std::string> docs;
  std::string current;
  std::istringstream in{std::string(data)};
  std::string line;
  auto flush = [&] {
    if (!NormalizeWhitespace(current).empty()) docs.push_back(current);
    current.clear();
  };
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
    } else {
      current += line;
      current.push_back('\n');
    }
  }
  flush();
  return docs;
}

}  // namespace

std::vector<std::string> LoadCorpus(const std::filesystem::path& path,
                                    size_t min_words, size_t max_records,
                                    uint64_t seed) {
  const std::string data = ReadFile(path);
  std::vector<std::string> raw =
      LooksLikeJsonl(path, data) ? ParseJsonl(data, path) : ParsePlainText(data);
  std::vector<std::string> kept;
  for (auto& t : raw) {
    auto words = SplitWords(t);
    if (!words.empty() && words.size() >= min_words) kept.push_back(JoinWords(words));
  }
  if (kept.empty()) {
    throw Error(ErrorKind::kValidation,
                path.string() + ": no texts with >= " + std::to_string(min_words) +
                    " words");
  }
  if (max_records == 0 || kept.size() <= max_records) return kept;

  std::vector<size_t> idx(kept.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(DeriveSeed(seed, "load_corpus"));
  for (size_t i = 0; i < max_records; ++i) {
    std::swap(idx[i], idx[i + rng.UniformInt(idx.size() - i)]);
  }
  idx.resize(max_records);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(max_records);
  for (size_t i : idx) out.push_back(std::move(kept[i]));
  return out;
}

std::string ExtractPrompt(std::string_view text, size_t n_tokens) {
  auto words = SplitWords(text);
  if (words.size() < n_tokens) {
    throw Error(ErrorKind::kValidation,
                "text has " + std::to_string(words.size()) + " words, prompt needs " +
                    std::to_string(n_tokens));
  }
  return JoinWords(words, 0, n_tokens);
}

// ---- pool ----

namespace {

struct Attempt {
  std::optional<std::string> completion;
  std::string last_error;
  bool backend_error = false;
};

std::string PaddedIndex(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

}  // namespace

TargetPool BuildPool(std::span<const std::string> human_texts,
                     std::span<const GenerationBackend* const> generators,
                     const PoolOptions& options) {
  if (generators.empty()) throw Error(ErrorKind::kValidation, "no generator given");
  if (options.n_per_class == 0) throw Error(ErrorKind::kValidation, "n_per_class must be >= 1");
  if (human_texts.size() < options.n_per_class) {
    throw Error(ErrorKind::kValidation,
                "need " + std::to_string(options.n_per_class) + " human texts, have " +
                    std::to_string(human_texts.size()));
  }
  options.gen_params.Validate();
  std::vector<std::string> labels = options.generator_labels;
  if (labels.empty()) {
    for (const auto* g : generators) labels.push_back(g->identity());
  }
  if (labels.size() != generators.size()) {
    throw Error(ErrorKind::kValidation, "one label per generator required");
  }

  const size_t n_gen = generators.size();
  // Generates for one candidate text and one generator; pure in (idx, g).
  auto attempt = [&](size_t idx, size_t g) {
    Attempt result;
    const std::string& text = human_texts[idx];
    if (CountWords(text) < options.prompt_words) {
      result.last_error = "text shorter than the prompt";
      return result;
    }
    const std::string prompt = ExtractPrompt(text, options.prompt_words);
    for (int a = 0; a <= options.max_retries; ++a) {
      GenerationParams params = options.gen_params;
      params.seed = static_cast<int64_t>(
          DeriveSeed(options.seed, "generate:" + labels[g], idx * 64 + static_cast<uint64_t>(a)) >>
          1);
      try {
        auto words = SplitWords(generators[g]->Generate(prompt, params));
        if (words.size() < options.min_generation_words) {
          result.last_error = "generation too short (" + std::to_string(words.size()) + " words)";
          result.backend_error = false;
          continue;
        }
        if (options.max_generation_words > 0 && words.size() > options.max_generation_words) {
          words.resize(options.max_generation_words);
        }
        result.completion = JoinWords(words);
        return result;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kValidation || e.kind() == ErrorKind::kOffline) throw;
        result.last_error = e.what();
        result.backend_error = true;
      }
    }
    return result;
  };

  TargetPool pool;
  pool.seed = options.seed;
  pool.source = options.source;
  pool.generator_labels = labels;
  for (const auto* g : generators) pool.generator_identities.push_back(g->identity());
  pool.gen_params = options.gen_params;

  std::vector<TextRecord> humans;
  std::vector<std::vector<TextRecord>> machines(n_gen);
  size_t next_candidate = 0;
  std::string last_backend_error;
  while (humans.size() < options.n_per_class && next_candidate < human_texts.size()) {
    const size_t want = options.n_per_class - humans.size();
    const size_t batch = std::min(human_texts.size() - next_candidate, want);
    std::vector<Attempt> outcomes(batch * n_gen);
    ParallelFor(batch * n_gen, options.workers, [&](size_t i) {
      outcomes[i] = attempt(next_candidate + i / n_gen, i % n_gen);
    });
    for (size_t b = 0; b < batch; ++b) {
      const size_t idx = next_candidate + b;
      bool ok = true;
      for (size_t g = 0; g < n_gen; ++g) {
        const Attempt& a = outcomes[b * n_gen + g];
        if (!a.completion) {
          ok = false;
          if (a.backend_error) last_backend_error = a.last_error;
          spdlog::warn("pool: dropping candidate {} for generator {}: {}", idx, labels[g],
                       a.last_error);
        }
      }
      if (!ok) continue;
      const size_t slot = humans.size();
      const std::string prompt = ExtractPrompt(human_texts[idx], options.prompt_words);
      TextRecord h;
      h.id = "h-" + PaddedIndex(slot);
      h.text = NormalizeWhitespace(human_texts[idx]);
      h.label = Label::kHuman;
      humans.push_back(std::move(h));
      for (size_t g = 0; g < n_gen; ++g) {
        TextRecord m;
        m.id = labels[g] + "-" + PaddedIndex(slot);
        m.text = prompt + " " + *outcomes[b * n_gen + g].completion;
        m.label = Label::kMachine;
        m.generator_id = labels[g];
        m.prompt = prompt;
        machines[g].push_back(std::move(m));
      }
    }
    next_candidate += batch;
  }
  if (humans.size() < options.n_per_class) {
    if (!last_backend_error.empty()) {
      throw Error(ErrorKind::kBackend,
                  "generator failed after retries; pool has " +
                      std::to_string(humans.size()) + "/" +
                      std::to_string(options.n_per_class) + " pairs: " + last_backend_error);
    }
    throw Error(ErrorKind::kValidation,
                "insufficient human texts: pool has " + std::to_string(humans.size()) + "/" +
                    std::to_string(options.n_per_class) + " pairs");
  }
  pool.records = std::move(humans);
  for (auto& ms : machines) {
    for (auto& m : ms) pool.records.push_back(std::move(m));
  }
  pool.Validate();
  return pool;
}

TargetPool BuildPool(std::span<const std::string> human_texts,
                     const GenerationBackend& generator, const PoolOptions& options) {
  const GenerationBackend* gens[] = {&generator};
  return BuildPool(human_texts, std::span<const GenerationBackend* const>(gens), options);
}

std::string PoolToJsonl(const TargetPool& pool, const json& meta) {
  std::string out;
  if (!meta.is_null()) out += json{{"_meta", meta}}.dump() + "\n";
  for (const auto& r : pool.records) out += r.ToJson().dump() + "\n";
  return out;
}

TargetPool PoolFromJsonl(std::string_view data) {
  TargetPool pool;
  size_t pos = 0;
  size_t line_no = 0;
  while (pos < data.size()) {
    size_t end = data.find('\n', pos);
    if (end == std::string_view::npos) end = data.size();
    std::string_view line = data.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kValidation,
                  "pool line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("_meta")) continue;
    pool.records.push_back(TextRecord::FromJson(j));
  }
  pool.Validate();
  return pool;
}

void WritePool(const std::filesystem::path& path, const TargetPool& pool,
               const json& meta) {
  WriteFileAtomic(path, PoolToJsonl(pool, meta));
  json sidecar = {{"seed", pool.seed},
                  {"corpus",
                   {{"path", pool.source.path},
                    {"min_words", pool.source.min_words},
                    {"max_records", pool.source.max_records},
                    {"seed", pool.source.seed}}},
                  {"generators", pool.generator_labels},
                  {"generator_identities", pool.generator_identities},
                  {"gen_params", pool.gen_params.ToJson()},
                  {"n_human", pool.CountLabel(Label::kHuman)},
                  {"n_machine", pool.CountLabel(Label::kMachine)}};
  if (!meta.is_null()) sidecar["_meta"] = meta;
  auto sidecar_path = path;
  sidecar_path += ".manifest.json";
  WriteFileAtomic(sidecar_path, sidecar.dump(2) + "\n");
}

TargetPool ReadPool(const std::filesystem::path& path) {
  TargetPool pool = PoolFromJsonl(ReadFile(path));
  auto sidecar_path = path;
  sidecar_path += ".manifest.json";
  if (std::filesystem::exists(sidecar_path)) {
    json s = json::parse(ReadFile(sidecar_path));
    pool.seed = s.value("seed", uint64_t{0});
    if (s.contains("corpus")) {
      const auto& c = s["corpus"];
      pool.source.path = c.value("path", "");
      pool.source.min_words = c.value("min_words", size_t{0});
      pool.source.max_records = c.value("max_records", size_t{0});
      pool.source.seed = c.value("seed", uint64_t{0});
    }
    pool.generator_labels = s.value("generators", std::vector<std::string>{});
    pool.generator_identities =
        s.value("generator_identities", std::vector<std::string>{});
    if (s.contains("gen_params")) pool.gen_params = GenerationParams::FromJson(s["gen_params"]);
  }
  return pool;
}

}  // namespace curvedetect
