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

#include "curvedetect/scorer.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "curvedetect/util.h"

namespace curvedetect {

using nlohmann::json;

LogprobMode ParseLogprobMode(std::string_view s) {
  if (s == "sum") return LogprobMode::kSum;
  if (s == "mean") return LogprobMode::kMean;
  throw Error(ErrorKind::kValidation,
              "logprob mode must be 'sum' or 'mean', got '" + std::string(s) +
                  "'");
}

std::string_view LogprobModeName(LogprobMode mode) {
  return mode == LogprobMode::kSum ? "sum" : "mean";
}

// ---- tokenizer ----

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

namespace {
bool AttachesLeft(const std::string& t) {
  return t.size() == 1 && std::strchr(".,;:!?)]}", t[0]) != nullptr;
}
bool AttachesRight(const std::string& t) {
  return t.size() == 1 && std::strchr("([{", t[0]) != nullptr;
}
}  // namespace

std::string Detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && !AttachesLeft(tokens[i]) && !AttachesRight(tokens[i - 1])) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

// ---- model ----

std::string NGramModel::identity() const {
  return "ngram:" + fingerprint_.substr(0, 16);
}

int32_t NGramModel::TokenId(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? unk_id() : it->second;
}

std::vector<int32_t> NGramModel::Encode(std::string_view text) const {
  std::vector<int32_t> ids;
  for (const auto& t : Tokenize(text)) ids.push_back(TokenId(t));
  return ids;
}

std::string NGramModel::Key(std::span<const int32_t> context) {
  return std::string(reinterpret_cast<const char*>(context.data()),
                     context.size() * sizeof(int32_t));
}

void NGramModel::PadHistory(std::span<const int32_t> history,
                            std::vector<int32_t>& padded) const {
  const size_t width = static_cast<size_t>(order() - 1);
  padded.assign(width, kBos);
  const size_t take = std::min(width, history.size());
  std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(),
            padded.end() - static_cast<std::ptrdiff_t>(take));
}

const NGramModel::ContextCounts* NGramModel::Find(
    std::span<const int32_t> padded, int n) const {
  const Table& table = tables_[static_cast<size_t>(n - 1)];
  auto ctx = padded.subspan(padded.size() - static_cast<size_t>(n - 1));
  auto it = table.find(Key(ctx));
  return it == table.end() ? nullptr : &it->second;
}

namespace {
int64_t CountOf(const std::vector<std::pair<int32_t, int64_t>>& next,
                int32_t token) {
  auto it = std::lower_bound(
      next.begin(), next.end(), token,
      [](const std::pair<int32_t, int64_t>& p, int32_t t) { return p.first < t; });
  return it != next.end() && it->first == token ? it->second : 0;
}
}  // namespace

double NGramModel::ProbPadded(std::span<const int32_t> padded,
                              int32_t token) const {
  const double k = options_.smoothing_k;
  const double kv = k * static_cast<double>(vocab_.size());
  if (options_.interpolation.empty()) {
    const ContextCounts* cc = Find(padded, order());
    const double total = cc ? static_cast<double>(cc->total) : 0.0;
    const double c = cc ? static_cast<double>(CountOf(cc->next, token)) : 0.0;
    return (c + k) / (total + kv);
  }
  double weight_sum = 0.0;
  double p = 0.0;
  for (int n = 1; n <= order(); ++n) {
    const ContextCounts* cc = Find(padded, n);
    if (cc == nullptr || cc->total == 0) continue;
    const double w = options_.interpolation[static_cast<size_t>(n - 1)];
    const double c = static_cast<double>(CountOf(cc->next, token));
    p += w * (c + k) / (static_cast<double>(cc->total) + kv);
    weight_sum += w;
  }
  return p / weight_sum;
}

double NGramModel::Prob(std::span<const int32_t> history, int32_t token) const {
  std::vector<int32_t> padded;
  PadHistory(history, padded);
  return ProbPadded(padded, token);
}

std::vector<double> NGramModel::Distribution(
    std::span<const int32_t> history) const {
  std::vector<int32_t> padded;
  PadHistory(history, padded);
  const double k = options_.smoothing_k;
  const double kv = k * static_cast<double>(vocab_.size());
  std::vector<double> dist(vocab_.size(), 0.0);
  auto add_component = [&](const ContextCounts* cc, double weight) {
    const double total = cc ? static_cast<double>(cc->total) : 0.0;
    const double denom = total + kv;
    const double base = weight * k / denom;
    for (double& d : dist) d += base;
    if (cc) {
      for (const auto& [id, count] : cc->next) {
        dist[static_cast<size_t>(id)] += weight * static_cast<double>(count) / denom;
      }
    }
  };
  if (options_.interpolation.empty()) {
    add_component(Find(padded, order()), 1.0);
    return dist;
  }
  double weight_sum = 0.0;
  for (int n = 1; n <= order(); ++n) {
    if (const ContextCounts* cc = Find(padded, n); cc && cc->total > 0) {
      weight_sum += options_.interpolation[static_cast<size_t>(n - 1)];
    }
  }
  for (int n = 1; n <= order(); ++n) {
    if (const ContextCounts* cc = Find(padded, n); cc && cc->total > 0) {
      add_component(cc, options_.interpolation[static_cast<size_t>(n - 1)] /
                            weight_sum);
    }
  }
  return dist;
}

ScoreReport NGramModel::Score(std::string_view text, bool keep_per_token) const {
  const auto tokens = Tokenize(text);
  if (tokens.empty()) {
    throw Error(ErrorKind::kValidation, "cannot score text without tokens");
  }
  ScoreReport report;
  if (keep_per_token) report.per_token.emplace();
  const size_t width = static_cast<size_t>(order() - 1);
  std::vector<int32_t> padded(width, kBos);
  auto step = [&](int32_t id, const std::string& surface) {
    const double lp = std::log(ProbPadded(padded, id));
    report.total_logprob += lp;
    report.token_count += 1;
    if (report.per_token) report.per_token->emplace_back(surface, lp);
    if (width > 0) {
      std::rotate(padded.begin(), padded.begin() + 1, padded.end());
      padded.back() = id;
    }
  };
  for (const auto& t : tokens) step(TokenId(t), t);
  if (eos_id() >= 0) step(eos_id(), std::string(kEosToken));
  return report;
}

int64_t NGramModel::Count(std::span<const int32_t> history, int32_t token,
                          int n) const {
  std::vector<int32_t> padded;
  PadHistory(history, padded);
  const ContextCounts* cc = Find(padded, n);
  return cc ? CountOf(cc->next, token) : 0;
}

int64_t NGramModel::ContextTotal(std::span<const int32_t> history, int n) const {
  std::vector<int32_t> padded;
  PadHistory(history, padded);
  const ContextCounts* cc = Find(padded, n);
  return cc ? cc->total : 0;
}

namespace {

void ValidateOptions(const NGramOptions& o) {
  if (o.order < 1) throw Error(ErrorKind::kValidation, "n-gram order must be >= 1");
  if (!(o.smoothing_k > 0.0) || !std::isfinite(o.smoothing_k)) {
    throw Error(ErrorKind::kValidation, "smoothing_k must be > 0");
  }
  if (!o.interpolation.empty()) {
    if (o.interpolation.size() != static_cast<size_t>(o.order)) {
      throw Error(ErrorKind::kValidation,
                  "interpolation needs one weight per order");
    }
    for (double w : o.interpolation) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(ErrorKind::kValidation, "interpolation weights must be >= 0");
      }
    }
    if (!(o.interpolation[0] > 0.0)) {
      throw Error(ErrorKind::kValidation, "unigram interpolation weight must be > 0");
    }
  }
}

std::string OptionsFingerprint(const NGramOptions& o) {
  json j = {{"tokenizer", kTokenizerVersion},
            {"order", o.order},
            {"smoothing_k", o.smoothing_k},
            {"interpolation", o.interpolation}};
  return j.dump();
}

}  // namespace

NGramModel TrainNGram(std::span<const std::string> corpus,
                      const NGramOptions& options) {
  ValidateOptions(options);
  if (corpus.empty()) throw Error(ErrorKind::kValidation, "empty training corpus");

  std::vector<std::vector<std::string>> docs;
  docs.reserve(corpus.size());
  std::set<std::string> words;
  std::string fp_input = OptionsFingerprint(options);
  fp_input.push_back('\0');
  for (const auto& text : corpus) {
    docs.push_back(Tokenize(text));
    for (const auto& t : docs.back()) words.insert(t);
    fp_input += text;
    fp_input.push_back('\0');
  }
  if (words.empty()) throw Error(ErrorKind::kValidation, "training corpus has no tokens");

  NGramModel model;
  model.options_ = options;
  model.fingerprint_ = Sha256Hex(fp_input);
  model.vocab_.emplace_back(NGramModel::kUnkToken);
  if (options.order >= 2) model.vocab_.emplace_back(NGramModel::kEosToken);
  for (const auto& w : words) model.vocab_.push_back(w);
  for (size_t i = 0; i < model.vocab_.size(); ++i) {
    model.ids_.emplace(model.vocab_[i], static_cast<int32_t>(i));
  }

  const int n = options.order;
  std::vector<std::unordered_map<std::string, std::map<int32_t, int64_t>>> raw(
      static_cast<size_t>(n));
  std::vector<int32_t> seq;
  for (const auto& doc : docs) {
    seq.assign(static_cast<size_t>(n - 1), NGramModel::kBos);
    for (const auto& t : doc) seq.push_back(model.ids_.at(t));
    if (model.eos_id() >= 0) seq.push_back(model.eos_id());
    for (size_t pos = static_cast<size_t>(n - 1); pos < seq.size(); ++pos) {
      for (int m = 1; m <= n; ++m) {
        std::span<const int32_t> ctx(seq.data() + pos - static_cast<size_t>(m - 1),
                                     static_cast<size_t>(m - 1));
        raw[static_cast<size_t>(m - 1)][NGramModel::Key(ctx)][seq[pos]] += 1;
      }
    }
  }
  model.tables_.resize(static_cast<size_t>(n));
  for (int m = 0; m < n; ++m) {
    auto& table = model.tables_[static_cast<size_t>(m)];
    table.reserve(raw[static_cast<size_t>(m)].size());
    for (auto& [key, next] : raw[static_cast<size_t>(m)]) {
      NGramModel::ContextCounts cc;
      cc.next.assign(next.begin(), next.end());
      for (const auto& [id, c] : cc.next) cc.total += c;
      table.emplace(key, std::move(cc));
    }
  }
  return model;
}

std::string NGramModel::Serialize() const {
  json tables = json::array();
  for (size_t m = 0; m < tables_.size(); ++m) {
    std::vector<std::pair<std::vector<int32_t>, const ContextCounts*>> rows;
    rows.reserve(tables_[m].size());
    for (const auto& [key, cc] : tables_[m]) {
      std::vector<int32_t> ctx(key.size() / sizeof(int32_t));
      std::memcpy(ctx.data(), key.data(), key.size());
      rows.emplace_back(std::move(ctx), &cc);
    }
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    json contexts = json::array();
    for (const auto& [ctx, cc] : rows) {
      json next = json::array();
      for (const auto& [id, c] : cc->next) next.push_back({id, c});
      contexts.push_back({ctx, std::move(next)});
    }
    tables.push_back({{"order", m + 1}, {"contexts", std::move(contexts)}});
  }
  json j = {{"format", "curvedetect.ngram"},
            {"format_version", 1},
            {"tokenizer", kTokenizerVersion},
            {"order", options_.order},
            {"smoothing_k", options_.smoothing_k},
            {"interpolation", options_.interpolation},
            {"fingerprint", fingerprint_},
            {"vocab", vocab_},
            {"tables", std::move(tables)}};
  return j.dump();
}

NGramModel NGramModel::Deserialize(std::string_view data) {
  json j;
  try {
    j = json::parse(data);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("bad n-gram artifact: ") + e.what());
  }
  if (j.value("format", "") != "curvedetect.ngram" || j.value("format_version", 0) != 1) {
    throw Error(ErrorKind::kValidation, "not a curvedetect n-gram artifact (v1)");
  }
  if (j.at("tokenizer").get<std::string>() != kTokenizerVersion) {
    throw Error(ErrorKind::kValidation,
                "n-gram artifact built with tokenizer " +
                    j.at("tokenizer").get<std::string>() + ", this engine uses " +
                    std::string(kTokenizerVersion));
  }
  NGramModel model;
  model.options_.order = j.at("order").get<int>();
  model.options_.smoothing_k = j.at("smoothing_k").get<double>();
  model.options_.interpolation = j.at("interpolation").get<std::vector<double>>();
  ValidateOptions(model.options_);
  model.fingerprint_ = j.at("fingerprint").get<std::string>();
  model.vocab_ = j.at("vocab").get<std::vector<std::string>>();
  for (size_t i = 0; i < model.vocab_.size(); ++i) {
    model.ids_.emplace(model.vocab_[i], static_cast<int32_t>(i));
  }
  const auto& tables = j.at("tables");
  if (tables.size() != static_cast<size_t>(model.order())) {
    throw Error(ErrorKind::kValidation, "n-gram artifact table count mismatch");
  }
  model.tables_.resize(tables.size());
  for (size_t m = 0; m < tables.size(); ++m) {
    auto& table = model.tables_[m];
    for (const auto& row : tables[m].at("contexts")) {
      auto ctx = row.at(0).get<std::vector<int32_t>>();
      ContextCounts cc;
      for (const auto& p : row.at(1)) {
        cc.next.emplace_back(p.at(0).get<int32_t>(), p.at(1).get<int64_t>());
        cc.total += cc.next.back().second;
      }
      table.emplace(Key(ctx), std::move(cc));
    }
  }
  return model;
}

ScoreReport Logprob(const ScorerBackend& scorer, std::string_view text,
                    bool keep_per_token) {
  if (NormalizeWhitespace(text).empty()) {
    throw Error(ErrorKind::kValidation, "cannot score empty text");
  }
  ScoreReport r = scorer.Score(text, keep_per_token);
  if (r.token_count < 1 || !std::isfinite(r.total_logprob)) {
    throw Error(ErrorKind::kProtocol,
                "scorer " + scorer.identity() + " returned an invalid report");
  }
  return r;
}

// ---- sampling ----

class NGramSampler {
 public:
  NGramSampler(const NGramModel& model, const SampleOptions& options)
      : model_(model), options_(options), rng_(options.seed) {}

  std::vector<std::string> Run(std::string_view prompt) {
    std::vector<int32_t> history = model_.Encode(prompt);
    std::vector<int32_t> padded;
    std::vector<std::string> out;
    for (int produced = 0; produced < options_.max_words; ++produced) {
      model_.PadHistory(history, padded);
      const bool allow_eos = produced >= options_.min_words;
      const int32_t next = Draw(padded, allow_eos);
      if (next == model_.eos_id()) break;
      out.push_back(model_.vocab_[static_cast<size_t>(next)]);
      history.push_back(next);
    }
    return out;
  }

 private:
  bool Excluded(int32_t id, bool allow_eos) const {
    return id == model_.unk_id() || (!allow_eos && id == model_.eos_id());
  }

  int32_t Draw(std::span<const int32_t> padded, bool allow_eos) {
    if (options_.temperature == 0.0) return Greedy(padded, allow_eos);
    if (options_.temperature == 1.0 && options_.top_p >= 1.0) {
      return DrawMixture(padded, allow_eos);
    }
    return DrawDense(padded, allow_eos);
  }

  // Exact sampling from the smoothed conditional at temperature 1: pick a
  // mixture component, then either an observed continuation (by count) or a
  // uniform vocabulary item. Excluded ids are rejected and redrawn.
  int32_t DrawMixture(std::span<const int32_t> padded, bool allow_eos) {
    const auto& opts = model_.options_;
    const double kv = opts.smoothing_k * static_cast<double>(model_.vocab_.size());
    std::vector<std::pair<const NGramModel::ContextCounts*, double>> components;
    if (opts.interpolation.empty()) {
      components.emplace_back(model_.Find(padded, model_.order()), 1.0);
    } else {
      for (int n = 1; n <= model_.order(); ++n) {
        const auto* cc = model_.Find(padded, n);
        if (cc && cc->total > 0) {
          components.emplace_back(cc, opts.interpolation[static_cast<size_t>(n - 1)]);
        }
      }
    }
    double weight_sum = 0.0;
    for (const auto& c : components) weight_sum += c.second;
    for (;;) {
      double u = rng_.UniformDouble() * weight_sum;
      size_t pick = 0;
      while (pick + 1 < components.size() && u >= components[pick].second) {
        u -= components[pick].second;
        ++pick;
      }
      const auto* cc = components[pick].first;
      const double total = cc ? static_cast<double>(cc->total) : 0.0;
      int32_t id;
      if (cc && rng_.UniformDouble() * (total + kv) < total) {
        auto r = static_cast<int64_t>(rng_.UniformInt(static_cast<uint64_t>(cc->total)));
        size_t i = 0;
        while (r >= cc->next[i].second) {
          r -= cc->next[i].second;
          ++i;
        }
        id = cc->next[i].first;
      } else {
        id = static_cast<int32_t>(rng_.UniformInt(model_.vocab_.size()));
      }
      if (!Excluded(id, allow_eos)) return id;
    }
  }

  int32_t DrawDense(std::span<const int32_t> padded, bool allow_eos) {
    std::vector<double> dist = model_.Distribution(padded);
    const double inv_t = 1.0 / options_.temperature;
    for (size_t i = 0; i < dist.size(); ++i) {
      dist[i] = Excluded(static_cast<int32_t>(i), allow_eos)
                    ? 0.0
                    : std::pow(dist[i], inv_t);
    }
    if (options_.top_p < 1.0) {
      std::vector<int32_t> order(dist.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int32_t>(i);
      std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        return dist[static_cast<size_t>(a)] > dist[static_cast<size_t>(b)];
      });
      double total = 0.0;
      for (double d : dist) total += d;
      double cum = 0.0;
      size_t keep = 0;
      while (keep < order.size() && cum < options_.top_p * total) {
        cum += dist[static_cast<size_t>(order[keep])];
        ++keep;
      }
      for (size_t i = keep; i < order.size(); ++i) dist[static_cast<size_t>(order[i])] = 0.0;
    }
    double total = 0.0;
    for (double d : dist) total += d;
    double u = rng_.UniformDouble() * total;
    int32_t last_nonzero = 0;
    for (size_t i = 0; i < dist.size(); ++i) {
      if (dist[i] <= 0.0) continue;
      last_nonzero = static_cast<int32_t>(i);
      if (u < dist[i]) return last_nonzero;
      u -= dist[i];
    }
    return last_nonzero;
  }

  int32_t Greedy(std::span<const int32_t> padded, bool allow_eos) const {
    std::vector<double> dist = model_.Distribution(padded);
    int32_t best = -1;
    for (size_t i = 0; i < dist.size(); ++i) {
      if (Excluded(static_cast<int32_t>(i), allow_eos)) continue;
      if (best < 0 || dist[i] > dist[static_cast<size_t>(best)]) {
        best = static_cast<int32_t>(i);
      }
    }
    return best;
  }

  const NGramModel& model_;
  SampleOptions options_;
  Rng rng_;
};

namespace {
void ValidateSample(const NGramModel& model, const SampleOptions& options) {
  if (!(options.temperature >= 0.0) || !std::isfinite(options.temperature)) {
    throw Error(ErrorKind::kValidation, "temperature must be >= 0");
  }
  if (!(options.top_p > 0.0 && options.top_p <= 1.0)) {
    throw Error(ErrorKind::kValidation, "top_p must be in (0, 1]");
  }
  if (options.max_words < 0 || options.min_words < 0) {
    throw Error(ErrorKind::kValidation, "word limits must be >= 0");
  }
  if (model.vocab().size() < 2 ||
      (model.eos_id() >= 0 && model.vocab().size() < 3 && options.min_words > 0)) {
    throw Error(ErrorKind::kValidation, "model has nothing to sample");
  }
}
}  // namespace

std::string SampleContinuation(const NGramModel& model, std::string_view prompt,
                               const SampleOptions& options) {
  ValidateSample(model, options);
  NGramSampler sampler(model, options);
  const auto tokens = sampler.Run(prompt);
  return Detokenize(tokens);
}

std::string Sample(const NGramModel& model, std::string_view prompt,
                   const SampleOptions& options) {
  std::string continuation = SampleContinuation(model, prompt, options);
  if (continuation.empty()) return std::string(prompt);
  if (prompt.empty()) return continuation;
  return std::string(prompt) + " " + continuation;
}

std::string NGramGenerator::Generate(const std::string& prompt,
                                     const GenerationParams& params) const {
  params.Validate();
  SampleOptions options;
  options.max_words = params.max_tokens;
  options.min_words = params.min_tokens;
  options.temperature = params.temperature;
  options.top_p = params.top_p;
  options.seed = static_cast<uint64_t>(params.seed.value_or(0));
  return SampleContinuation(*model_, prompt, options);
}

}  // namespace curvedetect
