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

#include "curvedetect/perturb.h"

#include <algorithm>
#include <cmath>
#include <regex>

namespace curvedetect {

using nlohmann::json;

size_t MaskPlan::masked_words() const {
  size_t total = 0;
  for (const auto& s : spans) total += s.length;
  return total;
}

void MaskPlan::Validate() const {
  if (contiguous && spans.size() != 1) {
    throw Error(ErrorKind::kValidation, "contiguous plan must have exactly one span");
  }
  size_t min_start = 0;
  for (size_t j = 0; j < spans.size(); ++j) {
    const auto& s = spans[j];
    if (s.length == 0) throw Error(ErrorKind::kValidation, "empty mask span");
    if (s.start < min_start) {
      throw Error(ErrorKind::kValidation, "mask spans unsorted, overlapping or adjacent");
    }
    if (s.start + s.length > n_words) {
      throw Error(ErrorKind::kValidation, "mask span out of bounds");
    }
    min_start = s.start + s.length + 1;
  }
}

void PerturbationConfig::Validate() const {
  if (!(mask_pct > 0.0 && mask_pct < 1.0)) {
    throw Error(ErrorKind::kValidation, "mask_pct must be in (0, 1)");
  }
  if (span_len < 1) throw Error(ErrorKind::kValidation, "span_len must be >= 1");
  if (k < 1) throw Error(ErrorKind::kValidation, "k must be >= 1");
}

json PerturbationConfig::ToJson() const {
  return {{"mask_pct", mask_pct},
          {"span_len", span_len},
          {"contiguous", contiguous},
          {"k", k},
          {"seed", seed}};
}

PerturbationConfig PerturbationConfig::FromJson(const json& j) {
  PerturbationConfig c;
  c.mask_pct = j.value("mask_pct", c.mask_pct);
  c.span_len = j.value("span_len", c.span_len);
  c.contiguous = j.value("contiguous", c.contiguous);
  c.k = j.value("k", c.k);
  c.seed = j.value("seed", c.seed);
  c.Validate();
  return c;
}

size_t TargetMaskedWords(size_t n_words, double mask_pct) {
  return static_cast<size_t>(std::llround(mask_pct * static_cast<double>(n_words)));
}

MaskPlan SelectSpans(size_t n_words, const PerturbationConfig& cfg, Rng& rng) {
  cfg.Validate();
  const size_t m = TargetMaskedWords(n_words, cfg.mask_pct);
  if (m == 0) {
    throw Error(ErrorKind::kValidation,
                "mask_pct " + std::to_string(cfg.mask_pct) + " masks no word of a " +
                    std::to_string(n_words) + "-word text");
  }
  MaskPlan plan;
  plan.n_words = n_words;
  plan.contiguous = cfg.contiguous;
  if (cfg.contiguous) {
    plan.spans.push_back({rng.UniformInt(n_words - m + 1), m});
    return plan;
  }
  const size_t len = cfg.span_len;
  if (n_words < len || m < len) {
    throw Error(ErrorKind::kValidation,
                std::to_string(m) + " masked words cannot form spans of " +
                    std::to_string(len) + " words; lower span_len");
  }
  const size_t s = (m + len - 1) / len;
  const size_t needed = s * len + (s - 1);
  if (needed > n_words) {
    throw Error(ErrorKind::kValidation,
                "cannot place " + std::to_string(s) + " separated spans of " +
                    std::to_string(len) + " words in " + std::to_string(n_words) + " words");
  }
  // Arrange s span items among s + free slack items; choosing which items are
  // spans uniformly is uniform over all valid separated placements.
  const size_t items = s + (n_words - needed);
  size_t chosen = 0;
  for (size_t t = 0; t < items && chosen < s; ++t) {
    if (rng.UniformInt(items - t) < s - chosen) {
      plan.spans.push_back({t + chosen * len, len});
      ++chosen;
    }
  }
  return plan;
}

std::string SentinelToken(size_t index) {
  return "<extra_id_" + std::to_string(index) + ">";
}

size_t CountSentinels(std::string_view text) {
  static const std::regex kSentinel("<extra_id_(\\d+)>");
  size_t expected = 0;
  std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kSentinel);
       it != std::sregex_iterator(); ++it) {
    if (std::stoull((*it)[1].str()) != expected) {
      throw Error(ErrorKind::kValidation, "sentinels out of order in masked text");
    }
    ++expected;
  }
  return expected;
}

std::string ApplyMask(std::span<const std::string> words, const MaskPlan& plan) {
  if (plan.n_words != words.size()) {
    throw Error(ErrorKind::kValidation,
                "mask plan is for " + std::to_string(plan.n_words) + " words, text has " +
                    std::to_string(words.size()));
  }
  plan.Validate();
  std::vector<std::string> out;
  size_t w = 0;
  for (size_t j = 0; j < plan.spans.size(); ++j) {
    for (; w < plan.spans[j].start; ++w) out.push_back(words[w]);
    out.push_back(SentinelToken(j));
    w += plan.spans[j].length;
  }
  for (; w < words.size(); ++w) out.push_back(words[w]);
  return JoinWords(out);
}

std::string AssembleFilled(std::span<const std::string> source_words,
                           const MaskPlan& plan, std::span<const std::string> fills) {
  if (fills.size() != plan.spans.size()) {
    throw Error(ErrorKind::kProtocol,
                "filler returned " + std::to_string(fills.size()) + " fills for " +
                    std::to_string(plan.spans.size()) + " spans");
  }
  std::vector<std::string> out;
  size_t w = 0;
  for (size_t j = 0; j < plan.spans.size(); ++j) {
    for (; w < plan.spans[j].start; ++w) out.push_back(source_words[w]);
    for (auto& f : SplitWords(fills[j])) out.push_back(std::move(f));
    w += plan.spans[j].length;
  }
  for (; w < source_words.size(); ++w) out.push_back(source_words[w]);
  return JoinWords(out);
}

// ---- fillers ----

UnigramFiller::UnigramFiller(std::shared_ptr<const NGramModel> unigram)
    : unigram_(std::move(unigram)) {
  if (unigram_->order() != 1) {
    throw Error(ErrorKind::kValidation, "unigram filler needs an order-1 model");
  }
  const auto& vocab = unigram_->vocab();
  probs_.assign(vocab.size(), 0.0);
  double total = 0.0;
  for (size_t id = 0; id < vocab.size(); ++id) {
    if (static_cast<int32_t>(id) == unigram_->unk_id()) continue;
    probs_[id] = unigram_->Prob({}, static_cast<int32_t>(id));
    total += probs_[id];
  }
  if (!(total > 0.0)) throw Error(ErrorKind::kValidation, "unigram filler has no words");
  cumulative_.resize(probs_.size());
  double cum = 0.0;
  for (size_t id = 0; id < probs_.size(); ++id) {
    probs_[id] /= total;
    cum += probs_[id];
    cumulative_[id] = cum;
  }
}

std::string UnigramFiller::identity() const {
  return "unigram-fill:" + unigram_->identity();
}

std::vector<std::string> BuiltinFill(std::string_view masked_text,
                                     std::span<const size_t> span_lengths,
                                     const UnigramFiller& filler, Rng& rng) {
  const size_t n = CountSentinels(masked_text);
  if (n == 0) throw Error(ErrorKind::kValidation, "masked text has no sentinel");
  if (n != span_lengths.size()) {
    throw Error(ErrorKind::kValidation, "sentinel count does not match span lengths");
  }
  MaskPlan plan;
  for (size_t len : span_lengths) {
    plan.spans.push_back({plan.n_words, len});
    plan.n_words += len + 1;
  }
  return filler.Fill(FillRequest{masked_text, {}, plan}, rng);
}

std::vector<std::string> UnigramFiller::Fill(const FillRequest& request,
                                             Rng& rng) const {
  const auto& vocab = unigram_->vocab();
  const double top = cumulative_.back();
  std::vector<std::string> fills;
  fills.reserve(request.plan.spans.size());
  for (const auto& span : request.plan.spans) {
    std::vector<std::string> words;
    for (size_t w = 0; w < span.length; ++w) {
      const double u = rng.UniformDouble() * top;
      auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      size_t id = static_cast<size_t>(it - cumulative_.begin());
      if (id >= vocab.size()) id = vocab.size() - 1;
      words.push_back(vocab[id]);
    }
    fills.push_back(JoinWords(words));
  }
  return fills;
}

std::vector<std::string> EchoFiller::Fill(const FillRequest& request, Rng&) const {
  std::vector<std::string> fills;
  for (const auto& span : request.plan.spans) {
    fills.push_back(JoinWords(
        std::vector<std::string>(request.source_words.begin() + static_cast<std::ptrdiff_t>(span.start),
                                 request.source_words.begin() +
                                     static_cast<std::ptrdiff_t>(span.start + span.length))));
  }
  return fills;
}

// ---- perturbation ----

json PerturbedText::ToJson() const {
  json spans = json::array();
  for (const auto& s : plan.spans) spans.push_back({s.start, s.length});
  return {{"record_id", record_id},
          {"perturbation_index", index},
          {"text", text},
          {"spans", std::move(spans)},
          {"n_words", plan.n_words},
          {"contiguous", plan.contiguous},
          {"fills", fills},
          {"filler_id", filler_id}};
}

PerturbedText PerturbedText::FromJson(const json& j) {
  PerturbedText p;
  p.record_id = j.at("record_id").get<std::string>();
  p.index = j.at("perturbation_index").get<int>();
  p.text = j.at("text").get<std::string>();
  for (const auto& s : j.at("spans")) {
    p.plan.spans.push_back({s.at(0).get<size_t>(), s.at(1).get<size_t>()});
  }
  p.plan.n_words = j.value("n_words", size_t{0});
  p.plan.contiguous = j.value("contiguous", false);
  p.fills = j.value("fills", std::vector<std::string>{});
  p.filler_id = j.at("filler_id").get<std::string>();
  return p;
}

std::vector<PerturbedText> PerturbK(std::string_view text, std::string_view record_id,
                                    const PerturbationConfig& cfg,
                                    const FillBackend& filler) {
  cfg.Validate();
  const std::vector<std::string> words = SplitWords(text);
  const std::string original = JoinWords(words);
  std::vector<PerturbedText> out;
  out.reserve(static_cast<size_t>(cfg.k));
  for (int i = 0; i < cfg.k; ++i) {
    Rng rng(DeriveSeed(cfg.seed, record_id, static_cast<uint64_t>(i)));
    PerturbedText p;
    p.record_id = std::string(record_id);
    p.index = i;
    p.filler_id = filler.identity();
    for (int attempt = 0; attempt <= 3; ++attempt) {
      p.plan = SelectSpans(words.size(), cfg, rng);
      const std::string masked = ApplyMask(words, p.plan);
      p.fills = filler.Fill(FillRequest{masked, words, p.plan}, rng);
      p.text = AssembleFilled(words, p.plan, p.fills);
      if (p.text != original) break;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string PerturbationsToJsonl(std::span<const PerturbedText> items, const json& meta) {
  std::string out;
  if (!meta.is_null()) out += json{{"_meta", meta}}.dump() + "\n";
  for (const auto& p : items) out += p.ToJson().dump() + "\n";
  return out;
}

std::vector<PerturbedText> PerturbationsFromJsonl(std::string_view data) {
  std::vector<PerturbedText> out;
  size_t pos = 0;
  while (pos < data.size()) {
    size_t end = data.find('\n', pos);
    if (end == std::string_view::npos) end = data.size();
    std::string_view line = data.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j = json::parse(line);
    if (j.contains("_meta")) continue;
    out.push_back(PerturbedText::FromJson(j));
  }
  return out;
}

}  // namespace curvedetect
