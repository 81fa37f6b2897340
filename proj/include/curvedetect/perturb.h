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

#ifndef CURVEDETECT_PERTURB_H_
#define CURVEDETECT_PERTURB_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curvedetect/scorer.h"
#include "curvedetect/util.h"
#include "json.hpp"

namespace curvedetect {

struct MaskSpan {
  size_t start = 0;   // word index
  size_t length = 0;  // words
  bool operator==(const MaskSpan&) const = default;
};

struct MaskPlan {
  std::vector<MaskSpan> spans;
  size_t n_words = 0;
  bool contiguous = false;

  size_t masked_words() const;
  // Sorted, in bounds, non-overlapping, >= 1 unmasked word between spans
  // (contiguous plans have exactly one span).
  void Validate() const;
  bool operator==(const MaskPlan&) const = default;
};

struct PerturbationConfig {
  double mask_pct = 0.15;
  size_t span_len = 2;
  bool contiguous = false;
  int k = 100;
  uint64_t seed = 0;

  void Validate() const;
  nlohmann::json ToJson() const;
  static PerturbationConfig FromJson(const nlohmann::json& j);
};

// round(mask_pct * n_words), half away from zero.
size_t TargetMaskedWords(size_t n_words, double mask_pct);

// Non-contiguous: ceil(m / span_len) spans of span_len words, uniformly over
// all placements that keep one unmasked word between spans. Contiguous: one
// span of m words at a uniform start. Throws kValidation when m == 0, when
// m < span_len (non-contiguous) or when the spans cannot be placed.
MaskPlan SelectSpans(size_t n_words, const PerturbationConfig& cfg, Rng& rng);

std::string SentinelToken(size_t index);
// Number of <extra_id_K> markers in text; throws if they are not numbered
// 0, 1, 2, ... in order.
size_t CountSentinels(std::string_view text);
// Span j becomes the single word <extra_id_j>.
std::string ApplyMask(std::span<const std::string> words, const MaskPlan& plan);

struct FillRequest {
  std::string_view masked_text;
  std::span<const std::string> source_words;
  const MaskPlan& plan;
};

class FillBackend {
 public:
  virtual ~FillBackend() = default;
  virtual std::string identity() const = 0;
  // One fill per span, in span order.
  virtual std::vector<std::string> Fill(const FillRequest& request,
                                        Rng& rng) const = 0;
};

// Offline filler: every span is replaced by span-length words drawn i.i.d.
// from a unigram model (UNK excluded).
class UnigramFiller : public FillBackend {
 public:
  explicit UnigramFiller(std::shared_ptr<const NGramModel> unigram);
  std::string identity() const override;
  std::vector<std::string> Fill(const FillRequest& request,
                                Rng& rng) const override;
  // Sampling distribution over vocab ids (zero for UNK).
  const std::vector<double>& probabilities() const { return probs_; }

 private:
  std::shared_ptr<const NGramModel> unigram_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

// One fill per sentinel in masked_text, span_lengths[j] words for sentinel j.
std::vector<std::string> BuiltinFill(std::string_view masked_text,
                                     std::span<const size_t> span_lengths,
                                     const UnigramFiller& filler, Rng& rng);

// Fills each span with the words it masked, so every neighbor equals the
// source text.
class EchoFiller : public FillBackend {
 public:
  std::string identity() const override { return "echo"; }
  std::vector<std::string> Fill(const FillRequest& request,
                                Rng& rng) const override;
};

struct PerturbedText {
  std::string record_id;
  int index = 0;
  std::string text;
  MaskPlan plan;
  std::vector<std::string> fills;
  std::string filler_id;

  nlohmann::json ToJson() const;
  static PerturbedText FromJson(const nlohmann::json& j);
  bool operator==(const PerturbedText&) const = default;
};

// Words of `source` with span j replaced by the words of fills[j].
std::string AssembleFilled(std::span<const std::string> source_words,
                           const MaskPlan& plan,
                           std::span<const std::string> fills);

// k neighbors; neighbor i uses the RNG substream (cfg.seed, record_id, i). A
// neighbor identical to the source is redrawn up to 3 times, then kept.
std::vector<PerturbedText> PerturbK(std::string_view text,
                                    std::string_view record_id,
                                    const PerturbationConfig& cfg,
                                    const FillBackend& filler);

std::string PerturbationsToJsonl(std::span<const PerturbedText> items,
                                 const nlohmann::json& meta = {});
std::vector<PerturbedText> PerturbationsFromJsonl(std::string_view data);

}  // namespace curvedetect

#endif  // CURVEDETECT_PERTURB_H_
