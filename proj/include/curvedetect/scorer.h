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

#ifndef CURVEDETECT_SCORER_H_
#define CURVEDETECT_SCORER_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "curvedetect/backend.h"

namespace curvedetect {

// Tokenizer for the built-in models: ASCII-lowercased, split on whitespace,
// every ASCII punctuation character is a token of its own. Bytes >= 0x80 are
// word characters. Changing the rules requires bumping the version string,
// which is embedded in every serialized model.
inline constexpr std::string_view kTokenizerVersion = "ws-punct-lower-v1";
std::vector<std::string> Tokenize(std::string_view text);
// Joins tokens back into text, attaching closing punctuation to the left.
// Tokenize(Detokenize(t)) == t for any output of Tokenize.
std::string Detokenize(std::span<const std::string> tokens);

struct NGramOptions {
  int order = 3;
  double smoothing_k = 1.0;
  // Empty: plain add-k estimate of the full order. Otherwise one weight per
  // order 1..n; the add-k estimates of every order whose context has been
  // observed are mixed with these weights (renormalized over the observed
  // orders; order 1 is always observed).
  std::vector<double> interpolation;
};

// Add-k smoothed n-gram model over a closed vocabulary with an UNK token.
// Sequences are padded with order-1 begin markers; models of order >= 2 also
// predict one end marker. Immutable after training.
class NGramModel {
 public:
  static constexpr int32_t kBos = -1;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kEosToken = "</s>";

  int order() const { return options_.order; }
  double smoothing_k() const { return options_.smoothing_k; }
  const NGramOptions& options() const { return options_; }
  const std::string& fingerprint() const { return fingerprint_; }
  // "ngram:" + fingerprint prefix; stable across runs and platforms.
  std::string identity() const;

  // Id -> token; these are the outcomes every conditional is defined over.
  const std::vector<std::string>& vocab() const { return vocab_; }
  int32_t unk_id() const { return 0; }
  // -1 for unigram models, which have no end marker.
  int32_t eos_id() const { return order() >= 2 ? 1 : -1; }
  int32_t TokenId(std::string_view token) const;  // unk_id() if unseen
  std::vector<int32_t> Encode(std::string_view text) const;

  // Conditional probability of `token` given the history (most recent id
  // last). Only the last order-1 ids are used; shorter histories are padded
  // with kBos.
  double Prob(std::span<const int32_t> history, int32_t token) const;
  // Full conditional distribution indexed by token id.
  std::vector<double> Distribution(std::span<const int32_t> history) const;

  ScoreReport Score(std::string_view text, bool keep_per_token = false) const;

  // Count of the order-`n` window ending in `token` after `history`, and the
  // total count of that context. Exposed for tests and the unigram filler.
  int64_t Count(std::span<const int32_t> history, int32_t token, int n) const;
  int64_t ContextTotal(std::span<const int32_t> history, int n) const;

  std::string Serialize() const;
  static NGramModel Deserialize(std::string_view data);

 private:
  friend NGramModel TrainNGram(std::span<const std::string> corpus,
                               const NGramOptions& options);
  friend class NGramSampler;

  struct ContextCounts {
    int64_t total = 0;
    std::vector<std::pair<int32_t, int64_t>> next;  // sorted by id
  };
  using Table = std::unordered_map<std::string, ContextCounts>;

  static std::string Key(std::span<const int32_t> context);
  // Fills `padded` with the last order-1 ids of history, kBos-padded.
  void PadHistory(std::span<const int32_t> history,
                  std::vector<int32_t>& padded) const;
  const ContextCounts* Find(std::span<const int32_t> padded, int n) const;
  double ProbPadded(std::span<const int32_t> padded, int32_t token) const;

  NGramOptions options_;
  std::string fingerprint_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int32_t> ids_;
  std::vector<Table> tables_;  // tables_[n-1] holds order-n windows
};

NGramModel TrainNGram(std::span<const std::string> corpus,
                      const NGramOptions& options);

// Validating wrapper around ScorerBackend::Score: rejects empty text and
// reports that violate ScoreReport invariants.
ScoreReport Logprob(const ScorerBackend& scorer, std::string_view text,
                    bool keep_per_token = false);

struct SampleOptions {
  int max_words = 200;  // tokens to generate
  int min_words = 0;    // end marker suppressed before this many tokens
  double temperature = 1.0;  // 0 selects greedy decoding
  double top_p = 1.0;
  uint64_t seed = 0;
};

// Autoregressive sampling continuing `prompt`. Returns prompt + continuation
// (the prompt is kept verbatim). UNK is never emitted.
std::string Sample(const NGramModel& model, std::string_view prompt,
                   const SampleOptions& options);
// Only the generated tokens, detokenized.
std::string SampleContinuation(const NGramModel& model, std::string_view prompt,
                               const SampleOptions& options);

class NGramScorer : public ScorerBackend {
 public:
  explicit NGramScorer(std::shared_ptr<const NGramModel> model)
      : model_(std::move(model)) {}
  std::string identity() const override { return model_->identity(); }
  ScoreReport Score(std::string_view text, bool keep_per_token) const override {
    return model_->Score(text, keep_per_token);
  }
  const NGramModel& model() const { return *model_; }

 private:
  std::shared_ptr<const NGramModel> model_;
};

// Generation backend over a built-in model. max_tokens/min_tokens count
// model tokens; params.seed is required for reproducibility (0 if absent).
class NGramGenerator : public GenerationBackend {
 public:
  explicit NGramGenerator(std::shared_ptr<const NGramModel> model)
      : model_(std::move(model)) {}
  std::string identity() const override { return model_->identity(); }
  std::string Generate(const std::string& prompt,
                       const GenerationParams& params) const override;

 private:
  std::shared_ptr<const NGramModel> model_;
};

}  // namespace curvedetect

#endif  // CURVEDETECT_SCORER_H_
