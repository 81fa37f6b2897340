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

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "curvedetect/textpool.h"
#include "curvedetect/util.h"
#include "test_support.h"

namespace curvedetect {
namespace {

NGramModel Train(std::vector<std::string> corpus, int order, double k,
                 std::vector<double> interpolation = {}) {
  NGramOptions o;
  o.order = order;
  o.smoothing_k = k;
  o.interpolation = std::move(interpolation);
  return TrainNGram(corpus, o);
}

// Add-k estimate recomputed from raw window counts, sharing nothing with the
// model but the tokenizer.
class AddKOracle {
 public:
  AddKOracle(const std::vector<std::string>& corpus, int order, double k)
      : order_(order), k_(k) {
    std::set<std::string> words;
    std::vector<std::vector<std::string>> docs;
    for (const auto& text : corpus) {
      auto toks = Tokenize(text);
      words.insert(toks.begin(), toks.end());
      docs.push_back(toks);
    }
    vocab_size_ = words.size() + (order >= 2 ? 2 : 1);
    known_ = words;
    for (auto& toks : docs) {
      std::vector<std::string> padded(order - 1, "<s>");
      padded.insert(padded.end(), toks.begin(), toks.end());
      if (order >= 2) padded.push_back("</s>");
      for (size_t i = order - 1; i < padded.size(); ++i) {
        std::vector<std::string> ctx(padded.begin() + i - (order - 1), padded.begin() + i);
        ++counts_[{ctx, padded[i]}];
        ++totals_[ctx];
      }
    }
  }

  double Prob(std::vector<std::string> ctx, const std::string& token) const {
    for (auto& w : ctx) {
      if (w != "<s>" && !known_.count(w)) w = "<unk>";
    }
    const std::string t = (token == "</s>" || known_.count(token)) ? token : "<unk>";
    auto c = counts_.find({ctx, t});
    auto n = totals_.find(ctx);
    const double count = c == counts_.end() ? 0.0 : c->second;
    const double total = n == totals_.end() ? 0.0 : n->second;
    return (count + k_) / (total + k_ * static_cast<double>(vocab_size_));
  }

 private:
  int order_;
  double k_;
  size_t vocab_size_ = 0;
  std::set<std::string> known_;
  std::map<std::pair<std::vector<std::string>, std::string>, int> counts_;
  std::map<std::vector<std::string>, int> totals_;
};

TEST(TokenizerTest, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(Tokenize("Hello, World!"),
            (std::vector<std::string>{"hello", ",", "world", "!"}));
  EXPECT_EQ(Tokenize("don't  (stop)"),
            (std::vector<std::string>{"don", "'", "t", "(", "stop", ")"}));
  EXPECT_EQ(Tokenize("caf\xc3\xa9"), (std::vector<std::string>{"caf\xc3\xa9"}));
  EXPECT_TRUE(Tokenize(" \n ").empty());
}

TEST(TokenizerTest, DetokenizeRoundTrips) {
  testing::Gen gen(11);
  const std::vector<std::string> alphabet = {"a", "Bb", ",", ".", "(", ")", "?", "'", "x-y",
                                             "\xc3\xa9t\xc3\xa9"};
  for (int trial = 0; trial < 500; ++trial) {
    const auto toks = Tokenize(gen.Sentence(alphabet, 0, 15));
    EXPECT_EQ(Tokenize(Detokenize(toks)), toks);
  }
  EXPECT_EQ(Detokenize(std::vector<std::string>{"a", ",", "(", "b", ")", "."}), "a, (b).");
}

TEST(NGramTest, UnigramAddKExample) {
  NGramModel m = Train({"a b a b"}, 1, 1.0);
  EXPECT_EQ(m.vocab().size(), 3u);
  EXPECT_EQ(m.vocab()[0], "<unk>");
  const std::vector<int32_t> none;
  EXPECT_DOUBLE_EQ(m.Prob(none, m.TokenId("a")), 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(m.Prob(none, m.TokenId("b")), 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(m.Prob(none, m.unk_id()), 1.0 / 7.0);
}

TEST(NGramTest, UnigramLogprobExamples) {
  NGramModel m = Train({"a a b"}, 1, 1.0);
  NGramScorer scorer(std::make_shared<NGramModel>(m));
  ScoreReport r = Logprob(scorer, "a");
  EXPECT_NEAR(r.total_logprob, std::log(0.5), 1e-15);
  EXPECT_EQ(r.token_count, 1);
  r = Logprob(scorer, "a a");
  EXPECT_NEAR(r.total_logprob, 2 * std::log(0.5), 1e-15);
  EXPECT_EQ(r.token_count, 2);
  EXPECT_EQ(Logprob(scorer, "a b a"), Logprob(scorer, "a b a"));
  EXPECT_THROW(Logprob(scorer, "   "), Error);
}

TEST(NGramTest, MinimalBigramCorpus) {
  NGramModel m = Train({"x"}, 2, 1.0);
  ASSERT_EQ(m.vocab(), (std::vector<std::string>{"<unk>", "</s>", "x"}));
  const int32_t x = m.TokenId("x");
  const std::vector<int32_t> bos = {NGramModel::kBos};
  const std::vector<int32_t> after_x = {x};
  EXPECT_EQ(m.Count(bos, x, 2), 1);
  EXPECT_EQ(m.Count(after_x, m.eos_id(), 2), 1);
  EXPECT_EQ(m.ContextTotal(bos, 2), 1);
  EXPECT_EQ(m.ContextTotal(after_x, 2), 1);
  // Every other transition only carries smoothing mass.
  for (int32_t from : {m.unk_id(), m.eos_id()}) {
    const std::vector<int32_t> h = {from};
    EXPECT_EQ(m.ContextTotal(h, 2), 0);
    for (int32_t to = 0; to < 3; ++to) EXPECT_DOUBLE_EQ(m.Prob(h, to), 1.0 / 3.0);
  }
  EXPECT_EQ(m.Count(bos, m.eos_id(), 2), 0);
  EXPECT_EQ(m.Count(after_x, x, 2), 0);
  EXPECT_DOUBLE_EQ(m.Prob(bos, x), 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(m.Prob(bos, m.eos_id()), 1.0 / 4.0);
}

TEST(NGramTest, MatchesCountingOracle) {
  testing::Gen gen(5);
  const std::vector<std::string> alphabet = {"the", "cat", "sat", "on", "mat", ",", "."};
  for (int order = 1; order <= 4; ++order) {
    std::vector<std::string> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(gen.Sentence(alphabet, 1, 12));
    const double k = gen.Real(0.01, 2.0);
    NGramModel m = Train(corpus, order, k);
    AddKOracle oracle(corpus, order, k);
    std::vector<std::string> probe = alphabet;
    probe.push_back("dog");
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<std::string> ctx;
      std::vector<int32_t> history;
      for (int i = 0; i < order - 1; ++i) {
        if (gen.Coin(0.2)) {
          ctx.push_back("<s>");
          history.push_back(NGramModel::kBos);
        } else {
          ctx.push_back(gen.Word(probe));
          history.push_back(m.TokenId(ctx.back()));
        }
      }
      // A begin marker can only precede other begin markers.
      for (size_t i = ctx.size(); i-- > 1;) {
        if (ctx[i] == "<s>" && ctx[i - 1] != "<s>") {
          ctx[i - 1] = "<s>";
          history[i - 1] = NGramModel::kBos;
        }
      }
      const std::string token = gen.Word(probe);
      EXPECT_NEAR(m.Prob(history, m.TokenId(token)), oracle.Prob(ctx, token), 1e-12)
          << "order " << order;
      if (order >= 2) {
        EXPECT_NEAR(m.Prob(history, m.eos_id()), oracle.Prob(ctx, "</s>"), 1e-12);
      }
    }
  }
}

TEST(NGramTest, DistributionsNormalize) {
  testing::Gen gen(17);
  const std::vector<std::string> alphabet = {"a", "b", "c", "d", "e", "f", "g", "."};
  for (int order = 1; order <= 4; ++order) {
    for (bool interp : {false, true}) {
      std::vector<std::string> corpus;
      for (int i = 0; i < 15; ++i) corpus.push_back(gen.Sentence(alphabet, 1, 20));
      std::vector<double> weights;
      if (interp) {
        for (int i = 0; i < order; ++i) weights.push_back(gen.Real(0.1, 1.0));
      }
      NGramModel m = Train(corpus, order, gen.Real(1e-4, 3.0), weights);
      for (int trial = 0; trial < 200; ++trial) {
        std::vector<int32_t> history;
        const int len = gen.Int(0, order + 1);
        for (int i = 0; i < len; ++i) {
          history.push_back(gen.Int(0, static_cast<int>(m.vocab().size()) - 1));
        }
        const auto dist = m.Distribution(history);
        ASSERT_EQ(dist.size(), m.vocab().size());
        const double sum = std::accumulate(dist.begin(), dist.end(), 0.0);
        EXPECT_NEAR(sum, 1.0, 1e-9);
        const int32_t probe = gen.Int(0, static_cast<int>(dist.size()) - 1);
        EXPECT_NEAR(m.Prob(history, probe), dist[probe], 1e-15);
      }
    }
  }
}

TEST(NGramTest, AddingAnOccurrenceRaisesProbability) {
  testing::Gen gen(23);
  const std::vector<std::string> alphabet = {"p", "q", "r", "s", "t"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> corpus;
    // Every word appears so the vocabulary is fixed.
    corpus.push_back("p q r s t");
    for (int i = 0; i < 5; ++i) corpus.push_back(gen.Sentence(alphabet, 1, 10));
    const double k = gen.Real(0.01, 2.0);
    const int order = gen.Int(1, 2);
    const std::string c = gen.Word(alphabet);
    std::string w = gen.Word(alphabet);
    while (w == c) w = gen.Word(alphabet);
    NGramModel before = Train(corpus, order, k);
    corpus.push_back(order == 1 ? w : c + " " + w);
    NGramModel after = Train(corpus, order, k);
    std::vector<int32_t> h_before, h_after;
    if (order == 2) {
      h_before = {before.TokenId(c)};
      h_after = {after.TokenId(c)};
    }
    EXPECT_GT(after.Prob(h_after, after.TokenId(w)), before.Prob(h_before, before.TokenId(w)));
  }
}

TEST(NGramTest, UnigramScoresAreAdditive) {
  testing::Gen gen(29);
  const std::vector<std::string> alphabet = {"a", "b", "c", "zz", ",", "!"};
  std::vector<std::string> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(gen.Sentence(alphabet, 1, 10));
  NGramModel m = Train(corpus, 1, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string x = gen.Sentence(alphabet, 1, 8);
    const std::string y = gen.Sentence({"a", "b", "unseen", "."}, 1, 8);
    EXPECT_NEAR(m.Score(x + " " + y).total_logprob,
                m.Score(x).total_logprob + m.Score(y).total_logprob, 1e-9);
  }
}

TEST(NGramTest, PerTokenSumsToTotal) {
  NGramModel m = Train({"a b c a b", "c c b a"}, 3, 0.3);
  ScoreReport r = m.Score("a b c d a", true);
  ASSERT_TRUE(r.per_token.has_value());
  double sum = 0.0;
  for (const auto& [tok, lp] : *r.per_token) sum += lp;
  EXPECT_NEAR(sum, r.total_logprob, 1e-9);
  EXPECT_EQ(r.token_count, static_cast<int64_t>(r.per_token->size()));
  EXPECT_LE(r.total_logprob, 0.0);
  EXPECT_FALSE(m.Score("a b").per_token.has_value());
}

TEST(NGramTest, SerializationIsDeterministicAndLossless) {
  const std::vector<std::string> corpus = {"One fish, two fish.", "Red fish; blue fish!"};
  NGramModel a = Train(corpus, 3, 0.5, {0.2, 0.3, 0.5});
  NGramModel b = Train(corpus, 3, 0.5, {0.2, 0.3, 0.5});
  EXPECT_EQ(a.Serialize(), b.Serialize());
  EXPECT_EQ(a.identity(), b.identity());
  NGramModel c = NGramModel::Deserialize(a.Serialize());
  EXPECT_EQ(c.Serialize(), a.Serialize());
  EXPECT_EQ(c.identity(), a.identity());
  for (const char* text : {"one fish", "blue red two", "whale"}) {
    EXPECT_EQ(c.Score(text), a.Score(text));
  }
  NGramModel other = Train(corpus, 2, 0.5);
  EXPECT_NE(other.identity(), a.identity());
}

TEST(NGramTest, RejectsBadOptions) {
  EXPECT_THROW(Train({"a"}, 0, 1.0), Error);
  EXPECT_THROW(Train({"a"}, 2, 0.0), Error);
  EXPECT_THROW(Train({"a"}, 2, 1.0, {1.0}), Error);
  EXPECT_THROW(Train({"a"}, 2, 1.0, {0.0, 1.0}), Error);
}

TEST(SampleTest, GreedyFollowsArgmaxChain) {
  NGramModel m = Train({"a b c a b c"}, 2, 1.0);
  SampleOptions o;
  o.temperature = 0.0;
  o.max_words = 6;
  o.min_words = 6;
  // Argmax oracle walked by hand over the distribution.
  std::vector<std::string> expected;
  int32_t prev = m.TokenId("a");
  for (int i = 0; i < 6; ++i) {
    const std::vector<int32_t> h = {prev};
    const auto dist = m.Distribution(h);
    int32_t best = -1;
    for (int32_t id = 0; id < static_cast<int32_t>(dist.size()); ++id) {
      if (id == m.unk_id() || id == m.eos_id()) continue;
      if (best < 0 || dist[id] > dist[best]) best = id;
    }
    expected.push_back(m.vocab()[best]);
    prev = best;
  }
  EXPECT_EQ(JoinWords(expected), "b c a b c a");
  EXPECT_EQ(SampleContinuation(m, "a", o), "b c a b c a");
  EXPECT_EQ(Sample(m, "a", o), "a b c a b c a");
}

TEST(SampleTest, SeedDeterminismAndBoundaries) {
  NGramModel m = Train({"the cat sat on the mat", "the dog sat on the log"}, 2, 0.1);
  SampleOptions o;
  o.max_words = 30;
  o.seed = 1234;
  EXPECT_EQ(Sample(m, "the", o), Sample(m, "the", o));
  o.top_p = 0.8;
  o.temperature = 0.7;
  EXPECT_EQ(Sample(m, "the", o), Sample(m, "the", o));
  o.max_words = 0;
  EXPECT_EQ(Sample(m, "The  prompt", o), "The  prompt");
}

TEST(SampleTest, NeverEmitsUnknownOrEarlyEnd) {
  NGramModel m = Train({"a b", "b a", "a a b"}, 2, 1.0);
  SampleOptions o;
  o.max_words = 12;
  o.min_words = 12;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    o.seed = seed;
    const auto toks = Tokenize(SampleContinuation(m, "zzz", o));
    EXPECT_EQ(toks.size(), 12u);
    for (const auto& t : toks) EXPECT_TRUE(t == "a" || t == "b") << t;
  }
}

TEST(SampleTest, GenerationsOutscoreForeignHumanText) {
  const auto dir = testing::SourceDir() / "data/corpora";
  auto moby = LoadCorpus(dir / "moby_dick.jsonl", 50, 0, 1);
  auto sotu = LoadCorpus(dir / "sotu_1790_1825.jsonl", 50, 100, 1);
  auto model = std::make_shared<NGramModel>(Train(moby, 3, 1e-4, {0.1, 0.3, 0.6}));
  NGramGenerator generator(model);
  double gen_mean = 0.0;
  double human_mean = 0.0;
  for (size_t i = 0; i < 100; ++i) {
    GenerationParams p;
    p.max_tokens = 80;
    p.min_tokens = 80;
    p.seed = static_cast<int64_t>(i);
    const std::string prompt = ExtractPrompt(sotu[i], 5);
    gen_mean += model->Score(generator.Generate(prompt, p)).mean_logprob() / 100;
    human_mean += model->Score(sotu[i]).mean_logprob() / 100;
  }
  EXPECT_GE(gen_mean, human_mean);
}

}  // namespace
}  // namespace curvedetect
