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

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <mutex>
#include <set>

#include "curvedetect/scorer.h"
#include "curvedetect/util.h"
#include "test_support.h"

namespace curvedetect {
namespace {

using nlohmann::json;

std::string Words(size_t n, const std::string& stem = "w") {
  std::string out;
  for (size_t i = 0; i < n; ++i) out += (i ? " " : "") + stem + std::to_string(i);
  return out;
}

void WriteJsonl(const std::filesystem::path& path, const std::vector<std::string>& texts) {
  std::ofstream out(path);
  for (const auto& t : texts) out << json{{"text", t}}.dump() << "\n";
}

// Echoes the prompt's word count and seed; always long enough.
class CountingGenerator : public GenerationBackend {
 public:
  explicit CountingGenerator(size_t words = 40) : words_(words) {}
  std::string identity() const override { return "counting"; }
  std::string Generate(const std::string& prompt, const GenerationParams& params) const override {
    ++calls;
    return Words(words_, "g" + std::to_string(params.seed.value_or(0) % 997) + "_" +
                             std::to_string(prompt.size()) + "_");
  }
  mutable std::atomic<int> calls{0};

 private:
  size_t words_;
};

// Fails permanently for prompts in `bad`.
class FlakyGenerator : public GenerationBackend {
 public:
  explicit FlakyGenerator(std::set<std::string> bad) : bad_(std::move(bad)) {}
  std::string identity() const override { return "flaky"; }
  std::string Generate(const std::string& prompt, const GenerationParams&) const override {
    if (bad_.count(prompt)) throw Error(ErrorKind::kBackend, "HTTP 500");
    return Words(30, "f");
  }

 private:
  std::set<std::string> bad_;
};

// Returns a short completion on the first `short_calls` attempts per prompt.
class ShortThenLongGenerator : public GenerationBackend {
 public:
  explicit ShortThenLongGenerator(int short_calls) : short_calls_(short_calls) {}
  std::string identity() const override { return "short-then-long"; }
  std::string Generate(const std::string& prompt, const GenerationParams&) const override {
    std::lock_guard lock(mu_);
    return seen_[prompt]++ < short_calls_ ? "too short" : Words(30, "l");
  }

 private:
  int short_calls_;
  mutable std::mutex mu_;
  mutable std::map<std::string, int> seen_;
};

std::vector<std::string> HumanTexts(size_t n, size_t words = 30) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.push_back(Words(words, "t" + std::to_string(i) + "_"));
  return out;
}

PoolOptions SmallOptions(size_t n_per_class) {
  PoolOptions o;
  o.n_per_class = n_per_class;
  o.prompt_words = 5;
  o.min_generation_words = 10;
  o.max_generation_words = 20;
  o.seed = 77;
  return o;
}

TEST(LoadCorpusTest, FiltersByLength) {
  testing::TempDir dir("corpus");
  WriteJsonl(dir / "c.jsonl", {Words(5), Words(60), Words(80)});
  auto texts = LoadCorpus(dir / "c.jsonl", 50, 10, 1);
  ASSERT_EQ(texts.size(), 2u);
  EXPECT_EQ(CountWords(texts[0]), 60u);
  EXPECT_EQ(CountWords(texts[1]), 80u);
  EXPECT_EQ(LoadCorpus(dir / "c.jsonl", 50, 10, 1), texts);
}

TEST(LoadCorpusTest, PlainTextBlocks) {
  testing::TempDir dir("corpus");
  std::ofstream(dir / "c.txt") << "first  doc\nline two\n\n\nsecond\tdoc\n\n";
  auto texts = LoadCorpus(dir / "c.txt", 1, 0, 0);
  EXPECT_EQ(texts, (std::vector<std::string>{"first doc line two", "second doc"}));
}

TEST(LoadCorpusTest, Errors) {
  testing::TempDir dir("corpus");
  EXPECT_THROW(LoadCorpus(dir / "missing.jsonl", 1, 0, 0), Error);
  std::ofstream(dir / "bad.jsonl") << "{\"text\": \"ok\"}\n{\"text\": oops}\n";
  try {
    LoadCorpus(dir / "bad.jsonl", 1, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  WriteJsonl(dir / "short.jsonl", {Words(3)});
  EXPECT_THROW(LoadCorpus(dir / "short.jsonl", 10, 0, 0), Error);
}

TEST(LoadCorpusTest, SubsampleIsUniform) {
  testing::TempDir dir("corpus");
  std::vector<std::string> docs;
  for (int i = 0; i < 1000; ++i) docs.push_back("doc" + std::to_string(i) + " x y");
  WriteJsonl(dir / "c.jsonl", docs);
  constexpr int kSeeds = 200;
  std::vector<double> bins(10);
  for (uint64_t seed = 0; seed < kSeeds; ++seed) {
    auto texts = LoadCorpus(dir / "c.jsonl", 1, 300, seed);
    ASSERT_EQ(texts.size(), 300u);
    int prev = -1;
    for (const auto& t : texts) {
      const int id = std::stoi(t.substr(3));
      ASSERT_GT(id, prev);  // corpus order
      prev = id;
      bins[id / 100] += 1;
    }
  }
  const double expected = kSeeds * 30.0;
  double chi2 = 0.0;
  for (double b : bins) chi2 += (b - expected) * (b - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // 0.999 quantile, 9 degrees of freedom
  EXPECT_NE(LoadCorpus(dir / "c.jsonl", 1, 300, 1), LoadCorpus(dir / "c.jsonl", 1, 300, 2));
}

TEST(ExtractPromptTest, Prefixes) {
  EXPECT_EQ(ExtractPrompt("a b c d e", 3), "a b c");
  const std::string twenty = Words(20);
  EXPECT_EQ(ExtractPrompt(twenty, 20), twenty);
  EXPECT_THROW(ExtractPrompt("a b", 3), Error);
}

TEST(ExtractPromptTest, MixedWhitespaceMatchesSplitOracle) {
  testing::Gen gen(3);
  const std::vector<std::string> seps = {" ", "  ", "\t", "\n", " \t "};
  for (int trial = 0; trial < 100; ++trial) {
    std::string text;
    std::vector<std::string> oracle;
    const int n = gen.Int(20, 40);
    for (int i = 0; i < n; ++i) {
      const std::string w = "w" + std::to_string(gen.Int(0, 99));
      text += gen.Word(seps) + w;
      if (oracle.size() < 20) oracle.push_back(w);
    }
    std::string expected;
    for (const auto& w : oracle) expected += (expected.empty() ? "" : " ") + w;
    EXPECT_EQ(ExtractPrompt(text, 20), expected);
  }
}

TEST(BuildPoolTest, BalancedAndPaired) {
  CountingGenerator gen;
  PoolOptions o = SmallOptions(300);
  o.prompt_words = 20;
  TargetPool pool = BuildPool(HumanTexts(300), gen, o);
  EXPECT_EQ(pool.records.size(), 600u);
  EXPECT_EQ(pool.CountLabel(Label::kHuman), 300u);
  EXPECT_EQ(pool.CountLabel(Label::kMachine), 300u);
  for (const auto& r : pool.records) {
    if (r.label == Label::kMachine) {
      ASSERT_TRUE(r.prompt.has_value());
      EXPECT_EQ(r.text.rfind(*r.prompt, 0), 0u);
      EXPECT_EQ(r.generator_id, "counting");
      EXPECT_LE(CountWords(r.text), 20u + o.max_generation_words);
    }
  }
  // Record i of each class shares its prompt.
  EXPECT_EQ(ExtractPrompt(pool.records[7].text, 20), *pool.records[307].prompt);
}

TEST(BuildPoolTest, ReproducibleWithNGramGenerator) {
  NGramOptions no;
  no.order = 2;
  no.smoothing_k = 0.01;
  auto model = std::make_shared<NGramModel>(
      TrainNGram(std::vector<std::string>{"the sea is wide and the sea is deep"}, no));
  NGramGenerator gen(model);
  PoolOptions o = SmallOptions(1);
  o.gen_params.min_tokens = 12;
  o.gen_params.max_tokens = 15;
  const auto texts = HumanTexts(3);
  TargetPool a = BuildPool(texts, gen, o);
  TargetPool b = BuildPool(texts, gen, o);
  ASSERT_EQ(a.records.size(), 2u);
  EXPECT_EQ(a.records, b.records);
  o.workers = 4;
  EXPECT_EQ(BuildPool(texts, gen, o).records, a.records);
}

TEST(BuildPoolTest, FailuresAreReplacedFromSpares) {
  const auto texts = HumanTexts(350);
  std::set<std::string> bad;
  for (int i = 0; i < 10; ++i) bad.insert(ExtractPrompt(texts[i * 31], 5));
  FlakyGenerator gen(bad);
  TargetPool pool = BuildPool(texts, gen, SmallOptions(300));
  EXPECT_EQ(pool.CountLabel(Label::kHuman), 300u);
  EXPECT_EQ(pool.CountLabel(Label::kMachine), 300u);
  for (const auto& r : pool.records) {
    if (r.label == Label::kHuman) EXPECT_FALSE(bad.count(ExtractPrompt(r.text, 5)));
  }
}

TEST(BuildPoolTest, DroppingKeepsAdmittedHumansStable) {
  const auto texts = HumanTexts(60);
  FlakyGenerator clean({});
  std::set<std::string> bad = {ExtractPrompt(texts[20], 5), ExtractPrompt(texts[45], 5)};
  FlakyGenerator flaky(bad);
  TargetPool a = BuildPool(texts, clean, SmallOptions(40));
  TargetPool b = BuildPool(texts, flaky, SmallOptions(40));
  // Humans admitted before the first failure are identical.
  for (size_t i = 0; i < 20; ++i) EXPECT_EQ(a.records[i].text, b.records[i].text);
  EXPECT_EQ(b.records[20].text, texts[21]);
}

TEST(BuildPoolTest, ShortGenerationsAreRetried) {
  ShortThenLongGenerator gen(2);
  TargetPool pool = BuildPool(HumanTexts(5), gen, SmallOptions(5));
  EXPECT_EQ(pool.records.size(), 10u);
  ShortThenLongGenerator hopeless(10);
  EXPECT_THROW(BuildPool(HumanTexts(5), hopeless, SmallOptions(5)), Error);
}

TEST(BuildPoolTest, ErrorKinds) {
  CountingGenerator gen;
  try {
    BuildPool(HumanTexts(3), gen, SmallOptions(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
  const auto texts = HumanTexts(3);
  std::set<std::string> all;
  for (const auto& t : texts) all.insert(ExtractPrompt(t, 5));
  FlakyGenerator dead(all);
  try {
    BuildPool(texts, dead, SmallOptions(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBackend);
  }
}

TEST(BuildPoolTest, MultipleGeneratorsShareHumans) {
  CountingGenerator a;
  FlakyGenerator b({});
  const GenerationBackend* gens[] = {&a, &b};
  PoolOptions o = SmallOptions(4);
  o.generator_labels = {"ga", "gb"};
  TargetPool pool = BuildPool(HumanTexts(4), std::span<const GenerationBackend* const>(gens), o);
  EXPECT_EQ(pool.records.size(), 12u);
  EXPECT_EQ(pool.CountLabel(Label::kHuman), 4u);
  std::set<std::string> ids;
  for (const auto& r : pool.records) ids.insert(r.id);
  EXPECT_TRUE(ids.count("ga-00003"));
  EXPECT_TRUE(ids.count("gb-00000"));
}

TEST(PoolIoTest, JsonlRoundTripAndSidecar) {
  testing::TempDir dir("pool");
  CountingGenerator gen;
  TargetPool pool = BuildPool(HumanTexts(6), gen, SmallOptions(3));
  WritePool(dir / "pool.jsonl", pool, {{"engine_version", "test"}});
  TargetPool back = ReadPool(dir / "pool.jsonl");
  EXPECT_EQ(back.records, pool.records);
  json sidecar = json::parse(ReadFile(dir / "pool.jsonl.manifest.json"));
  EXPECT_EQ(sidecar["seed"], 77);
  EXPECT_TRUE(sidecar.contains("gen_params"));
  EXPECT_EQ(PoolToJsonl(PoolFromJsonl(PoolToJsonl(pool))), PoolToJsonl(pool));
}

TEST(PoolIoTest, RecordInvariants) {
  TextRecord r{"m1", "hello world", Label::kMachine, std::nullopt, "hello"};
  EXPECT_THROW(r.Validate(), Error);
  r.generator_id = "g";
  r.Validate();
  r.prompt = "bye";
  EXPECT_THROW(r.Validate(), Error);
  TextRecord h{"h1", "  ", Label::kHuman, std::nullopt, std::nullopt};
  EXPECT_THROW(h.Validate(), Error);
  TargetPool dup;
  dup.records = {TextRecord{"x", "a", Label::kHuman, {}, {}},
                 TextRecord{"x", "b", Label::kHuman, {}, {}}};
  EXPECT_THROW(dup.Validate(), Error);
}

}  // namespace
}  // namespace curvedetect
