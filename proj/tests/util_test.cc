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

#include "curvedetect/util.h"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "test_support.h"

namespace curvedetect {
namespace {

TEST(UtilTest, SplitAndJoinWords) {
  EXPECT_EQ(SplitWords("  a\tb\n\nc  "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(SplitWords(" \t\n").empty());
  const std::vector<std::string> words = {"a", "b", "c", "d"};
  EXPECT_EQ(JoinWords(words), "a b c d");
  EXPECT_EQ(JoinWords(words, 1, 3), "b c");
  EXPECT_EQ(JoinWords(words, 2, 100), "c d");
  EXPECT_EQ(NormalizeWhitespace("\n x  y\t z "), "x y z");
  EXPECT_EQ(CountWords("one two  three"), 3u);
}

TEST(UtilTest, Sha256KnownVector) {
  EXPECT_EQ(Sha256Hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(UtilTest, ExitCodes) {
  EXPECT_EQ(ExitCodeFor(ErrorKind::kValidation), 2);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kBackend), 3);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kProtocol), 3);
  EXPECT_EQ(ExitCodeFor(ErrorKind::kPartial), 4);
}

TEST(UtilTest, DerivedSeedsAreDistinctPerKeyAndIndex) {
  std::set<uint64_t> seen;
  for (const char* key : {"a", "b", "h-00001", "h-00010"}) {
    for (uint64_t i = 0; i < 50; ++i) seen.insert(DeriveSeed(42, key, i));
  }
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_EQ(DeriveSeed(42, "a", 3), DeriveSeed(42, "a", 3));
  EXPECT_NE(DeriveSeed(42, "a", 3), DeriveSeed(43, "a", 3));
}

TEST(UtilTest, RngIsReproducible) {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.UniformInt(1000), b.UniformInt(1000));
}

TEST(UtilTest, UniformIntChiSquared) {
  Rng rng(7);
  constexpr int kBins = 10;
  constexpr int kDraws = 100000;
  std::vector<int> counts(kBins);
  for (int i = 0; i < kDraws; ++i) ++counts[rng.UniformInt(kBins)];
  double chi2 = 0.0;
  const double expected = static_cast<double>(kDraws) / kBins;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 9 degrees of freedom; 27.88 is the 0.999 quantile.
  EXPECT_LT(chi2, 27.88);
}

TEST(UtilTest, UniformDoubleInUnitInterval) {
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.UniformDouble();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 10000, 0.5, 0.02);
}

TEST(UtilTest, AtomicWriteRoundTrip) {
  testing::TempDir dir("util");
  const auto path = dir / "nested/deeper/file.txt";
  WriteFileAtomic(path, "first");
  WriteFileAtomic(path, "second");
  EXPECT_EQ(ReadFile(path), "second");
  size_t entries = 0;
  for (const auto& e : std::filesystem::directory_iterator(path.parent_path())) {
    (void)e;
    ++entries;
  }
  EXPECT_EQ(entries, 1u);
  EXPECT_THROW(ReadFile(dir / "missing"), Error);
}

TEST(UtilTest, ParallelForVisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  ParallelFor(hits.size(), 8, [&](size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(UtilTest, ParallelForRethrowsLowestIndex) {
  try {
    ParallelFor(100, 4, [](size_t i) {
      if (i == 17 || i == 60) throw Error(ErrorKind::kBackend, std::to_string(i));
    });
    FAIL() << "expected throw";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "17");
  }
}

}  // namespace
}  // namespace curvedetect
