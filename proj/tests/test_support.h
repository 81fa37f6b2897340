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

#ifndef CURVEDETECT_TESTS_TEST_SUPPORT_H_
#define CURVEDETECT_TESTS_TEST_SUPPORT_H_

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace curvedetect::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("curvedetect_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

// Seeded generator for property tests.
class Gen {
 public:
  explicit Gen(uint64_t seed) : engine_(seed) {}
  int Int(int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  double Real(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  bool Coin(double p = 0.5) { return Real(0.0, 1.0) < p; }
  std::string Word(const std::vector<std::string>& alphabet) {
    return alphabet[Int(0, static_cast<int>(alphabet.size()) - 1)];
  }
  std::string Sentence(const std::vector<std::string>& alphabet, int lo, int hi) {
    std::string out;
    const int n = Int(lo, hi);
    for (int i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += Word(alphabet);
    }
    return out;
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline std::filesystem::path SourceDir() { return CURVEDETECT_SOURCE_DIR; }

}  // namespace curvedetect::testing

#endif  // CURVEDETECT_TESTS_TEST_SUPPORT_H_
