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

#ifndef CURVEDETECT_EVALSTATS_H_
#define CURVEDETECT_EVALSTATS_H_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace curvedetect {

// Mann-Whitney estimate of P(machine > human) + 0.5 P(tie), machine being
// the positive class. O(n log n) via mid-ranks. Throws on an empty class.
double Auc(std::span<const double> machine, std::span<const double> human);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint&) const = default;
};

// One point per distinct score (predict machine iff score >= threshold),
// preceded by the (0,0) point at threshold +inf.
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;
};

RocCurve ComputeRoc(std::span<const double> machine, std::span<const double> human);
double TrapezoidArea(const RocCurve& curve);
std::string RocToCsv(const RocCurve& curve, const std::string& comment = "");

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;  // population (divides by n)
  size_t n = 0;
};
MeanStd ComputeMeanStd(std::span<const double> values);

// Scores of one (generator, detector) cell split by true label.
struct CellData {
  std::vector<double> machine_d;
  std::vector<double> human_d;
  std::vector<double> machine_ll;
  std::vector<double> human_ll;
};

// Curvature results grouped by (generator, detector). Row and column order
// follow first insertion.
class ResultStore {
 public:
  void AddGenerator(const std::string& generator);
  void AddDetector(const std::string& detector);
  CellData& Cell(const std::string& generator, const std::string& detector);
  const CellData* Find(const std::string& generator, const std::string& detector) const;
  const std::vector<std::string>& generators() const { return generators_; }
  const std::vector<std::string>& detectors() const { return detectors_; }

 private:
  std::vector<std::string> generators_;
  std::vector<std::string> detectors_;
  std::map<std::pair<std::string, std::string>, CellData> cells_;
};

using Grid = std::vector<std::vector<std::optional<double>>>;

struct DetectionMatrix {
  std::vector<std::string> generators;  // rows
  std::vector<std::string> detectors;   // columns
  Grid auc;
  // Mean over the present cells of each column, with the count used.
  std::vector<std::optional<double>> mean_row;
  std::vector<size_t> mean_counts;
  // diff[g][j] = auc[g][self] - auc[g][j]; absent for generators without a
  // self-detection column.
  std::vector<std::optional<std::vector<std::optional<double>>>> diff;
  std::vector<std::string> missing;  // "<generator>/<detector>: reason"

  bool complete() const { return missing.empty(); }
  // Header row of detectors, one row per generator, then "mean". Holes are
  // empty fields. A non-empty comment becomes a leading "# ..." line.
  std::string ToCsv(const std::string& comment = "") const;
  std::string DiffToCsv(const std::string& comment = "") const;
  nlohmann::json ToJson() const;
};

// Cells need >= 2 machine and >= 2 human scores; anything less is a hole.
DetectionMatrix BuildMatrix(const ResultStore& store);

struct BreakdownCell {
  std::string generator;
  std::string detector;
  MeanStd machine_d, human_d, machine_ll, human_ll;
};

struct ScoreBreakdown {
  std::vector<BreakdownCell> cells;
  std::string ToCsv(const std::string& comment = "") const;
  nlohmann::json ToJson() const;
};

ScoreBreakdown Breakdown(const ResultStore& store);

}  // namespace curvedetect

#endif  // CURVEDETECT_EVALSTATS_H_
