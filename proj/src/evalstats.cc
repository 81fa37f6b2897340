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

#include "curvedetect/evalstats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "curvedetect/util.h"

namespace curvedetect {

using nlohmann::json;

namespace {

void RequireBoth(std::span<const double> machine, std::span<const double> human) {
  if (machine.empty() || human.empty()) {
    throw Error(ErrorKind::kValidation, "AUC needs at least one machine and one human score");
  }
  for (auto s : {machine, human}) {
    for (double v : s) {
      if (std::isnan(v)) throw Error(ErrorKind::kValidation, "NaN score");
    }
  }
}

std::string Fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::string CommentLine(const std::string& comment) {
  return comment.empty() ? "" : "# " + comment + "\n";
}

}  // namespace

double Auc(std::span<const double> machine, std::span<const double> human) {
  RequireBoth(machine, human);
  std::vector<std::pair<double, bool>> all;  // (score, is_machine)
  all.reserve(machine.size() + human.size());
  for (double v : machine) all.emplace_back(v, true);
  for (double v : human) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the machine rank sum, with tied groups sharing their mid-rank; kept
  // in integers so the statistic is exact.
  long double rank_sum_x2 = 0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    size_t machines_in_group = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      machines_in_group += all[j].second ? 1 : 0;
      ++j;
    }
    // Ranks i+1 .. j; mid-rank * 2 = i + 1 + j.
    rank_sum_x2 += static_cast<long double>(machines_in_group) * static_cast<long double>(i + 1 + j);
    i = j;
  }
  const long double nm = static_cast<long double>(machine.size());
  const long double nh = static_cast<long double>(human.size());
  const long double u_x2 = rank_sum_x2 - nm * (nm + 1);
  return static_cast<double>(u_x2 / (2 * nm * nh));
}

RocCurve ComputeRoc(std::span<const double> machine, std::span<const double> human) {
  RequireBoth(machine, human);
  std::vector<double> m(machine.begin(), machine.end());
  std::vector<double> h(human.begin(), human.end());
  std::sort(m.begin(), m.end(), std::greater<>());
  std::sort(h.begin(), h.end(), std::greater<>());
  std::vector<double> distinct(m);
  distinct.insert(distinct.end(), h.begin(), h.end());
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  size_t tp = 0;
  size_t fp = 0;
  for (double t : distinct) {
    while (tp < m.size() && m[tp] >= t) ++tp;
    while (fp < h.size() && h[fp] >= t) ++fp;
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(h.size()),
                            static_cast<double>(tp) / static_cast<double>(m.size())});
    curve.thresholds.push_back(t);
  }
  return curve;
}

double TrapezoidArea(const RocCurve& curve) {
  double area = 0.0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  return area;
}

std::string RocToCsv(const RocCurve& curve, const std::string& comment) {
  std::string out = CommentLine(comment) + "threshold,fpr,tpr\n";
  for (size_t i = 0; i < curve.points.size(); ++i) {
    const double t = curve.thresholds[i];
    out += (std::isinf(t) ? std::string(t > 0 ? "inf" : "-inf") : Fmt(t)) + "," +
           Fmt(curve.points[i].fpr) + "," + Fmt(curve.points[i].tpr) + "\n";
  }
  return out;
}

MeanStd ComputeMeanStd(std::span<const double> values) {
  MeanStd s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stdev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

// ---- store ----

void ResultStore::AddGenerator(const std::string& generator) {
  if (std::find(generators_.begin(), generators_.end(), generator) == generators_.end()) {
    generators_.push_back(generator);
  }
}

void ResultStore::AddDetector(const std::string& detector) {
  if (std::find(detectors_.begin(), detectors_.end(), detector) == detectors_.end()) {
    detectors_.push_back(detector);
  }
}

CellData& ResultStore::Cell(const std::string& generator, const std::string& detector) {
  AddGenerator(generator);
  AddDetector(detector);
  return cells_[{generator, detector}];
}

const CellData* ResultStore::Find(const std::string& generator,
                                  const std::string& detector) const {
  auto it = cells_.find({generator, detector});
  return it == cells_.end() ? nullptr : &it->second;
}

// ---- matrix ----

DetectionMatrix BuildMatrix(const ResultStore& store) {
  DetectionMatrix m;
  m.generators = store.generators();
  m.detectors = store.detectors();
  const size_t rows = m.generators.size();
  const size_t cols = m.detectors.size();
  m.auc.assign(rows, std::vector<std::optional<double>>(cols));
  for (size_t g = 0; g < rows; ++g) {
    for (size_t j = 0; j < cols; ++j) {
      const CellData* cell = store.Find(m.generators[g], m.detectors[j]);
      const std::string name = m.generators[g] + "/" + m.detectors[j];
      if (cell == nullptr) {
        m.missing.push_back(name + ": no results");
      } else if (cell->machine_d.size() < 2 || cell->human_d.size() < 2) {
        m.missing.push_back(name + ": needs >= 2 machine and >= 2 human records (have " +
                            std::to_string(cell->machine_d.size()) + "/" +
                            std::to_string(cell->human_d.size()) + ")");
      } else {
        m.auc[g][j] = Auc(cell->machine_d, cell->human_d);
      }
    }
  }
  m.mean_row.assign(cols, std::nullopt);
  m.mean_counts.assign(cols, 0);
  for (size_t j = 0; j < cols; ++j) {
    double sum = 0.0;
    for (size_t g = 0; g < rows; ++g) {
      if (m.auc[g][j]) {
        sum += *m.auc[g][j];
        ++m.mean_counts[j];
      }
    }
    if (m.mean_counts[j] > 0) m.mean_row[j] = sum / static_cast<double>(m.mean_counts[j]);
  }
  m.diff.assign(rows, std::nullopt);
  for (size_t g = 0; g < rows; ++g) {
    auto self = std::find(m.detectors.begin(), m.detectors.end(), m.generators[g]);
    if (self == m.detectors.end()) continue;
    const auto& self_auc = m.auc[g][static_cast<size_t>(self - m.detectors.begin())];
    if (!self_auc) continue;
    std::vector<std::optional<double>> row(cols);
    for (size_t j = 0; j < cols; ++j) {
      if (m.auc[g][j]) row[j] = *self_auc - *m.auc[g][j];
    }
    m.diff[g] = std::move(row);
  }
  return m;
}

namespace {
std::string GridRow(const std::string& label, const std::vector<std::optional<double>>& row) {
  std::string out = CsvField(label);
  for (const auto& v : row) out += "," + (v ? Fmt(*v) : std::string());
  return out + "\n";
}

std::string Header(const std::vector<std::string>& detectors) {
  std::string out = "generator";
  for (const auto& d : detectors) out += "," + CsvField(d);
  return out + "\n";
}

json GridJson(const std::vector<std::optional<double>>& row) {
  json out = json::array();
  for (const auto& v : row) out.push_back(v ? json(*v) : json(nullptr));
  return out;
}
}  // namespace

std::string DetectionMatrix::ToCsv(const std::string& comment) const {
  std::string out = CommentLine(comment) + Header(detectors);
  for (size_t g = 0; g < generators.size(); ++g) out += GridRow(generators[g], auc[g]);
  out += GridRow("mean", mean_row);
  return out;
}

std::string DetectionMatrix::DiffToCsv(const std::string& comment) const {
  std::string out = CommentLine(comment) + Header(detectors);
  for (size_t g = 0; g < generators.size(); ++g) {
    if (diff[g]) out += GridRow(generators[g], *diff[g]);
  }
  return out;
}

json DetectionMatrix::ToJson() const {
  json rows = json::array();
  for (const auto& r : auc) rows.push_back(GridJson(r));
  json diffs = json::object();
  for (size_t g = 0; g < generators.size(); ++g) {
    if (diff[g]) diffs[generators[g]] = GridJson(*diff[g]);
  }
  return {{"generators", generators}, {"detectors", detectors},  {"auc", rows},
          {"mean_row", GridJson(mean_row)}, {"mean_counts", mean_counts},
          {"diff", diffs},          {"missing", missing}};
}

ScoreBreakdown Breakdown(const ResultStore& store) {
  ScoreBreakdown b;
  for (const auto& g : store.generators()) {
    for (const auto& d : store.detectors()) {
      const CellData* cell = store.Find(g, d);
      if (cell == nullptr || cell->machine_d.empty() || cell->human_d.empty()) continue;
      b.cells.push_back({g, d, ComputeMeanStd(cell->machine_d), ComputeMeanStd(cell->human_d),
                         ComputeMeanStd(cell->machine_ll), ComputeMeanStd(cell->human_ll)});
    }
  }
  return b;
}

std::string ScoreBreakdown::ToCsv(const std::string& comment) const {
  std::string out = CommentLine(comment) +
                    "generator,detector,machine_d_mean,machine_d_std,human_d_mean,human_d_std,"
                    "machine_ll_mean,machine_ll_std,human_ll_mean,human_ll_std,n_machine,n_human\n";
  for (const auto& c : cells) {
    out += CsvField(c.generator) + "," + CsvField(c.detector) + "," + Fmt(c.machine_d.mean) +
           "," + Fmt(c.machine_d.stdev) + "," + Fmt(c.human_d.mean) + "," +
           Fmt(c.human_d.stdev) + "," + Fmt(c.machine_ll.mean) + "," +
           Fmt(c.machine_ll.stdev) + "," + Fmt(c.human_ll.mean) + "," +
           Fmt(c.human_ll.stdev) + "," + std::to_string(c.machine_d.n) + "," +
           std::to_string(c.human_d.n) + "\n";
  }
  return out;
}

json ScoreBreakdown::ToJson() const {
  auto ms = [](const MeanStd& s) { return json{{"mean", s.mean}, {"std", s.stdev}, {"n", s.n}}; };
  json out = json::array();
  for (const auto& c : cells) {
    out.push_back({{"generator", c.generator},
                   {"detector", c.detector},
                   {"machine_d", ms(c.machine_d)},
                   {"human_d", ms(c.human_d)},
                   {"machine_ll", ms(c.machine_ll)},
                   {"human_ll", ms(c.human_ll)}});
  }
  return out;
}

}  // namespace curvedetect
