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

#ifndef CURVEDETECT_SVG_H_
#define CURVEDETECT_SVG_H_

// Standalone SVG charts for the report artifacts. Output is a pure function
// of the inputs.

#include <optional>
#include <string>
#include <vector>

#include "curvedetect/evalstats.h"

namespace curvedetect::svg {

// Cells colored on [lo, hi]; holes drawn hatched grey.
std::string Heatmap(const std::string& title, const std::vector<std::string>& rows,
                    const std::vector<std::string>& cols, const Grid& values, double lo,
                    double hi, const std::string& comment = "");

std::string BarChart(const std::string& title, const std::vector<std::string>& labels,
                     const std::vector<std::optional<double>>& values, double lo, double hi,
                     const std::string& comment = "");

struct ErrorBarGroup {
  std::string label;
  MeanStd machine;
  MeanStd human;
};
// Machine/human mean +- std side by side per group.
std::string MeanStdChart(const std::string& title, const std::vector<ErrorBarGroup>& groups,
                         const std::string& comment = "");

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
std::string LineChart(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series,
                      bool log_x = false, const std::string& comment = "");

}  // namespace curvedetect::svg

#endif  // CURVEDETECT_SVG_H_
