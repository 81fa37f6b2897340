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

#include "curvedetect/svg.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace curvedetect::svg {

namespace {

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string Open(double w, double h, const std::string& title, const std::string& comment) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  if (!comment.empty()) out += "<!-- " + Escape(comment) + " -->\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Num(w) + "\" height=\"" +
         Num(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + Num(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         Escape(title) + "</text>\n";
  return out;
}

std::string Text(double x, double y, const std::string& s, const std::string& anchor = "middle",
                 double rotate = 0) {
  std::string out = "<text x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" text-anchor=\"" + anchor + "\"";
  if (rotate != 0) out += " transform=\"rotate(" + Num(rotate) + " " + Num(x) + " " + Num(y) + ")\"";
  return out + ">" + Escape(s) + "</text>\n";
}

std::string Line(double x1, double y1, double x2, double y2, const std::string& stroke,
                 double width = 1) {
  return "<line x1=\"" + Num(x1) + "\" y1=\"" + Num(y1) + "\" x2=\"" + Num(x2) + "\" y2=\"" +
         Num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + Num(width) + "\"/>\n";
}

std::string Rect(double x, double y, double w, double h, const std::string& fill) {
  return "<rect x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" width=\"" + Num(w) + "\" height=\"" +
         Num(h) + "\" fill=\"" + fill + "\"/>\n";
}

// White -> dark blue ramp.
std::string Color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(247 - t * (247 - 8)));
  const int g = static_cast<int>(std::lround(251 - t * (251 - 48)));
  const int b = static_cast<int>(std::lround(255 - t * (255 - 107)));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

std::string Heatmap(const std::string& title, const std::vector<std::string>& rows,
                    const std::vector<std::string>& cols, const Grid& values, double lo,
                    double hi, const std::string& comment) {
  const double cell = 56;
  const double left = 150;
  const double top = 130;
  const double w = left + cell * static_cast<double>(cols.size()) + 30;
  const double h = top + cell * static_cast<double>(rows.size()) + 30;
  std::string out = Open(w, h, title, comment);
  out += "<defs><pattern id=\"hole\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">"
         "<path d=\"M0,6 L6,0\" stroke=\"#999\"/></pattern></defs>\n";
  for (size_t j = 0; j < cols.size(); ++j) {
    out += Text(left + cell * (static_cast<double>(j) + 0.5), top - 8, cols[j], "start", -45);
  }
  for (size_t i = 0; i < rows.size(); ++i) {
    const double y = top + cell * static_cast<double>(i);
    out += Text(left - 6, y + cell / 2 + 4, rows[i], "end");
    for (size_t j = 0; j < cols.size(); ++j) {
      const double x = left + cell * static_cast<double>(j);
      const auto& v = values[i][j];
      if (!v) {
        out += Rect(x, y, cell, cell, "url(#hole)");
        continue;
      }
      const double t = hi > lo ? (*v - lo) / (hi - lo) : 0.5;
      out += Rect(x, y, cell, cell, Color(t));
      out += "<text x=\"" + Num(x + cell / 2) + "\" y=\"" + Num(y + cell / 2 + 4) +
             "\" text-anchor=\"middle\" fill=\"" + (t > 0.55 ? "white" : "black") + "\">" +
             Num(*v) + "</text>\n";
    }
  }
  return out + "</svg>\n";
}

std::string BarChart(const std::string& title, const std::vector<std::string>& labels,
                     const std::vector<std::optional<double>>& values, double lo, double hi,
                     const std::string& comment) {
  const double bar = 40;
  const double left = 60;
  const double plot_h = 240;
  const double top = 40;
  const double w = left + bar * 1.5 * static_cast<double>(labels.size()) + 40;
  const double h = top + plot_h + 120;
  std::string out = Open(w, h, title, comment);
  const double base = top + plot_h;
  out += Line(left, top, left, base, "black") + Line(left, base, w - 20, base, "black");
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    const double y = base - plot_h * t / 4.0;
    out += Line(left - 4, y, left, y, "black") + Text(left - 6, y + 4, Num(v), "end");
  }
  for (size_t i = 0; i < labels.size(); ++i) {
    const double x = left + 10 + bar * 1.5 * static_cast<double>(i);
    if (values[i]) {
      const double frac = hi > lo ? std::clamp((*values[i] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
      out += Rect(x, base - plot_h * frac, bar, plot_h * frac, kPalette[0]);
      out += Text(x + bar / 2, base - plot_h * frac - 4, Num(*values[i]));
    }
    out += Text(x + bar / 2, base + 14, labels[i], "end", -45);
  }
  return out + "</svg>\n";
}

std::string MeanStdChart(const std::string& title, const std::vector<ErrorBarGroup>& groups,
                         const std::string& comment) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& g : groups) {
    for (const MeanStd* s : {&g.machine, &g.human}) {
      lo = std::min(lo, s->mean - s->stdev);
      hi = std::max(hi, s->mean + s->stdev);
    }
  }
  if (!(hi > lo)) {
    lo = (groups.empty() ? 0.0 : lo) - 1;
    hi = lo + 2;
  }
  const double left = 70;
  const double top = 50;
  const double plot_h = 260;
  const double group_w = 70;
  const double w = left + group_w * static_cast<double>(groups.size()) + 140;
  const double h = top + plot_h + 120;
  const double base = top + plot_h;
  auto ypos = [&](double v) { return base - plot_h * (v - lo) / (hi - lo); };
  std::string out = Open(w, h, title, comment);
  out += Line(left, top, left, base, "black") + Line(left, base, w - 130, base, "black");
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    out += Line(left - 4, ypos(v), left, ypos(v), "black") + Text(left - 6, ypos(v) + 4, Num(v), "end");
  }
  if (lo < 0 && hi > 0) out += Line(left, ypos(0), w - 130, ypos(0), "#bbb");
  for (size_t i = 0; i < groups.size(); ++i) {
    const double cx = left + group_w * (static_cast<double>(i) + 0.5);
    const std::pair<const MeanStd*, const char*> sides[] = {{&groups[i].machine, kPalette[3]},
                                                            {&groups[i].human, kPalette[0]}};
    for (int s = 0; s < 2; ++s) {
      const double x = cx + (s == 0 ? -10 : 10);
      const auto& ms = *sides[s].first;
      out += Line(x, ypos(ms.mean - ms.stdev), x, ypos(ms.mean + ms.stdev), sides[s].second, 2);
      out += "<circle cx=\"" + Num(x) + "\" cy=\"" + Num(ypos(ms.mean)) + "\" r=\"4\" fill=\"" +
             sides[s].second + "\"/>\n";
    }
    out += Text(cx, base + 14, groups[i].label, "end", -45);
  }
  out += Rect(w - 120, top, 10, 10, kPalette[3]) + Text(w - 105, top + 9, "machine", "start");
  out += Rect(w - 120, top + 18, 10, 10, kPalette[0]) + Text(w - 105, top + 27, "human", "start");
  return out + "</svg>\n";
}

std::string LineChart(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series, bool log_x,
                      const std::string& comment) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      xlo = std::min(xlo, tx(s.x[i]));
      xhi = std::max(xhi, tx(s.x[i]));
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  if (!(xhi > xlo)) { xlo -= 1; xhi += 1; }
  if (!(yhi > ylo)) { ylo -= 0.5; yhi += 0.5; }
  const double left = 70, top = 40, plot_w = 420, plot_h = 260;
  const double w = left + plot_w + 160, h = top + plot_h + 60;
  auto X = [&](double x) { return left + plot_w * (tx(x) - xlo) / (xhi - xlo); };
  auto Y = [&](double y) { return top + plot_h - plot_h * (y - ylo) / (yhi - ylo); };
  std::string out = Open(w, h, title, comment);
  out += Line(left, top, left, top + plot_h, "black");
  out += Line(left, top + plot_h, left + plot_w, top + plot_h, "black");
  out += Text(left + plot_w / 2, top + plot_h + 40, x_label);
  out += Text(18, top + plot_h / 2, y_label, "middle", -90);
  for (int t = 0; t <= 4; ++t) {
    const double yv = ylo + (yhi - ylo) * t / 4.0;
    out += Text(left - 6, Y(yv) + 4, Num(yv), "end");
  }
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % 8];
    std::string pts;
    for (size_t i = 0; i < s.x.size(); ++i) {
      pts += Num(X(s.x[i])) + "," + Num(Y(s.y[i])) + " ";
      out += Text(X(s.x[i]), top + plot_h + 16, Num(s.x[i]));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    for (size_t i = 0; i < s.x.size(); ++i) {
      out += "<circle cx=\"" + Num(X(s.x[i])) + "\" cy=\"" + Num(Y(s.y[i])) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    out += Rect(left + plot_w + 15, top + 18 * static_cast<double>(si), 10, 10, color);
    out += Text(left + plot_w + 30, top + 18 * static_cast<double>(si) + 9, s.name, "start");
  }
  return out + "</svg>\n";
}

}  // namespace curvedetect::svg
