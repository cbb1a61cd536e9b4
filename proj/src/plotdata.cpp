/*
 * Copyright 2026 The pltlab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "pltlab/plotdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pltlab/error.hpp"

namespace pltlab {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os.flush()) throw IoError("failed writing " + p.string());
}

std::string series_csv(const std::vector<Series>& series) {
  std::string out = "epoch";
  for (const auto& s : series) out += "," + s.name;
  out += "\n";
  const std::size_t n = series.empty() ? 0 : series.front().y.size();
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i + 1);
    for (const auto& s : series) out += "," + cell(s.y[i]);
    out += "\n";
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::optional<double>> CsvTable::numbers(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<std::optional<double>> out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string& s = c < rows[r].size() ? rows[r][c] : std::string();
    if (s.empty()) {
      out.emplace_back();
      continue;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      out.emplace_back(v);
    } catch (const std::exception&) {
      throw ValidationError("csv: row " + std::to_string(r + 2) + " column '" + name +
                            "': not a number: '" + s + "'");
    }
  }
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split_line(line);
      first = false;
    } else {
      t.rows.push_back(split_line(line));
    }
  }
  if (first) throw ValidationError("csv: missing header");
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 60, R = 150, T = 40, B = 50;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  std::size_t n = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (const auto& v : s.y) {
      if (!v || !std::isfinite(*v)) continue;
      lo = any ? std::min(lo, *v) : *v;
      hi = any ? std::max(hi, *v) : *v;
      any = true;
    }
  }
  if (!any) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](std::size_t i) { return L + (n > 1 ? pw * i / double(n - 1) : pw / 2); };
  auto py = [&](double v) { return T + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\""
     << T + ph << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\">" << num(hi)
     << "</text>\n"
     << "<text x=\"" << L - 6 << "\" y=\"" << T + ph << "\" text-anchor=\"end\">" << num(lo)
     << "</text>\n"
     << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << x_label << " (1.." << n << ")</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < series[k].y.size(); ++i) {
      const auto& v = series[k].y[i];
      if (!v || !std::isfinite(*v)) continue;
      pts += num(px(i)) + "," + num(py(*v)) + " ";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
       << pts << "\"/>\n"
       << "<text x=\"" << L + pw + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << color
       << "\">" << series[k].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

PlotFiles emit_plot_data(const std::filesystem::path& run_dir,
                         const std::filesystem::path& out_dir) {
  const CsvTable epochs = read_csv(run_dir / "epochs.csv");
  const CsvTable losses = read_csv(run_dir / "model_losses.csv");
  std::filesystem::create_directories(out_dir);

  auto cumulative = [](std::vector<std::optional<double>> v) {
    double acc = 0.0;
    for (auto& x : v) {
      acc += x.value_or(0.0);
      x = acc;
    }
    return v;
  };
  const auto tp = epochs.numbers("tp");
  const auto fp = epochs.numbers("fp");
  struct Chart {
    std::string stem, title;
    std::vector<Series> series;
  };
  const std::vector<Chart> charts{
      {"tp_fp", "Label corrections per epoch",
       {{"tp", tp}, {"fp", fp}, {"cum_tp", cumulative(tp)}, {"cum_fp", cumulative(fp)}}},
      {"model_loss", "Per-model loss",
       {{"head", losses.numbers("loss_head")},
        {"balanced", losses.numbers("loss_balanced")},
        {"tail", losses.numbers("loss_tail")}}},
      {"map_groups", "Evaluation mAP by shot group",
       {{"total", epochs.numbers("mAP_total")},
        {"many", epochs.numbers("mAP_many")},
        {"medium", epochs.numbers("mAP_medium")},
        {"few", epochs.numbers("mAP_few")}}},
  };
  PlotFiles out;
  for (const auto& c : charts) {
    const auto csv = out_dir / (c.stem + ".csv");
    const auto svg = out_dir / (c.stem + ".svg");
    write_file(csv, series_csv(c.series));
    write_file(svg, svg_line_chart(c.title, "epoch", c.series));
    out.written.push_back(csv);
    out.written.push_back(svg);
  }
  return out;
}

}  // namespace pltlab
