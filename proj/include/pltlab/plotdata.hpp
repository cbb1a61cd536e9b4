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

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pltlab {

// Header plus rows of a comma-separated file without quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Throws ValidationError when the column is missing.
  std::size_t column(const std::string& name) const;
  // Empty cells read as absent.
  std::vector<std::optional<double>> numbers(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<std::optional<double>> y;  // gaps are skipped
};

// Static line chart over x = 1..n.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::vector<Series>& series);

struct PlotFiles {
  std::vector<std::filesystem::path> written;
};

// Reads epochs.csv and model_losses.csv from `run_dir` and writes
// tp_fp, model_loss and map_groups series as CSV and SVG into `out_dir`.
PlotFiles emit_plot_data(const std::filesystem::path& run_dir,
                         const std::filesystem::path& out_dir);

}  // namespace pltlab
