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

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pltlab/data.hpp"
#include "pltlab/parallel.hpp"
#include "pltlab/rlc.hpp"

namespace pltlab {

/// All-point (non-interpolated) average precision. Ranks by descending score,
/// ties keep input order, and averages precision at each positive's rank.
/// Returns nullopt when there is no positive label.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);

// Per-class AP over a score matrix (rows = samples, cols = classes).
std::vector<std::optional<double>> per_class_ap(const Eigen::MatrixXd& scores,
                                                const std::vector<Labels>& labels,
                                                ExecPolicy policy = ExecPolicy::kSerial);

struct ShotMap {
  std::optional<double> total;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
  std::optional<double> average;  // mean of the defined group mAPs
  std::size_t excluded = 0;       // classes with no evaluation positives
};

// Unweighted group means over defined APs; an empty group stays absent.
// Excluded classes are reported on `warn` when given.
ShotMap shot_map(std::span<const std::optional<double>> ap,
                 std::span<const ShotGroup> groups, std::ostream* warn = nullptr);

/// Fraction of hidden positives (y_full = 1, y_obs = 0) that the correction
/// log recovered. Absent when nothing was hidden.
std::optional<double> correction_recall(std::span<const CorrectionRecord> log,
                                        std::span<const Sample> samples);

struct MetricsReport {
  std::vector<std::optional<double>> ap;
  ShotMap map;
  std::optional<double> correction_recall;
  std::vector<long> tp_curve;
  std::vector<long> fp_curve;
};

nlohmann::ordered_json to_json(const MetricsReport& r);

}  // namespace pltlab
