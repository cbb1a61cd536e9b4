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

#include "pltlab/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "pltlab/error.hpp"

namespace pltlab {

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("average_precision: scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  long hits = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

std::vector<std::optional<double>> per_class_ap(const Eigen::MatrixXd& scores,
                                                const std::vector<Labels>& labels,
                                                ExecPolicy policy) {
  const auto n = static_cast<std::size_t>(scores.rows());
  const auto C = static_cast<std::size_t>(scores.cols());
  if (labels.size() != n) throw ValidationError("per_class_ap: row count mismatch");
  std::vector<std::optional<double>> ap(C);
  parallel_for(policy, C, [&](std::size_t c) {
    std::vector<double> col(n);
    Labels lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
      lab[i] = labels[i][c];
    }
    ap[c] = average_precision(col, lab);
  });
  return ap;
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ShotMap shot_map(std::span<const std::optional<double>> ap,
                 std::span<const ShotGroup> groups, std::ostream* warn) {
  if (ap.size() != groups.size()) {
    throw ValidationError("shot_map: ap and groups differ in length");
  }
  std::vector<double> all, many, medium, few;
  std::size_t skipped = 0;
  for (std::size_t c = 0; c < ap.size(); ++c) {
    if (!ap[c]) {
      ++skipped;
      continue;
    }
    all.push_back(*ap[c]);
    switch (groups[c]) {
      case ShotGroup::kMany:
        many.push_back(*ap[c]);
        break;
      case ShotGroup::kMedium:
        medium.push_back(*ap[c]);
        break;
      case ShotGroup::kFew:
        few.push_back(*ap[c]);
        break;
    }
  }
  if (skipped > 0 && warn != nullptr) {
    *warn << "warning: " << skipped
              << " class(es) without evaluation positives excluded from mAP\n";
  }
  ShotMap m{mean_of(all), mean_of(many), mean_of(medium), mean_of(few), std::nullopt, skipped};
  std::vector<double> defined;
  for (const auto& g : {m.many, m.medium, m.few}) {
    if (g) defined.push_back(*g);
  }
  m.average = mean_of(defined);
  return m;
}

std::optional<double> correction_recall(std::span<const CorrectionRecord> log,
                                        std::span<const Sample> samples) {
  std::unordered_map<std::string, const Sample*> by_id;
  long hidden = 0;
  for (const auto& s : samples) {
    by_id.emplace(s.id, &s);
    if (!s.y_full) throw ValidationError("correction_recall needs y_full on every sample");
    for (std::size_t c = 0; c < s.y_obs.size(); ++c) {
      hidden += ((*s.y_full)[c] && !s.y_obs[c]) ? 1 : 0;
    }
  }
  if (hidden == 0) return std::nullopt;
  std::set<std::pair<std::string, int>> recovered;
  for (const auto& r : log) {
    const auto it = by_id.find(r.sample_id);
    if (it == by_id.end()) continue;
    const Sample& s = *it->second;
    if ((*s.y_full)[r.cls] && !s.y_obs[r.cls]) recovered.emplace(r.sample_id, r.cls);
  }
  return static_cast<double>(recovered.size()) / static_cast<double>(hidden);
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["ap"] = nlohmann::ordered_json::array();
  for (const auto& a : r.ap) j["ap"].push_back(opt(a));
  j["map_total"] = opt(r.map.total);
  j["map_many"] = opt(r.map.many);
  j["map_medium"] = opt(r.map.medium);
  j["map_few"] = opt(r.map.few);
  j["map_average"] = opt(r.map.average);
  j["correction_recall"] = opt(r.correction_recall);
  j["tp_curve"] = r.tp_curve;
  j["fp_curve"] = r.fp_curve;
  return j;
}

}  // namespace pltlab
