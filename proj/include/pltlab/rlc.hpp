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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pltlab/data.hpp"
#include "pltlab/losses.hpp"

namespace pltlab {

/// Running per-class statistics owned by the training loop.
struct ClassStats {
  std::vector<double> mean_positive_prob;  // P_c, EMA over annotated positives
  std::vector<long> static_counts;         // observed positives
  std::vector<long> dynamic_counts;        // observed + corrected
  std::vector<long> tp;
  std::vector<long> fp;

  static ClassStats init(std::span<const long> observed_counts);
  int num_classes() const { return static_cast<int>(static_counts.size()); }
  long total_corrections() const;

  bool operator==(const ClassStats&) const = default;
};

// P[c] <- momentum * P[c] + (1 - momentum) * p[c] for every annotated positive c.
void update_stats(ClassStats& stats, const Eigen::VectorXd& p,
                  std::span<const std::uint8_t> y_obs, double momentum);

struct CorrectionRecord {
  std::string sample_id;
  int cls = 0;
  int epoch = 0;
  double prob = 0.0;
  double threshold = 0.0;  // max(tau, P_c) at emission
  std::optional<bool> true_positive;

  bool operator==(const CorrectionRecord&) const = default;
};

struct CorrectionResult {
  Labels y_hat;
  std::vector<CorrectionRecord> records;
};

struct CorrectionContext {
  std::string sample_id;
  int epoch = 0;
  const Labels* y_full = nullptr;
};

/// Recalls unknown labels: y_hat[c] = 1 when p[c] > max(tau, P_c) and
/// y[c] == 0; otherwise y_hat[c] = y[c]. Never clears a positive. Each new
/// correction bumps dynamic_counts and, when y_full is known, tp or fp.
CorrectionResult correct(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                         ClassStats& stats, double tau,
                         const CorrectionContext& ctx = {});

/// Corrected-label loss for one sample: the focal terms of the corrected
/// targets, scaled by batch_size / max(1, n_corrected_in_batch). Gradient is
/// with respect to the logits.
LossResult rlc_loss(const Eigen::VectorXd& p, std::span<const std::uint8_t> y_obs,
                    std::span<const std::uint8_t> y_hat, const FocalExponents& ex,
                    double eps, int batch_size, long n_corrected_in_batch);

LossResult rlc_loss(const Eigen::VectorXd& p, std::span<const std::uint8_t> y_obs,
                    std::span<const std::uint8_t> y_hat, const MfmConfig& cfg,
                    const HeadTailFactor& ht_dynamic, int batch_size,
                    long n_corrected_in_batch);

}  // namespace pltlab
