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

#include <span>
#include <vector>

#include <Eigen/Core>

#include "pltlab/data.hpp"

namespace pltlab {

/// Decoupled focal exponents. Effective per-class exponents are
///   positive: max(0, gamma_pos + w_pos * gamma_ht[c])
///   negative: max(0, gamma_neg + w_neg * gamma_ht[c])
struct MfmConfig {
  double gamma_pos = 1.0;
  double gamma_neg = 4.0;
  double w_pos = -0.5;
  double w_neg = 1.0;
  double prob_clamp = 1e-6;

  // Throws ValidationError unless gamma_neg >= gamma_pos >= 0 and the clamp
  // lies in (0, 0.1).
  void validate() const;
};

// Head-tail factor per class; >= 1, larger for rarer classes.
struct HeadTailFactor {
  std::vector<double> gamma;
};

// gamma[c] = 1 + scale * (1 - count_c / max_j count_j).
HeadTailFactor compute_gamma_ht(std::span<const long> class_counts, double scale);

// Per-class exponents for positive and negative label terms.
struct FocalExponents {
  Eigen::VectorXd pos;
  Eigen::VectorXd neg;

  static FocalExponents uniform(int num_classes, double gamma_pos,
                                double gamma_neg);
};

FocalExponents mfm_exponents(const MfmConfig& cfg, const HeadTailFactor& ht);

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // see each function for what it is taken against
};

// Single focal term for one class and its derivative with respect to p.
// `p` is clamped to [eps, 1 - eps] first.
struct TermValue {
  double value;
  double d_dp;
};
TermValue focal_term(double p, bool positive, double gamma, double eps);

/// Sum over classes of focal terms with per-class exponents; `grad` is
/// d(loss)/d(p). Used directly when p is not a sigmoid of a logit.
LossResult focal_terms_wrt_prob(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                                const FocalExponents& ex, double eps);

/// As above with p = sigmoid(z); `grad` is d(loss)/d(z).
LossResult focal_terms_wrt_logits(const Eigen::VectorXd& p,
                                  std::span<const std::uint8_t> y,
                                  const FocalExponents& ex, double eps);

// The classic losses. All take probabilities and return gradients with
// respect to the logits that produced them through a sigmoid.
LossResult bce(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
               double eps = 1e-6);
LossResult focal(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                 double gamma, double eps = 1e-6);
LossResult asl(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
               double gamma_pos, double gamma_neg, double eps = 1e-6);
LossResult mfm(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
               const MfmConfig& cfg, const HeadTailFactor& ht);

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z);

}  // namespace pltlab
