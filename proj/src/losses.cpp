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

#include "pltlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pltlab/error.hpp"

namespace pltlab {

void MfmConfig::validate() const {
  if (!(gamma_pos >= 0.0)) throw ValidationError("gamma_pn_pos must be >= 0");
  if (!(gamma_neg >= gamma_pos)) {
    throw ValidationError("gamma_pn_neg must be >= gamma_pn_pos");
  }
  if (!(prob_clamp > 0.0 && prob_clamp < 0.1)) {
    throw ValidationError("prob_clamp must lie in (0, 0.1)");
  }
}

HeadTailFactor compute_gamma_ht(std::span<const long> class_counts, double scale) {
  if (!(scale >= 0.0)) throw ValidationError("head-tail scale must be >= 0");
  long max_count = 0;
  for (long n : class_counts) {
    if (n < 0) throw ValidationError("class counts must be non-negative");
    max_count = std::max(max_count, n);
  }
  if (max_count == 0) throw ValidationError("class counts are all zero");
  HeadTailFactor ht;
  ht.gamma.reserve(class_counts.size());
  for (long n : class_counts) {
    const double normalized = static_cast<double>(n) / static_cast<double>(max_count);
    ht.gamma.push_back(1.0 + scale * (1.0 - normalized));
  }
  return ht;
}

FocalExponents FocalExponents::uniform(int num_classes, double gamma_pos,
                                       double gamma_neg) {
  if (gamma_pos < 0.0 || gamma_neg < 0.0) {
    throw ValidationError("focal exponent must be >= 0");
  }
  return {Eigen::VectorXd::Constant(num_classes, gamma_pos),
          Eigen::VectorXd::Constant(num_classes, gamma_neg)};
}

FocalExponents mfm_exponents(const MfmConfig& cfg, const HeadTailFactor& ht) {
  cfg.validate();
  const auto C = static_cast<Eigen::Index>(ht.gamma.size());
  FocalExponents ex{Eigen::VectorXd(C), Eigen::VectorXd(C)};
  for (Eigen::Index c = 0; c < C; ++c) {
    ex.pos[c] = std::max(0.0, cfg.gamma_pos + cfg.w_pos * ht.gamma[c]);
    ex.neg[c] = std::max(0.0, cfg.gamma_neg + cfg.w_neg * ht.gamma[c]);
  }
  return ex;
}

TermValue focal_term(double p, bool positive, double gamma, double eps) {
  p = std::clamp(p, eps, 1.0 - eps);
  if (positive) {
    // (1-p)^g * -ln p
    const double q = 1.0 - p;
    const double nll = -std::log(p);
    const double w = std::pow(q, gamma);
    const double dw = gamma == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0);
    return {w * nll, dw * nll - w / p};
  }
  // p^g * -ln(1-p)
  const double q = 1.0 - p;
  const double nll = -std::log(q);
  const double w = std::pow(p, gamma);
  const double dw = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
  return {w * nll, dw * nll + w / q};
}

namespace {

void check_lengths(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                   const FocalExponents& ex) {
  if (static_cast<std::size_t>(p.size()) != y.size()) {
    throw ValidationError("loss: p has length " + std::to_string(p.size()) +
                          " but y has length " + std::to_string(y.size()));
  }
  if (ex.pos.size() != p.size() || ex.neg.size() != p.size()) {
    throw ValidationError("loss: exponent table length does not match p");
  }
}

}  // namespace

LossResult focal_terms_wrt_prob(const Eigen::VectorXd& p,
                                std::span<const std::uint8_t> y,
                                const FocalExponents& ex, double eps) {
  check_lengths(p, y, ex);
  LossResult r{0.0, Eigen::VectorXd(p.size())};
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    const bool pos = y[c] != 0;
    const TermValue t = focal_term(p[c], pos, pos ? ex.pos[c] : ex.neg[c], eps);
    r.loss += t.value;
    r.grad[c] = t.d_dp;
  }
  return r;
}

LossResult focal_terms_wrt_logits(const Eigen::VectorXd& p,
                                  std::span<const std::uint8_t> y,
                                  const FocalExponents& ex, double eps) {
  LossResult r = focal_terms_wrt_prob(p, y, ex, eps);
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    // Beyond the clamp the slope is continued from the boundary value.
    const double pc = std::clamp(p[c], eps, 1.0 - eps);
    r.grad[c] *= pc * (1.0 - pc);
  }
  return r;
}

LossResult bce(const Eigen::VectorXd& p, std::span<const std::uint8_t> y, double eps) {
  return focal(p, y, 0.0, eps);
}

LossResult focal(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                 double gamma, double eps) {
  if (gamma < 0.0) throw ValidationError("focal: gamma must be >= 0");
  return focal_terms_wrt_logits(
      p, y, FocalExponents::uniform(static_cast<int>(p.size()), gamma, gamma), eps);
}

LossResult asl(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
               double gamma_pos, double gamma_neg, double eps) {
  return focal_terms_wrt_logits(
      p, y,
      FocalExponents::uniform(static_cast<int>(p.size()), gamma_pos, gamma_neg),
      eps);
}

LossResult mfm(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
               const MfmConfig& cfg, const HeadTailFactor& ht) {
  if (static_cast<Eigen::Index>(ht.gamma.size()) != p.size()) {
    throw ValidationError("mfm: head-tail factor length does not match p");
  }
  return focal_terms_wrt_logits(p, y, mfm_exponents(cfg, ht), cfg.prob_clamp);
}

Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) {
  Eigen::VectorXd p(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    p[i] = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i]))
                       : std::exp(z[i]) / (1.0 + std::exp(z[i]));
  }
  return p;
}

}  // namespace pltlab
