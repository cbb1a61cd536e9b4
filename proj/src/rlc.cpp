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

#include "pltlab/rlc.hpp"

#include <algorithm>
#include <numeric>

#include "pltlab/error.hpp"

namespace pltlab {

ClassStats ClassStats::init(std::span<const long> observed_counts) {
  const std::size_t C = observed_counts.size();
  ClassStats s;
  s.mean_positive_prob.assign(C, 0.0);
  s.static_counts.assign(observed_counts.begin(), observed_counts.end());
  s.dynamic_counts = s.static_counts;
  s.tp.assign(C, 0);
  s.fp.assign(C, 0);
  return s;
}

long ClassStats::total_corrections() const {
  return std::accumulate(tp.begin(), tp.end(), 0L) +
         std::accumulate(fp.begin(), fp.end(), 0L);
}

void update_stats(ClassStats& stats, const Eigen::VectorXd& p,
                  std::span<const std::uint8_t> y_obs, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError("stats momentum must lie in [0, 1)");
  }
  for (int c = 0; c < stats.num_classes(); ++c) {
    if (!y_obs[c]) continue;
    auto& m = stats.mean_positive_prob[c];
    m = momentum * m + (1.0 - momentum) * p[c];
  }
}

CorrectionResult correct(const Eigen::VectorXd& p, std::span<const std::uint8_t> y,
                         ClassStats& stats, double tau, const CorrectionContext& ctx) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0, 1)");
  const int C = stats.num_classes();
  if (p.size() != C || static_cast<int>(y.size()) != C) {
    throw ValidationError("correct: p and y must have length C");
  }
  CorrectionResult r;
  r.y_hat.assign(y.begin(), y.end());
  for (int c = 0; c < C; ++c) {
    if (y[c]) continue;
    const double threshold = std::max(tau, stats.mean_positive_prob[c]);
    if (!(p[c] > threshold)) continue;
    r.y_hat[c] = 1;
    CorrectionRecord rec{ctx.sample_id, c, ctx.epoch, p[c], threshold, std::nullopt};
    ++stats.dynamic_counts[c];
    if (ctx.y_full) {
      const bool hit = (*ctx.y_full)[c] != 0;
      rec.true_positive = hit;
      ++(hit ? stats.tp : stats.fp)[c];
    }
    r.records.push_back(std::move(rec));
  }
  return r;
}

LossResult rlc_loss(const Eigen::VectorXd& p, std::span<const std::uint8_t> y_obs,
                    std::span<const std::uint8_t> y_hat, const FocalExponents& ex,
                    double eps, int batch_size, long n_corrected_in_batch) {
  if (y_obs.size() != y_hat.size()) {
    throw ValidationError("rlc_loss: y_obs and y_hat lengths differ");
  }
  if (batch_size < 1 || n_corrected_in_batch < 0) {
    throw ValidationError("rlc_loss: bad batch size or correction count");
  }
  // Corrected and annotated positives both take the positive term, all other
  // classes the negative term, which is exactly the focal sum over y_hat.
  LossResult r = focal_terms_wrt_logits(p, y_hat, ex, eps);
  const double scale =
      static_cast<double>(batch_size) / static_cast<double>(std::max(1L, n_corrected_in_batch));
  r.loss *= scale;
  r.grad *= scale;
  return r;
}

LossResult rlc_loss(const Eigen::VectorXd& p, std::span<const std::uint8_t> y_obs,
                    std::span<const std::uint8_t> y_hat, const MfmConfig& cfg,
                    const HeadTailFactor& ht_dynamic, int batch_size,
                    long n_corrected_in_batch) {
  return rlc_loss(p, y_obs, y_hat, mfm_exponents(cfg, ht_dynamic), cfg.prob_clamp,
                  batch_size, n_corrected_in_batch);
}

}  // namespace pltlab
