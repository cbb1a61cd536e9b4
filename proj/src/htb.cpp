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

#include "pltlab/htb.hpp"

#include <cmath>
#include <string>
#include <tuple>

#include "pltlab/error.hpp"

namespace pltlab {

MovingGradient MovingGradient::zeros(int feature_dim, double mu) {
  if (!(mu >= 0.0 && mu < 1.0)) throw ValidationError("mu must lie in [0, 1)");
  return {VectorXd::Zero(feature_dim), mu};
}

void update_moving_gradient(MovingGradient& mg, const VectorXd& batch_feature_grad_sum) {
  if (batch_feature_grad_sum.size() != mg.e.size()) {
    throw ValidationError("moving gradient: got dimension " +
                          std::to_string(batch_feature_grad_sum.size()) +
                          ", expected " + std::to_string(mg.e.size()));
  }
  mg.e = mg.mu * mg.e + batch_feature_grad_sum;
}

VectorXd adjust_logits(const VectorXd& z, TeacherSide side, const NormalizedHead& head,
                       const MovingGradient& mg, AdjustTape* tape) {
  if (z.size() != head.num_classes()) {
    throw ValidationError("adjust_logits: logits have length " +
                          std::to_string(z.size()) + ", expected " +
                          std::to_string(head.num_classes()));
  }
  const VectorXd shift = head_project(head, mg.e);
  const double nz = z.norm();
  const double ns = shift.norm();
  const double s = (nz > 0.0 && ns > 0.0) ? z.dot(shift) / (nz * ns) : 0.0;
  const double sign = static_cast<double>(static_cast<int>(side));
  if (tape) {
    tape->z = z;
    tape->shift = shift;
    tape->similarity = s;
    tape->sign = sign;
  }
  return z + (sign * s) * shift;
}

VectorXd adjust_logits_backward(const NormalizedHead& head, const MovingGradient& mg,
                                const AdjustTape& tape, const VectorXd& grad_out,
                                NormalizedHead& grad) {
  const double nz = tape.z.norm();
  const double ns = tape.shift.norm();
  if (nz == 0.0 || ns == 0.0) return grad_out;
  const double s = tape.similarity;
  const double d_sim = tape.sign * grad_out.dot(tape.shift);
  VectorXd dz = grad_out + d_sim * (tape.shift / (nz * ns) - (s / (nz * nz)) * tape.z);
  VectorXd d_shift = (tape.sign * s) * grad_out +
                     d_sim * (tape.z / (nz * ns) - (s / (ns * ns)) * tape.shift);
  head_project_backward(head, mg.e, d_shift, grad);
  return dz;
}

std::pair<double, double> kappa_weights(double loss_head, double loss_tail, double alpha) {
  if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
  if (loss_head < 0.0 || loss_tail < 0.0) {
    throw ValidationError("kappa weights need non-negative losses");
  }
  if (loss_head == 0.0 && loss_tail == 0.0) return {0.5, 0.5};
  if (loss_head == 0.0) return {0.0, 1.0};
  if (loss_tail == 0.0) return {1.0, 0.0};
  // 1 / (1 + (L_t / L_h)^alpha), evaluated in log space.
  const double kh = 1.0 / (1.0 + std::exp(alpha * (std::log(loss_tail) - std::log(loss_head))));
  return {kh, 1.0 - kh};
}

VectorXd softmax(const VectorXd& z) {
  const double m = z.maxCoeff();
  VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

namespace {

VectorXd activate(const VectorXd& z, FusionActivation phi) {
  return phi == FusionActivation::kSoftmax ? softmax(z) : sigmoid(z);
}

VectorXd activate_backward(const VectorXd& a, const VectorXd& g, FusionActivation phi) {
  if (phi == FusionActivation::kSoftmax) {
    return (a.array() * (g.array() - g.dot(a))).matrix();
  }
  return (g.array() * a.array() * (1.0 - a.array())).matrix();
}

}  // namespace

HtbResult htb_loss(const VectorXd& z_head_adj, const VectorXd& z_tail_adj,
                   const VectorXd& z_balanced, std::span<const std::uint8_t> targets,
                   const HtbConfig& cfg, const FocalExponents& ex,
                   std::optional<std::pair<double, double>> frozen_kappa) {
  const auto C = z_balanced.size();
  if (z_head_adj.size() != C || z_tail_adj.size() != C ||
      static_cast<Eigen::Index>(targets.size()) != C) {
    throw ValidationError("htb_loss: logit and target lengths must agree");
  }
  const VectorXd a_h = activate(z_head_adj, cfg.phi);
  const VectorXd a_t = activate(z_tail_adj, cfg.phi);
  const VectorXd b = activate(z_balanced, cfg.phi);

  const VectorXd p_h = a_h.cwiseProduct(b);
  const VectorXd p_t = a_t.cwiseProduct(b);
  const LossResult lh = focal_terms_wrt_prob(p_h, targets, ex, cfg.prob_clamp);
  const LossResult lt = focal_terms_wrt_prob(p_t, targets, ex, cfg.prob_clamp);

  HtbResult r;
  r.loss_head = lh.loss;
  r.loss_tail = lt.loss;
  std::tie(r.kappa_head, r.kappa_tail) =
      frozen_kappa ? *frozen_kappa : kappa_weights(lh.loss, lt.loss, cfg.alpha);
  r.loss = r.kappa_head * lh.loss + r.kappa_tail * lt.loss;

  // The clamp inside the focal terms is passed through as identity here.
  const VectorXd g_ph = r.kappa_head * lh.grad;
  const VectorXd g_pt = r.kappa_tail * lt.grad;
  r.grad_head = activate_backward(a_h, g_ph.cwiseProduct(b), cfg.phi);
  r.grad_tail = activate_backward(a_t, g_pt.cwiseProduct(b), cfg.phi);
  const VectorXd g_b = g_ph.cwiseProduct(a_h) + g_pt.cwiseProduct(a_t);
  r.grad_balanced = activate_backward(b, g_b, cfg.phi);
  return r;
}

}  // namespace pltlab
