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

#include <optional>
#include <span>
#include <utility>

#include <Eigen/Core>

#include "pltlab/losses.hpp"
#include "pltlab/netcore.hpp"

namespace pltlab {

/// Decayed running sum of batch feature gradients: e <- mu * e + g_sum.
/// Lives in the feature space of the balanced model.
struct MovingGradient {
  VectorXd e;
  double mu = 0.9;

  static MovingGradient zeros(int feature_dim, double mu);
};

void update_moving_gradient(MovingGradient& mg, const VectorXd& batch_feature_grad_sum);

enum class TeacherSide { kHead = -1, kTail = 1 };

struct AdjustTape {
  VectorXd z;
  VectorXd shift;  // head_project(head, e)
  double similarity = 0.0;
  double sign = 0.0;
};

/// Shifts teacher logits along the moving gradient projected through the
/// teacher's own head:  z_hat = z + sign * s * P(e),  with P the head without
/// the feature-norm division and s = cos(z, P(e)). Head teachers subtract,
/// tail teachers add. Zero-norm z or P(e) leaves z unchanged.
VectorXd adjust_logits(const VectorXd& z, TeacherSide side, const NormalizedHead& head,
                       const MovingGradient& mg, AdjustTape* tape = nullptr);

// Returns d/dz and accumulates head weight gradients (e is held constant).
VectorXd adjust_logits_backward(const NormalizedHead& head, const MovingGradient& mg,
                                const AdjustTape& tape, const VectorXd& grad_out,
                                NormalizedHead& grad);

enum class FusionActivation { kSoftmax, kSigmoid };

struct HtbConfig {
  double alpha = 2.0;
  double prob_clamp = 1e-6;
  FusionActivation phi = FusionActivation::kSoftmax;
};

// kappa_h = L_h^a / (L_h^a + L_t^a); both zero gives 0.5 each.
std::pair<double, double> kappa_weights(double loss_head, double loss_tail, double alpha);

struct HtbResult {
  double loss = 0.0;
  double loss_head = 0.0;
  double loss_tail = 0.0;
  double kappa_head = 0.5;
  double kappa_tail = 0.5;
  VectorXd grad_head;      // d loss / d z_hat_h
  VectorXd grad_tail;      // d loss / d z_hat_t
  VectorXd grad_balanced;  // d loss / d z_b
};

/// Distillation of both teachers into the balanced model. Each teacher's
/// fused probability is phi(z_hat) * phi(z_b) element-wise, scored with the
/// focal terms in `ex`; the two losses are mixed with kappa weights that are
/// held constant for the backward pass. `frozen_kappa` overrides them.
HtbResult htb_loss(const VectorXd& z_head_adj, const VectorXd& z_tail_adj,
                   const VectorXd& z_balanced, std::span<const std::uint8_t> targets,
                   const HtbConfig& cfg, const FocalExponents& ex,
                   std::optional<std::pair<double, double>> frozen_kappa = std::nullopt);

VectorXd softmax(const VectorXd& z);

}  // namespace pltlab
