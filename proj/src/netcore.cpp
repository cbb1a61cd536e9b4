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

#include "pltlab/netcore.hpp"

#include <cmath>
#include <string>

#include "pltlab/error.hpp"

namespace pltlab {

namespace {

void glorot_fill(MatrixXd& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

}  // namespace

Mlp Mlp::init(const std::vector<int>& widths, Rng& rng) {
  require(widths.size() >= 2, "mlp needs at least input and output widths");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    require(widths[i] > 0 && widths[i + 1] > 0, "mlp widths must be positive");
    DenseLayer layer{MatrixXd(widths[i + 1], widths[i]),
                     VectorXd::Zero(widths[i + 1])};
    glorot_fill(layer.weight, rng);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

VectorXd mlp_forward(const Mlp& m, const VectorXd& x, MlpTape* tape) {
  require(x.size() == m.input_dim(),
          "mlp_forward: input has dimension " + std::to_string(x.size()) +
              ", expected " + std::to_string(m.input_dim()));
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(x);
  }
  VectorXd a = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    VectorXd pre = m.layers[i].weight * a + m.layers[i].bias;
    if (i + 1 < m.layers.size()) pre = pre.array().tanh();
    a = std::move(pre);
    if (tape) tape->activations.push_back(a);
  }
  return a;
}

VectorXd mlp_backward(const Mlp& m, const MlpTape& tape, const VectorXd& grad_out,
                      Mlp& grad) {
  VectorXd delta = grad_out;
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    if (li + 1 < m.layers.size()) {
      const VectorXd& out = tape.activations[li + 1];
      delta.array() *= 1.0 - out.array().square();
    }
    const VectorXd& in = tape.activations[li];
    grad.layers[li].weight.noalias() += delta * in.transpose();
    grad.layers[li].bias += delta;
    delta = m.layers[li].weight.transpose() * delta;
  }
  return delta;
}

NormalizedHead NormalizedHead::init(int num_classes, int feature_dim, int groups,
                                    double rho, double eta, Rng& rng) {
  require(groups >= 1, "head: group count must be >= 1");
  require(feature_dim % groups == 0,
          "head: feature dimension " + std::to_string(feature_dim) +
              " is not divisible by " + std::to_string(groups) + " groups");
  require(num_classes >= 1, "head: need at least one class");
  require(eta >= 0.0, "head: eta must be >= 0");
  NormalizedHead h;
  h.groups = groups;
  h.rho = rho;
  h.eta = eta;
  h.weight.resize(num_classes, feature_dim);
  glorot_fill(h.weight, rng);
  return h;
}

VectorXd head_project(const NormalizedHead& h, const VectorXd& v) {
  require(v.size() == h.feature_dim(), "head: feature dimension mismatch");
  const int gs = h.group_size();
  const double scale = h.rho / h.groups;
  VectorXd out = VectorXd::Zero(h.num_classes());
  for (int c = 0; c < h.num_classes(); ++c) {
    double acc = 0.0;
    for (int k = 0; k < h.groups; ++k) {
      const auto w = h.weight.row(c).segment(k * gs, gs);
      acc += w.dot(v.segment(k * gs, gs).transpose()) / (w.norm() + h.eta);
    }
    out[c] = scale * acc;
  }
  return out;
}

VectorXd head_project_backward(const NormalizedHead& h, const VectorXd& v,
                               const VectorXd& grad_out, NormalizedHead& grad) {
  const int gs = h.group_size();
  const double scale = h.rho / h.groups;
  VectorXd dv = VectorXd::Zero(v.size());
  for (int c = 0; c < h.num_classes(); ++c) {
    const double coef = scale * grad_out[c];
    if (coef == 0.0) continue;
    for (int k = 0; k < h.groups; ++k) {
      const auto w = h.weight.row(c).segment(k * gs, gs).transpose();
      const auto vk = v.segment(k * gs, gs);
      const double n = w.norm();
      const double denom = n + h.eta;
      dv.segment(k * gs, gs) += (coef / denom) * w;
      auto gw = grad.weight.row(c).segment(k * gs, gs).transpose();
      gw += (coef / denom) * vk;
      if (n > 0.0) gw -= (coef * w.dot(vk) / (n * denom * denom)) * w;
    }
  }
  return dv;
}

VectorXd head_forward(const NormalizedHead& h, const VectorXd& f, HeadTape* tape) {
  require(f.size() == h.feature_dim(),
          "head_forward: feature has dimension " + std::to_string(f.size()) +
              ", expected " + std::to_string(h.feature_dim()));
  const double nf = f.norm();
  VectorXd z = nf > 0.0 ? VectorXd(head_project(h, f) / nf)
                        : VectorXd(VectorXd::Zero(h.num_classes()));
  if (tape) {
    tape->f = f;
    tape->f_norm = nf;
    tape->logits = z;
  }
  return z;
}

VectorXd head_backward(const NormalizedHead& h, const HeadTape& tape,
                       const VectorXd& grad_logits, NormalizedHead& grad) {
  if (tape.f_norm == 0.0) return VectorXd::Zero(tape.f.size());
  const double nf = tape.f_norm;
  // z = P(f) / |f|
  VectorXd df = head_project_backward(h, tape.f, grad_logits / nf, grad);
  const double d_norm = -grad_logits.dot(tape.logits) / nf;
  df += (d_norm / nf) * tape.f;
  return df;
}

AdditiveAttention AdditiveAttention::init(int feature_dim, int hidden, Rng& rng) {
  require(feature_dim > 0 && hidden > 0, "attention: dimensions must be positive");
  AdditiveAttention a;
  a.wq.resize(hidden, feature_dim);
  a.wk.resize(hidden, feature_dim);
  glorot_fill(a.wq, rng);
  glorot_fill(a.wk, rng);
  MatrixXd v(hidden, 1);
  glorot_fill(v, rng);
  a.v = v.col(0);
  return a;
}

VectorXd attention_fuse(const AdditiveAttention& att, const VectorXd& query,
                        const VectorXd& key_head, const VectorXd& key_tail,
                        AttentionTape* tape) {
  const auto d = att.wq.cols();
  require(query.size() == d && key_head.size() == d && key_tail.size() == d,
          "attention_fuse: all inputs must have dimension " + std::to_string(d));
  const VectorXd qproj = att.wq * query;
  std::array<VectorXd, 2> hidden;
  std::array<double, 2> scores{};
  const std::array<const VectorXd*, 2> keys{&key_head, &key_tail};
  for (int j = 0; j < 2; ++j) {
    hidden[j] = (qproj + att.wk * *keys[j]).array().tanh();
    scores[j] = att.v.dot(hidden[j]);
  }
  const double m = std::max(scores[0], scores[1]);
  const double e0 = std::exp(scores[0] - m);
  const double e1 = std::exp(scores[1] - m);
  const std::array<double, 2> weights{e0 / (e0 + e1), e1 / (e0 + e1)};
  VectorXd out = weights[0] * key_head + weights[1] * key_tail + query;
  if (tape) {
    tape->query = query;
    tape->keys = {key_head, key_tail};
    tape->hidden = std::move(hidden);
    tape->weights = weights;
  }
  return out;
}

AttentionInputGrads attention_backward(const AdditiveAttention& att,
                                       const AttentionTape& tape,
                                       const VectorXd& grad_out,
                                       AdditiveAttention& grad) {
  AttentionInputGrads g;
  g.query = grad_out;  // residual path
  std::array<double, 2> d_weight{};
  for (int j = 0; j < 2; ++j) {
    g.keys[j] = tape.weights[j] * grad_out;
    d_weight[j] = grad_out.dot(tape.keys[j]);
  }
  const double mean = tape.weights[0] * d_weight[0] + tape.weights[1] * d_weight[1];
  for (int j = 0; j < 2; ++j) {
    const double d_score = tape.weights[j] * (d_weight[j] - mean);
    grad.v += d_score * tape.hidden[j];
    const VectorXd d_pre =
        (d_score * att.v.array() * (1.0 - tape.hidden[j].array().square())).matrix();
    grad.wq.noalias() += d_pre * tape.query.transpose();
    grad.wk.noalias() += d_pre * tape.keys[j].transpose();
    g.query.noalias() += att.wq.transpose() * d_pre;
    g.keys[j].noalias() += att.wk.transpose() * d_pre;
  }
  return g;
}

}  // namespace pltlab
