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

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pltlab/rng.hpp"

namespace pltlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Parameter containers expose `visit(f)` calling f(name, tensor) for every
// tensor, where tensor is a MatrixXd& or VectorXd&. Gradients are stored in
// objects of the same type, so optimizer state and reductions reuse it.

struct DenseLayer {
  MatrixXd weight;  // out x in
  VectorXd bias;
};

/// Fully connected network: tanh on every hidden layer, identity on the
/// output layer. widths = {in, h1, ..., out}.
struct Mlp {
  std::vector<DenseLayer> layers;

  static Mlp init(const std::vector<int>& widths, Rng& rng);
  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  template <class F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      f("layer" + std::to_string(i) + ".weight", layers[i].weight);
      f("layer" + std::to_string(i) + ".bias", layers[i].bias);
    }
  }
};

// activations[0] is the input, activations[i+1] the output of layer i.
struct MlpTape {
  std::vector<VectorXd> activations;
};

VectorXd mlp_forward(const Mlp& m, const VectorXd& x, MlpTape* tape = nullptr);

// Accumulates parameter gradients into `grad` and returns d/dx.
VectorXd mlp_backward(const Mlp& m, const MlpTape& tape, const VectorXd& grad_out,
                      Mlp& grad);

/// Cosine classifier split into channel groups:
///   z_c = (rho / G) * sum_k <w_kc, f_k> / ((|w_kc| + eta) * |f|)
/// with f_k the k-th slice of f and |f| the norm of the whole vector.
struct NormalizedHead {
  int groups = 1;
  double rho = 16.0;
  double eta = 1e-6;
  MatrixXd weight;  // C x d_f; group k owns columns [k*gs, (k+1)*gs)

  static NormalizedHead init(int num_classes, int feature_dim, int groups,
                             double rho, double eta, Rng& rng);
  int num_classes() const { return static_cast<int>(weight.rows()); }
  int feature_dim() const { return static_cast<int>(weight.cols()); }
  int group_size() const { return feature_dim() / groups; }

  template <class F>
  void visit(F&& f) {
    f("weight", weight);
  }
};

// (rho / G) * sum_k <w_kc, v_k> / (|w_kc| + eta): the head without the
// feature-norm division. Shared by the head and the logit adjustment.
VectorXd head_project(const NormalizedHead& h, const VectorXd& v);

// Gradient of head_project: accumulates into grad.weight, returns d/dv.
VectorXd head_project_backward(const NormalizedHead& h, const VectorXd& v,
                               const VectorXd& grad_out, NormalizedHead& grad);

struct HeadTape {
  VectorXd f;
  VectorXd logits;
  double f_norm = 0.0;
};

// A zero feature vector yields zero logits.
VectorXd head_forward(const NormalizedHead& h, const VectorXd& f,
                      HeadTape* tape = nullptr);
VectorXd head_backward(const NormalizedHead& h, const HeadTape& tape,
                       const VectorXd& grad_logits, NormalizedHead& grad);

/// Additive attention over two sources with a residual query:
///   s_j = v . tanh(Wq q + Wk k_j),  a = softmax(s),  out = sum_j a_j k_j + q
struct AdditiveAttention {
  MatrixXd wq;  // a x d_f
  MatrixXd wk;  // a x d_f
  VectorXd v;   // a

  static AdditiveAttention init(int feature_dim, int hidden, Rng& rng);

  template <class F>
  void visit(F&& f) {
    f("wq", wq);
    f("wk", wk);
    f("v", v);
  }
};

struct AttentionTape {
  VectorXd query;
  std::array<VectorXd, 2> keys;
  std::array<VectorXd, 2> hidden;  // tanh(Wq q + Wk k_j)
  std::array<double, 2> weights{};
};

VectorXd attention_fuse(const AdditiveAttention& att, const VectorXd& query,
                        const VectorXd& key_head, const VectorXd& key_tail,
                        AttentionTape* tape = nullptr);

struct AttentionInputGrads {
  VectorXd query;
  std::array<VectorXd, 2> keys;
};

AttentionInputGrads attention_backward(const AdditiveAttention& att,
                                       const AttentionTape& tape,
                                       const VectorXd& grad_out,
                                       AdditiveAttention& grad);

// Copy of `m` with every tensor zeroed.
template <class M>
M zeros_like(M m) {
  m.visit([](std::string_view, auto& t) { t.setZero(); });
  return m;
}

}  // namespace pltlab
