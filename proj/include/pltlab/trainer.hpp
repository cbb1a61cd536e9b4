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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "pltlab/config.hpp"
#include "pltlab/data.hpp"
#include "pltlab/eval.hpp"
#include "pltlab/htb.hpp"
#include "pltlab/netcore.hpp"
#include "pltlab/parallel.hpp"
#include "pltlab/rlc.hpp"
#include "pltlab/rng.hpp"

namespace pltlab {

enum class ModelGroup { kHead = 0, kTail = 1, kBalanced = 2 };
std::string_view to_string(ModelGroup g);

/// Three parallel (backbone, classifier) pairs plus the attention that fuses
/// teacher features into the balanced model. Arrays are indexed by ModelGroup.
struct TriModel {
  std::array<Mlp, 3> backbone;
  std::array<NormalizedHead, 3> classifier;
  AdditiveAttention attention;  // trained with the balanced model

  static TriModel init(const TrainConfig& cfg, int num_classes, int input_dim);

  // f(group, name, tensor)
  template <class F>
  void visit_grouped(F&& f) {
    for (ModelGroup g : {ModelGroup::kBalanced, ModelGroup::kHead, ModelGroup::kTail}) {
      const std::string prefix = std::string(to_string(g)) + ".";
      const auto i = static_cast<std::size_t>(g);
      backbone[i].visit([&](const std::string& n, auto& t) { f(g, prefix + "backbone." + n, t); });
      classifier[i].visit(
          [&](const std::string& n, auto& t) { f(g, prefix + "classifier." + n, t); });
    }
    attention.visit([&](const std::string& n, auto& t) {
      f(ModelGroup::kBalanced, "balanced.attention." + n, t);
    });
  }

  template <class F>
  void visit(F&& f) {
    visit_grouped([&](ModelGroup, const std::string& n, auto& t) { f(n, t); });
  }
};

struct TensorView {
  ModelGroup group;
  std::string name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

std::vector<TensorView> tensor_views(TriModel& m);
std::size_t parameter_count(const TriModel& m);
// Bitwise equality of every tensor.
bool identical(const TriModel& a, const TriModel& b);
void add_into(TriModel& acc, const TriModel& g);

/// Exponent table used wherever the objective calls for the multi-focal
/// loss, honouring the loss choice and the P-N / H-T ablation switches.
FocalExponents objective_exponents(const TrainConfig& cfg, std::span<const long> counts);

// Per-sample forward record; tapes are kept for the backward pass.
struct SampleTrace {
  MlpTape tape_b, tape_h, tape_t;
  VectorXd f_b_hat, f_h, f_t, f_b;
  AttentionTape att;
  HeadTape head_b, head_h, head_t;
  AdjustTape adj_h, adj_t;
  VectorXd z_b, z_h_adj, z_t_adj;
  VectorXd p_b, p_h, p_t;
};

SampleTrace forward_sample(const TrainConfig& cfg, const TriModel& m,
                           const MovingGradient& mg, const VectorXd& x);

std::vector<SampleTrace> forward_batch(const TrainConfig& cfg, const TriModel& m,
                                       const MovingGradient& mg,
                                       std::span<const VectorXd* const> xs,
                                       ExecPolicy policy);

/// Decisions fixed before the backward pass of one batch.
struct BatchPlan {
  std::vector<Labels> targets;  // corrected labels per sample
  std::vector<Labels> observed;
  long n_corrected = 0;         // corrected (target 1, observed 0) labels in batch
  FocalExponents ex_main;       // static distribution
  FocalExponents ex_rlc;        // dynamic or static per config
  // When non-empty, per-sample kappa weights to use instead of computing them.
  std::vector<std::pair<double, double>> frozen_kappa;
};

struct BatchOutcome {
  double loss_total = 0.0;
  double loss_rlc = 0.0;
  double loss_mfm = 0.0;
  double loss_htb = 0.0;
  double loss_head = 0.0;      // per-model focal loss, batch mean
  double loss_balanced = 0.0;
  double loss_tail = 0.0;
  TriModel grad;
  VectorXd feature_grad_sum;  // sum over the batch of d(total)/d(f_b)
  std::vector<std::pair<double, double>> kappa;
};

/// Batch objective lambda_c*L_rlc + lambda_m*L_mfm + lambda_b*L_htb, each
/// term a mean over the batch, and its gradient. Per-sample gradients are
/// reduced in sample order so every ExecPolicy gives identical bits.
BatchOutcome backward_batch(const TrainConfig& cfg, const TriModel& m,
                            const MovingGradient& mg,
                            std::span<const SampleTrace> traces, const BatchPlan& plan,
                            ExecPolicy policy);

struct EpochLog {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_rlc = 0.0;
  double loss_mfm = 0.0;
  double loss_htb = 0.0;
  double loss_head = 0.0;
  double loss_balanced = 0.0;
  double loss_tail = 0.0;
  long corrections = 0;  // new this epoch
  long tp = 0;
  long fp = 0;
  std::optional<double> map_total, map_many, map_medium, map_few;
  std::optional<double> recall;

  bool operator==(const EpochLog&) const = default;
};

struct StepMetrics {
  double loss_total = 0.0;
  double loss_rlc = 0.0;
  double loss_mfm = 0.0;
  double loss_htb = 0.0;
  double loss_head = 0.0;
  double loss_balanced = 0.0;
  double loss_tail = 0.0;
  long new_corrections = 0;
  long n_corrected = 0;
};

struct TrainerState {
  TriModel model;
  TriModel adam_m;
  TriModel adam_v;
  long step = 0;
  int epoch = 0;  // completed epochs
  MovingGradient moving;
  ClassStats stats;
  std::vector<Labels> targets;  // per training sample: observed plus corrections
  Rng rng;
  std::vector<CorrectionRecord> corrections;
  std::vector<EpochLog> history;
};

// Exact equality of every field, including RNG state and floating-point bits.
bool identical(const TrainerState& a, const TrainerState& b);

/// Owns the training state for one dataset. The dataset must outlive the
/// trainer. Splits samples deterministically (seeded) into train and eval.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& ds,
          ExecPolicy policy = ExecPolicy::kSerial);

  const TrainConfig& config() const { return cfg_; }
  const TrainerState& state() const { return state_; }
  TrainerState& state() { return state_; }
  const std::vector<std::size_t>& train_indices() const { return train_idx_; }
  const std::vector<std::size_t>& eval_indices() const { return eval_idx_; }
  const std::vector<ShotGroup>& shot_groups() const { return groups_; }
  const std::vector<long>& train_counts() const { return train_counts_; }
  void set_policy(ExecPolicy p) { policy_ = p; }

  // `batch` holds positions within the training split.
  StepMetrics train_step(std::span<const std::size_t> batch);
  EpochLog run_epoch();

  // Balanced-model logits for the given dataset indices.
  Eigen::MatrixXd predict(std::span<const std::size_t> indices) const;
  MetricsReport evaluate() const;

  nlohmann::json to_checkpoint() const;
  void restore(const nlohmann::json& ckpt);
  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

 private:
  double group_lr(ModelGroup g) const;
  std::string failure_dump(std::span<const std::size_t> batch, const StepMetrics& m) const;

  TrainConfig cfg_;
  const Dataset* ds_;
  ExecPolicy policy_;
  std::vector<VectorXd> features_;
  std::vector<std::size_t> train_idx_;
  std::vector<std::size_t> eval_idx_;
  std::vector<Sample> train_samples_;
  std::vector<long> train_counts_;
  std::vector<ShotGroup> groups_;
  FocalExponents ex_static_;
  TrainerState state_;
};

struct FitOptions {
  ExecPolicy exec = ExecPolicy::kSerial;
  std::optional<std::filesystem::path> run_dir;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::function<void(const EpochLog&)> on_epoch;
};

struct FitResult {
  TrainerState state;
  std::vector<EpochLog> history;
};

/// Trains for cfg.epochs epochs. With a run directory, rewrites the epoch
/// CSV, per-model loss CSV and correction log after every epoch and writes
/// checkpoints at the requested cadence plus a final one.
FitResult fit(const TrainConfig& cfg, const Dataset& ds, const FitOptions& opts = {});

// Continues `trainer` up to cfg.epochs, with the same run-directory output.
void continue_fit(Trainer& trainer, const FitOptions& opts);

std::string epoch_csv(const std::vector<EpochLog>& history);
std::string model_loss_csv(const std::vector<EpochLog>& history);
nlohmann::ordered_json to_json(const CorrectionRecord& r);
CorrectionRecord correction_from_json(const nlohmann::json& j);

}  // namespace pltlab
