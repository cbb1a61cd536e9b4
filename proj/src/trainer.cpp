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

#include "pltlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pltlab/error.hpp"

namespace pltlab {

namespace {

constexpr std::uint64_t kSplitStream = 0x5851f42d4c957f2dULL;
constexpr std::uint64_t kInitStream = 0x14057b7ef767814fULL;
constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;
constexpr int kCheckpointVersion = 1;

constexpr std::size_t idx(ModelGroup g) { return static_cast<std::size_t>(g); }

}  // namespace

std::string_view to_string(ModelGroup g) {
  switch (g) {
    case ModelGroup::kHead:
      return "head";
    case ModelGroup::kTail:
      return "tail";
    case ModelGroup::kBalanced:
      return "balanced";
  }
  return "?";
}

TriModel TriModel::init(const TrainConfig& cfg, int num_classes, int input_dim) {
  Rng rng(cfg.seed ^ kInitStream);
  std::vector<int> widths{input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.feature_dim);
  TriModel m;
  // Balanced first so a single-model run starts from the same weights.
  for (ModelGroup g : {ModelGroup::kBalanced, ModelGroup::kHead, ModelGroup::kTail}) {
    m.backbone[idx(g)] = Mlp::init(widths, rng);
    m.classifier[idx(g)] = NormalizedHead::init(num_classes, cfg.feature_dim,
                                                cfg.head_groups, cfg.rho, cfg.eta, rng);
    if (g == ModelGroup::kBalanced) {
      m.attention = AdditiveAttention::init(cfg.feature_dim, cfg.attention_hidden, rng);
    }
  }
  return m;
}

std::vector<TensorView> tensor_views(TriModel& m) {
  std::vector<TensorView> views;
  m.visit_grouped([&](ModelGroup g, const std::string& name, auto& t) {
    views.push_back({g, name, t.data(), t.rows(), t.cols()});
  });
  return views;
}

std::size_t parameter_count(const TriModel& m) {
  TriModel copy = m;
  std::size_t n = 0;
  for (const auto& v : tensor_views(copy)) n += static_cast<std::size_t>(v.size());
  return n;
}

bool identical(const TriModel& a, const TriModel& b) {
  TriModel ca = a;
  TriModel cb = b;
  const auto va = tensor_views(ca);
  const auto vb = tensor_views(cb);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].name != vb[i].name || va[i].rows != vb[i].rows || va[i].cols != vb[i].cols) {
      return false;
    }
    if (std::memcmp(va[i].data, vb[i].data, sizeof(double) * va[i].size()) != 0) {
      return false;
    }
  }
  return true;
}

void add_into(TriModel& acc, const TriModel& g) {
  TriModel& gm = const_cast<TriModel&>(g);
  const auto va = tensor_views(acc);
  const auto vg = tensor_views(gm);
  for (std::size_t i = 0; i < va.size(); ++i) {
    for (Eigen::Index j = 0; j < va[i].size(); ++j) va[i].data[j] += vg[i].data[j];
  }
}

FocalExponents objective_exponents(const TrainConfig& cfg, std::span<const long> counts) {
  const int C = static_cast<int>(counts.size());
  switch (cfg.effective_loss()) {
    case BaseLoss::kBce:
      return FocalExponents::uniform(C, 0.0, 0.0);
    case BaseLoss::kFocal:
      return FocalExponents::uniform(C, cfg.focal_gamma, cfg.focal_gamma);
    case BaseLoss::kAsl:
      return FocalExponents::uniform(C, cfg.mfm.gamma_pos, cfg.mfm.gamma_neg);
    case BaseLoss::kMfm:
      break;
  }
  MfmConfig m = cfg.mfm;
  if (!cfg.mfm_pn) m.gamma_pos = m.gamma_neg = 0.0;
  return mfm_exponents(m, compute_gamma_ht(counts, cfg.mfm_ht ? cfg.ht_scale : 0.0));
}

SampleTrace forward_sample(const TrainConfig& cfg, const TriModel& m,
                           const MovingGradient& mg, const VectorXd& x) {
  const auto B = idx(ModelGroup::kBalanced);
  const auto H = idx(ModelGroup::kHead);
  const auto T = idx(ModelGroup::kTail);
  SampleTrace t;
  t.f_b_hat = mlp_forward(m.backbone[B], x, &t.tape_b);
  if (cfg.teachers_active()) {
    t.f_h = mlp_forward(m.backbone[H], x, &t.tape_h);
    t.f_t = mlp_forward(m.backbone[T], x, &t.tape_t);
  }
  t.f_b = cfg.fusion_active() ? attention_fuse(m.attention, t.f_b_hat, t.f_h, t.f_t, &t.att)
                              : t.f_b_hat;
  t.z_b = head_forward(m.classifier[B], t.f_b, &t.head_b);
  t.p_b = sigmoid(t.z_b);
  if (cfg.teachers_active()) {
    const VectorXd z_h = head_forward(m.classifier[H], t.f_h, &t.head_h);
    const VectorXd z_t = head_forward(m.classifier[T], t.f_t, &t.head_t);
    t.z_h_adj = adjust_logits(z_h, TeacherSide::kHead, m.classifier[H], mg, &t.adj_h);
    t.z_t_adj = adjust_logits(z_t, TeacherSide::kTail, m.classifier[T], mg, &t.adj_t);
    t.p_h = sigmoid(t.z_h_adj);
    t.p_t = sigmoid(t.z_t_adj);
  }
  return t;
}

std::vector<SampleTrace> forward_batch(const TrainConfig& cfg, const TriModel& m,
                                       const MovingGradient& mg,
                                       std::span<const VectorXd* const> xs,
                                       ExecPolicy policy) {
  std::vector<SampleTrace> traces(xs.size());
  parallel_for(policy, xs.size(),
               [&](std::size_t i) { traces[i] = forward_sample(cfg, m, mg, *xs[i]); });
  return traces;
}

namespace {

struct SampleOutcome {
  double rlc = 0.0, mfm = 0.0, htb = 0.0;
  double head = 0.0, balanced = 0.0, tail = 0.0;
  std::pair<double, double> kappa{0.5, 0.5};
  TriModel grad;
  VectorXd grad_fb;
};

void backward_sample(const TrainConfig& cfg, const TriModel& m, const MovingGradient& mg,
                     const SampleTrace& t, const BatchPlan& plan, std::size_t i,
                     int batch_size, SampleOutcome& out) {
  const auto B = idx(ModelGroup::kBalanced);
  const auto H = idx(ModelGroup::kHead);
  const auto T = idx(ModelGroup::kTail);
  const double eps = cfg.mfm.prob_clamp;
  const double inv_b = 1.0 / batch_size;
  const Labels& y = plan.targets[i];
  const auto C = t.z_b.size();

  VectorXd dz_b = VectorXd::Zero(C);
  VectorXd dz_h = VectorXd::Zero(C);
  VectorXd dz_t = VectorXd::Zero(C);

  if (cfg.corrections_active()) {
    const LossResult r = rlc_loss(t.p_b, plan.observed[i], y, plan.ex_rlc, eps, batch_size,
                                  plan.n_corrected);
    out.rlc = r.loss;
    dz_b += cfg.lambda_c * r.grad;
  }

  const LossResult mb = focal_terms_wrt_logits(t.p_b, y, plan.ex_main, eps);
  out.balanced = mb.loss;
  out.mfm = mb.loss;
  dz_b += cfg.lambda_m * mb.grad;

  if (cfg.teachers_active()) {
    const LossResult mh = focal_terms_wrt_logits(t.p_h, y, plan.ex_main, eps);
    const LossResult mt = focal_terms_wrt_logits(t.p_t, y, plan.ex_main, eps);
    out.head = mh.loss;
    out.tail = mt.loss;
    if (cfg.teacher_losses) {
      out.mfm += mh.loss + mt.loss;
      dz_h += cfg.lambda_m * mh.grad;
      dz_t += cfg.lambda_m * mt.grad;
    }
    const HtbConfig hc{cfg.alpha, eps, cfg.phi};
    std::optional<std::pair<double, double>> frozen;
    if (!plan.frozen_kappa.empty()) frozen = plan.frozen_kappa[i];
    const HtbResult h = htb_loss(t.z_h_adj, t.z_t_adj, t.z_b, y, hc, plan.ex_main, frozen);
    out.htb = h.loss;
    out.kappa = {h.kappa_head, h.kappa_tail};
    dz_b += cfg.lambda_b * h.grad_balanced;
    dz_h += cfg.lambda_b * h.grad_head;
    dz_t += cfg.lambda_b * h.grad_tail;
  }

  out.rlc *= inv_b;
  out.mfm *= inv_b;
  out.htb *= inv_b;
  out.head *= inv_b;
  out.balanced *= inv_b;
  out.tail *= inv_b;
  dz_b *= inv_b;
  dz_h *= inv_b;
  dz_t *= inv_b;

  const VectorXd df_b = head_backward(m.classifier[B], t.head_b, dz_b, out.grad.classifier[B]);
  out.grad_fb = df_b;
  VectorXd df_b_hat = df_b;
  VectorXd df_h, df_t;
  if (cfg.fusion_active()) {
    AttentionInputGrads ag = attention_backward(m.attention, t.att, df_b, out.grad.attention);
    df_b_hat = std::move(ag.query);
    df_h = std::move(ag.keys[0]);
    df_t = std::move(ag.keys[1]);
  }
  mlp_backward(m.backbone[B], t.tape_b, df_b_hat, out.grad.backbone[B]);

  if (cfg.teachers_active()) {
    const VectorXd dzh_raw =
        adjust_logits_backward(m.classifier[H], mg, t.adj_h, dz_h, out.grad.classifier[H]);
    const VectorXd dzt_raw =
        adjust_logits_backward(m.classifier[T], mg, t.adj_t, dz_t, out.grad.classifier[T]);
    VectorXd gh = head_backward(m.classifier[H], t.head_h, dzh_raw, out.grad.classifier[H]);
    VectorXd gt = head_backward(m.classifier[T], t.head_t, dzt_raw, out.grad.classifier[T]);
    if (cfg.fusion_active()) {
      gh += df_h;
      gt += df_t;
    }
    mlp_backward(m.backbone[H], t.tape_h, gh, out.grad.backbone[H]);
    mlp_backward(m.backbone[T], t.tape_t, gt, out.grad.backbone[T]);
  }
}

}  // namespace

BatchOutcome backward_batch(const TrainConfig& cfg, const TriModel& m,
                            const MovingGradient& mg,
                            std::span<const SampleTrace> traces, const BatchPlan& plan,
                            ExecPolicy policy) {
  const std::size_t n = traces.size();
  if (n == 0) throw ValidationError("backward_batch: empty batch");
  if (plan.targets.size() != n || plan.observed.size() != n) {
    throw ValidationError("backward_batch: plan does not match batch size");
  }
  const TriModel zero = zeros_like(m);
  std::vector<SampleOutcome> outs(n);
  parallel_for(policy, n, [&](std::size_t i) {
    outs[i].grad = zero;
    backward_sample(cfg, m, mg, traces[i], plan, i, static_cast<int>(n), outs[i]);
  });

  BatchOutcome r;
  r.grad = zero;
  r.feature_grad_sum = VectorXd::Zero(cfg.feature_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = outs[i];
    r.loss_rlc += o.rlc;
    r.loss_mfm += o.mfm;
    r.loss_htb += o.htb;
    r.loss_head += o.head;
    r.loss_balanced += o.balanced;
    r.loss_tail += o.tail;
    add_into(r.grad, o.grad);
    r.feature_grad_sum += o.grad_fb;
    r.kappa.push_back(o.kappa);
  }
  r.loss_total = cfg.lambda_c * r.loss_rlc + cfg.lambda_m * r.loss_mfm +
                 cfg.lambda_b * r.loss_htb;
  return r;
}

bool identical(const TrainerState& a, const TrainerState& b) {
  auto same_vec = [](const VectorXd& x, const VectorXd& y) {
    return x.size() == y.size() &&
           std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
  };
  return identical(a.model, b.model) && identical(a.adam_m, b.adam_m) &&
         identical(a.adam_v, b.adam_v) && a.step == b.step && a.epoch == b.epoch &&
         same_vec(a.moving.e, b.moving.e) && a.moving.mu == b.moving.mu &&
         a.stats == b.stats && a.targets == b.targets && a.rng == b.rng &&
         a.corrections == b.corrections && a.history == b.history;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const TrainConfig& cfg, const Dataset& ds, ExecPolicy policy)
    : cfg_(cfg), ds_(&ds), policy_(policy) {
  cfg_.validate();
  validate(ds);
  const int C = ds.manifest.num_classes;
  if (ds.samples.size() < 2) throw ValidationError("dataset needs at least 2 samples");

  features_.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    features_.push_back(Eigen::Map<const VectorXd>(s.x.data(), static_cast<Eigen::Index>(s.x.size())));
  }

  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(cfg_.seed ^ kSplitStream);
  split_rng.shuffle(order);
  auto n_eval = static_cast<std::size_t>(
      std::llround(cfg_.eval_fraction * static_cast<double>(order.size())));
  n_eval = std::clamp<std::size_t>(n_eval, 1, order.size() - 1);
  eval_idx_.assign(order.begin(), order.begin() + static_cast<long>(n_eval));
  train_idx_.assign(order.begin() + static_cast<long>(n_eval), order.end());
  std::sort(eval_idx_.begin(), eval_idx_.end());
  std::sort(train_idx_.begin(), train_idx_.end());

  for (std::size_t i : train_idx_) train_samples_.push_back(ds.samples[i]);
  train_counts_ = count_observed(train_samples_, C);
  groups_ = assign_shot_groups(train_counts_);
  if (std::all_of(train_counts_.begin(), train_counts_.end(), [](long n) { return n == 0; })) {
    throw ValidationError("training split has no observed positives");
  }
  ex_static_ = objective_exponents(cfg_, train_counts_);

  state_.model = TriModel::init(cfg_, C, ds.manifest.dim);
  state_.adam_m = zeros_like(state_.model);
  state_.adam_v = zeros_like(state_.model);
  state_.moving = MovingGradient::zeros(cfg_.feature_dim, cfg_.mu);
  state_.stats = ClassStats::init(train_counts_);
  for (const auto& s : train_samples_) state_.targets.push_back(s.y_obs);
  state_.rng = Rng(cfg_.seed ^ kShuffleStream);
}

double Trainer::group_lr(ModelGroup g) const {
  const double decay = g == ModelGroup::kHead   ? cfg_.lr_decay_head
                       : g == ModelGroup::kTail ? cfg_.lr_decay_tail
                                                : cfg_.lr_decay_balanced;
  return cfg_.lr * std::pow(decay, state_.epoch);
}

std::string Trainer::failure_dump(std::span<const std::size_t> batch,
                                  const StepMetrics& m) const {
  std::ostringstream os;
  os << "non-finite loss at epoch " << state_.epoch + 1 << " step " << state_.step + 1
     << ": total=" << m.loss_total << " rlc=" << m.loss_rlc << " mfm=" << m.loss_mfm
     << " htb=" << m.loss_htb << "\nbatch:";
  for (std::size_t pos : batch) {
    const auto& s = train_samples_[pos];
    const double norm = features_[train_idx_[pos]].norm();
    os << "\n  " << s.id << " |x|=" << norm << " y_obs=";
    for (auto v : s.y_obs) os << int(v);
  }
  os << "\nconfig:\n" << format_key_values(to_key_values(cfg_));
  return os.str();
}

StepMetrics Trainer::train_step(std::span<const std::size_t> batch) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const int C = ds_->manifest.num_classes;
  std::vector<const VectorXd*> xs;
  for (std::size_t pos : batch) {
    if (pos >= train_idx_.size()) throw ValidationError("train_step: batch index out of range");
    xs.push_back(&features_[train_idx_[pos]]);
  }
  const std::vector<SampleTrace> traces =
      forward_batch(cfg_, state_.model, state_.moving, xs, policy_);

  const bool use_head = cfg_.correction_source == CorrectionSource::kHead && cfg_.teachers_active();
  auto source_probs = [&](std::size_t i) -> const VectorXd& {
    return use_head ? traces[i].p_h : traces[i].p_b;
  };

  // Corrections are decided serially in batch order against the stats as
  // they stood when the batch began.
  StepMetrics metrics;
  if (cfg_.corrections_active() && state_.epoch >= cfg_.warmup_epochs) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Sample& s = train_samples_[batch[i]];
      CorrectionContext ctx{s.id, state_.epoch + 1, s.y_full ? &*s.y_full : nullptr};
      CorrectionResult res =
          correct(source_probs(i), state_.targets[batch[i]], state_.stats, cfg_.tau, ctx);
      metrics.new_corrections += static_cast<long>(res.records.size());
      state_.targets[batch[i]] = std::move(res.y_hat);
      for (auto& r : res.records) state_.corrections.push_back(std::move(r));
    }
  }

  BatchPlan plan;
  for (std::size_t pos : batch) {
    const Labels& obs = train_samples_[pos].y_obs;
    plan.observed.push_back(obs);
    plan.targets.push_back(cfg_.corrections_active() ? state_.targets[pos] : obs);
    for (int c = 0; c < C; ++c) {
      plan.n_corrected += (plan.targets.back()[c] && !obs[c]) ? 1 : 0;
    }
  }
  plan.ex_main = ex_static_;
  plan.ex_rlc = cfg_.rlc_distribution == DistributionMode::kDynamic
                    ? objective_exponents(cfg_, state_.stats.dynamic_counts)
                    : ex_static_;

  BatchOutcome out = backward_batch(cfg_, state_.model, state_.moving, traces, plan, policy_);
  metrics.loss_total = out.loss_total;
  metrics.loss_rlc = out.loss_rlc;
  metrics.loss_mfm = out.loss_mfm;
  metrics.loss_htb = out.loss_htb;
  metrics.loss_head = out.loss_head;
  metrics.loss_balanced = out.loss_balanced;
  metrics.loss_tail = out.loss_tail;
  metrics.n_corrected = plan.n_corrected;
  if (!std::isfinite(out.loss_total)) throw NumericError(failure_dump(batch, metrics));

  // Adam with one learning rate per model.
  ++state_.step;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
  const std::array<double, 3> lrs{group_lr(ModelGroup::kHead), group_lr(ModelGroup::kTail),
                                  group_lr(ModelGroup::kBalanced)};
  auto pv = tensor_views(state_.model);
  auto mv = tensor_views(state_.adam_m);
  auto vv = tensor_views(state_.adam_v);
  auto gv = tensor_views(out.grad);
  for (std::size_t t = 0; t < pv.size(); ++t) {
    const double lr = lrs[idx(pv[t].group)];
    for (Eigen::Index j = 0; j < pv[t].size(); ++j) {
      const double g = gv[t].data[j];
      double& m1 = mv[t].data[j];
      double& m2 = vv[t].data[j];
      m1 = cfg_.beta1 * m1 + (1.0 - cfg_.beta1) * g;
      m2 = cfg_.beta2 * m2 + (1.0 - cfg_.beta2) * g * g;
      pv[t].data[j] -= lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + cfg_.adam_eps);
    }
  }

  update_moving_gradient(state_.moving, out.feature_grad_sum);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    update_stats(state_.stats, source_probs(i), train_samples_[batch[i]].y_obs,
                 cfg_.stats_momentum);
  }
  return metrics;
}

EpochLog Trainer::run_epoch() {
  std::vector<std::size_t> order(train_idx_.size());
  std::iota(order.begin(), order.end(), 0);
  state_.rng.shuffle(order);

  const long tp_before = std::accumulate(state_.stats.tp.begin(), state_.stats.tp.end(), 0L);
  const long fp_before = std::accumulate(state_.stats.fp.begin(), state_.stats.fp.end(), 0L);
  EpochLog log;
  log.epoch = state_.epoch + 1;
  int batches = 0;
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    const StepMetrics m = train_step(std::span(order).subspan(start, end - start));
    log.loss_total += m.loss_total;
    log.loss_rlc += m.loss_rlc;
    log.loss_mfm += m.loss_mfm;
    log.loss_htb += m.loss_htb;
    log.loss_head += m.loss_head;
    log.loss_balanced += m.loss_balanced;
    log.loss_tail += m.loss_tail;
    log.corrections += m.new_corrections;
    ++batches;
  }
  if (batches > 0) {
    for (double* v : {&log.loss_total, &log.loss_rlc, &log.loss_mfm, &log.loss_htb,
                      &log.loss_head, &log.loss_balanced, &log.loss_tail}) {
      *v /= batches;
    }
  }
  log.tp = std::accumulate(state_.stats.tp.begin(), state_.stats.tp.end(), 0L) - tp_before;
  log.fp = std::accumulate(state_.stats.fp.begin(), state_.stats.fp.end(), 0L) - fp_before;
  ++state_.epoch;

  const MetricsReport report = evaluate();
  log.map_total = report.map.total;
  log.map_many = report.map.many;
  log.map_medium = report.map.medium;
  log.map_few = report.map.few;
  log.recall = report.correction_recall;
  state_.history.push_back(log);
  return log;
}

Eigen::MatrixXd Trainer::predict(std::span<const std::size_t> indices) const {
  const int C = ds_->manifest.num_classes;
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(indices.size()), C);
  parallel_for(policy_, indices.size(), [&](std::size_t i) {
    const SampleTrace t =
        forward_sample(cfg_, state_.model, state_.moving, features_.at(indices[i]));
    scores.row(static_cast<Eigen::Index>(i)) = t.z_b.transpose();
  });
  return scores;
}

MetricsReport Trainer::evaluate() const {
  MetricsReport r;
  const Eigen::MatrixXd scores = predict(eval_idx_);
  std::vector<Labels> labels;
  for (std::size_t i : eval_idx_) {
    const Sample& s = ds_->samples[i];
    labels.push_back(s.y_full ? *s.y_full : s.y_obs);
  }
  r.ap = per_class_ap(scores, labels, policy_);
  r.map = shot_map(r.ap, groups_);
  const bool has_oracle = std::all_of(train_samples_.begin(), train_samples_.end(),
                                      [](const Sample& s) { return s.y_full.has_value(); });
  if (has_oracle) r.correction_recall = correction_recall(state_.corrections, train_samples_);
  for (const auto& h : state_.history) {
    r.tp_curve.push_back(h.tp);
    r.fp_curve.push_back(h.fp);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using json = nlohmann::json;

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
  throw ValidationError("checkpoint field '" + field + "': " + what);
}

const json& field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) bad_field(path + key, "missing");
  return j.at(key);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& path = "") {
  const json& v = field(j, key, path);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    bad_field(path + key, e.what());
  }
}

json tensors_to_json(const TriModel& m) {
  TriModel copy = m;
  json out = json::object();
  for (const auto& v : tensor_views(copy)) {
    out[v.name] = {{"rows", v.rows},
                   {"cols", v.cols},
                   {"data", std::vector<double>(v.data, v.data + v.size())}};
  }
  return out;
}

void tensors_from_json(TriModel& m, const json& j, const std::string& path) {
  for (auto& v : tensor_views(m)) {
    const std::string name = path + "." + v.name;
    const json& t = field(j, v.name, path + ".");
    if (get_as<Eigen::Index>(t, "rows", name + ".") != v.rows ||
        get_as<Eigen::Index>(t, "cols", name + ".") != v.cols) {
      bad_field(name, "shape does not match the configured model");
    }
    const auto data = get_as<std::vector<double>>(t, "data", name + ".");
    if (static_cast<Eigen::Index>(data.size()) != v.size()) bad_field(name + ".data", "wrong length");
    std::copy(data.begin(), data.end(), v.data);
  }
}

json history_to_json(const std::vector<EpochLog>& h) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json out = json::array();
  for (const auto& e : h) {
    out.push_back({{"epoch", e.epoch},
                   {"loss_total", e.loss_total},
                   {"loss_rlc", e.loss_rlc},
                   {"loss_mfm", e.loss_mfm},
                   {"loss_htb", e.loss_htb},
                   {"loss_head", e.loss_head},
                   {"loss_balanced", e.loss_balanced},
                   {"loss_tail", e.loss_tail},
                   {"corrections", e.corrections},
                   {"tp", e.tp},
                   {"fp", e.fp},
                   {"map_total", opt(e.map_total)},
                   {"map_many", opt(e.map_many)},
                   {"map_medium", opt(e.map_medium)},
                   {"map_few", opt(e.map_few)},
                   {"recall", opt(e.recall)}});
  }
  return out;
}

std::vector<EpochLog> history_from_json(const json& j) {
  if (!j.is_array()) bad_field("history", "expected an array");
  auto opt = [](const json& row, const char* key) -> std::optional<double> {
    const json& v = field(row, key, "history.");
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  std::vector<EpochLog> out;
  for (const auto& row : j) {
    EpochLog e;
    e.epoch = get_as<int>(row, "epoch", "history.");
    e.loss_total = get_as<double>(row, "loss_total", "history.");
    e.loss_rlc = get_as<double>(row, "loss_rlc", "history.");
    e.loss_mfm = get_as<double>(row, "loss_mfm", "history.");
    e.loss_htb = get_as<double>(row, "loss_htb", "history.");
    e.loss_head = get_as<double>(row, "loss_head", "history.");
    e.loss_balanced = get_as<double>(row, "loss_balanced", "history.");
    e.loss_tail = get_as<double>(row, "loss_tail", "history.");
    e.corrections = get_as<long>(row, "corrections", "history.");
    e.tp = get_as<long>(row, "tp", "history.");
    e.fp = get_as<long>(row, "fp", "history.");
    e.map_total = opt(row, "map_total");
    e.map_many = opt(row, "map_many");
    e.map_medium = opt(row, "map_medium");
    e.map_few = opt(row, "map_few");
    e.recall = opt(row, "recall");
    out.push_back(e);
  }
  return out;
}

}  // namespace

nlohmann::ordered_json to_json(const CorrectionRecord& r) {
  nlohmann::ordered_json j;
  j["sample_id"] = r.sample_id;
  j["class"] = r.cls;
  j["epoch"] = r.epoch;
  j["prob"] = r.prob;
  j["threshold"] = r.threshold;
  j["true_positive"] = r.true_positive ? nlohmann::ordered_json(*r.true_positive)
                                       : nlohmann::ordered_json(nullptr);
  return j;
}

CorrectionRecord correction_from_json(const nlohmann::json& j) {
  CorrectionRecord r;
  r.sample_id = get_as<std::string>(j, "sample_id", "corrections.");
  r.cls = get_as<int>(j, "class", "corrections.");
  r.epoch = get_as<int>(j, "epoch", "corrections.");
  r.prob = get_as<double>(j, "prob", "corrections.");
  r.threshold = get_as<double>(j, "threshold", "corrections.");
  const json& tp = field(j, "true_positive", "corrections.");
  if (!tp.is_null()) r.true_positive = tp.get<bool>();
  return r;
}

nlohmann::json Trainer::to_checkpoint() const {
  json j;
  j["format"] = "pltlab-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = to_key_values(cfg_);
  j["num_classes"] = ds_->manifest.num_classes;
  j["dim"] = ds_->manifest.dim;
  j["epoch"] = state_.epoch;
  j["step"] = state_.step;
  j["rng"] = state_.rng.state();
  j["model"] = tensors_to_json(state_.model);
  j["adam_m"] = tensors_to_json(state_.adam_m);
  j["adam_v"] = tensors_to_json(state_.adam_v);
  j["moving"] = {{"mu", state_.moving.mu},
                 {"e", std::vector<double>(state_.moving.e.data(),
                                           state_.moving.e.data() + state_.moving.e.size())}};
  const auto& s = state_.stats;
  j["stats"] = {{"mean_positive_prob", s.mean_positive_prob},
                {"static_counts", s.static_counts},
                {"dynamic_counts", s.dynamic_counts},
                {"tp", s.tp},
                {"fp", s.fp}};
  j["targets"] = state_.targets;
  json corr = json::array();
  for (const auto& r : state_.corrections) corr.push_back(json::parse(to_json(r).dump()));
  j["corrections"] = std::move(corr);
  j["history"] = history_to_json(state_.history);
  return j;
}

void Trainer::restore(const nlohmann::json& j) {
  if (get_as<std::string>(j, "format") != "pltlab-checkpoint") {
    bad_field("format", "not a pltlab checkpoint");
  }
  const int version = get_as<int>(j, "version");
  if (version != kCheckpointVersion) {
    bad_field("version", "unsupported version " + std::to_string(version));
  }
  const int C = ds_->manifest.num_classes;
  if (get_as<int>(j, "num_classes") != C) {
    bad_field("num_classes", "checkpoint has C=" + std::to_string(get_as<int>(j, "num_classes")) +
                                 " but the dataset has C=" + std::to_string(C));
  }
  if (get_as<int>(j, "dim") != ds_->manifest.dim) {
    bad_field("dim", "feature dimension differs from the dataset");
  }
  // The epoch budget may grow on resume; everything else must match.
  auto saved_cfg = get_as<KeyValues>(j, "config");
  auto current_cfg = to_key_values(cfg_);
  saved_cfg.erase("epochs");
  current_cfg.erase("epochs");
  if (saved_cfg != current_cfg) {
    bad_field("config", "checkpoint was produced by a different configuration");
  }

  TrainerState s = state_;
  s.epoch = get_as<int>(j, "epoch");
  s.step = get_as<long>(j, "step");
  try {
    s.rng.set_state(get_as<std::string>(j, "rng"));
  } catch (const ValidationError&) {
    bad_field("rng", "corrupt generator state");
  }
  tensors_from_json(s.model, field(j, "model", ""), "model");
  tensors_from_json(s.adam_m, field(j, "adam_m", ""), "adam_m");
  tensors_from_json(s.adam_v, field(j, "adam_v", ""), "adam_v");
  const json& mv = field(j, "moving", "");
  s.moving.mu = get_as<double>(mv, "mu", "moving.");
  const auto e = get_as<std::vector<double>>(mv, "e", "moving.");
  if (static_cast<int>(e.size()) != cfg_.feature_dim) bad_field("moving.e", "wrong length");
  s.moving.e = Eigen::Map<const VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
  const json& st = field(j, "stats", "");
  s.stats.mean_positive_prob = get_as<std::vector<double>>(st, "mean_positive_prob", "stats.");
  s.stats.static_counts = get_as<std::vector<long>>(st, "static_counts", "stats.");
  s.stats.dynamic_counts = get_as<std::vector<long>>(st, "dynamic_counts", "stats.");
  s.stats.tp = get_as<std::vector<long>>(st, "tp", "stats.");
  s.stats.fp = get_as<std::vector<long>>(st, "fp", "stats.");
  for (const auto* v : {&s.stats.static_counts, &s.stats.dynamic_counts, &s.stats.tp, &s.stats.fp}) {
    if (static_cast<int>(v->size()) != C) bad_field("stats", "vector length differs from C");
  }
  if (static_cast<int>(s.stats.mean_positive_prob.size()) != C) {
    bad_field("stats.mean_positive_prob", "length differs from C");
  }
  s.targets = get_as<std::vector<Labels>>(j, "targets");
  if (s.targets.size() != train_idx_.size()) bad_field("targets", "wrong number of samples");
  for (const auto& t : s.targets) {
    if (static_cast<int>(t.size()) != C) bad_field("targets", "row length differs from C");
  }
  s.corrections.clear();
  const json& corr = field(j, "corrections", "");
  if (!corr.is_array()) bad_field("corrections", "expected an array");
  for (const auto& r : corr) s.corrections.push_back(correction_from_json(r));
  s.history = history_from_json(field(j, "history", ""));
  state_ = std::move(s);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const std::string text = to_checkpoint().dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint " + tmp.string() + " for writing");
    os << text;
    os.flush();
    if (!os) throw IoError("failed writing checkpoint " + tmp.string() + " (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError("checkpoint " + path.string() + " is corrupt: " + e.what());
  }
  restore(j);
}

// ---------------------------------------------------------------------------
// Run output

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
}

void write_run_files(const Trainer& t, const std::filesystem::path& dir) {
  const auto& st = t.state();
  write_text(dir / "epochs.csv", epoch_csv(st.history));
  write_text(dir / "model_losses.csv", model_loss_csv(st.history));
  std::string log;
  for (const auto& r : st.corrections) log += to_json(r).dump() + "\n";
  write_text(dir / "corrections.jsonl", log);
}

}  // namespace

std::string epoch_csv(const std::vector<EpochLog>& history) {
  std::string out =
      "epoch,loss_total,loss_rlc,loss_mfm,loss_htb,corrections,tp,fp,mAP_total,mAP_many,"
      "mAP_medium,mAP_few,recall\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + fmt(e.loss_total) + "," + fmt(e.loss_rlc) + "," +
           fmt(e.loss_mfm) + "," + fmt(e.loss_htb) + "," + std::to_string(e.corrections) + "," +
           std::to_string(e.tp) + "," + std::to_string(e.fp) + "," + fmt(e.map_total) + "," +
           fmt(e.map_many) + "," + fmt(e.map_medium) + "," + fmt(e.map_few) + "," +
           fmt(e.recall) + "\n";
  }
  return out;
}

std::string model_loss_csv(const std::vector<EpochLog>& history) {
  std::string out = "epoch,loss_head,loss_balanced,loss_tail\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + fmt(e.loss_head) + "," + fmt(e.loss_balanced) +
           "," + fmt(e.loss_tail) + "\n";
  }
  return out;
}

void continue_fit(Trainer& trainer, const FitOptions& opts) {
  trainer.set_policy(opts.exec);
  if (opts.run_dir) std::filesystem::create_directories(*opts.run_dir / "checkpoints");
  while (trainer.state().epoch < trainer.config().epochs) {
    const EpochLog log = trainer.run_epoch();
    if (opts.run_dir) {
      write_run_files(trainer, *opts.run_dir);
      if (opts.checkpoint_every > 0 && log.epoch % opts.checkpoint_every == 0) {
        trainer.save_checkpoint(*opts.run_dir / "checkpoints" /
                                ("epoch_" + std::to_string(log.epoch) + ".json"));
      }
    }
    if (opts.on_epoch) opts.on_epoch(log);
  }
  if (opts.run_dir) {
    write_run_files(trainer, *opts.run_dir);
    trainer.save_checkpoint(*opts.run_dir / "checkpoint.json");
  }
}

FitResult fit(const TrainConfig& cfg, const Dataset& ds, const FitOptions& opts) {
  Trainer trainer(cfg, ds, opts.exec);
  continue_fit(trainer, opts);
  return {trainer.state(), trainer.state().history};
}

}  // namespace pltlab
