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

#include "pltlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "pltlab/error.hpp"
#include "pltlab/htb.hpp"
#include "pltlab/losses.hpp"
#include "pltlab/netcore.hpp"
#include "pltlab/rlc.hpp"
#include "pltlab/trainer.hpp"

namespace pltlab {

namespace {

using Params = std::vector<double*>;

std::vector<double> numeric_grad(const Params& params, const std::function<double()>& f,
                                 double h) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& v = *params[i];
    const double saved = v;
    v = saved + h;
    const double up = f();
    v = saved - h;
    const double down = f();
    v = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

template <class T>
void add_params(Params& out, T& tensor) {
  for (Eigen::Index i = 0; i < tensor.size(); ++i) out.push_back(tensor.data() + i);
}

template <class M>
void add_model_params(Params& out, M& m) {
  m.visit([&](std::string_view, auto& t) { add_params(out, t); });
}

template <class T>
void append(std::vector<double>& out, const T& tensor) {
  out.insert(out.end(), tensor.data(), tensor.data() + tensor.size());
}

template <class M>
void append_model(std::vector<double>& out, M m) {
  m.visit([&](std::string_view, auto& t) { append(out, t); });
}

VectorXd uniform_vec(Rng& rng, int n, double lo, double hi) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

VectorXd normal_vec(Rng& rng, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Labels random_labels(Rng& rng, int n) {
  Labels y(static_cast<std::size_t>(n));
  for (auto& v : y) v = rng.below(2) == 1 ? 1 : 0;
  return y;
}

int between(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

struct Check {
  std::vector<double> analytic;
  std::vector<double> numeric;
};

using Draw = std::function<Check(Rng&, double)>;

ComponentReport run_draws(const std::string& name, int n, double tol, const GradcheckOptions& o,
                          std::uint64_t salt, const Draw& draw) {
  Rng rng(o.seed ^ salt);
  ComponentReport r{name, n, 0.0, tol};
  for (int i = 0; i < n; ++i) {
    Check c = draw(rng, o.step);
    if (o.inject_sign_flip) {
      for (double& v : c.analytic) v = -v;
    }
    r.max_rel_err = std::max(r.max_rel_err, relative_error(c.analytic, c.numeric));
  }
  return r;
}

// Loss check through the sigmoid: gradient is taken against logits z.
Check logit_loss_check(VectorXd z, double h,
                       const std::function<LossResult(const VectorXd&)>& loss) {
  Check c;
  const LossResult base = loss(sigmoid(z));
  append(c.analytic, base.grad);
  Params p;
  add_params(p, z);
  c.numeric = numeric_grad(p, [&] { return loss(sigmoid(z)).loss; }, h);
  return c;
}

FocalExponents random_exponents(Rng& rng, int C) {
  MfmConfig cfg;
  cfg.gamma_pos = rng.uniform(0.0, 2.0);
  cfg.gamma_neg = cfg.gamma_pos + rng.uniform(0.0, 3.0);
  cfg.w_pos = rng.uniform(-1.0, 0.5);
  cfg.w_neg = rng.uniform(-0.5, 1.5);
  std::vector<long> counts(static_cast<std::size_t>(C));
  for (auto& n : counts) n = 1 + static_cast<long>(rng.below(300));
  return mfm_exponents(cfg, compute_gamma_ht(counts, rng.uniform(0.0, 2.0)));
}

Check check_focal(Rng& rng, double h) {
  const int C = between(rng, 1, 8);
  const VectorXd z = uniform_vec(rng, C, -4.0, 4.0);
  const Labels y = random_labels(rng, C);
  const double gamma = rng.uniform(0.0, 4.0);
  return logit_loss_check(z, h, [&](const VectorXd& p) { return focal(p, y, gamma); });
}

Check check_asl(Rng& rng, double h) {
  const int C = between(rng, 1, 8);
  const VectorXd z = uniform_vec(rng, C, -4.0, 4.0);
  const Labels y = random_labels(rng, C);
  const double gp = rng.uniform(0.0, 3.0);
  const double gn = gp + rng.uniform(0.0, 3.0);
  return logit_loss_check(z, h, [&](const VectorXd& p) { return asl(p, y, gp, gn); });
}

Check check_mfm(Rng& rng, double h) {
  const int C = between(rng, 1, 8);
  const VectorXd z = uniform_vec(rng, C, -4.0, 4.0);
  const Labels y = random_labels(rng, C);
  MfmConfig cfg;
  cfg.gamma_pos = rng.uniform(0.0, 2.0);
  cfg.gamma_neg = cfg.gamma_pos + rng.uniform(0.0, 3.0);
  cfg.w_pos = rng.uniform(-1.0, 0.5);
  cfg.w_neg = rng.uniform(-0.5, 1.5);
  std::vector<long> counts(static_cast<std::size_t>(C));
  for (auto& n : counts) n = 1 + static_cast<long>(rng.below(300));
  const HeadTailFactor ht = compute_gamma_ht(counts, rng.uniform(0.0, 2.0));
  return logit_loss_check(z, h, [&](const VectorXd& p) { return mfm(p, y, cfg, ht); });
}

Check check_rlc(Rng& rng, double h) {
  const int C = between(rng, 1, 8);
  const VectorXd z = uniform_vec(rng, C, -4.0, 4.0);
  const Labels y_obs = random_labels(rng, C);
  Labels y_hat = y_obs;
  long n_corr = 0;
  for (auto& v : y_hat) {
    if (v == 0 && rng.below(3) == 0) {
      v = 1;
      ++n_corr;
    }
  }
  const FocalExponents ex = random_exponents(rng, C);
  const int B = between(rng, 1, 32);
  return logit_loss_check(z, h, [&](const VectorXd& p) {
    return rlc_loss(p, y_obs, y_hat, ex, 1e-6, B, n_corr);
  });
}

Check check_mlp(Rng& rng, double h) {
  std::vector<int> widths{between(rng, 1, 5)};
  const int depth = between(rng, 1, 3);
  for (int i = 0; i < depth; ++i) widths.push_back(between(rng, 1, 6));
  Mlp m = Mlp::init(widths, rng);
  VectorXd x = normal_vec(rng, widths.front());
  const VectorXd r = normal_vec(rng, widths.back());
  MlpTape tape;
  mlp_forward(m, x, &tape);
  Mlp grad = zeros_like(m);
  const VectorXd dx = mlp_backward(m, tape, r, grad);
  Check c;
  append(c.analytic, dx);
  append_model(c.analytic, grad);
  Params p;
  add_params(p, x);
  add_model_params(p, m);
  c.numeric = numeric_grad(p, [&] { return r.dot(mlp_forward(m, x)); }, h);
  return c;
}

Check check_head(Rng& rng, double h) {
  const int groups = between(rng, 1, 3);
  const int df = groups * between(rng, 1, 4);
  const int C = between(rng, 1, 5);
  NormalizedHead head =
      NormalizedHead::init(C, df, groups, rng.uniform(1.0, 16.0), rng.uniform(0.0, 0.1), rng);
  VectorXd f = normal_vec(rng, df);
  const VectorXd r = normal_vec(rng, C);
  HeadTape tape;
  head_forward(head, f, &tape);
  NormalizedHead grad = zeros_like(head);
  const VectorXd df_grad = head_backward(head, tape, r, grad);
  Check c;
  append(c.analytic, df_grad);
  append_model(c.analytic, grad);
  Params p;
  add_params(p, f);
  add_model_params(p, head);
  c.numeric = numeric_grad(p, [&] { return r.dot(head_forward(head, f)); }, h);
  return c;
}

Check check_attention(Rng& rng, double h) {
  const int df = between(rng, 1, 6);
  AdditiveAttention att = AdditiveAttention::init(df, between(rng, 1, 5), rng);
  att.v = normal_vec(rng, static_cast<int>(att.v.size()));
  VectorXd q = normal_vec(rng, df);
  VectorXd kh = normal_vec(rng, df);
  VectorXd kt = normal_vec(rng, df);
  const VectorXd r = normal_vec(rng, df);
  AttentionTape tape;
  attention_fuse(att, q, kh, kt, &tape);
  AdditiveAttention grad = zeros_like(att);
  const AttentionInputGrads in = attention_backward(att, tape, r, grad);
  Check c;
  append(c.analytic, in.query);
  append(c.analytic, in.keys[0]);
  append(c.analytic, in.keys[1]);
  append_model(c.analytic, grad);
  Params p;
  add_params(p, q);
  add_params(p, kh);
  add_params(p, kt);
  add_model_params(p, att);
  c.numeric = numeric_grad(p, [&] { return r.dot(attention_fuse(att, q, kh, kt)); }, h);
  return c;
}

Check check_adjust(Rng& rng, double h) {
  const int groups = between(rng, 1, 3);
  const int df = groups * between(rng, 1, 4);
  const int C = between(rng, 2, 6);
  NormalizedHead head =
      NormalizedHead::init(C, df, groups, rng.uniform(1.0, 16.0), rng.uniform(0.0, 0.1), rng);
  MovingGradient mg{normal_vec(rng, df), 0.9};
  VectorXd z = normal_vec(rng, C);
  const TeacherSide side = rng.below(2) == 0 ? TeacherSide::kHead : TeacherSide::kTail;
  const VectorXd r = normal_vec(rng, C);
  AdjustTape tape;
  adjust_logits(z, side, head, mg, &tape);
  NormalizedHead grad = zeros_like(head);
  const VectorXd dz = adjust_logits_backward(head, mg, tape, r, grad);
  Check c;
  append(c.analytic, dz);
  append_model(c.analytic, grad);
  Params p;
  add_params(p, z);
  add_model_params(p, head);
  c.numeric = numeric_grad(p, [&] { return r.dot(adjust_logits(z, side, head, mg)); }, h);
  return c;
}

Check check_htb(Rng& rng, double h) {
  const int C = between(rng, 2, 6);
  VectorXd zh = uniform_vec(rng, C, -2.0, 2.0);
  VectorXd zt = uniform_vec(rng, C, -2.0, 2.0);
  VectorXd zb = uniform_vec(rng, C, -2.0, 2.0);
  const Labels y = random_labels(rng, C);
  HtbConfig cfg;
  cfg.alpha = rng.uniform(0.5, 4.0);
  cfg.phi = rng.below(2) == 0 ? FusionActivation::kSoftmax : FusionActivation::kSigmoid;
  const FocalExponents ex = random_exponents(rng, C);
  const HtbResult base = htb_loss(zh, zt, zb, y, cfg, ex);
  const std::pair<double, double> kappa{base.kappa_head, base.kappa_tail};
  Check c;
  append(c.analytic, base.grad_head);
  append(c.analytic, base.grad_tail);
  append(c.analytic, base.grad_balanced);
  Params p;
  add_params(p, zh);
  add_params(p, zt);
  add_params(p, zb);
  c.numeric = numeric_grad(p, [&] { return htb_loss(zh, zt, zb, y, cfg, ex, kappa).loss; }, h);
  return c;
}

// Whole batch objective on a C=3, d=8, two-sample instance with every
// module active, including a nonzero moving gradient and one correction.
Check check_composite(Rng& rng, double h) {
  const int C = 3;
  const int d = 8;
  TrainConfig cfg;
  cfg.hidden = {6};
  cfg.feature_dim = 4;
  cfg.head_groups = 2;
  cfg.attention_hidden = 3;
  cfg.rho = 1.5;
  cfg.seed = rng.next_u64();
  TriModel m = TriModel::init(cfg, C, d);
  m.attention.v = normal_vec(rng, static_cast<int>(m.attention.v.size()));
  MovingGradient mg{normal_vec(rng, cfg.feature_dim), cfg.mu};

  const std::vector<VectorXd> xs{normal_vec(rng, d), normal_vec(rng, d)};
  const std::vector<const VectorXd*> ptrs{&xs[0], &xs[1]};
  BatchPlan plan;
  plan.observed = {Labels{1, 0, 0}, Labels{0, 1, 0}};
  plan.targets = {Labels{1, 0, 1}, Labels{0, 1, 0}};
  plan.n_corrected = 1;
  const std::vector<long> counts{40, 12, 3};
  plan.ex_main = objective_exponents(cfg, counts);
  plan.ex_rlc = objective_exponents(cfg, std::vector<long>{40, 12, 4});

  auto run = [&] {
    const auto traces = forward_batch(cfg, m, mg, ptrs, ExecPolicy::kSerial);
    return backward_batch(cfg, m, mg, traces, plan, ExecPolicy::kSerial);
  };
  const BatchOutcome base = run();
  plan.frozen_kappa = base.kappa;
  Check c;
  append_model(c.analytic, base.grad);
  Params p;
  add_model_params(p, m);
  c.numeric = numeric_grad(p, [&] { return run().loss_total; }, h);
  return c;
}

struct Entry {
  const char* name;
  std::uint64_t salt;
  Check (*fn)(Rng&, double);
};

constexpr Entry kEntries[] = {
    {"focal", 0x11, check_focal},       {"asl", 0x12, check_asl},
    {"mfm", 0x13, check_mfm},           {"rlc", 0x14, check_rlc},
    {"mlp", 0x15, check_mlp},           {"head", 0x16, check_head},
    {"attention", 0x17, check_attention}, {"adjust", 0x18, check_adjust},
    {"htb", 0x19, check_htb},           {"composite", 0x1a, check_composite},
};

}  // namespace

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& e : kEntries) v.emplace_back(e.name);
    return v;
  }();
  return names;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  if (a.size() != n.size()) throw ValidationError("relative_error: length mismatch");
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(n[i])});
  }
  return diff / scale;
}

ComponentReport run_gradcheck(std::string_view component, const GradcheckOptions& opts) {
  for (const auto& e : kEntries) {
    if (component != e.name) continue;
    const bool composite = component == "composite";
    return run_draws(e.name, composite ? opts.composite_instances : opts.instances,
                     composite ? opts.composite_tol : opts.tol, opts, e.salt,
                     [&](Rng& rng, double h) { return e.fn(rng, h); });
  }
  throw UsageError("unknown gradcheck component '" + std::string(component) + "'");
}

std::vector<ComponentReport> run_gradcheck_suite(const GradcheckOptions& opts) {
  std::vector<ComponentReport> out;
  for (const auto& name : gradcheck_components()) out.push_back(run_gradcheck(name, opts));
  return out;
}

}  // namespace pltlab
