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

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "pltlab/error.hpp"
#include "pltlab/trainer.hpp"
#include "test_util.hpp"

namespace pltlab {
namespace {

Dataset small_dataset(int C = 5, double missing = 0.4) {
  SyntheticSpec spec;
  spec.num_classes = C;
  spec.dim = 8;
  spec.n_max = 60;
  spec.decay = 0.6;
  spec.noise = 0.3;
  spec.seed = 3;
  return mask_labels(generate_synthetic(spec), missing, 4);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = {12};
  c.feature_dim = 8;
  c.head_groups = 2;
  c.attention_hidden = 6;
  c.batch_size = 16;
  c.epochs = 4;
  c.warmup_epochs = 1;
  c.tau = 0.55;
  c.stats_momentum = 0.9;
  c.lr = 0.01;
  c.seed = 11;
  return c;
}

std::vector<std::size_t> first_positions(std::size_t n) {
  std::vector<std::size_t> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = i;
  return b;
}

TEST(Trainer, DeterministicAcrossRuns) {
  const Dataset ds = small_dataset();
  const TrainConfig cfg = small_config();
  const FitResult a = fit(cfg, ds);
  const FitResult b = fit(cfg, ds);
  EXPECT_TRUE(identical(a.state, b.state));
  EXPECT_EQ(epoch_csv(a.history), epoch_csv(b.history));
  ASSERT_EQ(a.history.size(), 4u);
}

TEST(Trainer, StepLossSequenceRepeats) {
  const Dataset ds = small_dataset();
  Trainer t1(small_config(), ds), t2(small_config(), ds);
  const auto batch = first_positions(10);
  for (int i = 0; i < 5; ++i) {
    const auto m1 = t1.train_step(batch);
    const auto m2 = t2.train_step(batch);
    EXPECT_EQ(m1.loss_total, m2.loss_total);
  }
}

TEST(Trainer, SerialAndOpenMPAreBitIdentical) {
  const Dataset ds = small_dataset();
  const TrainConfig cfg = small_config();
#ifdef PLTLAB_HAVE_OPENMP
  omp_set_num_threads(4);
#endif
  FitOptions serial, omp;
  omp.exec = ExecPolicy::kOpenMP;
  const FitResult a = fit(cfg, ds, serial);
  const FitResult b = fit(cfg, ds, omp);
  EXPECT_TRUE(identical(a.state, b.state));
}

TEST(Trainer, CheckpointRoundTrip) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.epochs = 3;
  const FitResult r = fit(cfg, ds);
  Trainer src(cfg, ds);
  src.state() = r.state;
  const auto path = testing::scratch_dir() / "ckpt.json";
  src.save_checkpoint(path);
  Trainer dst(cfg, ds);
  EXPECT_FALSE(identical(dst.state(), src.state()));
  dst.load_checkpoint(path);
  EXPECT_TRUE(identical(dst.state(), src.state()));

  Trainer fresh(cfg, ds);
  Trainer again(cfg, ds);
  again.restore(fresh.to_checkpoint());
  EXPECT_TRUE(identical(again.state(), fresh.state()));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const Dataset ds = small_dataset();
  TrainConfig five = small_config();
  five.epochs = 5;
  TrainConfig three = five;
  three.epochs = 3;
  const FitResult full = fit(five, ds);
  const FitResult part = fit(three, ds);
  Trainer src(three, ds);
  src.state() = part.state;
  const auto path = testing::scratch_dir() / "epoch3.json";
  src.save_checkpoint(path);
  Trainer resumed(five, ds);
  resumed.load_checkpoint(path);
  continue_fit(resumed, FitOptions{});
  EXPECT_TRUE(identical(resumed.state(), full.state));
  EXPECT_EQ(epoch_csv(resumed.state().history), epoch_csv(full.history));
}

TEST(Trainer, RestoreRejectsMismatches) {
  const Dataset ds5 = small_dataset(5);
  const Dataset ds4 = small_dataset(4);
  const TrainConfig cfg = small_config();
  const auto ckpt = Trainer(cfg, ds5).to_checkpoint();
  Trainer other(cfg, ds4);
  try {
    other.restore(ckpt);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("num_classes"), std::string::npos);
  }
  TrainConfig changed = cfg;
  changed.tau = 0.8;
  Trainer t(changed, ds5);
  EXPECT_THROW(t.restore(ckpt), ValidationError);
  auto broken = ckpt;
  broken["version"] = 99;
  Trainer u(cfg, ds5);
  try {
    u.restore(broken);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  broken = ckpt;
  broken.erase("adam_v");
  EXPECT_THROW(u.restore(broken), ValidationError);
}

TEST(Trainer, ZeroLearningRateStillUpdatesStatistics) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  Trainer t(cfg, ds);
  const TriModel before = t.state().model;
  const ClassStats stats_before = t.state().stats;
  t.train_step(first_positions(16));
  EXPECT_TRUE(identical(t.state().model, before));
  EXPECT_GT(t.state().moving.e.norm(), 0.0);
  EXPECT_NE(t.state().stats.mean_positive_prob, stats_before.mean_positive_prob);
  EXPECT_EQ(t.state().step, 1);
}

TEST(Trainer, ObjectiveDecomposes) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.lambda_c = 0.7;
  cfg.lambda_m = 1.3;
  cfg.lambda_b = 0.4;
  cfg.warmup_epochs = 0;
  cfg.tau = 0.3;
  Trainer t(cfg, ds);
  long corrected = 0;
  for (int e = 0; e < 3; ++e) {
    for (std::size_t start = 0; start + 16 <= t.train_indices().size(); start += 16) {
      std::vector<std::size_t> b;
      for (std::size_t i = start; i < start + 16; ++i) b.push_back(i);
      const StepMetrics m = t.train_step(b);
      corrected += m.n_corrected;
      EXPECT_NEAR(m.loss_total,
                  cfg.lambda_c * m.loss_rlc + cfg.lambda_m * m.loss_mfm + cfg.lambda_b * m.loss_htb,
                  1e-9);
    }
  }
  EXPECT_GT(corrected, 0);
}

// Plain MFM training of the balanced model, written out independently.
TEST(Trainer, ComponentIsolationMatchesPlainMfm) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.lambda_c = 0.0;
  cfg.lambda_b = 0.0;
  cfg.enable_rlc = false;
  cfg.enable_htb = false;
  Trainer t(cfg, ds);
  Mlp bb = t.state().model.backbone[2];
  NormalizedHead hd = t.state().model.classifier[2];
  Mlp bb_m = zeros_like(bb), bb_v = zeros_like(bb);
  NormalizedHead hd_m = zeros_like(hd), hd_v = zeros_like(hd);
  const HeadTailFactor ht = compute_gamma_ht(t.train_counts(), cfg.ht_scale);
  const TriModel teachers = t.state().model;

  for (int step = 1; step <= 4; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < 12; ++i) batch.push_back((step * 7 + i * 3) % t.train_indices().size());
    const StepMetrics m = t.train_step(batch);

    Mlp g_bb = zeros_like(bb);
    NormalizedHead g_hd = zeros_like(hd);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t pos : batch) {
      const Sample& s = ds.samples[t.train_indices()[pos]];
      const VectorXd x = Eigen::Map<const VectorXd>(s.x.data(), static_cast<Eigen::Index>(s.x.size()));
      MlpTape mt;
      HeadTape htape;
      const VectorXd f = mlp_forward(bb, x, &mt);
      const VectorXd z = head_forward(hd, f, &htape);
      const LossResult r = mfm(sigmoid(z), s.y_obs, cfg.mfm, ht);
      loss += cfg.lambda_m * inv_b * r.loss;
      const VectorXd gf = head_backward(hd, htape, cfg.lambda_m * inv_b * r.grad, g_hd);
      mlp_backward(bb, mt, gf, g_bb);
    }
    EXPECT_NEAR(m.loss_total, loss, 1e-12 * std::max(1.0, loss));

    const double bc1 = 1.0 - std::pow(cfg.beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step);
    auto adam = [&](auto& p, auto& mom, auto& var, const auto& g) {
      for (Eigen::Index j = 0; j < p.size(); ++j) {
        mom.data()[j] = cfg.beta1 * mom.data()[j] + (1 - cfg.beta1) * g.data()[j];
        var.data()[j] = cfg.beta2 * var.data()[j] + (1 - cfg.beta2) * g.data()[j] * g.data()[j];
        p.data()[j] -= cfg.lr * (mom.data()[j] / bc1) / (std::sqrt(var.data()[j] / bc2) + cfg.adam_eps);
      }
    };
    for (std::size_t l = 0; l < bb.layers.size(); ++l) {
      adam(bb.layers[l].weight, bb_m.layers[l].weight, bb_v.layers[l].weight, g_bb.layers[l].weight);
      adam(bb.layers[l].bias, bb_m.layers[l].bias, bb_v.layers[l].bias, g_bb.layers[l].bias);
    }
    adam(hd.weight, hd_m.weight, hd_v.weight, g_hd.weight);

    const TriModel& tm = t.state().model;
    for (std::size_t l = 0; l < bb.layers.size(); ++l) {
      EXPECT_LT((tm.backbone[2].layers[l].weight - bb.layers[l].weight).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((tm.backbone[2].layers[l].bias - bb.layers[l].bias).cwiseAbs().maxCoeff(), 1e-12);
    }
    EXPECT_LT((tm.classifier[2].weight - hd.weight).cwiseAbs().maxCoeff(), 1e-12);
    // Inactive teachers never move.
    for (std::size_t g : {0u, 1u}) {
      for (std::size_t l = 0; l < bb.layers.size(); ++l) {
        EXPECT_EQ(tm.backbone[g].layers[l].weight, teachers.backbone[g].layers[l].weight);
      }
    }
    EXPECT_EQ(tm.classifier[0].weight, teachers.classifier[0].weight);
    EXPECT_EQ(tm.classifier[1].weight, teachers.classifier[1].weight);
  }
}

TEST(Trainer, HeadDecayOnlyMovesHeadWithoutFusion) {
  const Dataset ds = small_dataset();
  TrainConfig a = small_config();
  a.lambda_b = 0.0;
  a.epochs = 3;
  TrainConfig b = a;
  b.lr_decay_head = 0.5;
  const FitResult ra = fit(a, ds);
  const FitResult rb = fit(b, ds);
  const TriModel& ma = ra.state.model;
  const TriModel& mb = rb.state.model;
  auto same = [](const Mlp& x, const Mlp& y) {
    for (std::size_t l = 0; l < x.layers.size(); ++l) {
      if (x.layers[l].weight != y.layers[l].weight || x.layers[l].bias != y.layers[l].bias) return false;
    }
    return true;
  };
  const auto H = static_cast<std::size_t>(ModelGroup::kHead);
  const auto T = static_cast<std::size_t>(ModelGroup::kTail);
  const auto B = static_cast<std::size_t>(ModelGroup::kBalanced);
  EXPECT_FALSE(same(ma.backbone[H], mb.backbone[H]));
  EXPECT_TRUE(same(ma.backbone[T], mb.backbone[T]));
  EXPECT_TRUE(same(ma.backbone[B], mb.backbone[B]));
  EXPECT_EQ(ma.classifier[T].weight, mb.classifier[T].weight);
  EXPECT_EQ(ma.classifier[B].weight, mb.classifier[B].weight);
  EXPECT_EQ(ma.attention.v, mb.attention.v);
}

TEST(Trainer, ZeroEpochsReturnsInitialState) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const FitResult r = fit(cfg, ds);
  EXPECT_TRUE(r.history.empty());
  EXPECT_TRUE(identical(r.state, Trainer(cfg, ds).state()));
}

TEST(Trainer, NonFiniteLossAbortsWithDump) {
  const Dataset ds = small_dataset();
  Trainer t(small_config(), ds);
  t.state().model.classifier[2].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    t.train_step(first_positions(4));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("non-finite"), std::string::npos) << what;
  }
}

TEST(Trainer, SplitIsDeterministicAndDisjoint) {
  const Dataset ds = small_dataset();
  const Trainer a(small_config(), ds), b(small_config(), ds);
  EXPECT_EQ(a.train_indices(), b.train_indices());
  std::vector<int> seen(ds.samples.size(), 0);
  for (auto i : a.train_indices()) ++seen[i];
  for (auto i : a.eval_indices()) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_NEAR(static_cast<double>(a.eval_indices().size()) / ds.samples.size(), 0.2, 0.01);
}

TEST(Trainer, CorrectionsRespectWarmupAndNeverClearLabels) {
  const Dataset ds = small_dataset();
  TrainConfig cfg = small_config();
  cfg.warmup_epochs = 2;
  cfg.tau = 0.3;
  const FitResult r = fit(cfg, ds);
  for (const auto& rec : r.state.corrections) {
    EXPECT_GE(rec.epoch, 2);
    EXPECT_GT(rec.prob, cfg.tau);
  }
  EXPECT_EQ(r.history[0].corrections + r.history[1].corrections, 0);
  long tp = 0, fp = 0;
  for (const auto& e : r.history) {
    tp += e.tp;
    fp += e.fp;
  }
  EXPECT_EQ(tp + fp, static_cast<long>(r.state.corrections.size()));
  Trainer t(cfg, ds);
  for (std::size_t k = 0; k < t.train_indices().size(); ++k) {
    const Labels& obs = ds.samples[t.train_indices()[k]].y_obs;
    for (std::size_t c = 0; c < obs.size(); ++c) EXPECT_GE(r.state.targets[k][c], obs[c]);
  }
}

TEST(Trainer, SeparableBalancedPairIsLearned) {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.dim = 8;
  spec.n_max = 150;
  spec.decay = 1.0;
  spec.noise = 0.3;
  spec.seed = 5;
  const Dataset ds = mask_labels(generate_synthetic(spec), 0.0, 1);
  TrainConfig cfg = small_config();
  cfg.epochs = 10;
  const FitResult r = fit(cfg, ds);
  ASSERT_TRUE(r.history.back().map_total.has_value());
  EXPECT_GT(*r.history.back().map_total, 0.95);
}

}  // namespace
}  // namespace pltlab
