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

// Serial reference against the OpenMP path for the per-sample batch kernels
// and per-class AP. Run with --benchmark_filter to pick one kernel.

#include <benchmark/benchmark.h>

#include "pltlab/eval.hpp"
#include "pltlab/trainer.hpp"

namespace pltlab {
namespace {

struct BatchFixture {
  TrainConfig cfg;
  TriModel model;
  MovingGradient mg;
  std::vector<VectorXd> xs;
  std::vector<const VectorXd*> ptrs;
  BatchPlan plan;

  explicit BatchFixture(int batch) {
    SyntheticSpec spec;
    spec.num_classes = 20;
    spec.dim = 32;
    spec.n_max = 400;
    spec.decay = 0.8;
    const Dataset ds = mask_labels(generate_synthetic(spec), 0.4, 7);
    model = TriModel::init(cfg, 20, 32);
    mg = MovingGradient::zeros(cfg.feature_dim, cfg.mu);
    Rng rng(1);
    for (int i = 0; i < cfg.feature_dim; ++i) mg.e[i] = rng.normal();
    for (int i = 0; i < batch; ++i) {
      const Sample& s = ds.samples[static_cast<std::size_t>(i) % ds.samples.size()];
      xs.push_back(Eigen::Map<const VectorXd>(s.x.data(), 32));
      plan.observed.push_back(s.y_obs);
      plan.targets.push_back(s.y_obs);
    }
    for (const auto& x : xs) ptrs.push_back(&x);
    plan.ex_main = objective_exponents(cfg, ds.manifest.class_counts);
    plan.ex_rlc = plan.ex_main;
  }
};

void BM_TrainKernels(benchmark::State& state, ExecPolicy policy) {
  BatchFixture f(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    const auto traces = forward_batch(f.cfg, f.model, f.mg, f.ptrs, policy);
    auto out = backward_batch(f.cfg, f.model, f.mg, traces, f.plan, policy);
    benchmark::DoNotOptimize(out.loss_total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PerClassAp(benchmark::State& state, ExecPolicy policy) {
  const int n = static_cast<int>(state.range(0));
  const int C = 80;
  Rng rng(2);
  Eigen::MatrixXd scores(n, C);
  std::vector<Labels> y(static_cast<std::size_t>(n), Labels(C));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < C; ++c) {
      scores(i, c) = rng.uniform();
      y[static_cast<std::size_t>(i)][c] = rng.uniform() < 0.1;
    }
  }
  for (auto _ : state) {
    auto ap = per_class_ap(scores, y, policy);
    benchmark::DoNotOptimize(ap.data());
  }
}

BENCHMARK_CAPTURE(BM_TrainKernels, serial, ExecPolicy::kSerial)->Arg(32)->Arg(256);
BENCHMARK_CAPTURE(BM_TrainKernels, openmp, ExecPolicy::kOpenMP)->Arg(32)->Arg(256);
BENCHMARK_CAPTURE(BM_PerClassAp, serial, ExecPolicy::kSerial)->Arg(2000)->Arg(20000);
BENCHMARK_CAPTURE(BM_PerClassAp, openmp, ExecPolicy::kOpenMP)->Arg(2000)->Arg(20000);

}  // namespace
}  // namespace pltlab

BENCHMARK_MAIN();
