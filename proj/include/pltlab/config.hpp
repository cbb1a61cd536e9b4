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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pltlab/data.hpp"
#include "pltlab/htb.hpp"
#include "pltlab/losses.hpp"
#include "pltlab/parallel.hpp"

namespace pltlab {

// Loss used wherever the objective asks for the multi-focal loss.
enum class BaseLoss { kBce, kFocal, kAsl, kMfm };
enum class CorrectionSource { kBalanced, kHead };
enum class DistributionMode { kDynamic, kStatic };

struct TrainConfig {
  // Objective weights.
  double lambda_c = 1.0;
  double lambda_m = 1.0;
  double lambda_b = 1.0;

  int batch_size = 32;
  int epochs = 40;

  // Adam, with exponential per-epoch decay for each model.
  double lr = 2e-3;
  double lr_decay_head = 0.90;
  double lr_decay_balanced = 0.97;
  double lr_decay_tail = 1.00;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Correction.
  double tau = 0.7;
  double stats_momentum = 0.99;
  int warmup_epochs = 2;
  DistributionMode rlc_distribution = DistributionMode::kDynamic;
  CorrectionSource correction_source = CorrectionSource::kBalanced;

  // Loss shaping.
  BaseLoss loss = BaseLoss::kMfm;
  MfmConfig mfm;
  double ht_scale = 1.0;
  bool mfm_pn = true;  // positive-negative exponents
  bool mfm_ht = true;  // head-tail factor
  double focal_gamma = 2.0;

  // Balancing.
  double alpha = 2.0;
  double mu = 0.9;
  FusionActivation phi = FusionActivation::kSoftmax;
  bool teacher_losses = true;

  // Module switches.
  bool enable_rlc = true;
  bool enable_mfm = true;
  bool enable_htb = true;

  // Architecture.
  std::vector<int> hidden = {64};
  int feature_dim = 64;
  int head_groups = 4;
  double rho = 16.0;
  double eta = 1e-6;
  int attention_hidden = 32;

  double eval_fraction = 0.2;
  std::uint64_t seed = 7;

  // Throws ValidationError on out-of-range values.
  void validate() const;

  bool teachers_active() const { return enable_htb; }
  bool fusion_active() const { return enable_htb && lambda_b > 0.0; }
  bool corrections_active() const { return enable_rlc; }
  BaseLoss effective_loss() const { return enable_mfm ? loss : BaseLoss::kBce; }
};

struct DatasetConfig {
  SyntheticSpec synthetic;
  double missing_rate = 0.4;
};

/// Everything one CLI invocation can be configured with.
struct RunConfig {
  DatasetConfig data;
  TrainConfig train;
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  ExecPolicy exec = ExecPolicy::kSerial;
};

using KeyValues = std::map<std::string, std::string>;

// Parses "key = value" lines; '#' starts a comment. Duplicate keys are an
// error. Throws UsageError naming the line.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

// Applies keys onto `cfg`. Unknown keys and unparsable values throw UsageError.
void apply_key_values(RunConfig& cfg, const KeyValues& kv);

// Every key with its resolved value, in a stable order.
KeyValues to_key_values(const RunConfig& cfg);
KeyValues to_key_values(const TrainConfig& cfg);
std::string format_key_values(const KeyValues& kv);

std::vector<std::string> known_keys();

}  // namespace pltlab
