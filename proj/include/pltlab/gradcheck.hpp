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
#include <string>
#include <string_view>
#include <vector>

namespace pltlab {

struct GradcheckOptions {
  int instances = 100;      // random draws per component
  double step = 1e-5;       // central-difference step
  double tol = 1e-4;        // per-component relative error bound
  double composite_tol = 1e-3;
  int composite_instances = 3;
  std::uint64_t seed = 20260417;
  // Negates every analytic gradient before comparison. Used to prove the
  // harness detects a sign error.
  bool inject_sign_flip = false;
};

struct ComponentReport {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass() const { return max_rel_err < tol; }
};

// Names accepted by run_gradcheck, in suite order.
const std::vector<std::string>& gradcheck_components();

// Relative error max|a-n| / max(max|a|, max|n|, 1e-8).
double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

// Throws UsageError for an unknown component.
ComponentReport run_gradcheck(std::string_view component, const GradcheckOptions& opts);

std::vector<ComponentReport> run_gradcheck_suite(const GradcheckOptions& opts);

}  // namespace pltlab
