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

#include "pltlab/parallel.hpp"

#include <string>

#include "pltlab/error.hpp"

namespace pltlab {

ExecPolicy parse_exec_policy(std::string_view name) {
  if (name == "serial") return ExecPolicy::kSerial;
  if (name == "openmp") return ExecPolicy::kOpenMP;
  throw ValidationError("unknown execution policy '" + std::string(name) +
                        "' (expected serial or openmp)");
}

std::string_view to_string(ExecPolicy p) {
  return p == ExecPolicy::kSerial ? "serial" : "openmp";
}

bool openmp_available() {
#ifdef PLTLAB_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace pltlab
