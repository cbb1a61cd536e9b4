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

#include <cstddef>
#include <exception>
#include <string_view>

#ifdef PLTLAB_HAVE_OPENMP
#include <omp.h>
#endif

namespace pltlab {

// How per-sample and per-class loops run. Both policies produce bit-identical
// results: work items write to disjoint slots and every reduction happens
// afterwards in index order on the calling thread.
enum class ExecPolicy { kSerial, kOpenMP };

ExecPolicy parse_exec_policy(std::string_view name);
std::string_view to_string(ExecPolicy p);
bool openmp_available();

template <class F>
void parallel_for(ExecPolicy policy, std::size_t n, F&& body) {
#ifdef PLTLAB_HAVE_OPENMP
  if (policy == ExecPolicy::kOpenMP && n > 1) {
    std::exception_ptr first_error;
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(pltlab_parallel_for_error)
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace pltlab
