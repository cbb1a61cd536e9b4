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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pltlab {

using Labels = std::vector<std::uint8_t>;

enum class ShotGroup { kMany, kMedium, kFew };

std::string_view to_string(ShotGroup g);

/// One partially labeled example. `y_obs[c] == 1` means class c is annotated
/// present; 0 means unknown. `y_full` is the oracle label vector and exists
/// only for generated data.
struct Sample {
  std::string id;
  std::vector<double> x;
  Labels y_obs;
  std::optional<Labels> y_full;

  bool operator==(const Sample&) const = default;
};

struct DatasetManifest {
  int num_classes = 0;
  int dim = 0;
  std::vector<long> class_counts;  // observed positives per class
  std::vector<ShotGroup> shot_groups;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

struct SyntheticSpec {
  int num_classes = 20;
  int dim = 32;
  long n_max = 200;
  double decay = 0.82;
  double noise = 0.3;
  std::uint64_t seed = 7;
};

// Per-class positive targets round(n_max * decay^c), lifted to at least 3.
// Throws ValidationError naming the first class whose raw count rounds to 0.
std::vector<long> target_class_counts(int num_classes, long n_max, double decay);

/// Draws a fully labeled long-tailed multi-label dataset. Each sample holds
/// 1-4 classes picked with probability proportional to the remaining class
/// quota, so head classes co-occur more often; features are the sum of the
/// unit prototypes of the present classes plus isotropic Gaussian noise.
/// Class c ends up with exactly `target_class_counts(...)[c]` positives.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Hides each positive label independently with probability `missing_rate`,
/// keeping one uniformly chosen positive when a sample would lose them all.
Dataset mask_labels(const Dataset& ds, double missing_rate, std::uint64_t seed);

// >100 many, 20..100 medium, <20 few.
ShotGroup shot_group_for(long count);
std::vector<ShotGroup> assign_shot_groups(std::span<const long> class_counts);

std::vector<long> count_observed(std::span<const Sample> samples, int num_classes);

// Recomputes class_counts and shot_groups from the samples.
void refresh_manifest(Dataset& ds);

// Checks every Sample invariant against the manifest. Throws ValidationError.
void validate(const Dataset& ds);

// JSON-lines: a manifest header line followed by one sample per line.
void write_dataset(const Dataset& ds, std::ostream& os);
Dataset read_dataset(std::istream& is);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// 64-bit FNV-1a over the file bytes, as 16 hex digits.
std::string file_fingerprint(const std::filesystem::path& path);

}  // namespace pltlab
