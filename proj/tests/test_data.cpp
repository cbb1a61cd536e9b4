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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "pltlab/data.hpp"
#include "pltlab/error.hpp"
#include "pltlab/rng.hpp"
#include "test_util.hpp"

namespace pltlab {
namespace {

TEST(TargetCounts, BalancedWhenDecayIsOne) {
  EXPECT_EQ(target_class_counts(2, 100, 1.0), (std::vector<long>{100, 100}));
}

TEST(TargetCounts, TailOfReferenceShape) {
  // 200 * 0.82^19 = 4.608..., rounds to 5.
  const auto counts = target_class_counts(20, 200, 0.82);
  EXPECT_EQ(counts.front(), 200);
  EXPECT_EQ(counts.back(), 5);
  EXPECT_TRUE(std::is_sorted(counts.rbegin(), counts.rend()));
}

TEST(TargetCounts, SmallCountsLiftedToThree) {
  // 20 * 0.6^4 = 2.59 -> 3, 20 * 0.6^5 = 1.56 -> 2 -> lifted to 3.
  const auto counts = target_class_counts(6, 20, 0.6);
  EXPECT_EQ(counts[4], 3);
  EXPECT_EQ(counts[5], 3);
}

TEST(TargetCounts, RejectsDegenerateTailNamingClass) {
  // 20 * 0.5^6 = 0.3125 rounds to 0 first at class 6.
  try {
    target_class_counts(10, 20, 0.5);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("class 6"), std::string::npos) << e.what();
  }
}

TEST(TargetCounts, RejectsBadArguments) {
  EXPECT_THROW(target_class_counts(20, 200, 0.0), ValidationError);
  EXPECT_THROW(target_class_counts(20, 200, 1.5), ValidationError);
  EXPECT_THROW(target_class_counts(1, 200, 0.8), ValidationError);
  EXPECT_THROW(target_class_counts(5, 19, 0.8), ValidationError);
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.num_classes = 6;
  s.dim = 8;
  s.n_max = 40;
  s.decay = 0.7;
  s.noise = 0.2;
  s.seed = 11;
  return s;
}

TEST(GenerateSynthetic, HitsTargetCountsExactly) {
  const auto spec = small_spec();
  const Dataset ds = generate_synthetic(spec);
  std::vector<long> full(spec.num_classes, 0);
  for (const auto& s : ds.samples) {
    ASSERT_TRUE(s.y_full.has_value());
    EXPECT_EQ(s.y_obs, *s.y_full);
    const long k = std::accumulate(s.y_full->begin(), s.y_full->end(), 0L);
    EXPECT_GE(k, 1);
    EXPECT_LE(k, 4);
    for (int c = 0; c < spec.num_classes; ++c) full[c] += (*s.y_full)[c];
  }
  EXPECT_EQ(full, target_class_counts(spec.num_classes, spec.n_max, spec.decay));
  EXPECT_EQ(ds.manifest.class_counts, full);
  EXPECT_NO_THROW(validate(ds));
}

TEST(GenerateSynthetic, ZeroNoiseGivesIdenticalFeaturesPerLabelSet) {
  auto spec = small_spec();
  spec.noise = 0.0;
  const Dataset ds = generate_synthetic(spec);
  std::map<Labels, std::vector<double>> seen;
  for (const auto& s : ds.samples) {
    auto [it, fresh] = seen.emplace(*s.y_full, s.x);
    if (!fresh) EXPECT_EQ(it->second, s.x);
  }
}

TEST(GenerateSynthetic, FeaturesAreSumsOfUnitPrototypes) {
  auto spec = small_spec();
  spec.noise = 0.0;
  const Dataset ds = generate_synthetic(spec);
  // Prototypes are orthonormal when C <= d, so |x|^2 equals the label count.
  for (const auto& s : ds.samples) {
    const double sq = std::inner_product(s.x.begin(), s.x.end(), s.x.begin(), 0.0);
    const double k = std::accumulate(s.y_full->begin(), s.y_full->end(), 0.0);
    EXPECT_NEAR(sq, k, 1e-12);
  }
}

TEST(GenerateSynthetic, BitReproducible) {
  EXPECT_EQ(generate_synthetic(small_spec()), generate_synthetic(small_spec()));
  auto other = small_spec();
  other.seed = 12;
  EXPECT_NE(generate_synthetic(small_spec()), generate_synthetic(other));
}

TEST(MaskLabels, ZeroRateIsIdentity) {
  const Dataset ds = generate_synthetic(small_spec());
  const Dataset masked = mask_labels(ds, 0.0, 3);
  for (const auto& s : masked.samples) EXPECT_EQ(s.y_obs, *s.y_full);
  EXPECT_EQ(masked.manifest.class_counts, ds.manifest.class_counts);
}

TEST(MaskLabels, MonotoneAndCountsRecomputed) {
  const Dataset ds = generate_synthetic(small_spec());
  const Dataset masked = mask_labels(ds, 0.6, 3);
  ASSERT_EQ(masked.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = masked.samples[i];
    EXPECT_EQ(*s.y_full, *ds.samples[i].y_full);
    EXPECT_GE(std::accumulate(s.y_obs.begin(), s.y_obs.end(), 0), 1);
    for (std::size_t c = 0; c < s.y_obs.size(); ++c) EXPECT_LE(s.y_obs[c], (*s.y_full)[c]);
  }
  EXPECT_EQ(masked.manifest.class_counts,
            count_observed(masked.samples, masked.manifest.num_classes));
  for (std::size_t c = 0; c < ds.manifest.class_counts.size(); ++c) {
    EXPECT_LE(masked.manifest.class_counts[c], ds.manifest.class_counts[c]);
  }
  EXPECT_DOUBLE_EQ(masked.manifest.missing_rate, 0.6);
  EXPECT_EQ(masked, mask_labels(ds, 0.6, 3));
}

TEST(MaskLabels, SinglePositiveAlwaysRetained) {
  Dataset ds;
  ds.manifest.num_classes = 3;
  ds.manifest.dim = 1;
  for (int i = 0; i < 200; ++i) {
    Labels y{0, static_cast<std::uint8_t>(i % 2), static_cast<std::uint8_t>(1 - i % 2)};
    ds.samples.push_back({"s" + std::to_string(i), {0.0}, y, y});
  }
  refresh_manifest(ds);
  const Dataset masked = mask_labels(ds, 0.99, 5);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(masked.samples[i].y_obs, ds.samples[i].y_obs);
  }
}

// log P(X = k) for X ~ Binomial(n, p).
double log_binom_pmf(long n, long k, double p) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
         k * std::log(p) + (n - k) * std::log1p(-p);
}

TEST(MaskLabels, BinomialConcentration) {
  // Exact tail mass outside [5700, 6300] for Binomial(10000, 0.6).
  double outside = 0.0;
  for (long k = 0; k <= 10000; ++k) {
    if (k < 5700 || k > 6300) outside += std::exp(log_binom_pmf(10000, k, 0.6));
  }
  ASSERT_LT(outside, 1e-3);

  // 1000 samples with 10 positives each; the keep-one rule fires with
  // probability 0.4^10 per sample and cannot move the total materially.
  Dataset ds;
  ds.manifest.num_classes = 10;
  ds.manifest.dim = 1;
  for (int i = 0; i < 1000; ++i) {
    Labels y(10, 1);
    ds.samples.push_back({"s" + std::to_string(i), {0.0}, y, y});
  }
  refresh_manifest(ds);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset masked = mask_labels(ds, 0.4, seed);
    const long kept = std::accumulate(masked.manifest.class_counts.begin(),
                                      masked.manifest.class_counts.end(), 0L);
    EXPECT_GE(kept, 5700);
    EXPECT_LE(kept, 6300);
  }
}

TEST(MaskLabels, RejectsBadRate) {
  const Dataset ds = generate_synthetic(small_spec());
  EXPECT_THROW(mask_labels(ds, 1.0, 1), ValidationError);
  EXPECT_THROW(mask_labels(ds, -0.1, 1), ValidationError);
}

TEST(ShotGroups, PaperThresholds) {
  EXPECT_EQ(shot_group_for(150), ShotGroup::kMany);
  EXPECT_EQ(shot_group_for(101), ShotGroup::kMany);
  EXPECT_EQ(shot_group_for(100), ShotGroup::kMedium);
  EXPECT_EQ(shot_group_for(20), ShotGroup::kMedium);
  EXPECT_EQ(shot_group_for(19), ShotGroup::kFew);
  EXPECT_EQ(shot_group_for(0), ShotGroup::kFew);
}

TEST(ShotGroups, PermutationEquivariant) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<long> counts(12);
    for (auto& c : counts) c = static_cast<long>(rng.below(300));
    std::vector<std::size_t> perm(counts.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<long> permuted(counts.size());
    for (std::size_t i = 0; i < perm.size(); ++i) permuted[i] = counts[perm[i]];
    const auto g = assign_shot_groups(counts);
    const auto gp = assign_shot_groups(permuted);
    for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(gp[i], g[perm[i]]);
  }
}

Dataset three_samples() {
  Dataset ds;
  ds.manifest.num_classes = 3;
  ds.manifest.dim = 2;
  ds.manifest.missing_rate = 0.25;
  ds.manifest.seed = 9;
  ds.samples.push_back({"a", {0.1, -1.0 / 3.0}, {1, 0, 0}, Labels{1, 1, 0}});
  ds.samples.push_back({"b", {1e-300, 2.5e10}, {0, 1, 0}, Labels{0, 1, 0}});
  ds.samples.push_back({"c", {0.0, 3.141592653589793}, {0, 0, 1}, std::nullopt});
  refresh_manifest(ds);
  return ds;
}

TEST(DatasetIo, RoundTripIsByteIdentical) {
  const auto dir = testing::scratch_dir();
  const Dataset ds = three_samples();
  save_dataset(ds, dir / "a.jsonl");
  const Dataset back = load_dataset(dir / "a.jsonl");
  EXPECT_EQ(back, ds);
  save_dataset(back, dir / "b.jsonl");
  EXPECT_EQ(testing::slurp(dir / "a.jsonl"), testing::slurp(dir / "b.jsonl"));
  EXPECT_EQ(file_fingerprint(dir / "a.jsonl"), file_fingerprint(dir / "b.jsonl"));
}

TEST(DatasetIo, HeaderOnlyGivesEmptyDataset) {
  std::istringstream is(R"({"C":4,"d":3,"missing_rate":0.4,"seed":7})" "\n");
  const Dataset ds = read_dataset(is);
  EXPECT_TRUE(ds.samples.empty());
  EXPECT_EQ(ds.manifest.num_classes, 4);
  EXPECT_EQ(ds.manifest.class_counts, (std::vector<long>{0, 0, 0, 0}));
}

void expect_error_mentions(const std::string& text, const std::string& needle) {
  std::istringstream is(text);
  try {
    read_dataset(is);
    FAIL() << "expected ValidationError for: " << text;
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, ErrorsNameLineAndField) {
  const std::string header = R"({"C":2,"d":1,"missing_rate":0,"seed":1})" "\n";
  const std::string ok = R"({"id":"a","x":[1],"y_obs":[1,0]})" "\n";
  expect_error_mentions(header + ok + R"({"id":"b","x":[1],"y_obs":[1,0,0]})" "\n",
                        "line 3: field 'y_obs'");
  expect_error_mentions(header + R"({"id":"a","x":[1,2],"y_obs":[1,0]})" "\n",
                        "line 2: field 'x'");
  expect_error_mentions(header + "{not json\n", "line 2");
  expect_error_mentions(header + R"({"id":"a","x":[1],"y_obs":[1,0],"y_full":[0,0]})" "\n",
                        "line 2: field 'y_full'");
  expect_error_mentions(R"({"C":2,"missing_rate":0,"seed":1})" "\n", "line 1: field 'd'");
}

TEST(Rng, StateRoundTripIncludesSpareNormal) {
  Rng a(99);
  a.normal();  // leaves a spare
  Rng b;
  b.set_state(a.state());
  EXPECT_TRUE(a == b);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
  EXPECT_THROW(b.set_state("garbage"), ValidationError);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[r.below(7)];
  for (int h : hits) EXPECT_GT(h, 800);
}

}  // namespace
}  // namespace pltlab
