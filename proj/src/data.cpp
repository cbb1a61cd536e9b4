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

#include "pltlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pltlab/error.hpp"
#include "pltlab/rng.hpp"

namespace pltlab {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ShotGroup g) {
  switch (g) {
    case ShotGroup::kMany:
      return "many";
    case ShotGroup::kMedium:
      return "medium";
    case ShotGroup::kFew:
      return "few";
  }
  return "?";
}

std::vector<long> target_class_counts(int num_classes, long n_max,
                                      double decay) {
  if (num_classes < 2) throw ValidationError("C must be >= 2");
  if (n_max < 20) throw ValidationError("n_max must be >= 20");
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ValidationError("decay must lie in (0, 1], got " +
                          std::to_string(decay));
  }
  std::vector<long> counts(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const long raw = std::lround(static_cast<double>(n_max) * std::pow(decay, c));
    if (raw == 0) {
      throw ValidationError("degenerate tail: class " + std::to_string(c) +
                            " has target count round(n_max*decay^" +
                            std::to_string(c) + ") = 0");
    }
    counts[c] = std::max(raw, 3L);
  }
  return counts;
}

namespace {

std::vector<std::vector<double>> make_prototypes(int num_classes, int dim,
                                                 Rng& rng) {
  std::vector<std::vector<double>> protos(num_classes,
                                          std::vector<double>(dim));
  for (int c = 0; c < num_classes; ++c) {
    auto& v = protos[c];
    for (;;) {
      for (auto& e : v) e = rng.normal();
      // Orthogonalise against earlier prototypes while there is room.
      if (c < dim) {
        for (int j = 0; j < c; ++j) {
          const double dot =
              std::inner_product(v.begin(), v.end(), protos[j].begin(), 0.0);
          for (int k = 0; k < dim; ++k) v[k] -= dot * protos[j][k];
        }
      }
      const double norm =
          std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm > 1e-8) {
        for (auto& e : v) e /= norm;
        break;
      }
    }
  }
  return protos;
}

std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.dim < 1) throw ValidationError("d must be >= 1");
  if (!(spec.noise >= 0.0)) throw ValidationError("noise must be >= 0");
  const int C = spec.num_classes;
  const std::vector<long> targets = target_class_counts(C, spec.n_max, spec.decay);

  Rng rng(spec.seed);
  const auto protos = make_prototypes(C, spec.dim, rng);

  std::vector<long> remaining = targets;
  long total_remaining = std::accumulate(remaining.begin(), remaining.end(), 0L);

  Dataset ds;
  ds.manifest.num_classes = C;
  ds.manifest.dim = spec.dim;
  ds.manifest.seed = spec.seed;
  ds.manifest.missing_rate = 0.0;

  while (total_remaining > 0) {
    const int open = static_cast<int>(std::count_if(
        remaining.begin(), remaining.end(), [](long r) { return r > 0; }));
    const int k = std::min<int>(1 + static_cast<int>(rng.below(4)), open);

    Labels y(C, 0);
    long pool = total_remaining;
    for (int pick = 0; pick < k; ++pick) {
      // Weighted draw without replacement over classes still open.
      std::uint64_t ticket = rng.below(static_cast<std::uint64_t>(pool));
      int chosen = -1;
      for (int c = 0; c < C; ++c) {
        if (y[c] || remaining[c] == 0) continue;
        if (ticket < static_cast<std::uint64_t>(remaining[c])) {
          chosen = c;
          break;
        }
        ticket -= remaining[c];
      }
      y[chosen] = 1;
      pool -= remaining[chosen];
    }

    Sample s;
    s.id = sample_id(ds.samples.size());
    s.x.assign(spec.dim, 0.0);
    for (int c = 0; c < C; ++c) {
      if (!y[c]) continue;
      --remaining[c];
      --total_remaining;
      for (int j = 0; j < spec.dim; ++j) s.x[j] += protos[c][j];
    }
    for (int j = 0; j < spec.dim; ++j) s.x[j] += spec.noise * rng.normal();
    s.y_obs = y;
    s.y_full = std::move(y);
    ds.samples.push_back(std::move(s));
  }
  refresh_manifest(ds);
  return ds;
}

Dataset mask_labels(const Dataset& ds, double missing_rate, std::uint64_t seed) {
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
    throw ValidationError("missing_rate must lie in [0, 1), got " +
                          std::to_string(missing_rate));
  }
  Rng rng(seed);
  Dataset out = ds;
  out.manifest.missing_rate = missing_rate;
  for (auto& s : out.samples) {
    if (!s.y_full) {
      throw ValidationError("sample " + s.id + " has no y_full; cannot mask");
    }
    const Labels& full = *s.y_full;
    std::vector<int> positives;
    for (std::size_t c = 0; c < full.size(); ++c) {
      if (full[c]) positives.push_back(static_cast<int>(c));
    }
    Labels obs(full.size(), 0);
    bool any = false;
    for (int c : positives) {
      const bool hide = rng.uniform() < missing_rate;
      if (!hide) {
        obs[c] = 1;
        any = true;
      }
    }
    if (!any && !positives.empty()) {
      obs[positives[rng.below(positives.size())]] = 1;
    }
    s.y_obs = std::move(obs);
  }
  refresh_manifest(out);
  return out;
}

ShotGroup shot_group_for(long count) {
  if (count > 100) return ShotGroup::kMany;
  if (count >= 20) return ShotGroup::kMedium;
  return ShotGroup::kFew;
}

std::vector<ShotGroup> assign_shot_groups(std::span<const long> class_counts) {
  std::vector<ShotGroup> groups;
  groups.reserve(class_counts.size());
  for (long n : class_counts) groups.push_back(shot_group_for(n));
  return groups;
}

std::vector<long> count_observed(std::span<const Sample> samples,
                                 int num_classes) {
  std::vector<long> counts(num_classes, 0);
  for (const auto& s : samples) {
    for (int c = 0; c < num_classes && c < static_cast<int>(s.y_obs.size()); ++c) {
      counts[c] += s.y_obs[c];
    }
  }
  return counts;
}

void refresh_manifest(Dataset& ds) {
  ds.manifest.class_counts = count_observed(ds.samples, ds.manifest.num_classes);
  ds.manifest.shot_groups = assign_shot_groups(ds.manifest.class_counts);
}

namespace {

void check_sample(const Sample& s, int C, int d, const std::string& where) {
  if (static_cast<int>(s.x.size()) != d) {
    throw ValidationError(where + ": field 'x': length " +
                          std::to_string(s.x.size()) + ", expected d=" +
                          std::to_string(d));
  }
  for (double v : s.x) {
    if (!std::isfinite(v)) throw ValidationError(where + ": field 'x': non-finite value");
  }
  if (static_cast<int>(s.y_obs.size()) != C) {
    throw ValidationError(where + ": field 'y_obs': length " +
                          std::to_string(s.y_obs.size()) + ", expected C=" +
                          std::to_string(C));
  }
  if (s.y_full) {
    if (static_cast<int>(s.y_full->size()) != C) {
      throw ValidationError(where + ": field 'y_full': length " +
                            std::to_string(s.y_full->size()) +
                            ", expected C=" + std::to_string(C));
    }
    bool any = false;
    for (int c = 0; c < C; ++c) {
      if (s.y_obs[c] > (*s.y_full)[c]) {
        throw ValidationError(where + ": field 'y_full': class " + std::to_string(c) +
                              " is observed positive but absent from y_full");
      }
      any = any || (*s.y_full)[c];
    }
    if (!any) throw ValidationError(where + ": field 'y_full': no positive class");
  }
}

}  // namespace

void validate(const Dataset& ds) {
  const auto& m = ds.manifest;
  if (m.num_classes < 1) throw ValidationError("manifest: C must be >= 1");
  if (m.dim < 1) throw ValidationError("manifest: d must be >= 1");
  for (const auto& s : ds.samples) {
    check_sample(s, m.num_classes, m.dim, "sample " + s.id);
  }
  if (m.class_counts != count_observed(ds.samples, m.num_classes)) {
    throw ValidationError("manifest: class_counts disagree with y_obs");
  }
}

void write_dataset(const Dataset& ds, std::ostream& os) {
  ordered_json header;
  header["C"] = ds.manifest.num_classes;
  header["d"] = ds.manifest.dim;
  header["missing_rate"] = ds.manifest.missing_rate;
  header["seed"] = ds.manifest.seed;
  os << header.dump() << '\n';
  for (const auto& s : ds.samples) {
    ordered_json row;
    row["id"] = s.id;
    row["x"] = s.x;
    row["y_obs"] = s.y_obs;
    if (s.y_full) row["y_full"] = *s.y_full;
    os << row.dump() << '\n';
  }
}

namespace {

[[noreturn]] void fail_at(std::size_t line, const std::string& field,
                          const std::string& what) {
  throw ValidationError("line " + std::to_string(line) + ": field '" + field +
                        "': " + what);
}

Labels parse_labels(const ordered_json& j, std::size_t line,
                    const std::string& field) {
  if (!j.is_array()) fail_at(line, field, "expected an array of 0/1");
  Labels out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      fail_at(line, field, "entries must be 0 or 1");
    }
    out.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  return out;
}

}  // namespace

Dataset read_dataset(std::istream& is) {
  Dataset ds;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, text)) {
    ++line_no;
    if (text.empty()) {
      if (is.peek() == std::char_traits<char>::eof()) break;
      fail_at(line_no, "<line>", "empty line");
    }
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      fail_at(line_no, "<line>", std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail_at(line_no, "<line>", "expected a JSON object");

    if (!have_header) {
      for (const char* key : {"C", "d", "missing_rate", "seed"}) {
        if (!j.contains(key)) fail_at(line_no, key, "missing in manifest");
      }
      if (!j["C"].is_number_integer() || j["C"].get<long>() < 1) {
        fail_at(line_no, "C", "expected a positive integer");
      }
      if (!j["d"].is_number_integer() || j["d"].get<long>() < 1) {
        fail_at(line_no, "d", "expected a positive integer");
      }
      if (!j["missing_rate"].is_number()) {
        fail_at(line_no, "missing_rate", "expected a number");
      }
      if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) {
        fail_at(line_no, "seed", "expected an integer");
      }
      ds.manifest.num_classes = j["C"].get<int>();
      ds.manifest.dim = j["d"].get<int>();
      ds.manifest.missing_rate = j["missing_rate"].get<double>();
      ds.manifest.seed = j["seed"].get<std::uint64_t>();
      have_header = true;
      continue;
    }

    Sample s;
    if (!j.contains("id") || !j["id"].is_string()) {
      fail_at(line_no, "id", "expected a string");
    }
    s.id = j["id"].get<std::string>();
    if (!j.contains("x") || !j["x"].is_array()) {
      fail_at(line_no, "x", "expected an array of numbers");
    }
    for (const auto& v : j["x"]) {
      if (!v.is_number()) fail_at(line_no, "x", "expected numbers");
      s.x.push_back(v.get<double>());
    }
    if (!j.contains("y_obs")) fail_at(line_no, "y_obs", "missing");
    s.y_obs = parse_labels(j["y_obs"], line_no, "y_obs");
    if (j.contains("y_full")) s.y_full = parse_labels(j["y_full"], line_no, "y_full");

    check_sample(s, ds.manifest.num_classes, ds.manifest.dim,
                 "line " + std::to_string(line_no));
    ds.samples.push_back(std::move(s));
  }
  if (!have_header) throw ValidationError("line 1: field 'C': missing manifest header");
  refresh_manifest(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(ds, os);
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset " + path.string());
  return read_dataset(is);
}

std::string file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace pltlab
