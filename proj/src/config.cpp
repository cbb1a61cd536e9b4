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

#include "pltlab/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pltlab/error.hpp"

namespace pltlab {

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("config: ") + what);
  };
  need(lambda_c >= 0 && lambda_m >= 0 && lambda_b >= 0, "lambda_* must be >= 0");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(epochs >= 0, "epochs must be >= 0");
  need(lr >= 0, "lr must be >= 0");
  for (double d : {lr_decay_head, lr_decay_balanced, lr_decay_tail}) {
    need(d > 0 && d <= 1, "lr decays must lie in (0, 1]");
  }
  need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  need(adam_eps > 0, "adam_eps must be > 0");
  need(tau > 0 && tau < 1, "tau must lie in (0, 1)");
  need(stats_momentum >= 0 && stats_momentum < 1, "stats_momentum must lie in [0, 1)");
  need(warmup_epochs >= 0, "warmup_epochs must be >= 0");
  mfm.validate();
  need(ht_scale >= 0, "ht_scale must be >= 0");
  need(focal_gamma >= 0, "focal_gamma must be >= 0");
  need(alpha > 0, "alpha must be > 0");
  need(mu >= 0 && mu < 1, "mu must lie in [0, 1)");
  for (int h : hidden) need(h > 0, "hidden widths must be positive");
  need(feature_dim > 0, "feature_dim must be > 0");
  need(head_groups >= 1 && feature_dim % head_groups == 0,
       "feature_dim must be divisible by head_groups");
  need(rho > 0, "rho must be > 0");
  need(eta >= 0, "eta must be >= 0");
  need(attention_hidden > 0, "attention_hidden must be > 0");
  need(eval_fraction > 0 && eval_fraction < 1, "eval_fraction must lie in (0, 1)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw UsageError("config key '" + key + "': cannot parse '" + value + "' as " +
                   expected);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  bad_value(key, v, "on/off");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int<int>(key, trim(item)));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class E>
Field enum_field(const std::string& key, E& ref,
                 std::vector<std::pair<std::string, E>> names) {
  return {[&ref, names] {
            for (const auto& [n, e] : names) {
              if (e == ref) return n;
            }
            return std::string("?");
          },
          [&ref, names, key](const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                ref = e;
                return;
              }
            }
            std::string opts;
            for (const auto& [n, e] : names) opts += (opts.empty() ? "" : "|") + n;
            bad_value(key, v, opts);
          }};
}

Field dbl(const std::string& key, double& ref) {
  return {[&ref] { return fmt_double(ref); },
          [&ref, key](const std::string& v) { ref = to_double(key, v); }};
}

template <class Int>
Field integer(const std::string& key, Int& ref) {
  return {[&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = to_int<Int>(key, v); }};
}

Field flag(const std::string& key, bool& ref) {
  return {[&ref] { return std::string(ref ? "on" : "off"); },
          [&ref, key](const std::string& v) { ref = to_bool(key, v); }};
}

// Ordered registry of every configurable key bound to `cfg`.
std::vector<std::pair<std::string, Field>> registry(RunConfig& cfg) {
  auto& t = cfg.train;
  auto& d = cfg.data;
  std::vector<std::pair<std::string, Field>> r;
  auto add = [&r](const std::string& k, Field f) { r.emplace_back(k, std::move(f)); };

  add("C", integer("C", d.synthetic.num_classes));
  add("d", integer("d", d.synthetic.dim));
  add("n_max", integer("n_max", d.synthetic.n_max));
  add("decay", dbl("decay", d.synthetic.decay));
  add("noise", dbl("noise", d.synthetic.noise));
  add("missing_rate", dbl("missing_rate", d.missing_rate));
  add("data_seed", integer("data_seed", d.synthetic.seed));

  add("lambda_c", dbl("lambda_c", t.lambda_c));
  add("lambda_m", dbl("lambda_m", t.lambda_m));
  add("lambda_b", dbl("lambda_b", t.lambda_b));
  add("batch_size", integer("batch_size", t.batch_size));
  add("epochs", integer("epochs", t.epochs));
  add("lr", dbl("lr", t.lr));
  add("lr_decay_head", dbl("lr_decay_head", t.lr_decay_head));
  add("lr_decay_balanced", dbl("lr_decay_balanced", t.lr_decay_balanced));
  add("lr_decay_tail", dbl("lr_decay_tail", t.lr_decay_tail));
  add("beta1", dbl("beta1", t.beta1));
  add("beta2", dbl("beta2", t.beta2));
  add("adam_eps", dbl("adam_eps", t.adam_eps));
  add("tau", dbl("tau", t.tau));
  add("stats_momentum", dbl("stats_momentum", t.stats_momentum));
  add("warmup_epochs", integer("warmup_epochs", t.warmup_epochs));
  add("rlc_distribution",
      enum_field("rlc_distribution", t.rlc_distribution,
                 {{"dynamic", DistributionMode::kDynamic},
                  {"static", DistributionMode::kStatic}}));
  add("correction_source",
      enum_field("correction_source", t.correction_source,
                 {{"balanced", CorrectionSource::kBalanced},
                  {"head", CorrectionSource::kHead}}));
  add("loss", enum_field("loss", t.loss,
                         {{"bce", BaseLoss::kBce},
                          {"focal", BaseLoss::kFocal},
                          {"asl", BaseLoss::kAsl},
                          {"mfm", BaseLoss::kMfm}}));
  add("gamma_pn_pos", dbl("gamma_pn_pos", t.mfm.gamma_pos));
  add("gamma_pn_neg", dbl("gamma_pn_neg", t.mfm.gamma_neg));
  add("w_pos", dbl("w_pos", t.mfm.w_pos));
  add("w_neg", dbl("w_neg", t.mfm.w_neg));
  add("prob_clamp", dbl("prob_clamp", t.mfm.prob_clamp));
  add("ht_scale", dbl("ht_scale", t.ht_scale));
  add("mfm_pn", flag("mfm_pn", t.mfm_pn));
  add("mfm_ht", flag("mfm_ht", t.mfm_ht));
  add("focal_gamma", dbl("focal_gamma", t.focal_gamma));
  add("alpha", dbl("alpha", t.alpha));
  add("mu", dbl("mu", t.mu));
  add("phi", enum_field("phi", t.phi,
                        {{"softmax", FusionActivation::kSoftmax},
                         {"sigmoid", FusionActivation::kSigmoid}}));
  add("teacher_losses", flag("teacher_losses", t.teacher_losses));
  add("rlc", flag("rlc", t.enable_rlc));
  add("mfm", flag("mfm", t.enable_mfm));
  add("htb", flag("htb", t.enable_htb));
  add("hidden", {[&t] {
                   std::string s;
                   for (int h : t.hidden) s += (s.empty() ? "" : ",") + std::to_string(h);
                   return s;
                 },
                 [&t](const std::string& v) { t.hidden = to_int_list("hidden", v); }});
  add("feature_dim", integer("feature_dim", t.feature_dim));
  add("head_groups", integer("head_groups", t.head_groups));
  add("rho", dbl("rho", t.rho));
  add("eta", dbl("eta", t.eta));
  add("attention_hidden", integer("attention_hidden", t.attention_hidden));
  add("eval_fraction", dbl("eval_fraction", t.eval_fraction));
  add("seed", integer("seed", t.seed));
  add("checkpoint_every", integer("checkpoint_every", cfg.checkpoint_every));
  add("exec", enum_field("exec", cfg.exec,
                         {{"serial", ExecPolicy::kSerial},
                          {"openmp", ExecPolicy::kOpenMP}}));
  return r;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) +
                       ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" +
                       key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str());
}

void apply_key_values(RunConfig& cfg, const KeyValues& kv) {
  auto reg = registry(cfg);
  for (const auto& [key, value] : kv) {
    auto it = std::find_if(reg.begin(), reg.end(),
                           [&](const auto& e) { return e.first == key; });
    if (it == reg.end()) throw UsageError("unknown config key '" + key + "'");
    it->second.set(value);
  }
}

KeyValues to_key_values(const RunConfig& cfg) {
  RunConfig copy = cfg;
  KeyValues kv;
  for (const auto& [key, field] : registry(copy)) kv[key] = field.get();
  return kv;
}

KeyValues to_key_values(const TrainConfig& cfg) {
  RunConfig run;
  run.train = cfg;
  KeyValues out = to_key_values(run);
  for (const char* k : {"C", "d", "n_max", "decay", "noise", "missing_rate", "data_seed",
                        "checkpoint_every", "exec"}) {
    out.erase(k);
  }
  return out;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  RunConfig cfg;
  std::vector<std::string> keys;
  for (const auto& e : registry(cfg)) keys.push_back(e.first);
  return keys;
}

}  // namespace pltlab
