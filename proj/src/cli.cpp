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

#include "pltlab/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "pltlab/config.hpp"
#include "pltlab/data.hpp"
#include "pltlab/error.hpp"
#include "pltlab/eval.hpp"
#include "pltlab/gradcheck.hpp"
#include "pltlab/plotdata.hpp"
#include "pltlab/trainer.hpp"

namespace pltlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kRunRootEnv = "PLTLAB_RUN_ROOT";

struct ConfigSource {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App& cmd, ConfigSource& src) {
  cmd.add_option("--config", src.file, "key=value config file")->check(CLI::ExistingFile);
  cmd.add_option("--set", src.sets, "override one key (key=value), repeatable");
}

RunConfig resolve(const ConfigSource& src) {
  RunConfig rc;
  if (!src.file.empty()) apply_key_values(rc, read_key_values(src.file));
  KeyValues overrides;
  for (const auto& s : src.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError("--set expects key=value, got '" + s + "'");
    }
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  apply_key_values(rc, overrides);
  return rc;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os.flush()) throw IoError("failed writing " + p.string());
}

json read_json(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

fs::path default_run_dir(const KeyValues& kv) {
  const char* root = std::getenv(kRunRootEnv);
  const fs::path base = root != nullptr && *root != '\0' ? fs::path(root) : fs::path("runs");
  // Name runs after their configuration so reruns land in the same place.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : format_key_values(kv)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::ostringstream name;
  name << "run-" << std::hex << std::setw(16) << std::setfill('0') << h;
  return base / name.str();
}

void print_histogram(const Dataset& ds, std::ostream& out) {
  const auto& m = ds.manifest;
  long peak = 1;
  for (long n : m.class_counts) peak = std::max(peak, n);
  out << "samples " << ds.samples.size() << ", C=" << m.num_classes << ", d=" << m.dim
      << ", missing_rate=" << m.missing_rate << "\n";
  int groups[3] = {0, 0, 0};
  for (int c = 0; c < m.num_classes; ++c) {
    const long n = m.class_counts[c];
    const auto g = m.shot_groups[c];
    ++groups[static_cast<int>(g)];
    out << "  class " << std::setw(3) << c << " " << std::setw(6) << n << " "
        << std::setw(6) << to_string(g) << " "
        << std::string(static_cast<std::size_t>(40 * n / peak), '#') << "\n";
  }
  out << "shot groups (observed counts): many " << groups[0] << ", medium " << groups[1]
      << ", few " << groups[2] << "\n";
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  ConfigSource cfg;
  std::optional<int> C, d;
  std::optional<long> n_max;
  std::optional<double> decay, noise, missing_rate;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_build_dataset(const BuildArgs& a, std::ostream& out) {
  RunConfig rc = resolve(a.cfg);
  auto& s = rc.data.synthetic;
  if (a.C) s.num_classes = *a.C;
  if (a.d) s.dim = *a.d;
  if (a.n_max) s.n_max = *a.n_max;
  if (a.decay) s.decay = *a.decay;
  if (a.noise) s.noise = *a.noise;
  if (a.seed) s.seed = *a.seed;
  if (a.missing_rate) rc.data.missing_rate = *a.missing_rate;
  const Dataset ds = mask_labels(generate_synthetic(s), rc.data.missing_rate, s.seed);
  const fs::path path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_dataset(ds, path);
  print_histogram(ds, out);
  out << "wrote " << path.string() << " (" << file_fingerprint(path) << ")\n";
  return 0;
}

struct TrainArgs {
  ConfigSource cfg;
  std::string dataset;
  std::vector<std::string> disable;
  std::optional<std::string> loss;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<int> checkpoint_every;
  std::optional<std::string> exec;
  std::string out;
  std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = resolve(a.cfg);
  KeyValues flags;
  for (const auto& m : a.disable) {
    if (m != "rlc" && m != "mfm" && m != "htb") {
      throw UsageError("--disable expects rlc, mfm or htb, got '" + m + "'");
    }
    flags[m] = "false";
  }
  if (a.loss) flags["loss"] = *a.loss;
  if (a.epochs) flags["epochs"] = std::to_string(*a.epochs);
  if (a.seed) flags["seed"] = std::to_string(*a.seed);
  if (a.checkpoint_every) flags["checkpoint_every"] = std::to_string(*a.checkpoint_every);
  if (a.exec) flags["exec"] = *a.exec;
  apply_key_values(rc, flags);
  rc.train.validate();

  const fs::path ds_path = fs::absolute(a.dataset);
  if (!fs::exists(ds_path)) throw IoError("dataset " + ds_path.string() + " does not exist");
  const Dataset ds = load_dataset(ds_path);
  const KeyValues resolved = to_key_values(rc.train);
  const fs::path run_dir = a.out.empty() ? default_run_dir(resolved) : fs::path(a.out);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.txt", format_key_values(resolved));
  json run;
  run["dataset"] = ds_path.string();
  run["dataset_hash"] = file_fingerprint(ds_path);
  run["manifest"] = {{"C", ds.manifest.num_classes},
                     {"d", ds.manifest.dim},
                     {"missing_rate", ds.manifest.missing_rate},
                     {"seed", ds.manifest.seed},
                     {"class_counts", ds.manifest.class_counts}};
  run["exec"] = std::string(to_string(rc.exec));
  write_text(run_dir / "run.json", run.dump(2) + "\n");

  Trainer trainer(rc.train, ds, rc.exec);
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume);
    out << "resumed from " << a.resume << " at epoch " << trainer.state().epoch << "\n";
  }
  FitOptions opts;
  opts.exec = rc.exec;
  opts.run_dir = run_dir;
  opts.checkpoint_every = rc.checkpoint_every;
  opts.on_epoch = [&](const EpochLog& e) {
    out << "epoch " << e.epoch << "/" << rc.train.epochs << " loss " << e.loss_total
        << " rlc " << e.loss_rlc << " mfm " << e.loss_mfm << " htb " << e.loss_htb
        << " corrections " << e.corrections << " mAP " << e.map_total.value_or(0.0)
        << " few " << e.map_few.value_or(0.0) << "\n";
  };
  continue_fit(trainer, opts);
  out << "run directory " << run_dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string run;
  std::string dataset;
  std::string checkpoint;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path run_dir(a.run);
  const json run = read_json(run_dir / "run.json");
  RunConfig rc;
  apply_key_values(rc, read_key_values(run_dir / "config.txt"));
  const fs::path ds_path =
      a.dataset.empty() ? fs::path(run.at("dataset").get<std::string>()) : fs::path(a.dataset);
  const std::string hash = file_fingerprint(ds_path);
  if (hash != run.at("dataset_hash").get<std::string>()) {
    throw ValidationError("dataset " + ds_path.string() + " has hash " + hash +
                          " but the run was trained on " +
                          run.at("dataset_hash").get<std::string>());
  }
  const fs::path ckpt = a.checkpoint.empty() ? run_dir / "checkpoint.json" : fs::path(a.checkpoint);
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
  const Dataset ds = load_dataset(ds_path);
  Trainer trainer(rc.train, ds, rc.exec);
  trainer.load_checkpoint(ckpt);
  const MetricsReport report = trainer.evaluate();
  if (report.map.excluded > 0) {
    err << "warning: " << report.map.excluded
        << " class(es) without evaluation positives excluded from mAP\n";
  }
  nlohmann::ordered_json j;
  j["epoch"] = trainer.state().epoch;
  j["dataset_hash"] = hash;
  j["metrics"] = to_json(report);
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_text(a.out, text);
  }
  return 0;
}

struct GradcheckArgs {
  std::vector<std::string> components;
  std::optional<int> instances;
  std::optional<std::uint64_t> seed;
  bool inject_sign_flip = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions o;
  if (a.instances) o.instances = *a.instances;
  if (a.seed) o.seed = *a.seed;
  o.inject_sign_flip = a.inject_sign_flip;
  const auto& names = a.components.empty() ? gradcheck_components() : a.components;
  bool ok = true;
  out << std::left << std::setw(11) << "component" << std::setw(11) << "instances"
      << std::setw(14) << "max_rel_err" << std::setw(9) << "tol"
      << "status\n";
  for (const auto& name : names) {
    const ComponentReport r = run_gradcheck(name, o);
    ok = ok && r.pass();
    out << std::left << std::setw(11) << r.name << std::setw(11) << r.instances
        << std::setw(14) << std::scientific << std::setprecision(3) << r.max_rel_err
        << std::setw(9) << std::setprecision(0) << r.tol << std::defaultfloat
        << (r.pass() ? "ok" : "FAIL") << "\n";
  }
  return ok ? 0 : 3;
}

int cmd_plot_data(const std::string& run, const std::string& out_dir, std::ostream& out) {
  const fs::path run_dir(run);
  if (!fs::exists(run_dir / "checkpoint.json")) {
    throw IoError("missing checkpoint " + (run_dir / "checkpoint.json").string());
  }
  const fs::path dest = out_dir.empty() ? run_dir / "plots" : fs::path(out_dir);
  for (const auto& p : emit_plot_data(run_dir, dest).written) out << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training lab for partially labeled long-tailed multi-label data", "pltlab"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* b = app.add_subcommand("build-dataset", "generate and mask a synthetic dataset");
  add_config_options(*b, build.cfg);
  b->add_option("--C", build.C, "number of classes");
  b->add_option("--d", build.d, "feature dimension");
  b->add_option("--n-max", build.n_max, "positives of the most frequent class");
  b->add_option("--decay", build.decay, "geometric count decay per class");
  b->add_option("--noise", build.noise, "feature noise scale");
  b->add_option("--missing-rate", build.missing_rate, "probability of hiding a positive");
  b->add_option("--seed", build.seed, "generator and masking seed");
  b->add_option("--out", build.out, "output JSON-lines file")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train the tri-model and write a run directory");
  add_config_options(*t, train.cfg);
  t->add_option("--dataset", train.dataset, "dataset file")->required();
  t->add_option("--disable", train.disable, "switch off rlc, mfm or htb, repeatable");
  t->add_option("--loss", train.loss, "bce, focal, asl or mfm");
  t->add_option("--epochs", train.epochs, "number of epochs");
  t->add_option("--seed", train.seed, "training seed");
  t->add_option("--checkpoint-every", train.checkpoint_every, "checkpoint cadence in epochs");
  t->add_option("--exec", train.exec, "serial or openmp");
  t->add_option("--out", train.out, "run directory (default $PLTLAB_RUN_ROOT/run-<hash>)");
  t->add_option("--resume", train.resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "recompute metrics from a checkpoint");
  e->add_option("--run", ev.run, "run directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--dataset", ev.dataset, "dataset file (default: the one recorded in the run)");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint (default: <run>/checkpoint.json)");
  e->add_option("--out", ev.out, "write the metrics JSON here instead of stdout");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  g->add_option("--component", gc.components, "restrict to one component, repeatable")
      ->check(CLI::IsMember(gradcheck_components()));
  g->add_option("--instances", gc.instances, "random instances per component");
  g->add_option("--seed", gc.seed, "seed for the random instances");
  g->add_flag("--inject-sign-flip", gc.inject_sign_flip, "negate analytic gradients (harness test)");

  std::string plot_run, plot_out;
  auto* p = app.add_subcommand("plot-data", "emit curve CSV and SVG files for a run");
  p->add_option("--run", plot_run, "run directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", plot_out, "output directory (default: <run>/plots)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "pltlab: " << ex.what() << "\n";
    return 1;
  }

  try {
    if (b->parsed()) return cmd_build_dataset(build, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (g->parsed()) return cmd_gradcheck(gc, out);
    if (p->parsed()) return cmd_plot_data(plot_run, plot_out, out);
  } catch (const Error& ex) {
    err << "pltlab: " << ex.what() << "\n";
    return ex.exit_code();
  } catch (const std::filesystem::filesystem_error& ex) {
    err << "pltlab: " << ex.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& ex) {
    err << "pltlab: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace pltlab
