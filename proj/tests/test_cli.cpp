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

#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "pltlab/cli.hpp"
#include "pltlab/data.hpp"
#include "pltlab/plotdata.hpp"
#include "pltlab/trainer.hpp"
#include "test_util.hpp"

namespace pltlab {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation run(std::vector<std::string> args) {
  args.insert(args.begin(), "pltlab");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmallNet{
    "--set", "hidden=12",        "--set", "feature_dim=8", "--set", "head_groups=2",
    "--set", "attention_hidden=6", "--set", "batch_size=16", "--set", "warmup_epochs=1",
    "--set", "tau=0.55"};

fs::path build_small(const fs::path& dir, const std::string& mr = "0.4") {
  const fs::path p = dir / "ds.jsonl";
  const auto r = run({"build-dataset", "--C", "5", "--d", "8", "--n-max", "60", "--decay", "0.6",
                      "--missing-rate", mr, "--seed", "3", "--out", p.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  return p;
}

Invocation train(const fs::path& ds, const fs::path& out, std::vector<std::string> extra) {
  std::vector<std::string> a{"train", "--dataset", ds.string(), "--out", out.string()};
  a.insert(a.end(), kSmallNet.begin(), kSmallNet.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return run(a);
}

TEST(Cli, BuildDatasetIsReproducible) {
  const auto dir = testing::scratch_dir();
  const auto a = build_small(dir);
  const std::string first = testing::slurp(a);
  const auto r = run({"build-dataset", "--C", "5", "--d", "8", "--n-max", "60", "--decay", "0.6",
                      "--missing-rate", "0.4", "--seed", "3", "--out", (dir / "b.jsonl").string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(testing::slurp(dir / "b.jsonl"), first);
  EXPECT_NE(r.out.find("shot groups"), std::string::npos);
  EXPECT_EQ(load_dataset(a).manifest.missing_rate, 0.4);
}

TEST(Cli, ZeroMissingRateKeepsAllLabels) {
  const auto ds = load_dataset(build_small(testing::scratch_dir(), "0"));
  for (const auto& s : ds.samples) EXPECT_EQ(s.y_obs, *s.y_full);
}

TEST(Cli, DisablingRlcAndHtbLeavesOnlyMfm) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  const auto r = train(ds, dir / "run", {"--disable", "rlc", "--disable", "htb", "--epochs", "3",
                                         "--set", "lambda_m=0.6"});
  ASSERT_EQ(r.code, 0) << r.err;
  const CsvTable t = read_csv(dir / "run" / "epochs.csv");
  ASSERT_EQ(t.rows.size(), 3u);
  const auto total = t.numbers("loss_total");
  const auto rlc = t.numbers("loss_rlc");
  const auto mfm = t.numbers("loss_mfm");
  const auto htb = t.numbers("loss_htb");
  for (std::size_t i = 0; i < total.size(); ++i) {
    EXPECT_EQ(*rlc[i], 0.0);
    EXPECT_EQ(*htb[i], 0.0);
    EXPECT_NEAR(*total[i], 0.6 * *mfm[i], 1e-12);
  }
  const std::string cfg = testing::slurp(dir / "run" / "config.txt");
  EXPECT_NE(cfg.find("rlc = off"), std::string::npos);
  EXPECT_NE(cfg.find("htb = off"), std::string::npos);
}

TEST(Cli, ZeroEpochRunIsSelfDescribing) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  const auto r = train(ds, dir / "run", {"--epochs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "run" / "config.txt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.json"));
  EXPECT_TRUE(read_csv(dir / "run" / "epochs.csv").rows.empty());
  const auto run_json = nlohmann::json::parse(testing::slurp(dir / "run" / "run.json"));
  EXPECT_EQ(run_json.at("dataset_hash"), file_fingerprint(ds));
}

TEST(Cli, RunRootEnvironmentChoosesDefaultDirectory) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  setenv("PLTLAB_RUN_ROOT", (dir / "root").string().c_str(), 1);
  std::vector<std::string> a{"train", "--dataset", ds.string(), "--epochs", "0"};
  const auto r = run(a);
  unsetenv("PLTLAB_RUN_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  int runs = 0;
  for (const auto& e : fs::directory_iterator(dir / "root")) runs += e.is_directory();
  EXPECT_EQ(runs, 1);
}

TEST(Cli, EvalIsRepeatableAndChecksDatasetHash) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  ASSERT_EQ(train(ds, dir / "run", {"--epochs", "2"}).code, 0);
  const auto a = run({"eval", "--run", (dir / "run").string()});
  const auto b = run({"eval", "--run", (dir / "run").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j.at("epoch"), 2);
  EXPECT_TRUE(j.at("metrics").at("map_total").is_number());

  const auto other = dir / "other.jsonl";
  ASSERT_EQ(run({"build-dataset", "--C", "5", "--d", "8", "--n-max", "60", "--decay", "0.6",
                 "--seed", "4", "--out", other.string()})
                .code,
            0);
  const auto bad = run({"eval", "--run", (dir / "run").string(), "--dataset", other.string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("hash"), std::string::npos);

  fs::remove(dir / "run" / "checkpoint.json");
  const auto missing = run({"eval", "--run", (dir / "run").string()});
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.err.find("checkpoint"), std::string::npos);
}

TEST(Cli, PlotDataMatchesCorrectionLog) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  ASSERT_EQ(train(ds, dir / "run", {"--epochs", "3", "--set", "tau=0.3"}).code, 0);
  const auto r = run({"plot-data", "--run", (dir / "run").string(), "--out", (dir / "plots").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* name : {"tp_fp", "model_loss", "map_groups"}) {
    EXPECT_EQ(read_csv(dir / "plots" / (std::string(name) + ".csv")).rows.size(), 3u) << name;
    const std::string svg = testing::slurp(dir / "plots" / (std::string(name) + ".svg"));
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  }
  const CsvTable tpfp = read_csv(dir / "plots" / "tp_fp.csv");
  long tp = 0, fp = 0;
  for (const auto& v : tpfp.numbers("tp")) tp += static_cast<long>(*v);
  for (const auto& v : tpfp.numbers("fp")) fp += static_cast<long>(*v);
  long log_tp = 0, log_fp = 0;
  std::istringstream log(testing::slurp(dir / "run" / "corrections.jsonl"));
  for (std::string line; std::getline(log, line);) {
    const auto rec = correction_from_json(nlohmann::json::parse(line));
    ASSERT_TRUE(rec.true_positive.has_value());
    (*rec.true_positive ? log_tp : log_fp) += 1;
  }
  EXPECT_GT(log_tp + log_fp, 0);
  EXPECT_EQ(tp, log_tp);
  EXPECT_EQ(fp, log_fp);
  EXPECT_EQ(static_cast<long>(*tpfp.numbers("cum_tp").back()), log_tp);
}

TEST(Cli, PlotDataNeedsCheckpoint) {
  const auto dir = testing::scratch_dir();
  fs::create_directories(dir / "empty");
  EXPECT_NE(run({"plot-data", "--run", (dir / "empty").string()}).code, 0);
}

TEST(Cli, GradcheckFilterAndSensitivity) {
  const auto ok = run({"gradcheck", "--component", "mfm", "--instances", "10"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("mfm"), std::string::npos);
  EXPECT_EQ(ok.out.find("focal"), std::string::npos);
  const auto flipped = run({"gradcheck", "--component", "mfm", "--instances", "5", "--inject-sign-flip"});
  EXPECT_EQ(flipped.code, 3);
  EXPECT_NE(flipped.out.find("FAIL"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"build-dataset"}).code, 1);
  EXPECT_EQ(run({"gradcheck", "--component", "nope"}).code, 1);
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  EXPECT_EQ(train(ds, dir / "r1", {"--set", "no_such_key=1"}).code, 1);
  EXPECT_EQ(train(ds, dir / "r2", {"--disable", "attention"}).code, 1);
  EXPECT_EQ(run({"train", "--dataset", ds.string(), "--config", (dir / "none.cfg").string()}).code, 1);
}

TEST(Cli, ValidationErrorsExitTwo) {
  const auto dir = testing::scratch_dir();
  EXPECT_EQ(run({"build-dataset", "--decay", "1.5", "--out", (dir / "x.jsonl").string()}).code, 2);
  const auto ds = build_small(dir);
  EXPECT_EQ(train(ds, dir / "r", {"--set", "tau=1.5"}).code, 2);
  testing::spit(dir / "broken.jsonl", "{not json\n");
  EXPECT_EQ(run({"train", "--dataset", (dir / "broken.jsonl").string(), "--epochs", "0"}).code, 2);
  EXPECT_EQ(run({"train", "--dataset", (dir / "absent.jsonl").string()}).code, 2);
}

TEST(Cli, ResumeContinuesRun) {
  const auto dir = testing::scratch_dir();
  const auto ds = build_small(dir);
  ASSERT_EQ(train(ds, dir / "full", {"--epochs", "4"}).code, 0);
  ASSERT_EQ(train(ds, dir / "part", {"--epochs", "2"}).code, 0);
  const auto r = train(ds, dir / "part",
                       {"--epochs", "4", "--resume", (dir / "part" / "checkpoint.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(testing::slurp(dir / "part" / "epochs.csv"), testing::slurp(dir / "full" / "epochs.csv"));
}

}  // namespace
}  // namespace pltlab
