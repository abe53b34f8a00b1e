// Copyright 2026 The dpfair Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <sstream>

#include <gtest/gtest.h>

#include "dpfair/experiment.hpp"

namespace dpfair {
namespace {

constexpr const char* kSmall = R"(
[data]
synthetic = true
seed = 3
[synthetic]
users = 120
items = 200
[train]
dim = 4
batch = 256
steps = 40
learning_rate = 5
[privacy]
clip = 0.5
epsilon = 2
[rerank]
alpha = 0.5
alpha_mode = relative
)";

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

TEST(Config, ParsesSectionsAndDefaults) {
  const auto c = parse(kSmall);
  EXPECT_TRUE(c.synthetic);
  EXPECT_EQ(c.synth.users, 120u);
  EXPECT_EQ(c.synth.seed, 3u);
  EXPECT_EQ(c.train.seed, 3u);
  EXPECT_EQ(c.train.expected_batch, 256u);
  EXPECT_EQ(*c.train.epsilon_target, 2.0);
  EXPECT_EQ(c.train.bounds.item, 0.5);
  EXPECT_EQ(c.alpha_mode, AlphaMode::kRelative);
  EXPECT_EQ(c.K, 20u);
  EXPECT_EQ(c.k, 10u);
  EXPECT_EQ(c.train.delta_exponent, 1.5);
  EXPECT_EQ(c.dataset_name, "synthetic");
}

TEST(Config, Errors) {
  EXPECT_THROW(parse("[train]\nfrobnicate = 1\n"), InvalidInput);
  EXPECT_THROW(parse("[data]\nsynthetic = true\n[train]\ndim = two\n"), InvalidInput);
  EXPECT_THROW(parse("[data]\nsynthetic = true\n[rerank]\nK = 5\nk = 10\n"), InvalidInput);
  EXPECT_THROW(parse("[data]\nsynthetic = true\n[rerank]\nalpha = -1\n"), InvalidInput);
  EXPECT_THROW(parse("[data]\nsynthetic = true\n[sweep]\nparam = lr\ngrid = 1\n"), InvalidInput);
  EXPECT_THROW(parse("[data\nsynthetic = true\n"), InvalidInput);
  unsetenv("DPFAIR_DATASET");
  EXPECT_THROW(parse("[train]\ndim = 2\n"), InvalidInput);
}

TEST(Config, DatasetPathFromEnvironment) {
  setenv("DPFAIR_DATASET", "/data/ratings.csv", 1);
  const auto c = parse("[train]\ndim = 2\n");
  EXPECT_EQ(c.dataset_path, "/data/ratings.csv");
  unsetenv("DPFAIR_DATASET");
}

TEST(Config, HashTracksContent) {
  const auto a = parse(kSmall), b = parse(kSmall);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto c = a;
  set_config_value(c, "train.steps", "41");
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Experiment, EndToEndSmall) {
  const auto c = parse(kSmall);
  const auto r = run_experiment(c);
  EXPECT_EQ(r.baseline.algorithm, "DP-SGD");
  EXPECT_EQ(r.fair.algorithm, "DP-Fair");
  EXPECT_LE(r.privacy.epsilon, 2.0);
  EXPECT_DOUBLE_EQ(r.alpha_bound, 0.5 * r.baseline_constraint_gap);
  if (r.solver_feasible) {
    EXPECT_LE(r.solver_gap, r.alpha_bound + 1e-9);
  }
  // The constraint is on test F1, which is also the evaluation metric.
  EXPECT_NEAR(r.fair.f1.gap, r.solver_gap, 1e-12);
  EXPECT_NEAR(r.baseline.f1.gap, r.baseline_constraint_gap, 1e-12);
  EXPECT_EQ(run_experiment(c).fair.f1.total, r.fair.f1.total);

  const auto rows = report_rows(r, config_hash(c));
  ASSERT_EQ(rows.size(), 4u);
  std::istringstream hdr(report_header());
  std::vector<std::string> cols;
  for (std::string t; std::getline(hdr, t, '\t');) cols.push_back(t);
  ASSERT_GE(cols.size(), 9u);
  EXPECT_EQ(cols[0], "dataset");
  EXPECT_EQ(cols[8], "gap");
  for (const auto& row : rows)
    EXPECT_EQ(std::count(row.begin(), row.end(), '\t') + 1, static_cast<long>(cols.size()));

  const auto m = RunManifest{config_hash(c), c.seed, {"a"}, {"b"}, r.privacy}.to_json();
  EXPECT_EQ(m["config_hash"], config_hash(c));
  EXPECT_EQ(m["certificate"]["steps"], 40);
}

TEST(Experiment, InfiniteEpsilonIsNonPrivate) {
  auto c = parse(kSmall);
  set_config_value(c, "privacy.epsilon", "inf");
  const auto r = run_experiment(c);
  EXPECT_EQ(r.privacy.noise_multiplier, 0.0);
  EXPECT_TRUE(std::isinf(r.privacy.epsilon));
}

TEST(Sweep, AlphaAndClipGrids) {
  auto c = parse(kSmall);
  const Dataset ds = load_experiment_dataset(c);
  set_config_value(c, "sweep.param", "alpha");
  set_config_value(c, "sweep.grid", "1.0, 0.5, 0.0");
  const auto pts = sweep(ds, c);
  ASSERT_EQ(pts.size(), 3u);
  for (const auto& p : pts) ASSERT_TRUE(p.result) << p.error;
  EXPECT_GE(pts[0].result->solver_objective, pts[1].result->solver_objective);
  EXPECT_GE(pts[1].result->solver_objective, pts[2].result->solver_objective);
  EXPECT_EQ(sweep_rows("alpha", pts).size(), 6u);

  set_config_value(c, "sweep.param", "C");
  c.sweep_grid = {0.1, -1.0};
  const auto cp = sweep(ds, c);
  ASSERT_EQ(cp.size(), 2u);
  EXPECT_TRUE(cp[0].result);
  EXPECT_FALSE(cp[1].result);
  EXPECT_FALSE(cp[1].error.empty());
}

TEST(Experiment, StageFailureWrapsErrors) {
  auto c = parse(kSmall);
  set_config_value(c, "train.batch", "100000");
  EXPECT_THROW(run_experiment(c), InvalidInput);
  set_config_value(c, "train.batch", "256");
  set_config_value(c, "train.learning_rate", "1e306");
  set_config_value(c, "privacy.epsilon", "inf");
  set_config_value(c, "privacy.clip", "inf");
  EXPECT_THROW(run_experiment(c), StageFailure);
}

}  // namespace
}  // namespace dpfair
