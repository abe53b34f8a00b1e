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

#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "dpfair/synthetic.hpp"
#include "dpfair/train.hpp"
#include "oracles.hpp"

namespace dpfair {
namespace {

Dataset small_synthetic(std::uint64_t seed, std::size_t users = 300) {
  SyntheticConfig sc;
  sc.users = users;
  sc.items = users < 100 ? 80 : 500;
  sc.seed = seed;
  return build_dataset(generate_synthetic(sc), FeedbackKind::kImplicit, seed);
}

TrainConfig base_config() {
  TrainConfig c;
  c.dim = 6;
  c.expected_batch = 128;
  c.steps = 60;
  c.learning_rate = 2.0;
  c.lambda = 0.01;
  c.seed = 17;
  return c;
}

TEST(TrainDp, ZeroNoiseUnboundedIsPlainSgd) {
  const Dataset ds = small_synthetic(3);
  for (ScorerKind kind : {ScorerKind::kMf, ScorerKind::kNeuMf}) {
    TrainConfig c = base_config();
    c.scorer = kind;
    c.bounds = ClipBounds::unbounded();
    c.noise_multiplier = 0.0;
    c.lr_decay = 0.9;
    const auto r = train_dp(ds, c);
    EXPECT_TRUE(r.privacy.non_private());
    EXPECT_TRUE(r.params == testing::plain_sgd(ds, c)) << to_string(kind);
  }
}

TEST(TrainDp, Deterministic) {
  const Dataset ds = small_synthetic(4);
  TrainConfig c = base_config();
  c.epsilon_target = 2.0;
  c.bounds = ClipBounds::uniform(0.5);
  EXPECT_TRUE(train_dp(ds, c).params == train_dp(ds, c).params);
}

TEST(TrainDp, OneStepHandUpdate) {
  Dataset ds;
  ds.n_users = 1;
  ds.n_items = 2;
  ds.user_keys = {"u"};
  ds.item_keys = {"a", "b"};
  ds.train = {{0, 0}};
  ds.negatives = {{0, 1}};
  ds.index();
  TrainConfig c;
  c.dim = 1;
  c.expected_batch = 1;
  c.steps = 1;
  c.learning_rate = 0.5;
  c.bounds = ClipBounds::unbounded();
  c.seed = 8;
  c.delta = 1e-5;  // n = 1 makes the default n^-1.5 degenerate
  const ModelParams p0 = init_params(ScorerKind::kMf, 1, 2, 1, 8);
  const double zu = p0.user_emb[0], zv = p0.item_emb[0], zn = p0.item_emb[1];
  const double s = 1.0 / (1.0 + std::exp(zu * zv - zu * zn));  // sigma(-margin)
  const auto p1 = train_dp(ds, c).params;
  EXPECT_NEAR(p1.user_emb[0], zu - 0.5 * (-s * (zv - zn)), 1e-15);
  EXPECT_NEAR(p1.item_emb[0], zv - 0.5 * (-s * zu), 1e-15);
  EXPECT_NEAR(p1.item_emb[1], zn - 0.5 * (s * zu), 1e-15);
}

TEST(TrainDp, EpsilonMatchesAccountant) {
  const Dataset ds = small_synthetic(5);
  for (ScorerKind kind : {ScorerKind::kMf, ScorerKind::kNeuMf}) {
    TrainConfig c = base_config();
    c.scorer = kind;
    c.epsilon_target = 1.0;
    c.bounds = ClipBounds::uniform(0.3);
    const auto r = train_dp(ds, c);
    const double G = kind == ScorerKind::kMf ? 2.0 : 3.0;
    const double n = static_cast<double>(ds.n());
    EXPECT_EQ(r.privacy.delta, std::pow(n, -1.5));
    EXPECT_LT(r.privacy.delta, 1.0 / n);
    EXPECT_EQ(r.privacy.sampling_rate, c.expected_batch / n);
    EXPECT_EQ(r.privacy.effective_multiplier, r.privacy.noise_multiplier / std::sqrt(G));
    EXPECT_EQ(r.privacy.epsilon,
              rdp_epsilon(r.privacy.effective_multiplier, c.expected_batch / n, c.steps,
                          r.privacy.delta)
                  .epsilon);
    EXPECT_LE(r.privacy.epsilon, 1.0);
    EXPECT_GT(r.privacy.epsilon, 0.95);
  }
}

TEST(TrainDp, NoiseIsOneDrawPerCoordinate) {
  const Dataset ds = small_synthetic(6);
  TrainConfig c = base_config();
  c.steps = 1;
  c.bounds = {0.4, 0.7, 1.0};
  c.noise_multiplier = 1.3;
  TrainConfig quiet = c;
  quiet.noise_multiplier = 0.0;
  const auto noisy = train_dp(ds, c).params;
  const auto clean = train_dp(ds, quiet).params;
  const double step = c.learning_rate / c.expected_batch;

  Rng replay = derive_rng(c.seed, "noise");
  std::normal_distribution<double> nu(0.0, 1.3 * 0.4), nv(0.0, 1.3 * 0.7);
  double s2 = 0.0;
  for (std::size_t i = 0; i < noisy.user_emb.size(); ++i) {
    const double eta = (clean.user_emb[i] - noisy.user_emb[i]) / step;
    const double expect = nu(replay);
    ASSERT_NEAR(eta, expect, 1e-9 * (1 + std::abs(expect)));
    s2 += eta * eta;
  }
  const double var = s2 / noisy.user_emb.size();
  EXPECT_NEAR(var, std::pow(1.3 * 0.4, 2), 0.05 * std::pow(1.3 * 0.4, 2));
  for (std::size_t i = 0; i < noisy.item_emb.size(); ++i) {
    const double eta = (clean.item_emb[i] - noisy.item_emb[i]) / step;
    const double expect = nv(replay);
    ASSERT_NEAR(eta, expect, 1e-9 * (1 + std::abs(expect)));
  }
}

TEST(TrainDp, FullBatchLossNonincreasing) {
  const Dataset ds = small_synthetic(7, 50);
  TrainConfig c = base_config();
  c.expected_batch = ds.n();
  c.steps = 40;
  c.learning_rate = 0.5;
  c.lambda = 0.0;
  c.bounds = ClipBounds::uniform(5.0);
  std::vector<double> losses;
  c.checkpoint_every = 1;
  c.on_checkpoint = [&](std::size_t, const ModelParams& p) {
    losses.push_back(mean_bpr_loss(p, ds, 0.0));
  };
  train_dp(ds, c);
  ASSERT_EQ(losses.size(), 40u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1]);
  EXPECT_LT(losses.back(), std::log(2.0));
}

TEST(TrainDp, LogReportsEpsilonSoFar) {
  const Dataset ds = small_synthetic(8);
  TrainConfig c = base_config();
  c.noise_multiplier = 2.0;
  c.bounds = ClipBounds::uniform(1.0);
  c.log_every = 20;
  const auto r = train_dp(ds, c);
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_LT(r.log[0].epsilon_so_far, r.log[2].epsilon_so_far);
  EXPECT_EQ(r.log[2].epsilon_so_far, r.privacy.epsilon);
}

TEST(TrainDp, Divergence) {
  const Dataset ds = small_synthetic(9);
  TrainConfig c = base_config();
  c.bounds = ClipBounds::unbounded();
  c.learning_rate = 1e306;
  try {
    train_dp(ds, c);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.last_good().all_finite());
    EXPECT_EQ(e.stage(), "train");
  }
}

TEST(TrainDp, ConfigErrors) {
  const Dataset ds = small_synthetic(9);
  TrainConfig c = base_config();
  c.expected_batch = ds.n() + 1;
  EXPECT_THROW(train_dp(ds, c), InvalidInput);
  c = base_config();
  c.noise_multiplier = 1.0;
  c.bounds = ClipBounds::unbounded();
  EXPECT_THROW(train_dp(ds, c), InvalidInput);
}

TEST(SuggestClip, MediansArePositive) {
  const Dataset ds = small_synthetic(10);
  const auto b = suggest_clip_bounds(ds, base_config(), 30);
  EXPECT_GT(b.user, 0.0);
  EXPECT_GT(b.item, 0.0);
  EXPECT_EQ(b.extra, b.item);
}

Dataset catalog(std::size_t n_items) {
  Dataset ds;
  ds.n_users = 1;
  ds.n_items = n_items;
  ds.user_keys = {"u"};
  for (std::size_t v = 0; v < n_items; ++v) ds.item_keys.push_back(std::to_string(v));
  ds.index();
  return ds;
}

TEST(TopK, SortsAndBreaksTies) {
  const Dataset ds = catalog(3);
  ModelParams p(ScorerKind::kMf, 1, 3, 1);
  p.user_emb = {1.0};
  p.item_emb = {0.9, 0.1, 0.5};
  const auto l = top_k_lists(p, ds, 2);
  EXPECT_EQ(l[0].items, (std::vector<Index>{0, 2}));
  EXPECT_EQ(l[0].scores, (std::vector<double>{0.9, 0.5}));
  p.item_emb = {0.3, 0.3, 0.3};
  EXPECT_EQ(top_k_lists(p, ds, 2)[0].items, (std::vector<Index>{0, 1}));
  const auto all = top_k_lists(p, ds, 3)[0].items;
  EXPECT_EQ(std::set<Index>(all.begin(), all.end()).size(), 3u);
  EXPECT_TRUE(top_k_lists(p, ds, 4)[0].short_list);
}

TEST(TopK, ExcludesTrainAndValidation) {
  const Dataset ds = small_synthetic(11);
  const auto p = init_params(ScorerKind::kMf, ds.n_users, ds.n_items, 8, 1);
  const auto lists = top_k_lists(p, ds, 20);
  for (Index u = 0; u < ds.n_users; ++u) {
    const auto& l = lists[u];
    ASSERT_EQ(l.items.size(), 20u);
    EXPECT_EQ(std::set<Index>(l.items.begin(), l.items.end()).size(), 20u);
    for (std::size_t i = 1; i < l.scores.size(); ++i) EXPECT_GE(l.scores[i - 1], l.scores[i]);
    for (Index v : l.items) {
      for (const auto* h : {&ds.train_items(u), &ds.validation_items(u)})
        EXPECT_FALSE(std::binary_search(h->begin(), h->end(), v));
    }
  }
  const auto with_val = top_k_lists(p, ds, 20, false);
  bool any_val = false;
  for (Index u = 0; u < ds.n_users; ++u)
    for (Index v : with_val[u].items) {
      const auto& h = ds.validation_items(u);
      any_val |= std::binary_search(h.begin(), h.end(), v);
    }
  EXPECT_TRUE(any_val);
}

TEST(RecListFile, RoundTrip) {
  const Dataset ds = small_synthetic(12);
  const auto p = init_params(ScorerKind::kMf, ds.n_users, ds.n_items, 4, 2);
  const auto lists = top_k_lists(p, ds, 5);
  std::stringstream s;
  write_rec_lists(s, lists);
  const auto back = read_rec_lists(s);
  ASSERT_EQ(back.size(), lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u) {
    EXPECT_EQ(back[u].items, lists[u].items);
    EXPECT_EQ(back[u].scores, lists[u].scores);
  }
}

}  // namespace
}  // namespace dpfair
