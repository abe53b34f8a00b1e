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

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "dpfair/data.hpp"
#include "dpfair/synthetic.hpp"

namespace dpfair {
namespace {

std::vector<Interaction> grid_pairs(std::size_t n) {
  std::vector<Interaction> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({i / 50, i % 50 + 1000 * (i / 50)});
  return v;
}

TEST(Split, HomeAndLivingSizes) {
  const auto parts = split(grid_pairs(100855), 7);
  EXPECT_EQ(parts.train.size(), 80685u);
  EXPECT_EQ(parts.validation.size(), 10085u);
  EXPECT_EQ(parts.test.size(), 10085u);
}

TEST(Split, TenPositivesRecount) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = grid_pairs(10);
    const auto parts = split(in, seed);
    ASSERT_EQ(parts.train.size(), 8u);
    ASSERT_EQ(parts.validation.size(), 1u);
    ASSERT_EQ(parts.test.size(), 1u);
    std::multiset<Interaction> seen;
    for (const auto* p : {&parts.train, &parts.validation, &parts.test})
      seen.insert(p->begin(), p->end());
    EXPECT_EQ(seen, std::multiset<Interaction>(in.begin(), in.end()));
  }
}

TEST(Split, SizesAreFloorOfTenth) {
  for (std::size_t n = 10; n < 400; n += 7) {
    const auto parts = split(grid_pairs(n), n);
    EXPECT_EQ(parts.validation.size(), n / 10) << n;
    EXPECT_EQ(parts.test.size(), n / 10) << n;
    EXPECT_EQ(parts.train.size(), n - 2 * (n / 10)) << n;
  }
}

TEST(Split, Deterministic) {
  const auto a = split(grid_pairs(500), 3), b = split(grid_pairs(500), 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  const auto c = split(grid_pairs(500), 4);
  EXPECT_NE(a.test, c.test);
}

TEST(Split, TooSmallRejected) {
  EXPECT_THROW(split(grid_pairs(9), 0), InvalidInput);
}

TEST(Negatives, OnePerPositiveAndNeverSeen) {
  SyntheticConfig sc;
  sc.seed = 5;
  const Dataset ds = build_dataset(generate_synthetic(sc), FeedbackKind::kImplicit, 5);
  ASSERT_EQ(ds.negatives.size(), ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    EXPECT_EQ(ds.negatives[i].user, ds.train[i].user);
    const auto& h = ds.train_items(ds.negatives[i].user);
    EXPECT_FALSE(std::binary_search(h.begin(), h.end(), ds.negatives[i].item));
  }
}

TEST(Negatives, ForcedChoice) {
  std::vector<Interaction> train;
  for (Index v = 1; v < 6; ++v) train.push_back({0, v});
  const auto neg = sample_negatives(train, 1, 6, 11);
  for (const auto& p : neg) EXPECT_EQ(p.item, 0u);
}

TEST(Negatives, UserWithEveryItemFails) {
  std::vector<Interaction> train{{0, 0}, {0, 1}};
  EXPECT_THROW(sample_negatives(train, 1, 2, 0), StageFailure);
}

TEST(Negatives, UniformChiSquared) {
  const std::size_t n_items = 25;
  const std::vector<Index> seen{2, 3, 5, 7, 11, 13, 17};
  std::vector<Interaction> train;
  for (std::size_t i = 0; i < 10000; ++i) train.push_back({0, seen[i % seen.size()]});
  const auto neg = sample_negatives(train, 1, n_items, 99);
  std::vector<double> count(n_items, 0.0);
  for (const auto& p : neg) ++count[p.item];
  const std::size_t free = n_items - seen.size();
  const double expect = 10000.0 / free;
  double chi2 = 0.0;
  for (Index v = 0; v < n_items; ++v) {
    if (std::binary_search(seen.begin(), seen.end(), v)) {
      EXPECT_EQ(count[v], 0.0);
      continue;
    }
    chi2 += (count[v] - expect) * (count[v] - expect) / expect;
  }
  boost::math::chi_squared dist(static_cast<double>(free - 1));
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.999));
}

TEST(Groups, TopTwentyPercent) {
  const auto g = group_users(std::vector<std::size_t>{1, 9, 3, 8, 2, 4, 5, 6, 0, 7});
  EXPECT_EQ(g.active, (std::vector<Index>{1, 3}));
  EXPECT_EQ(g.inactive.size(), 8u);
}

TEST(Groups, TieAtBoundaryGoesToLowerIndex) {
  const auto g = group_users(std::vector<std::size_t>{3, 5, 1, 5, 5, 0, 0, 0, 0, 0});
  EXPECT_EQ(g.active, (std::vector<Index>{1, 3}));
}

TEST(Groups, HomeAndLivingActiveSize) { EXPECT_EQ(active_group_size(6538), 1308u); }

TEST(Groups, PartitionProperty) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<std::size_t> act(n);
    for (auto& a : act) a = rng() % 6;
    const auto g = group_users(act);
    ASSERT_EQ(g.active.size(), static_cast<std::size_t>(std::ceil(0.2 * n - 1e-12)));
    ASSERT_EQ(g.active.size() + g.inactive.size(), n);
    std::vector<Index> all = g.active;
    all.insert(all.end(), g.inactive.begin(), g.inactive.end());
    std::sort(all.begin(), all.end());
    for (Index u = 0; u < n; ++u) ASSERT_EQ(all[u], u);
    for (Index a : g.active)
      for (Index b : g.inactive) ASSERT_TRUE(act[a] > act[b] || (act[a] == act[b] && a < b));
  }
}

TEST(Groups, InputOrderDoesNotMatter) {
  SyntheticConfig sc;
  sc.seed = 8;
  auto raw = generate_synthetic(sc);
  const Dataset a = build_dataset(raw, FeedbackKind::kImplicit, 8);
  std::mt19937_64 rng(3);
  std::shuffle(raw.begin(), raw.end(), rng);
  const Dataset b = build_dataset(raw, FeedbackKind::kImplicit, 8);
  EXPECT_EQ(group_users(a).active, group_users(b).active);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Stats, KnownSparsityValues) {
  EXPECT_NEAR(sparsity_percent(6538, 3924, 100855), 99.61, 0.005);
  EXPECT_NEAR(sparsity_percent(22363, 12101, 198502), 99.93, 0.005);
  EXPECT_EQ(sparsity_percent(2, 2, 4), 0.0);
}

TEST(Ingest, BinarizesRatingsAboveThree) {
  std::istringstream in(
      "user,item,value,timestamp\n"
      "a,x,5,1\nb,x,3,2\nb,y,4,3\nc,z,nan,4\na,y,4.5,5\n"
      "bad line\nb,w,2,6\nc,x,4,7\nd,x,5,\ne,y,5,\nf,z,4,\ng,w,4,\nh,x,5,\ni,y,5,\n");
  std::vector<RejectedRow> rej;
  const auto raw = read_interactions(in, &rej);
  EXPECT_EQ(raw_stats(raw).interactions + rej.size(), 14u);
  const Dataset ds = build_dataset(raw, FeedbackKind::kExplicitRating, 0, &rej);
  EXPECT_EQ(rej.size(), 2u);  // "bad line" and the nan row
  // positives: a-x a-y b-y c-x d-x e-y f-z g-w h-x i-y
  EXPECT_EQ(dataset_stats(ds).interactions, 10u);
  EXPECT_EQ(ds.n_users, 9u);
  EXPECT_EQ(ds.n_items, 4u);
  EXPECT_EQ(ds.user_keys.front(), "a");
}

TEST(Ingest, HeaderRequired) {
  std::istringstream in("a,x,5\n");
  EXPECT_THROW(read_interactions(in), InvalidInput);
}

TEST(Ingest, AmazonJsonLines) {
  std::istringstream in(
      R"({"reviewerID":"u1","asin":"b1","overall":5.0,"unixReviewTime":10})"
      "\n"
      R"({"reviewerID":"u2","asin":"b1"})"
      "\n");
  std::vector<RejectedRow> rej;
  const auto raw = read_interactions(in, &rej);
  ASSERT_EQ(raw.size(), 1u);
  EXPECT_EQ(raw[0].user_key, "u1");
  EXPECT_EQ(*raw[0].timestamp, 10);
  EXPECT_EQ(rej.size(), 1u);
}

TEST(Ingest, SameSeedByteIdentical) {
  SyntheticConfig sc;
  sc.seed = 2;
  const auto raw = generate_synthetic(sc);
  EXPECT_EQ(to_json(build_dataset(raw, FeedbackKind::kImplicit, 4)).dump(),
            to_json(build_dataset(raw, FeedbackKind::kImplicit, 4)).dump());
}

TEST(Ingest, BundleRoundTrip) {
  SyntheticConfig sc;
  sc.seed = 6;
  const Dataset ds = build_dataset(generate_synthetic(sc), FeedbackKind::kImplicit, 6);
  const Dataset back = dataset_from_json(to_json(ds));
  EXPECT_EQ(to_json(back).dump(), to_json(ds).dump());
  EXPECT_EQ(back.test_items(3), ds.test_items(3));
}

TEST(Synthetic, ActivitySkew) {
  SyntheticConfig sc;
  sc.seed = 1;
  const auto raw = generate_synthetic(sc);
  const auto st = raw_stats(raw);
  EXPECT_EQ(st.users, sc.users);
  EXPECT_EQ(st.items, sc.items);
  const Dataset ds = build_dataset(raw, FeedbackKind::kImplicit, 1);
  const auto g = group_users(ds);
  std::vector<double> n(ds.n_users, 0.0);
  for (const auto& p : ds.train) ++n[p.user];
  double a = 0, b = 0;
  for (Index u : g.active) a += n[u];
  for (Index u : g.inactive) b += n[u];
  a /= g.active.size();
  b /= g.inactive.size();
  EXPECT_GT(a / b, 3.5);
}

}  // namespace
}  // namespace dpfair
