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

#include <gtest/gtest.h>

#include "dpfair/metrics.hpp"
#include "oracles.hpp"

namespace dpfair {
namespace {

using V = std::vector<Index>;

TEST(Ndcg, Examples) {
  EXPECT_EQ(*ndcg_at_k(V{7, 1, 2}, V{7}, 3), 1.0);
  EXPECT_NEAR(*ndcg_at_k(V{1, 7, 2}, V{7}, 3), 0.63093, 1e-5);
  EXPECT_EQ(*ndcg_at_k(V{1, 2, 3, 7}, V{7}, 3), 0.0);
  EXPECT_FALSE(ndcg_at_k(V{1, 2}, V{}, 2).has_value());
  EXPECT_THROW(ndcg_at_k(V{1}, V{1}, 0), InvalidInput);
}

TEST(F1, Examples) {
  EXPECT_EQ(*f1_at_k(V{1, 2, 3}, V{1, 2, 3}, 3), 1.0);
  EXPECT_EQ(*f1_at_k(V{4, 5, 6}, V{1, 2, 3}, 3), 0.0);
  // k = 10, |T| = 5, 3 hits
  V list{1, 2, 3, 10, 11, 12, 13, 14, 15, 16};
  EXPECT_DOUBLE_EQ(*f1_at_k(list, V{1, 2, 3, 4, 5}, 10), 0.4);
  EXPECT_FALSE(f1_at_k(list, V{}, 10).has_value());
}

// Every list of length <= 6 drawn from a 6-item catalog, every nonempty
// relevant set, every k.
TEST(Metrics, ExhaustiveAgainstDefinition) {
  const std::size_t n = 6;
  std::vector<V> lists{{}};
  for (std::size_t len = 1; len <= n; ++len) {
    std::vector<V> next;
    for (const auto& l : lists)
      if (l.size() == len - 1)
        for (Index v = 0; v < n; ++v)
          if (std::find(l.begin(), l.end(), v) == l.end()) {
            next.push_back(l);
            next.back().push_back(v);
          }
    lists.insert(lists.end(), next.begin(), next.end());
  }
  ASSERT_EQ(lists.size(), 1957u);
  std::size_t checked = 0;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    V rel;
    for (Index v = 0; v < n; ++v)
      if (mask >> v & 1) rel.push_back(v);
    for (const auto& l : lists)
      for (std::size_t k = 1; k <= n; ++k) {
        ASSERT_EQ(*ndcg_at_k(l, rel, k), testing::ndcg_by_definition(l, rel, k));
        Rational p(BigInt(0)), r(BigInt(0));
        std::size_t h = 0;
        for (std::size_t i = 0; i < k && i < l.size(); ++i) h += (mask >> l[i] & 1);
        Rational f1 = 0;
        if (h) {
          p = Rational(BigInt(h), BigInt(k));
          r = Rational(BigInt(h), BigInt(rel.size()));
          f1 = 2 * p * r / (p + r);
        }
        ASSERT_EQ(*f1_at_k(l, rel, k), static_cast<double>(f1));
        ASSERT_NEAR(*f1_at_k(l, rel, k), testing::f1_by_definition(l, rel, k), 1e-15);
        ++checked;
      }
  }
  EXPECT_EQ(checked, 63u * 1957u * 6u);
}

TEST(F1, HarmonicMeanIdentityExact) {
  for (std::size_t k = 1; k <= 20; ++k)
    for (std::size_t t = 1; t <= 20; ++t)
      for (std::size_t h = 1; h <= std::min(k, t); ++h) {
        const Rational p{BigInt(h), BigInt(k)}, r{BigInt(h), BigInt(t)};
        ASSERT_EQ(2 * p * r / (p + r), Rational(BigInt(2 * h), BigInt(k + t)));
      }
}

TEST(Metrics, PropertiesOnRandomLists) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 2000; ++rep) {
    V cat(30);
    std::iota(cat.begin(), cat.end(), Index{0});
    std::shuffle(cat.begin(), cat.end(), rng);
    V list(cat.begin(), cat.begin() + 12);
    V rel(cat.begin() + rng() % 10, cat.begin() + 10 + rng() % 10);
    std::sort(rel.begin(), rel.end());
    const std::size_t k = 1 + rng() % 12;
    const double nd = *ndcg_at_k(list, rel, k), f1 = *f1_at_k(list, rel, k);
    ASSERT_GE(nd, 0.0);
    ASSERT_LE(nd, 1.0);
    ASSERT_GE(f1, 0.0);
    ASSERT_LE(f1, 1.0);
    V tail = list;
    std::shuffle(tail.begin() + k, tail.end(), rng);
    ASSERT_EQ(*ndcg_at_k(tail, rel, k), nd);
    V head = list;
    std::shuffle(head.begin(), head.begin() + k, rng);
    ASSERT_EQ(*f1_at_k(head, rel, k), f1);
  }
}

TEST(Metrics, AllTopKRelevant) {
  const V rel{0, 1, 2, 3, 4, 5};
  for (std::size_t k = 1; k <= 6; ++k) {
    EXPECT_EQ(*ndcg_at_k(V{5, 4, 3, 2, 1, 0}, rel, k), 1.0);
    EXPECT_EQ(hits_at_k(V{5, 4, 3, 2, 1, 0}, rel, k), k);
  }
}

UserGroups two_two() { return group_users(std::vector<std::size_t>{9, 1, 8, 2, 0, 0, 0, 0, 0, 0}); }

TEST(Ugf, DirectAveraging) {
  const auto g = two_two();  // A = {0, 2}
  std::vector<std::optional<double>> m(10);
  m[0] = 0.4;
  m[2] = 0.6;
  m[1] = 0.1;
  m[3] = 0.3;
  const auto gm = group_means(m, g);
  EXPECT_NEAR(gm.gap, 0.3, 1e-15);
  EXPECT_NEAR(gm.total, 0.35, 1e-15);
  EXPECT_EQ(gm.n_total, 4u);
  EXPECT_NEAR(ugf(m, g), 0.3, 1e-15);
}

TEST(Ugf, ParitySymmetryShift) {
  const auto g = two_two();
  std::vector<std::optional<double>> m(10, 0.25);
  EXPECT_EQ(ugf(m, g), 0.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 0.5);
  for (auto& x : m) x = u(rng);
  const double base = ugf(m, g);
  auto shifted = m;
  for (auto& x : shifted) *x += 0.25;
  EXPECT_NEAR(ugf(shifted, g), base, 1e-15);
  UserGroups swapped = g;
  std::swap(swapped.active, swapped.inactive);
  swapped.is_active.flip();
  EXPECT_NEAR(ugf(m, swapped), base, 1e-15);
}

TEST(Ugf, EmptyGroupIsAnError) {
  const auto g = two_two();
  std::vector<std::optional<double>> m(10);
  m[1] = 0.5;
  EXPECT_THROW(group_means(m, g), InvalidInput);
}

TEST(Evaluate, SkipsUsersWithoutReference) {
  const auto g = group_users(std::vector<std::size_t>{5, 1, 1, 1, 1});  // A = {0}
  RelevanceLabels labels{"test", {{1}, {2}, {}, {9}, {}}};
  std::vector<V> lists{{1, 3}, {3, 2}, {1, 2}, {4, 5}, {0, 1}};
  const auto reps = evaluate_lists(lists, labels, g, 2);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].metric, "NDCG");
  EXPECT_EQ(reps[1].values.n_total, 3u);
  EXPECT_NEAR(reps[1].values.active, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(reps[1].values.inactive, (2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(reps[0].values.inactive, (1.0 / std::log2(3.0)) / 2.0, 1e-15);
}

}  // namespace
}  // namespace dpfair
