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

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/data.hpp"

namespace dpfair {

// Per-user relevant items (sorted) together with the split they came from.
struct RelevanceLabels {
  std::string split;
  std::vector<std::vector<Index>> items;

  static RelevanceLabels from(const Dataset& ds, std::string split) {
    return {split, ds.items_of(split)};
  }
};

namespace internal {
inline bool contains(const std::vector<Index>& sorted, Index v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}
}  // namespace internal

// Binary-relevance NDCG@k. std::nullopt means "skip this user" (no relevant
// items to find).
inline std::optional<double> ndcg_at_k(std::span<const Index> list,
                                       const std::vector<Index>& relevant,
                                       std::size_t k) {
  if (k == 0) throw InvalidInput("k must be >= 1");
  if (relevant.empty()) return std::nullopt;
  double dcg = 0.0;
  const std::size_t depth = std::min(k, list.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (internal::contains(relevant, list[i])) dcg += 1.0 / std::log2(i + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(i + 2.0);
  return dcg / idcg;
}

inline std::size_t hits_at_k(std::span<const Index> list,
                             const std::vector<Index>& relevant,
                             std::size_t k) {
  std::size_t h = 0;
  const std::size_t depth = std::min(k, list.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (internal::contains(relevant, list[i])) ++h;
  return h;
}

// F1@k = 2 hits / (k + |T_u|), the harmonic mean of precision hits/k and
// recall hits/|T_u|.
inline std::optional<double> f1_at_k(std::span<const Index> list,
                                     const std::vector<Index>& relevant,
                                     std::size_t k) {
  if (k == 0) throw InvalidInput("k must be >= 1");
  if (relevant.empty()) return std::nullopt;
  const double h = static_cast<double>(hits_at_k(list, relevant, k));
  return 2.0 * h / (static_cast<double>(k) + relevant.size());
}

struct GroupMeans {
  double total = 0.0;
  double active = 0.0;
  double inactive = 0.0;
  double gap = 0.0;
  std::size_t n_total = 0, n_active = 0, n_inactive = 0;
};

// Means of a per-user metric over users with a defined value, split by
// group. Throws if either group has no evaluable user.
inline GroupMeans group_means(const std::vector<std::optional<double>>& metric,
                              const UserGroups& groups) {
  GroupMeans g;
  double sa = 0.0, sb = 0.0;
  for (Index u = 0; u < metric.size(); ++u) {
    if (!metric[u]) continue;
    if (groups.is_active.at(u)) {
      sa += *metric[u];
      ++g.n_active;
    } else {
      sb += *metric[u];
      ++g.n_inactive;
    }
  }
  if (g.n_active == 0 || g.n_inactive == 0)
    throw InvalidInput("user group fairness needs evaluable users in both groups");
  g.n_total = g.n_active + g.n_inactive;
  g.active = sa / g.n_active;
  g.inactive = sb / g.n_inactive;
  g.total = (sa + sb) / g.n_total;
  g.gap = std::abs(g.active - g.inactive);
  return g;
}

// |mean over A - mean over B|
inline double ugf(const std::vector<std::optional<double>>& metric,
                  const UserGroups& groups) {
  return group_means(metric, groups).gap;
}

struct MetricsReport {
  std::string metric;
  GroupMeans values;
};

// NDCG@k and F1@k for every user's list against the given labels.
inline std::vector<MetricsReport> evaluate_lists(
    const std::vector<std::vector<Index>>& lists, const RelevanceLabels& labels,
    const UserGroups& groups, std::size_t k) {
  if (lists.size() != labels.items.size())
    throw InvalidInput("lists and labels cover different user counts");
  std::vector<std::optional<double>> ndcg(lists.size()), f1(lists.size());
  for (Index u = 0; u < lists.size(); ++u) {
    ndcg[u] = ndcg_at_k(lists[u], labels.items[u], k);
    f1[u] = f1_at_k(lists[u], labels.items[u], k);
  }
  return {{"NDCG", group_means(ndcg, groups)}, {"F1", group_means(f1, groups)}};
}

}  // namespace dpfair
