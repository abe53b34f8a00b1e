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

// Synthetic implicit-feedback logs with skewed user activity: a heavy 20% of
// users interacts `activity_ratio` times as often as the rest. Items belong to
// latent taste clusters and carry a Zipf popularity weight.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/data.hpp"

namespace dpfair {

struct SyntheticConfig {
  std::size_t users = 300;
  std::size_t items = 500;
  std::size_t clusters = 10;
  double heavy_fraction = 0.2;
  std::size_t light_interactions = 12;  // mean per light user
  double activity_ratio = 5.0;
  double cluster_affinity = 0.8;  // chance an interaction stays in-cluster
  double zipf_exponent = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (users < 10 || items < 2 || clusters == 0 || clusters > items)
      throw InvalidInput("synthetic: need >= 10 users, >= 2 items, 1..items clusters");
    if (!(heavy_fraction > 0 && heavy_fraction < 1))
      throw InvalidInput("synthetic: heavy_fraction must be in (0, 1)");
    if (!(activity_ratio >= 1)) throw InvalidInput("synthetic: activity_ratio must be >= 1");
    if (!(cluster_affinity >= 0 && cluster_affinity <= 1))
      throw InvalidInput("synthetic: cluster_affinity must be in [0, 1]");
    if (light_interactions == 0) throw InvalidInput("synthetic: light_interactions must be >= 1");
  }
};

inline std::string synthetic_user_key(std::size_t u) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "u%05zu", u);
  return buf;
}

inline std::string synthetic_item_key(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "i%05zu", v);
  return buf;
}

// Keys are zero-padded, so dense indices after ingestion equal the generator's
// own user and item numbers. Every item is used at least once.
inline std::vector<RawInteraction> generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  Rng rng = derive_rng(c.seed, "synthetic");
  const std::size_t heavy = static_cast<std::size_t>(
      std::ceil(c.heavy_fraction * static_cast<double>(c.users)));

  std::vector<std::size_t> item_cluster(c.items);
  std::vector<double> weight(c.items);
  std::vector<std::vector<std::size_t>> members(c.clusters);
  {
    std::vector<std::size_t> perm(c.items);
    for (std::size_t i = 0; i < c.items; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t r = 0; r < c.items; ++r) {
      const std::size_t v = perm[r];
      weight[v] = std::pow(static_cast<double>(r + 1), -c.zipf_exponent);
      item_cluster[v] = v % c.clusters;
      members[v % c.clusters].push_back(v);
    }
  }
  std::discrete_distribution<std::size_t> global(weight.begin(), weight.end());
  std::vector<std::discrete_distribution<std::size_t>> local;
  for (const auto& m : members) {
    std::vector<double> w;
    for (std::size_t v : m) w.push_back(weight[v]);
    local.emplace_back(w.begin(), w.end());
  }

  // Heavy users are a random subset, not the lowest ids.
  std::vector<std::size_t> order(c.users);
  for (std::size_t u = 0; u < c.users; ++u) order[u] = u;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_heavy(c.users, false);
  for (std::size_t i = 0; i < heavy; ++i) is_heavy[order[i]] = true;

  std::uniform_int_distribution<std::size_t> pick_cluster(0, c.clusters - 1);
  std::bernoulli_distribution stay(c.cluster_affinity);
  std::vector<std::set<std::size_t>> chosen(c.users);
  for (std::size_t u = 0; u < c.users; ++u) {
    const double mean = static_cast<double>(c.light_interactions) *
                        (is_heavy[u] ? c.activity_ratio : 1.0);
    std::poisson_distribution<std::size_t> count(mean);
    const std::size_t target =
        std::min<std::size_t>(std::max<std::size_t>(2, count(rng)), c.items / 2);
    const std::size_t home = pick_cluster(rng);
    std::size_t guard = 0;
    while (chosen[u].size() < target && guard++ < 100 * target) {
      const std::size_t v = stay(rng) ? members[home][local[home](rng)]
                                      : global(rng);
      chosen[u].insert(v);
    }
  }
  // Unused items go to a random user so the catalog stays dense.
  std::vector<bool> used(c.items, false);
  for (const auto& s : chosen)
    for (std::size_t v : s) used[v] = true;
  std::uniform_int_distribution<std::size_t> any_user(0, c.users - 1);
  for (std::size_t v = 0; v < c.items; ++v)
    if (!used[v]) chosen[any_user(rng)].insert(v);

  std::vector<RawInteraction> out;
  for (std::size_t u = 0; u < c.users; ++u)
    for (std::size_t v : chosen[u])
      out.push_back({synthetic_user_key(u), synthetic_item_key(v), 1.0, std::nullopt});
  return out;
}

}  // namespace dpfair
