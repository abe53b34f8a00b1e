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

// Fairness-constrained re-ranking of top-K candidate lists into top-k lists.
//
// Problem: pick R_u^k (|R_u^k| = k) from each user's candidates to maximize
// the total predicted score subject to
//
//   | mean_{u in A} F1_u - mean_{u in B} F1_u | <= alpha,
//
// where F1_u = 2 h_u / (k + |T_u|) and h_u is the number of reference-relevant
// items picked for u. The 0-1 program over K x n_users binaries is solved
// exactly through its hit-count form:
//
//  * For a fixed h, the best k-subset takes the h highest-scoring relevant and
//    the k - h highest-scoring irrelevant candidates. Its score s_u(h) is
//    concave in h: s_u(h+1) - s_u(h) = r_{h+1} - i_{k-h} with r, i sorted
//    descending.
//  * Users that share (group, |T_u|) share a constraint coefficient, so they
//    are merged into one class whose value g_c(H) for H total hits is the
//    greedy merge of the members' increments (exact for concave pieces).
//  * Best-first branch and bound over the class totals H_c. Node bounds are
//    min(sum of unconstrained maxima, Lagrangian bound); constraint checks use
//    exact integer arithmetic on a common denominator.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dpfair/common.hpp"
#include "dpfair/data.hpp"
#include "dpfair/metrics.hpp"
#include "dpfair/train.hpp"

namespace dpfair {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Exact value of a finite double.
inline Rational exact_rational(double x) {
  if (!std::isfinite(x)) throw InvalidInput("cannot convert non-finite value");
  if (x == 0.0) return Rational(0);
  int exp = 0;
  const double mant = std::frexp(x, &exp);  // x = mant * 2^exp, |mant| in [0.5,1)
  const auto m = static_cast<long long>(std::ldexp(mant, 53));
  exp -= 53;
  Rational r{BigInt(m)};
  if (exp > 0) {
    r *= Rational(BigInt(1) << exp);
  } else if (exp < 0) {
    r /= Rational(BigInt(1) << -exp);
  }
  return r;
}

struct RerankUser {
  Index user = 0;
  bool active = false;
  std::vector<Index> candidates;   // R_u^K, normally best first
  std::vector<double> scores;      // predicted score per candidate
  std::vector<bool> relevant;      // candidate is in the reference set T_u
  std::size_t reference_size = 0;  // |T_u|
};

struct RerankInstance {
  std::vector<RerankUser> users;
  double alpha = std::numeric_limits<double>::infinity();
  std::size_t k = 10;

  std::size_t active_count() const {
    return std::count_if(users.begin(), users.end(),
                         [](const RerankUser& u) { return u.active; });
  }
  std::size_t inactive_count() const { return users.size() - active_count(); }

  void validate() const {
    if (k == 0) throw InvalidInput("k must be >= 1");
    if (std::isnan(alpha) || alpha < 0)
      throw InvalidInput("alpha must be nonnegative");
    for (const auto& u : users) {
      const std::size_t K = u.candidates.size();
      if (u.scores.size() != K || u.relevant.size() != K)
        throw InvalidInput("user " + std::to_string(u.user) +
                           ": candidate, score and relevance lengths differ");
      if (K < k)
        throw InvalidInput("user " + std::to_string(u.user) + " has " +
                           std::to_string(K) + " candidates, fewer than k");
      auto sorted = u.candidates;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw InvalidInput("user " + std::to_string(u.user) +
                           " has duplicate candidates");
      if (!std::all_of(u.scores.begin(), u.scores.end(),
                       [](double s) { return std::isfinite(s); }))
        throw InvalidInput("non-finite candidate score");
      const auto rel = std::count(u.relevant.begin(), u.relevant.end(), true);
      if (static_cast<std::size_t>(rel) > u.reference_size)
        throw InvalidInput("user " + std::to_string(u.user) +
                           " has more relevant candidates than |T_u|");
    }
  }
};

// s_u(h) for every feasible hit count of one user, with the subsets that
// realize them.
struct UserProfile {
  std::size_t h_min = 0;
  std::size_t h_max = 0;  // min(k, #relevant candidates)
  std::size_t h_unconstrained = 0;
  std::vector<double> sums;        // s(h), h in [h_min, h_max]
  std::vector<double> increments;  // r_{h+1} - i_{k-h}, nonincreasing
  std::vector<std::size_t> relevant_rank;    // positions, best first
  std::vector<std::size_t> irrelevant_rank;  // positions, best first

  bool has(std::size_t h) const { return h >= h_min && h <= h_max; }
  double value(std::size_t h) const {
    if (!has(h)) throw InvalidInput("hit count outside the profile domain");
    return sums[h - h_min];
  }
};

using HitProfile = std::vector<UserProfile>;

namespace internal {

inline std::vector<std::size_t> rank_positions(const RerankUser& u,
                                               bool relevant) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < u.candidates.size(); ++i)
    if (u.relevant[i] == relevant) pos.push_back(i);
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    return u.scores[a] > u.scores[b];
  });
  return pos;
}

// Chosen positions in output order: score descending, then list position.
inline std::vector<std::size_t> order_positions(const RerankUser& u,
                                                std::vector<std::size_t> pos) {
  std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    return u.scores[a] > u.scores[b] || (u.scores[a] == u.scores[b] && a < b);
  });
  return pos;
}

// Sum of the selected scores in ascending list position. Every objective in
// this file goes through this function so equal selections give equal bits.
inline double selection_score(const RerankUser& u,
                              std::vector<std::size_t> pos) {
  std::sort(pos.begin(), pos.end());
  double s = 0.0;
  for (std::size_t p : pos) s += u.scores[p];
  return s;
}

}  // namespace internal

inline std::vector<std::size_t> realize_positions(const RerankUser& u,
                                                  const UserProfile& prof,
                                                  std::size_t h, std::size_t k) {
  if (!prof.has(h)) throw InvalidInput("hit count outside the profile domain");
  std::vector<std::size_t> pos(prof.relevant_rank.begin(),
                               prof.relevant_rank.begin() + h);
  pos.insert(pos.end(), prof.irrelevant_rank.begin(),
             prof.irrelevant_rank.begin() + (k - h));
  return internal::order_positions(u, std::move(pos));
}

inline UserProfile build_profile(const RerankUser& u, std::size_t k) {
  if (u.candidates.size() < k)
    throw InvalidInput("user " + std::to_string(u.user) +
                       " has fewer than k candidates");
  UserProfile p;
  p.relevant_rank = internal::rank_positions(u, true);
  p.irrelevant_rank = internal::rank_positions(u, false);
  const std::size_t n_rel = p.relevant_rank.size();
  const std::size_t n_irr = p.irrelevant_rank.size();
  p.h_max = std::min(k, n_rel);
  p.h_min = n_irr >= k ? 0 : k - n_irr;
  for (std::size_t h = p.h_min; h <= p.h_max; ++h)
    p.sums.push_back(internal::selection_score(u, realize_positions(u, p, h, k)));
  for (std::size_t h = p.h_min; h < p.h_max; ++h)
    p.increments.push_back(u.scores[p.relevant_rank[h]] -
                           u.scores[p.irrelevant_rank[k - h - 1]]);
  // Hits of the plain top-k by (score desc, position asc).
  std::vector<std::size_t> all(u.candidates.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  all = internal::order_positions(u, std::move(all));
  for (std::size_t i = 0; i < k; ++i)
    if (u.relevant[all[i]]) ++p.h_unconstrained;
  return p;
}

inline HitProfile build_profiles(const RerankInstance& inst) {
  inst.validate();
  HitProfile out;
  out.reserve(inst.users.size());
  for (const auto& u : inst.users) out.push_back(build_profile(u, inst.k));
  return out;
}

struct RerankSolution {
  std::vector<std::vector<Index>> lists;  // per instance user, output order
  std::vector<std::size_t> hits;          // per instance user
  double objective = 0.0;
  Rational gap_exact = 0;
  double gap = 0.0;
  bool feasible = true;
  bool optimal = true;  // false only when the node limit was reached
  std::size_t nodes = 0;
};

// Signed mean-F1 difference (active minus inactive) for given hit counts.
// Groups without members contribute zero.
inline Rational signed_f1_gap(const RerankInstance& inst,
                              const std::vector<std::size_t>& hits) {
  const std::size_t na = inst.active_count(), nb = inst.inactive_count();
  Rational a = 0, b = 0;
  for (std::size_t i = 0; i < inst.users.size(); ++i) {
    const auto& u = inst.users[i];
    const Rational f1(BigInt(2 * hits[i]), BigInt(inst.k + u.reference_size));
    (u.active ? a : b) += f1;
  }
  Rational d = 0;
  if (na) d += a / Rational(BigInt(na));
  if (nb) d -= b / Rational(BigInt(nb));
  return d;
}

// Recomputes the F1 gap from chosen item sets.
inline Rational audit_gap(const RerankInstance& inst,
                          const std::vector<std::vector<Index>>& lists) {
  std::vector<std::size_t> hits(inst.users.size(), 0);
  for (std::size_t i = 0; i < inst.users.size(); ++i) {
    const auto& u = inst.users[i];
    for (Index item : lists.at(i)) {
      const auto it = std::find(u.candidates.begin(), u.candidates.end(), item);
      if (it == u.candidates.end())
        throw InvalidInput("list contains an item outside the candidates");
      if (u.relevant[it - u.candidates.begin()]) ++hits[i];
    }
  }
  return abs(signed_f1_gap(inst, hits));
}

namespace internal {

struct RerankClass {
  bool active = false;
  std::size_t reference_size = 0;
  std::vector<std::size_t> members;  // instance user positions
  std::size_t lo = 0, hi = 0;        // range of total hits
  std::size_t unconstrained = 0;
  double base = 0.0;                 // sum of member s_u(h_min)
  std::vector<double> inc;           // merged increments, descending
  std::vector<double> prefix;        // prefix[j] = inc[0] + ... + inc[j-1]
  std::vector<std::size_t> owner;    // member (user position) per increment
  BigInt coef;                       // scaled signed constraint coefficient
  double coef_d = 0.0;               // same, unscaled, as double

  double g(std::size_t H) const { return base + prefix[H - lo]; }
  double best() const { return g(unconstrained); }
  // max_H g(H) - mu coef_d H
  double lagrange(double mu) const {
    const double t = mu * coef_d;
    const auto it = std::partition_point(inc.begin(), inc.end(),
                                         [&](double d) { return d > t; });
    const std::size_t j = it - inc.begin();
    return base + prefix[j] - t * static_cast<double>(lo + j);
  }
};

struct RerankProblem {
  const RerankInstance* inst = nullptr;
  const HitProfile* prof = nullptr;
  std::vector<RerankClass> classes;  // in branching order
  BigInt scale;                      // common denominator S

  std::vector<double> suffix_best;
  std::vector<BigInt> suffix_min_x, suffix_max_x;
  double max_ratio = 1.0;

  std::vector<std::size_t> expand(const std::vector<std::size_t>& H) const {
    std::vector<std::size_t> hits(inst->users.size(), 0);
    for (std::size_t i = 0; i < inst->users.size(); ++i)
      hits[i] = (*prof)[i].h_min;
    for (std::size_t c = 0; c < classes.size(); ++c)
      for (std::size_t j = 0; j < H[c] - classes[c].lo; ++j)
        ++hits[classes[c].owner[j]];
    return hits;
  }
  BigInt scaled_x(const std::vector<std::size_t>& H) const {
    BigInt x = 0;
    for (std::size_t c = 0; c < classes.size(); ++c)
      x += classes[c].coef * static_cast<unsigned long long>(H[c]);
    return x;
  }
};

inline RerankProblem make_problem(const RerankInstance& inst,
                                  const HitProfile& prof) {
  RerankProblem P;
  P.inst = &inst;
  P.prof = &prof;
  const std::size_t na = inst.active_count(), nb = inst.inactive_count();
  std::map<std::pair<bool, std::size_t>, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < inst.users.size(); ++i) {
    by_key[{inst.users[i].active, inst.users[i].reference_size}].push_back(i);
  }
  P.scale = 1;
  for (const auto& [key, members] : by_key) {
    const std::size_t denom = (key.first ? na : nb) * (inst.k + key.second);
    P.scale = boost::multiprecision::lcm(P.scale, BigInt(denom));
  }
  for (const auto& [key, members] : by_key) {
    RerankClass c;
    c.active = key.first;
    c.reference_size = key.second;
    c.members = members;
    struct Step {
      double value;
      std::size_t user;
      std::size_t h;
    };
    std::vector<Step> steps;
    for (std::size_t i : members) {
      const auto& p = prof[i];
      c.lo += p.h_min;
      c.hi += p.h_max;
      c.unconstrained += p.h_unconstrained;
      c.base += p.sums.front();
      for (std::size_t j = 0; j < p.increments.size(); ++j)
        steps.push_back({p.increments[j], i, j});
    }
    std::sort(steps.begin(), steps.end(), [](const Step& a, const Step& b) {
      if (a.value != b.value) return a.value > b.value;
      if (a.user != b.user) return a.user < b.user;
      return a.h < b.h;
    });
    c.prefix.push_back(0.0);
    for (const auto& s : steps) {
      c.inc.push_back(s.value);
      c.owner.push_back(s.user);
      c.prefix.push_back(c.prefix.back() + s.value);
    }
    // The greedy prefix with the same hit total is at least as good as the
    // users' individual top-k choices.
    const std::size_t group = c.active ? na : nb;
    const std::size_t denom = group * (inst.k + c.reference_size);
    c.coef = P.scale * 2 / denom;
    if (!c.active) c.coef = -c.coef;
    c.coef_d = (c.active ? 2.0 : -2.0) / static_cast<double>(denom);
    P.classes.push_back(std::move(c));
  }
  // Branch on the classes with the widest constraint swing first.
  std::stable_sort(P.classes.begin(), P.classes.end(),
                   [](const RerankClass& a, const RerankClass& b) {
                     return std::abs(a.coef_d) * (a.hi - a.lo) >
                            std::abs(b.coef_d) * (b.hi - b.lo);
                   });
  const std::size_t n = P.classes.size();
  P.suffix_best.assign(n + 1, 0.0);
  P.suffix_min_x.assign(n + 1, 0);
  P.suffix_max_x.assign(n + 1, 0);
  for (std::size_t i = n; i-- > 0;) {
    const auto& c = P.classes[i];
    P.suffix_best[i] = P.suffix_best[i + 1] + c.best();
    const BigInt a = c.coef * static_cast<unsigned long long>(c.lo);
    const BigInt b = c.coef * static_cast<unsigned long long>(c.hi);
    P.suffix_min_x[i] = P.suffix_min_x[i + 1] + (a < b ? a : b);
    P.suffix_max_x[i] = P.suffix_max_x[i + 1] + (a < b ? b : a);
    for (double d : c.inc)
      P.max_ratio = std::max(P.max_ratio, std::abs(d / c.coef_d));
  }
  return P;
}

// |X| * den <= num, with X the scaled signed gap.
struct GapLimit {
  BigInt num;  // already multiplied by the scale
  BigInt den;
  double as_double = 0.0;  // unscaled alpha

  bool admits(const BigInt& x) const { return abs(x) * den <= num; }
  bool interval_admits(const BigInt& lo, const BigInt& hi) const {
    return lo * den <= num && hi * den >= -num;
  }
};

struct SearchOutcome {
  std::optional<std::vector<std::size_t>> best_h;  // per class
  double value = -std::numeric_limits<double>::infinity();
  std::size_t nodes = 0;
  bool complete = true;
};

struct Incumbent {
  std::vector<std::size_t> H;
  std::vector<std::size_t> hits;
  double value = -std::numeric_limits<double>::infinity();  // search value
  double canonical = -std::numeric_limits<double>::infinity();
  std::size_t deviation = 0;
  std::vector<std::vector<Index>> items;
};

inline double canonical_objective(const RerankInstance& inst,
                                  const HitProfile& prof,
                                  const std::vector<std::size_t>& hits) {
  double total = 0.0;
  for (std::size_t i = 0; i < inst.users.size(); ++i)
    total += prof[i].value(hits[i]);
  return total;
}

inline std::vector<std::vector<Index>> realize_all(
    const RerankInstance& inst, const HitProfile& prof,
    const std::vector<std::size_t>& hits) {
  std::vector<std::vector<Index>> lists(inst.users.size());
  for (std::size_t i = 0; i < inst.users.size(); ++i)
    for (std::size_t p : realize_positions(inst.users[i], prof[i], hits[i], inst.k))
      lists[i].push_back(inst.users[i].candidates[p]);
  return lists;
}

inline std::size_t deviation(const HitProfile& prof,
                             const std::vector<std::size_t>& hits) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < hits.size(); ++i)
    d += hits[i] > prof[i].h_unconstrained ? hits[i] - prof[i].h_unconstrained
                                           : prof[i].h_unconstrained - hits[i];
  return d;
}

inline Incumbent make_incumbent(const RerankProblem& P,
                                std::vector<std::size_t> H, double value) {
  Incumbent inc;
  inc.H = std::move(H);
  inc.value = value;
  inc.hits = P.expand(inc.H);
  inc.canonical = canonical_objective(*P.inst, *P.prof, inc.hits);
  inc.deviation = deviation(*P.prof, inc.hits);
  return inc;
}

// Deterministic preference among optimal solutions: higher objective, then
// smaller total deviation from the unconstrained hit counts, then
// lexicographically smaller item lists.
inline bool prefer(Incumbent& cand, Incumbent& cur, const RerankProblem& P) {
  if (cand.canonical != cur.canonical) return cand.canonical > cur.canonical;
  if (cand.deviation != cur.deviation) return cand.deviation < cur.deviation;
  if (cand.items.empty()) cand.items = realize_all(*P.inst, *P.prof, cand.hits);
  if (cur.items.empty()) cur.items = realize_all(*P.inst, *P.prof, cur.hits);
  return cand.items < cur.items;
}

inline double tolerance(double v) { return 1e-9 * std::max(1.0, std::abs(v)); }

// Greedy repair from the unconstrained totals: repeatedly take the move with
// the smallest score loss per unit of gap reduction.
inline std::optional<std::vector<std::size_t>> greedy_feasible(
    const RerankProblem& P, const GapLimit& lim) {
  const std::size_t n = P.classes.size();
  std::vector<std::size_t> H(n);
  for (std::size_t c = 0; c < n; ++c) H[c] = P.classes[c].unconstrained;
  BigInt x = P.scaled_x(H);
  for (std::size_t guard = 0; guard < 1000000; ++guard) {
    if (lim.admits(x)) return H;
    const bool too_high = x > 0;
    double best_ratio = std::numeric_limits<double>::infinity();
    std::size_t best_c = n;
    bool best_up = false;
    for (std::size_t c = 0; c < n; ++c) {
      const auto& cl = P.classes[c];
      // Moving H by +1 changes x by coef; we want x to move toward zero.
      const bool up = too_high ? cl.coef < 0 : cl.coef > 0;
      if (up && H[c] >= cl.hi) continue;
      if (!up && H[c] <= cl.lo) continue;
      const BigInt nx = up ? BigInt(x + cl.coef) : BigInt(x - cl.coef);
      if (!lim.interval_admits(nx, nx) && (too_high ? nx < 0 : nx > 0))
        continue;  // overshoots past the other side
      const double loss = up ? cl.g(H[c]) - cl.g(H[c] + 1)
                             : cl.g(H[c]) - cl.g(H[c] - 1);
      const double ratio = loss / std::abs(cl.coef_d);
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_c = c;
        best_up = up;
      }
    }
    if (best_c == n) return std::nullopt;
    if (best_up) {
      ++H[best_c];
      x += P.classes[best_c].coef;
    } else {
      --H[best_c];
      x -= P.classes[best_c].coef;
    }
  }
  return std::nullopt;
}

inline double lagrangian_bound(const RerankProblem& P, std::size_t depth,
                               double partial, double x_unscaled,
                               double alpha) {
  auto ub = [&](double mu) {
    double s = partial + std::abs(mu) * alpha - mu * x_unscaled;
    for (std::size_t c = depth; c < P.classes.size(); ++c)
      s += P.classes[c].lagrange(mu);
    return s;
  };
  const double span = 2.0 * P.max_ratio + 1.0;
  double lo = -span, hi = span;
  for (int it = 0; it < 80; ++it) {
    const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
    if (ub(m1) <= ub(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return std::min({ub(0.5 * (lo + hi)), ub(0.0)});
}

struct BnbNode {
  std::size_t parent;
  std::size_t depth;
  std::size_t H;
  double partial;
  double bound;
  bool tightened;
  BigInt x;
};

inline std::vector<std::size_t> node_assignment(
    const std::vector<BnbNode>& arena, std::size_t id, std::size_t n) {
  std::vector<std::size_t> H(n, 0);
  while (arena[id].depth > 0) {
    H[arena[id].depth - 1] = arena[id].H;
    id = arena[id].parent;
  }
  return H;
}

inline Incumbent incumbent_from(const RerankProblem& P, std::vector<std::size_t> H) {
  double v = 0.0;
  for (std::size_t c = 0; c < P.classes.size(); ++c) v += P.classes[c].g(H[c]);
  return make_incumbent(P, std::move(H), v);
}

inline std::optional<Incumbent> branch_and_bound(const RerankProblem& P,
                                                 const GapLimit& lim,
                                                 std::size_t max_nodes,
                                                 std::size_t& nodes,
                                                 bool& complete,
                                                 std::optional<Incumbent> best = {}) {
  const std::size_t n = P.classes.size();
  const double scale_d = static_cast<double>(P.scale);
  if (auto g = greedy_feasible(P, lim)) {
    Incumbent cand = incumbent_from(P, std::move(*g));
    if (!best || cand.value > best->value) best = std::move(cand);
  }
  const std::size_t start = nodes;

  std::vector<BnbNode> arena;
  arena.push_back({0, 0, 0, 0.0, P.suffix_best[0], false, BigInt(0)});
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (arena[a].bound != arena[b].bound) return arena[a].bound < arena[b].bound;
    return a > b;  // FIFO among equal bounds
  };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)>
      open(cmp);
  open.push(0);
  complete = true;
  while (!open.empty()) {
    const std::size_t id = open.top();
    open.pop();
    const double cutoff = best ? best->value - tolerance(best->value)
                               : -std::numeric_limits<double>::infinity();
    if (arena[id].bound < cutoff) break;
    if (++nodes - start > max_nodes) {
      complete = false;
      break;
    }
    const std::size_t depth = arena[id].depth;
    if (depth == n) {
      Incumbent cand = make_incumbent(P, node_assignment(arena, id, n),
                                      arena[id].partial);
      if (!best || cand.value > best->value + tolerance(best->value) ||
          (cand.value >= best->value - tolerance(best->value) &&
           prefer(cand, *best, P)))
        best = std::move(cand);
      continue;
    }
    if (!arena[id].tightened) {
      const double lb = lagrangian_bound(
          P, depth, arena[id].partial,
          static_cast<double>(arena[id].x) / scale_d, lim.as_double);
      arena[id].tightened = true;
      if (lb + tolerance(lb) < arena[id].bound) {
        arena[id].bound = lb + tolerance(lb);
        if (arena[id].bound < cutoff) continue;
        if (!open.empty() && arena[id].bound < arena[open.top()].bound) {
          open.push(id);
          continue;
        }
      }
    }
    const auto& cl = P.classes[depth];
    for (std::size_t H = cl.lo; H <= cl.hi; ++H) {
      BigInt x = arena[id].x + cl.coef * static_cast<unsigned long long>(H);
      if (!lim.interval_admits(x + P.suffix_min_x[depth + 1],
                               x + P.suffix_max_x[depth + 1]))
        continue;
      const double partial = arena[id].partial + cl.g(H);
      const double bound = partial + P.suffix_best[depth + 1];
      if (bound < cutoff) continue;
      arena.push_back({id, depth + 1, H, partial, bound, depth + 1 == n,
                       std::move(x)});
      open.push(arena.size() - 1);
    }
  }
  return best;
}

// Smallest achievable |X| (scaled gap) by depth-first search, with the
// assignment attaining it. `complete` is false if the node budget ran out.
struct MinGap {
  BigInt gap;
  std::vector<std::size_t> H;
  bool complete = true;
  std::size_t nodes = 0;
};

inline MinGap min_scaled_gap(const RerankProblem& P, std::size_t max_nodes) {
  const std::size_t n = P.classes.size();
  MinGap out;
  out.gap = abs(P.suffix_min_x[0]) + abs(P.suffix_max_x[0]) + 1;
  std::vector<std::size_t> H(n, 0);
  std::size_t& nodes = out.nodes;
  auto dist = [](const BigInt& lo, const BigInt& hi) -> BigInt {
    if (lo > 0) return lo;
    if (hi < 0) return -hi;
    return BigInt(0);
  };
  auto rec = [&](auto&& self, std::size_t d, const BigInt& x) -> void {
    if (out.gap == 0) return;
    if (++nodes > max_nodes) {
      out.complete = false;
      return;
    }
    if (d == n) {
      if (abs(x) < out.gap) {
        out.gap = abs(x);
        out.H = H;
      }
      return;
    }
    const auto& cl = P.classes[d];
    std::vector<std::pair<BigInt, std::size_t>> kids;
    for (std::size_t h = cl.lo; h <= cl.hi; ++h) {
      BigInt nx = x + cl.coef * static_cast<unsigned long long>(h);
      BigInt lb = dist(nx + P.suffix_min_x[d + 1], nx + P.suffix_max_x[d + 1]);
      if (lb < out.gap) kids.emplace_back(std::move(lb), h);
    }
    // Closest first, then nearest the unconstrained count.
    std::stable_sort(kids.begin(), kids.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      const auto da = a.second > cl.unconstrained ? a.second - cl.unconstrained
                                                  : cl.unconstrained - a.second;
      const auto db = b.second > cl.unconstrained ? b.second - cl.unconstrained
                                                  : cl.unconstrained - b.second;
      return da < db;
    });
    for (auto& [lb, h] : kids) {
      if (lb >= out.gap || !out.complete) break;
      H[d] = h;
      self(self, d + 1, x + cl.coef * static_cast<unsigned long long>(h));
    }
  };
  rec(rec, 0, BigInt(0));
  return out;
}

inline RerankSolution finish(const RerankInstance& inst, const HitProfile& prof,
                             std::vector<std::size_t> hits) {
  RerankSolution sol;
  sol.lists = realize_all(inst, prof, hits);
  sol.objective = canonical_objective(inst, prof, hits);
  sol.gap_exact = abs(signed_f1_gap(inst, hits));
  sol.gap = static_cast<double>(sol.gap_exact);
  sol.hits = std::move(hits);
  return sol;
}

}  // namespace internal

struct SolveOptions {
  std::size_t max_nodes = 5'000'000;
};

// Exact optimum of the fairness-constrained re-ranking program. When no
// selection meets alpha, returns the smallest achievable gap with the best
// score among those, flagged infeasible.
inline RerankSolution solve(const RerankInstance& inst, SolveOptions opt = {}) {
  const HitProfile prof = build_profiles(inst);
  std::vector<std::size_t> unconstrained(inst.users.size());
  for (std::size_t i = 0; i < inst.users.size(); ++i)
    unconstrained[i] = prof[i].h_unconstrained;

  const bool constrained = std::isfinite(inst.alpha) &&
                           inst.active_count() > 0 && inst.inactive_count() > 0;
  if (!constrained) return internal::finish(inst, prof, unconstrained);

  const Rational alpha = exact_rational(inst.alpha);
  if (abs(signed_f1_gap(inst, unconstrained)) <= alpha)
    return internal::finish(inst, prof, unconstrained);

  const internal::RerankProblem P = internal::make_problem(inst, prof);
  internal::GapLimit lim{numerator(alpha) * P.scale, denominator(alpha),
                         inst.alpha};
  std::size_t nodes = 0;
  bool complete = true;
  auto best = internal::branch_and_bound(P, lim, opt.max_nodes, nodes, complete);
  bool feasible = true;
  if (!best) {
    // Nothing within alpha found. Find the smallest reachable gap; if that is
    // within alpha the search above merely ran out of nodes.
    const internal::MinGap mg = internal::min_scaled_gap(P, opt.max_nodes);
    nodes += mg.nodes;
    if (mg.H.empty()) throw StageFailure("rerank", "node limit reached before any solution");
    auto seed = internal::incumbent_from(P, mg.H);
    if (lim.admits(P.scaled_x(mg.H))) {
      best = internal::branch_and_bound(P, lim, opt.max_nodes, nodes, complete,
                                        std::move(seed));
    } else {
      feasible = false;
      if (complete && mg.complete) {
        internal::GapLimit tight{mg.gap, BigInt(1),
                                 static_cast<double>(mg.gap) / static_cast<double>(P.scale)};
        best = internal::branch_and_bound(P, tight, opt.max_nodes, nodes, complete,
                                          std::move(seed));
      } else {
        best = std::move(seed);
        complete = false;
      }
    }
  }
  RerankSolution sol = internal::finish(inst, prof, best->hits);
  sol.feasible = feasible;
  sol.optimal = complete;
  sol.nodes = nodes;
  return sol;
}

// Exhaustive search over every joint k-subset selection. Test oracle for
// solve(); refuses instances with more than 10^6 joint selections.
inline RerankSolution brute_force_solve(const RerankInstance& inst) {
  inst.validate();
  const std::size_t n = inst.users.size();
  const std::size_t k = inst.k;
  struct Subset {
    std::vector<std::size_t> positions;
    double score;
    std::size_t hits;
  };
  std::vector<std::vector<Subset>> subsets(n);
  double joint = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = inst.users[i];
    const std::size_t K = u.candidates.size();
    std::vector<bool> mask(K, false);
    std::fill(mask.begin(), mask.begin() + k, true);
    do {
      Subset s{{}, 0.0, 0};
      for (std::size_t p = 0; p < K; ++p) {
        if (!mask[p]) continue;
        s.positions.push_back(p);
        if (u.relevant[p]) ++s.hits;
      }
      s.score = internal::selection_score(u, s.positions);
      subsets[i].push_back(std::move(s));
    } while (std::prev_permutation(mask.begin(), mask.end()));
    joint *= subsets[i].size();
    if (joint > 1e6) throw InvalidInput("instance too large for brute force");
  }

  // Gap in integer units of 1 / S with S = na * nb * prod-free lcm of (k+t).
  const std::size_t na = inst.active_count(), nb = inst.inactive_count();
  const bool constrained = std::isfinite(inst.alpha) && na > 0 && nb > 0;
  long long S = 1;
  for (const auto& u : inst.users) {
    const long long d = static_cast<long long>((u.active ? na : nb) * (k + u.reference_size));
    S = std::lcm(S, d);
    if (S > (1LL << 40)) throw InvalidInput("instance too large for brute force");
  }
  std::vector<long long> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = inst.users[i];
    const long long d = static_cast<long long>((u.active ? na : nb) * (k + u.reference_size));
    unit[i] = (u.active ? 2 : -2) * (S / d);
  }
  // |x| / S <= alpha  <=>  |x| * den <= num * S
  Rational alpha_r = constrained ? exact_rational(inst.alpha) : Rational(0);

  std::vector<std::size_t> idx(n, 0), best_idx;
  double best_score = -std::numeric_limits<double>::infinity();
  long long best_abs = std::numeric_limits<long long>::max();
  bool best_feasible = false;
  while (true) {
    double score = 0.0;
    long long x = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = subsets[i][idx[i]];
      score += s.score;
      x += unit[i] * static_cast<long long>(s.hits);
    }
    const long long ax = x < 0 ? -x : x;
    const bool feas = !constrained ||
                      Rational(BigInt(ax), BigInt(S)) <= alpha_r;
    bool take = false;
    if (best_idx.empty()) {
      take = true;
    } else if (feas != best_feasible) {
      take = feas;
    } else if (feas) {
      take = score > best_score;
    } else {
      take = ax < best_abs || (ax == best_abs && score > best_score);
    }
    if (take) {
      best_idx = idx;
      best_score = score;
      best_abs = ax;
      best_feasible = feas;
    }
    std::size_t i = 0;
    while (i < n && ++idx[i] == subsets[i].size()) idx[i++] = 0;
    if (i == n) break;
  }

  RerankSolution sol;
  sol.feasible = best_feasible;
  sol.lists.resize(n);
  sol.hits.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = subsets[i][best_idx[i]];
    for (std::size_t p : internal::order_positions(inst.users[i], s.positions))
      sol.lists[i].push_back(inst.users[i].candidates[p]);
    sol.hits[i] = s.hits;
    total += s.score;
  }
  sol.objective = total;
  sol.gap_exact = abs(signed_f1_gap(inst, sol.hits));
  sol.gap = static_cast<double>(sol.gap_exact);
  return sol;
}

// --- instance construction and files ---------------------------------------

// One instance row per user with a candidate list; T_u comes from `labels`.
inline RerankInstance make_instance(const RecLists& lists,
                                    const RelevanceLabels& labels,
                                    const UserGroups& groups, double alpha,
                                    std::size_t k) {
  RerankInstance inst;
  inst.alpha = alpha;
  inst.k = k;
  for (Index u = 0; u < lists.size(); ++u) {
    const auto& ref = labels.items.at(u);
    if (ref.empty()) continue;  // F1 undefined, user kept out of the constraint
    RerankUser r;
    r.user = u;
    r.active = groups.is_active.at(u);
    r.candidates = lists[u].items;
    r.scores = lists[u].scores;
    r.reference_size = ref.size();
    for (Index v : r.candidates)
      r.relevant.push_back(std::binary_search(ref.begin(), ref.end(), v));
    inst.users.push_back(std::move(r));
  }
  return inst;
}

// Per-user lists indexed by user id: the solution's lists for users in
// `inst`, `fallback` for everyone else.
inline std::vector<std::vector<Index>> lists_by_user(
    const RerankInstance& inst, const RerankSolution& sol,
    std::vector<std::vector<Index>> fallback) {
  auto out = std::move(fallback);
  for (std::size_t i = 0; i < inst.users.size(); ++i)
    out.at(inst.users[i].user) = sol.lists[i];
  return out;
}

namespace internal {
template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::ostringstream ss;
  ss.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ',';
    f(ss, v[i]);
  }
  return ss.str();
}
inline std::string format_double(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);  // shortest round trip
  return std::string(buf, r.ptr);
}
}  // namespace internal

// Tab-separated instance file:
//   # dpfair-rerank-instance v1
//   k <TAB> 10
//   alpha <TAB> 0.01          ("inf" for unconstrained)
//   user group ref_size candidates scores relevant
//   3 <TAB> A <TAB> 4 <TAB> 12,5,7 <TAB> 0.9,0.8,0.1 <TAB> 1,0,0
inline void write_instance(std::ostream& out, const RerankInstance& inst) {
  out << "# dpfair-rerank-instance v1\n";
  out << "k\t" << inst.k << '\n';
  out << "alpha\t" << internal::format_double(inst.alpha) << '\n';
  out << "user\tgroup\tref_size\tcandidates\tscores\trelevant\n";
  for (const auto& u : inst.users) {
    out << u.user << '\t' << (u.active ? 'A' : 'B') << '\t' << u.reference_size
        << '\t' << internal::join(u.candidates, [](auto& s, Index v) { s << v; })
        << '\t' << internal::join(u.scores, [](auto& s, double v) {
             s << internal::format_double(v);
           })
        << '\t' << internal::join(u.relevant, [](auto& s, bool b) { s << (b ? 1 : 0); })
        << '\n';
  }
}

inline RerankInstance read_instance(std::istream& in) {
  RerankInstance inst;
  std::string line;
  bool have_k = false, have_alpha = false, header = false;
  auto split_list = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = internal::split_fields(line, '\t');
    if (f.size() == 2 && f[0] == "k") {
      inst.k = std::stoull(f[1]);
      have_k = true;
    } else if (f.size() == 2 && f[0] == "alpha") {
      const auto a = internal::parse_double(f[1]);
      if (!a) throw InvalidInput("bad alpha '" + f[1] + "'");
      inst.alpha = *a;
      have_alpha = true;
    } else if (!f.empty() && f[0] == "user") {
      header = true;
    } else {
      if (!header || f.size() != 6) throw InvalidInput("malformed instance row: " + line);
      RerankUser u;
      u.user = std::stoull(f[0]);
      if (f[1] != "A" && f[1] != "B") throw InvalidInput("group must be A or B");
      u.active = f[1] == "A";
      u.reference_size = std::stoull(f[2]);
      for (const auto& t : split_list(f[3])) u.candidates.push_back(std::stoull(t));
      for (const auto& t : split_list(f[4])) {
        const auto v = internal::parse_double(t);
        if (!v) throw InvalidInput("bad score '" + t + "'");
        u.scores.push_back(*v);
      }
      for (const auto& t : split_list(f[5])) {
        if (t != "0" && t != "1") throw InvalidInput("relevant flags must be 0/1");
        u.relevant.push_back(t == "1");
      }
      inst.users.push_back(std::move(u));
    }
  }
  if (!have_k || !have_alpha) throw InvalidInput("instance needs k and alpha");
  inst.validate();
  return inst;
}

inline void write_solution(std::ostream& out, const RerankInstance& inst,
                           const RerankSolution& sol) {
  out << "# dpfair-rerank-solution v1\n";
  out << "objective\t" << internal::format_double(sol.objective) << '\n';
  out << "gap\t" << internal::format_double(sol.gap) << '\n';
  out << "gap_exact\t" << sol.gap_exact.str() << '\n';
  out << "alpha\t" << internal::format_double(inst.alpha) << '\n';
  out << "feasible\t" << (sol.feasible ? 1 : 0) << '\n';
  out << "optimal\t" << (sol.optimal ? 1 : 0) << '\n';
  out << "nodes\t" << sol.nodes << '\n';
  out << "user\titems\n";
  for (std::size_t i = 0; i < inst.users.size(); ++i)
    out << inst.users[i].user << '\t'
        << internal::join(sol.lists[i], [](auto& s, Index v) { s << v; }) << '\n';
}

// Per-user item lists from a solution file; users absent from the file get
// empty lists.
inline std::vector<std::vector<Index>> read_solution_lists(std::istream& in,
                                                           std::size_t n_users) {
  std::vector<std::vector<Index>> out(n_users);
  std::string line;
  bool body = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = internal::split_fields(line, '\t');
    if (!body) {
      body = !f.empty() && f[0] == "user";
      continue;
    }
    if (f.size() != 2) throw InvalidInput("malformed solution row: " + line);
    const auto u = std::stoull(f[0]);
    if (u >= n_users) throw InvalidInput("solution user out of range");
    std::istringstream ss(f[1]);
    std::string tok;
    while (std::getline(ss, tok, ',')) out[u].push_back(std::stoull(tok));
  }
  if (!body) throw InvalidInput("not a solution file");
  return out;
}

}  // namespace dpfair
