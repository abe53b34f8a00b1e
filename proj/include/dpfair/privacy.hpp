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

// Gradient sanitization (per-group norm clipping and Gaussian noise) and a
// Renyi-DP accountant for the Poisson-subsampled Gaussian mechanism.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/model.hpp"

namespace dpfair {

inline constexpr double kUnboundedClip = std::numeric_limits<double>::infinity();

// One clip norm per parameter group. The extra-parameter bound only matters
// for scorers that have W.
struct ClipBounds {
  double user = 1.0;
  double item = 1.0;
  double extra = 1.0;

  static ClipBounds uniform(double c) { return {c, c, c}; }
  static ClipBounds unbounded() { return uniform(kUnboundedClip); }

  bool is_unbounded() const {
    return std::isinf(user) || std::isinf(item) || std::isinf(extra);
  }
  void validate() const {
    if (!(user > 0) || !(item > 0) || !(extra > 0))
      throw InvalidInput("clip bounds must be positive");
  }
};

struct PrivacySpec {
  double epsilon = std::numeric_limits<double>::infinity();
  double delta = 0.0;
  // Per-group multiplier: sigma_g = noise_multiplier * C_g.
  double noise_multiplier = 0.0;
  // Multiplier charged by the accountant, noise_multiplier / sqrt(groups).
  double effective_multiplier = 0.0;
  std::size_t groups = 2;
  double sampling_rate = 1.0;
  std::size_t steps = 0;
  int optimal_order = 0;

  bool non_private() const { return noise_multiplier == 0.0; }
};

// Rescales g by 1 / max(1, |g|_2 / C).
inline double clip_in_place(std::span<double> g, double bound) {
  const double norm = std::sqrt(squared_norm(g));
  double factor = std::max(1.0, norm / bound);
  if (factor == 1.0) return factor;
  for (auto& x : g) x /= factor;
  // Rounding can leave the result an ulp or two above the bound.
  while (std::sqrt(squared_norm(g)) > bound) {
    factor = std::nextafter(factor, std::numeric_limits<double>::infinity());
    for (auto& x : g) x *= std::nextafter(1.0, 0.0);
  }
  return factor;
}

inline std::vector<double> clip(std::span<const double> g, double bound) {
  if (!(bound > 0)) throw InvalidInput("clip bound must be positive");
  std::vector<double> out(g.begin(), g.end());
  clip_in_place(out, bound);
  return out;
}

inline void add_noise_in_place(std::span<double> g, double sigma, Rng& rng) {
  if (sigma < 0) throw InvalidInput("noise scale must be nonnegative");
  if (sigma == 0.0) return;
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& x : g) x += n(rng);
}

inline std::vector<double> add_noise(std::span<const double> g, double sigma,
                                     Rng& rng) {
  std::vector<double> out(g.begin(), g.end());
  add_noise_in_place(out, sigma, rng);
  return out;
}

// Clips the user, item and W groups independently. The item group is the
// concatenation of the positive and negative item rows.
inline PerExampleGrad clip_groups(PerExampleGrad g, const ClipBounds& b) {
  clip_in_place(g.user_grad, b.user);
  const double item_norm = g.item_norm();
  const double f = std::max(1.0, item_norm / b.item);
  for (auto& x : g.pos_item_grad) x /= f;
  for (auto& x : g.neg_item_grad) x /= f;
  if (!g.extra_grad.empty()) clip_in_place(g.extra_grad, b.extra);
  return g;
}

// Single-example form: clip each group to its bound, then perturb that
// group's coordinates with N(0, (z C_g)^2). Training uses the batched form
// (one draw per coordinate on the summed group gradients, dense over all
// rows); see train.hpp.
inline PerExampleGrad sanitize(PerExampleGrad g, const ClipBounds& b,
                               double noise_multiplier, Rng& rng) {
  b.validate();
  if (noise_multiplier > 0 && b.is_unbounded())
    throw InvalidInput("unbounded clipping requires zero noise");
  g = clip_groups(std::move(g), b);
  if (noise_multiplier == 0.0) return g;
  add_noise_in_place(g.user_grad, noise_multiplier * b.user, rng);
  add_noise_in_place(g.pos_item_grad, noise_multiplier * b.item, rng);
  add_noise_in_place(g.neg_item_grad, noise_multiplier * b.item, rng);
  if (!g.extra_grad.empty())
    add_noise_in_place(g.extra_grad, noise_multiplier * b.extra, rng);
  return g;
}

// Number of clipping groups that carry parameters for a scorer.
inline std::size_t group_count(ScorerKind kind) {
  return kind == ScorerKind::kMf ? 2 : 3;
}

// --- accounting ------------------------------------------------------------

inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 512;

namespace internal {

inline const std::vector<double>& log_factorials() {
  static const std::vector<double> table = [] {
    std::vector<double> t(kMaxOrder + 1, 0.0);
    for (int i = 1; i <= kMaxOrder; ++i) t[i] = t[i - 1] + std::log(double(i));
    return t;
  }();
  return table;
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace internal

// Renyi divergence bound at integer order `order` of the Poisson-subsampled
// Gaussian mechanism with sensitivity 1 and noise multiplier z:
//   log( sum_i C(a,i) (1-q)^(a-i) q^i exp((i^2 - i) / (2 z^2)) ) / (a - 1)
inline double rdp_subsampled_gaussian(double q, double z, int order) {
  if (order < 2) throw InvalidInput("RDP order must be >= 2");
  if (!(z > 0)) return std::numeric_limits<double>::infinity();
  if (!(q > 0) || q > 1) throw InvalidInput("sampling rate must be in (0, 1]");
  const double a = order;
  if (q == 1.0) return a / (2.0 * z * z);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const auto& lf = internal::log_factorials();
  auto log_fact = [&](int i) {
    return i <= kMaxOrder ? lf[i] : std::lgamma(i + 1.0);
  };
  const double lg_a1 = log_fact(order);
  double log_sum = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= order; ++i) {
    const double di = i;
    const double term = lg_a1 - log_fact(i) - log_fact(order - i) + di * log_q +
                        (a - di) * log_1mq + (di * di - di) / (2.0 * z * z);
    log_sum = internal::log_add(log_sum, term);
  }
  return log_sum / (a - 1.0);
}

struct AccountantResult {
  double epsilon = std::numeric_limits<double>::infinity();
  int optimal_order = 0;
  bool non_private = false;
};

// eps = min over integer orders a in [2, 512] of T rho(a) + log(1/delta)/(a-1).
inline AccountantResult rdp_epsilon(double z, double q, std::size_t steps,
                                    double delta) {
  if (!(q > 0) || q > 1) throw InvalidInput("sampling rate must be in (0, 1]");
  if (steps < 1) throw InvalidInput("steps must be >= 1");
  if (!(delta > 0) || !(delta < 1)) throw InvalidInput("delta must be in (0, 1)");
  if (z < 0) throw InvalidInput("noise multiplier must be nonnegative");
  AccountantResult best;
  if (z == 0.0) {
    best.non_private = true;
    return best;
  }
  const double log_inv_delta = -std::log(delta);
  for (int a = kMinOrder; a <= kMaxOrder; ++a) {
    const double eps = static_cast<double>(steps) *
                           rdp_subsampled_gaussian(q, z, a) +
                       log_inv_delta / (a - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.optimal_order = a;
    }
  }
  return best;
}

inline constexpr double kCalibrationLow = 0.1;
inline constexpr double kCalibrationHigh = 1e4;
inline constexpr double kCalibrationTolerance = 1e-6;  // relative, in z

// Smallest multiplier (to within 1e-3) whose certified epsilon does not
// exceed the target.
inline double calibrate_noise(double epsilon_target, double delta, double q,
                              std::size_t steps) {
  if (!(epsilon_target > 0)) throw InvalidInput("epsilon target must be positive");
  auto eps = [&](double z) { return rdp_epsilon(z, q, steps, delta).epsilon; };
  double lo = kCalibrationLow, hi = kCalibrationHigh;
  if (eps(hi) > epsilon_target)
    throw StageFailure("accountant",
                       "epsilon target unreachable with noise multiplier <= 1e4");
  if (eps(lo) <= epsilon_target) return lo;
  while (hi - lo > kCalibrationTolerance * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps(mid) <= epsilon_target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace dpfair
