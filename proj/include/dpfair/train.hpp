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

// Private training loop over BPR triples and top-K candidate generation.
//
// Each step Poisson-samples triples with rate q = m / n, clips every
// per-example gradient separately per parameter group, sums the clipped
// gradients per group, adds one Gaussian draw per coordinate of each group
// (sigma_g = z C_g) and applies Theta -= (eta_t / m) * noisy_sum.
//
// Random streams: "init" for parameters, "sampling" for batch selection,
// "noise" for the Gaussian mechanism, all derived from TrainConfig::seed.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/data.hpp"
#include "dpfair/model.hpp"
#include "dpfair/privacy.hpp"

namespace dpfair {

struct TrainLogEntry {
  std::size_t step = 0;
  std::size_t batch_size = 0;
  double batch_loss = 0.0;  // mean over the sampled batch
  double epsilon_so_far = 0.0;
};

struct TrainConfig {
  double learning_rate = 0.05;
  double lr_decay = 1.0;  // multiplicative, applied once per epoch
  double lambda = 0.0;
  std::size_t expected_batch = 64;
  std::size_t steps = 100;
  ClipBounds bounds = ClipBounds::uniform(1.0);
  double noise_multiplier = 0.0;
  // When set, the noise multiplier is calibrated to reach this epsilon;
  // +inf means non-private (z = 0).
  std::optional<double> epsilon_target;
  // delta = n^-delta_exponent unless an explicit delta is given.
  double delta_exponent = 1.5;
  std::optional<double> delta;
  std::uint64_t seed = 0;
  ScorerKind scorer = ScorerKind::kMf;
  std::size_t dim = 32;

  std::size_t log_every = 0;  // 0 disables logging
  std::function<void(const TrainLogEntry&)> on_log;
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t, const ModelParams&)> on_checkpoint;
};

struct TrainResult {
  ModelParams params;
  PrivacySpec privacy;
  std::vector<TrainLogEntry> log;
};

class TrainingDiverged : public StageFailure {
 public:
  TrainingDiverged(std::size_t step, ModelParams last_good)
      : StageFailure("train", "non-finite update at step " +
                                  std::to_string(step)),
        step_(step),
        last_good_(std::move(last_good)) {}
  std::size_t step() const { return step_; }
  const ModelParams& last_good() const { return last_good_; }

 private:
  std::size_t step_;
  ModelParams last_good_;
};

inline double resolve_delta(const TrainConfig& c, std::size_t n) {
  if (c.delta) return *c.delta;
  return std::pow(static_cast<double>(n), -c.delta_exponent);
}

inline std::vector<Triple> make_triples(const Dataset& ds) {
  std::vector<Triple> t(ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    t[i] = {ds.train[i].user, ds.train[i].item, ds.negatives[i].item};
  return t;
}

// Mean BPR loss over every training triple.
inline double mean_bpr_loss(const ModelParams& p, const Dataset& ds,
                            double lambda) {
  const auto triples = make_triples(ds);
  double s = 0.0;
  for (const auto& t : triples) s += bpr_loss(p, t, lambda);
  return triples.empty() ? 0.0 : s / triples.size();
}

// Resolves the privacy parameters a config implies for a dataset without
// training.
inline PrivacySpec plan_privacy(const Dataset& ds, const TrainConfig& c) {
  const std::size_t n = ds.n();
  if (n == 0) throw InvalidInput("dataset has no training interactions");
  if (c.expected_batch == 0 || c.expected_batch > n)
    throw InvalidInput("expected batch must be in [1, n]");
  if (c.steps == 0) throw InvalidInput("steps must be >= 1");
  PrivacySpec spec;
  spec.groups = group_count(c.scorer);
  spec.sampling_rate = static_cast<double>(c.expected_batch) / n;
  spec.steps = c.steps;
  spec.delta = resolve_delta(c, n);
  double z = c.noise_multiplier;
  if (c.epsilon_target) {
    if (std::isinf(*c.epsilon_target)) {
      z = 0.0;
    } else {
      z = calibrate_noise(*c.epsilon_target, spec.delta, spec.sampling_rate,
                          c.steps) *
          std::sqrt(static_cast<double>(spec.groups));
    }
  }
  if (z < 0) throw InvalidInput("noise multiplier must be nonnegative");
  spec.noise_multiplier = z;
  spec.effective_multiplier = z / std::sqrt(static_cast<double>(spec.groups));
  const auto acc = rdp_epsilon(spec.effective_multiplier, spec.sampling_rate,
                               spec.steps, spec.delta);
  spec.epsilon = acc.epsilon;
  spec.optimal_order = acc.optimal_order;
  return spec;
}

inline TrainResult train_dp(const Dataset& ds, const TrainConfig& c) {
  c.bounds.validate();
  TrainResult res;
  res.privacy = plan_privacy(ds, c);
  const double z = res.privacy.noise_multiplier;
  if (z > 0 && c.bounds.is_unbounded())
    throw InvalidInput("unbounded clipping is only allowed with zero noise");

  const std::size_t n = ds.n();
  const double q = res.privacy.sampling_rate;
  const double m = static_cast<double>(c.expected_batch);
  const std::size_t steps_per_epoch =
      std::max<std::size_t>(1, (n + c.expected_batch / 2) / c.expected_batch);
  const auto triples = make_triples(ds);

  ModelParams p = init_params(c.scorer, ds.n_users, ds.n_items, c.dim, c.seed);
  Rng sampling = derive_rng(c.seed, "sampling");
  Rng noise = derive_rng(c.seed, "noise");
  std::geometric_distribution<std::size_t> gap(q);

  std::vector<double> sum_u(p.user_emb.size()), sum_v(p.item_emb.size()),
      sum_w(p.extra.size());
  std::vector<std::size_t> batch;

  for (std::size_t t = 0; t < c.steps; ++t) {
    batch.clear();
    if (q >= 1.0) {
      for (std::size_t i = 0; i < n; ++i) batch.push_back(i);
    } else {
      for (std::size_t i = gap(sampling); i < n; i += 1 + gap(sampling))
        batch.push_back(i);
    }

    std::fill(sum_u.begin(), sum_u.end(), 0.0);
    std::fill(sum_v.begin(), sum_v.end(), 0.0);
    std::fill(sum_w.begin(), sum_w.end(), 0.0);
    double loss = 0.0;
    for (std::size_t i : batch) {
      const Triple& tr = triples[i];
      if (c.log_every) loss += bpr_loss(p, tr, c.lambda);
      const PerExampleGrad g =
          clip_groups(per_example_grad(p, tr, c.lambda), c.bounds);
      for (std::size_t j = 0; j < p.dim; ++j) {
        sum_u[tr.user * p.dim + j] += g.user_grad[j];
        sum_v[tr.pos_item * p.dim + j] += g.pos_item_grad[j];
        sum_v[tr.neg_item * p.dim + j] += g.neg_item_grad[j];
      }
      for (std::size_t j = 0; j < sum_w.size(); ++j) sum_w[j] += g.extra_grad[j];
    }
    if (z > 0) {
      add_noise_in_place(sum_u, z * c.bounds.user, noise);
      add_noise_in_place(sum_v, z * c.bounds.item, noise);
      add_noise_in_place(sum_w, z * c.bounds.extra, noise);
    }

    const double lr =
        c.learning_rate * std::pow(c.lr_decay, double(t / steps_per_epoch));
    const double scale = lr / m;
    const ModelParams before = p;
    bool finite = true;
    auto apply = [&](std::vector<double>& theta, const std::vector<double>& g) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= scale * g[i];
        finite = finite && std::isfinite(theta[i]);
      }
    };
    apply(p.user_emb, sum_u);
    apply(p.item_emb, sum_v);
    apply(p.extra, sum_w);
    if (!finite) throw TrainingDiverged(t, before);

    if (c.log_every && ((t + 1) % c.log_every == 0 || t + 1 == c.steps)) {
      TrainLogEntry e;
      e.step = t + 1;
      e.batch_size = batch.size();
      e.batch_loss = batch.empty() ? 0.0 : loss / batch.size();
      e.epsilon_so_far =
          z > 0 ? rdp_epsilon(res.privacy.effective_multiplier, q, t + 1,
                              res.privacy.delta)
                      .epsilon
                : std::numeric_limits<double>::infinity();
      res.log.push_back(e);
      if (c.on_log) c.on_log(e);
    }
    if (c.checkpoint_every && c.on_checkpoint &&
        (t + 1) % c.checkpoint_every == 0)
      c.on_checkpoint(t + 1, p);
  }
  res.params = std::move(p);
  return res;
}

// Median per-group gradient norms over a short non-private run, used as
// suggested clip bounds.
inline ClipBounds suggest_clip_bounds(const Dataset& ds, TrainConfig c,
                                      std::size_t pretrain_steps) {
  c.noise_multiplier = 0.0;
  c.epsilon_target.reset();
  c.bounds = ClipBounds::unbounded();
  c.steps = std::max<std::size_t>(1, pretrain_steps);
  c.log_every = 0;
  c.checkpoint_every = 0;
  const ModelParams p = train_dp(ds, c).params;
  const auto triples = make_triples(ds);
  std::vector<double> nu, nv, nw;
  Rng rng = derive_rng(c.seed, "pretune");
  std::uniform_int_distribution<std::size_t> pick(0, triples.size() - 1);
  const std::size_t probes = std::min<std::size_t>(triples.size(), 2000);
  for (std::size_t i = 0; i < probes; ++i) {
    const auto g = per_example_grad(p, triples[pick(rng)], c.lambda);
    nu.push_back(g.user_norm());
    nv.push_back(g.item_norm());
    nw.push_back(g.extra_norm());
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    const double m = v[v.size() / 2];
    return m > 0 ? m : 1e-6;
  };
  ClipBounds b{median(nu), median(nv), median(nw)};
  if (p.extra.empty()) b.extra = b.item;
  return b;
}

// --- candidate lists -------------------------------------------------------

struct RecList {
  std::vector<Index> items;    // best first
  std::vector<double> scores;  // nonincreasing
  bool short_list = false;     // fewer than K eligible items
};

using RecLists = std::vector<RecList>;

// Top-K items per user among items outside the user's training positives
// (and validation positives unless told otherwise); ties go to the lower
// item index.
inline RecLists top_k_lists(const ModelParams& p, const Dataset& ds,
                            std::size_t K, bool exclude_validation = true) {
  if (K == 0) throw InvalidInput("K must be >= 1");
  RecLists out(ds.n_users);
  std::vector<Index> cand;
  for (Index u = 0; u < ds.n_users; ++u) {
    const auto s = score_all(p, u);
    const auto& tr = ds.train_items(u);
    const auto& va = ds.validation_items(u);
    cand.clear();
    for (Index v = 0; v < ds.n_items; ++v) {
      if (std::binary_search(tr.begin(), tr.end(), v) ||
          (exclude_validation && std::binary_search(va.begin(), va.end(), v)))
        continue;
      cand.push_back(v);
    }
    const std::size_t k = std::min(K, cand.size());
    auto better = [&](Index a, Index b) {
      return s[a] > s[b] || (s[a] == s[b] && a < b);
    };
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
    auto& r = out[u];
    r.short_list = k < K;
    r.items.assign(cand.begin(), cand.begin() + k);
    for (Index v : r.items) r.scores.push_back(s[v]);
  }
  return out;
}

// Plain-text list format: one row per user, `user<TAB>item:score,...`.
inline void write_rec_lists(std::ostream& out, const RecLists& lists) {
  out << "# dpfair-reclists v1\n";
  out.precision(17);
  for (Index u = 0; u < lists.size(); ++u) {
    out << u << '\t';
    for (std::size_t i = 0; i < lists[u].items.size(); ++i) {
      if (i) out << ',';
      out << lists[u].items[i] << ':' << lists[u].scores[i];
    }
    out << '\n';
  }
}

inline RecLists read_rec_lists(std::istream& in) {
  RecLists lists;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InvalidInput("malformed list row");
    const Index u = std::stoull(line.substr(0, tab));
    if (u != lists.size()) throw InvalidInput("list rows must be in user order");
    RecList r;
    std::istringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw InvalidInput("malformed list entry");
      r.items.push_back(std::stoull(tok.substr(0, colon)));
      r.scores.push_back(std::stod(tok.substr(colon + 1)));
    }
    lists.push_back(std::move(r));
  }
  return lists;
}

}  // namespace dpfair
