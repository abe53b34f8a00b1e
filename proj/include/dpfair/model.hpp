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

// Latent-factor scorers (dot-product MF and a compact GMF+MLP two-tower
// network) together with the per-example BPR loss and its exact gradient.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpfair/common.hpp"
#include "json.hpp"

namespace dpfair {

enum class ScorerKind { kMf, kNeuMf };

inline std::string to_string(ScorerKind k) {
  return k == ScorerKind::kMf ? "mf" : "neumf";
}

inline ScorerKind parse_scorer(std::string_view s) {
  if (s == "mf" || s == "bpr-mf") return ScorerKind::kMf;
  if (s == "neumf") return ScorerKind::kNeuMf;
  throw InvalidInput("unknown scorer '" + std::string(s) + "'");
}

// Offsets of the NeuMF-lite parameters inside the flat W vector:
//   hidden1 = relu(W1 [z_u; z_v] + b1)          W1: h1 x 2d
//   hidden2 = relu(W2 hidden1 + b2)             W2: h2 x h1
//   score   = w_out . [z_u * z_v; hidden2] + b_out
struct NeuMfLayout {
  std::size_t d = 0, h1 = 0, h2 = 0;
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w_out = 0, b_out = 0, size = 0;

  explicit NeuMfLayout(std::size_t dim) : d(dim), h1(dim), h2(std::max<std::size_t>(1, dim / 2)) {
    w1 = 0;
    b1 = w1 + h1 * 2 * d;
    w2 = b1 + h1;
    b2 = w2 + h2 * h1;
    w_out = b2 + h2;
    b_out = w_out + d + h2;
    size = b_out + 1;
  }
};

inline std::size_t extra_param_count(ScorerKind kind, std::size_t dim) {
  return kind == ScorerKind::kMf ? 0 : NeuMfLayout(dim).size;
}

struct ModelParams {
  ScorerKind scorer = ScorerKind::kMf;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t dim = 0;
  std::vector<double> user_emb;  // n_users x dim, row-major
  std::vector<double> item_emb;  // n_items x dim, row-major
  std::vector<double> extra;     // W; empty for MF

  ModelParams() = default;
  ModelParams(ScorerKind kind, std::size_t users, std::size_t items,
              std::size_t d)
      : scorer(kind),
        n_users(users),
        n_items(items),
        dim(d),
        user_emb(users * d, 0.0),
        item_emb(items * d, 0.0),
        extra(extra_param_count(kind, d), 0.0) {}

  std::span<const double> user(Index u) const {
    check(u, n_users);
    return {user_emb.data() + u * dim, dim};
  }
  std::span<double> user(Index u) {
    check(u, n_users);
    return {user_emb.data() + u * dim, dim};
  }
  std::span<const double> item(Index v) const {
    check(v, n_items);
    return {item_emb.data() + v * dim, dim};
  }
  std::span<double> item(Index v) {
    check(v, n_items);
    return {item_emb.data() + v * dim, dim};
  }

  bool all_finite() const {
    auto fin = [](const std::vector<double>& x) {
      return std::all_of(x.begin(), x.end(),
                         [](double a) { return std::isfinite(a); });
    };
    return fin(user_emb) && fin(item_emb) && fin(extra);
  }

  bool operator==(const ModelParams&) const = default;

 private:
  static void check(Index i, std::size_t n) {
    if (i >= n) throw InvalidInput("index " + std::to_string(i) +
                                   " out of range [0, " + std::to_string(n) + ")");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

// Embeddings ~ U[-1/sqrt(d), 1/sqrt(d)]; dense layers ~ U[-1/sqrt(fan_in),
// 1/sqrt(fan_in)]; biases zero.
inline ModelParams init_params(ScorerKind kind, std::size_t n_users,
                               std::size_t n_items, std::size_t dim,
                               std::uint64_t seed) {
  if (dim == 0) throw InvalidInput("embedding dimension must be positive");
  ModelParams p(kind, n_users, n_items, dim);
  Rng rng = derive_rng(seed, "init");
  const double r = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> emb(-r, r);
  for (auto& x : p.user_emb) x = emb(rng);
  for (auto& x : p.item_emb) x = emb(rng);
  if (kind == ScorerKind::kNeuMf) {
    const NeuMfLayout L(dim);
    auto fill = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> w(-s, s);
      for (std::size_t i = 0; i < count; ++i) p.extra[off + i] = w(rng);
    };
    fill(L.w1, L.h1 * 2 * L.d, 2 * L.d);
    fill(L.w2, L.h2 * L.h1, L.h1);
    fill(L.w_out, L.d + L.h2, L.d + L.h2);
  }
  return p;
}

// --- scoring ---------------------------------------------------------------

inline double score_mf(const ModelParams& p, Index u, Index v) {
  return dot(p.user(u), p.item(v));
}

namespace internal {

struct NeuMfForward {
  std::vector<double> a1, r1, a2, r2;
  double out = 0.0;
};

inline NeuMfForward neumf_forward(const ModelParams& p,
                                  std::span<const double> zu,
                                  std::span<const double> zv) {
  const NeuMfLayout L(p.dim);
  if (p.extra.size() != L.size)
    throw InvalidInput("NeuMF parameter vector has size " +
                       std::to_string(p.extra.size()) + ", expected " +
                       std::to_string(L.size));
  const double* W = p.extra.data();
  NeuMfForward f;
  f.a1.assign(L.h1, 0.0);
  f.r1.assign(L.h1, 0.0);
  for (std::size_t i = 0; i < L.h1; ++i) {
    const double* row = W + L.w1 + i * 2 * L.d;
    double s = W[L.b1 + i];
    for (std::size_t j = 0; j < L.d; ++j) s += row[j] * zu[j];
    for (std::size_t j = 0; j < L.d; ++j) s += row[L.d + j] * zv[j];
    f.a1[i] = s;
    f.r1[i] = s > 0.0 ? s : 0.0;
  }
  f.a2.assign(L.h2, 0.0);
  f.r2.assign(L.h2, 0.0);
  for (std::size_t i = 0; i < L.h2; ++i) {
    const double* row = W + L.w2 + i * L.h1;
    double s = W[L.b2 + i];
    for (std::size_t j = 0; j < L.h1; ++j) s += row[j] * f.r1[j];
    f.a2[i] = s;
    f.r2[i] = s > 0.0 ? s : 0.0;
  }
  double out = W[L.b_out];
  for (std::size_t j = 0; j < L.d; ++j) out += W[L.w_out + j] * zu[j] * zv[j];
  for (std::size_t j = 0; j < L.h2; ++j) out += W[L.w_out + L.d + j] * f.r2[j];
  f.out = out;
  return f;
}

// Adds coeff * d score / d(z_u, z_v, W) into the given buffers.
inline void neumf_backward(const ModelParams& p, std::span<const double> zu,
                           std::span<const double> zv, const NeuMfForward& f,
                           double coeff, std::span<double> gu,
                           std::span<double> gv, std::span<double> gw) {
  const NeuMfLayout L(p.dim);
  const double* W = p.extra.data();
  for (std::size_t j = 0; j < L.d; ++j) {
    gw[L.w_out + j] += coeff * zu[j] * zv[j];
    gu[j] += coeff * W[L.w_out + j] * zv[j];
    gv[j] += coeff * W[L.w_out + j] * zu[j];
  }
  gw[L.b_out] += coeff;
  std::vector<double> da2(L.h2, 0.0);
  for (std::size_t i = 0; i < L.h2; ++i) {
    gw[L.w_out + L.d + i] += coeff * f.r2[i];
    da2[i] = f.a2[i] > 0.0 ? coeff * W[L.w_out + L.d + i] : 0.0;
  }
  std::vector<double> dr1(L.h1, 0.0);
  for (std::size_t i = 0; i < L.h2; ++i) {
    if (da2[i] == 0.0) continue;
    const double* row = W + L.w2 + i * L.h1;
    for (std::size_t j = 0; j < L.h1; ++j) {
      gw[L.w2 + i * L.h1 + j] += da2[i] * f.r1[j];
      dr1[j] += row[j] * da2[i];
    }
    gw[L.b2 + i] += da2[i];
  }
  for (std::size_t i = 0; i < L.h1; ++i) {
    const double da1 = f.a1[i] > 0.0 ? dr1[i] : 0.0;
    if (da1 == 0.0) continue;
    const double* row = W + L.w1 + i * 2 * L.d;
    for (std::size_t j = 0; j < L.d; ++j) {
      gw[L.w1 + i * 2 * L.d + j] += da1 * zu[j];
      gw[L.w1 + i * 2 * L.d + L.d + j] += da1 * zv[j];
      gu[j] += row[j] * da1;
      gv[j] += row[L.d + j] * da1;
    }
    gw[L.b1 + i] += da1;
  }
}

}  // namespace internal

inline double score_neumf(const ModelParams& p, Index u, Index v) {
  return internal::neumf_forward(p, p.user(u), p.item(v)).out;
}

inline double score(const ModelParams& p, Index u, Index v) {
  return p.scorer == ScorerKind::kMf ? score_mf(p, u, v) : score_neumf(p, u, v);
}

// Scores of every item for one user.
inline std::vector<double> score_all(const ModelParams& p, Index u) {
  std::vector<double> s(p.n_items);
  for (Index v = 0; v < p.n_items; ++v) s[v] = score(p, u, v);
  return s;
}

// --- BPR -------------------------------------------------------------------

struct Triple {
  Index user = 0;
  Index pos_item = 0;
  Index neg_item = 0;
};

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double bpr_margin(const ModelParams& p, const Triple& t) {
  return score(p, t.user, t.pos_item) - score(p, t.user, t.neg_item);
}

// -log sigmoid(margin) + lambda/2 (|z_u|^2 + |z_v|^2 + |z_v'|^2 + |W|^2)
inline double bpr_loss(const ModelParams& p, const Triple& t, double lambda) {
  const double reg = squared_norm(p.user(t.user)) +
                     squared_norm(p.item(t.pos_item)) +
                     squared_norm(p.item(t.neg_item)) + squared_norm(p.extra);
  return softplus(-bpr_margin(p, t)) + 0.5 * lambda * reg;
}

// Gradient of one BPR summand, stored sparsely: only row u of U, rows v and
// v' of V, and the dense W block are ever nonzero.
struct PerExampleGrad {
  Index user = 0;
  Index pos_item = 0;
  Index neg_item = 0;
  std::vector<double> user_grad;
  std::vector<double> pos_item_grad;
  std::vector<double> neg_item_grad;
  std::vector<double> extra_grad;

  double user_norm() const { return std::sqrt(squared_norm(user_grad)); }
  double item_norm() const {
    return std::sqrt(squared_norm(pos_item_grad) + squared_norm(neg_item_grad));
  }
  double extra_norm() const { return std::sqrt(squared_norm(extra_grad)); }
};

inline PerExampleGrad per_example_grad(const ModelParams& p, const Triple& t,
                                       double lambda) {
  if (t.pos_item == t.neg_item)
    throw InvalidInput("triple has identical positive and negative item");
  PerExampleGrad g;
  g.user = t.user;
  g.pos_item = t.pos_item;
  g.neg_item = t.neg_item;
  const auto zu = p.user(t.user);
  const auto zv = p.item(t.pos_item);
  const auto zn = p.item(t.neg_item);
  g.user_grad.assign(p.dim, 0.0);
  g.pos_item_grad.assign(p.dim, 0.0);
  g.neg_item_grad.assign(p.dim, 0.0);
  g.extra_grad.assign(p.extra.size(), 0.0);

  if (p.scorer == ScorerKind::kMf) {
    const double m = dot(zu, zv) - dot(zu, zn);
    const double c = -sigmoid(-m);  // d loss / d margin
    for (std::size_t j = 0; j < p.dim; ++j) {
      g.user_grad[j] = c * (zv[j] - zn[j]) + lambda * zu[j];
      g.pos_item_grad[j] = c * zu[j] + lambda * zv[j];
      g.neg_item_grad[j] = -c * zu[j] + lambda * zn[j];
    }
    return g;
  }

  const auto fp = internal::neumf_forward(p, zu, zv);
  const auto fn = internal::neumf_forward(p, zu, zn);
  const double c = -sigmoid(-(fp.out - fn.out));
  std::vector<double> gu_neg(p.dim, 0.0);
  internal::neumf_backward(p, zu, zv, fp, c, g.user_grad, g.pos_item_grad,
                           g.extra_grad);
  internal::neumf_backward(p, zu, zn, fn, -c, gu_neg, g.neg_item_grad,
                           g.extra_grad);
  for (std::size_t j = 0; j < p.dim; ++j) {
    g.user_grad[j] += gu_neg[j] + lambda * zu[j];
    g.pos_item_grad[j] += lambda * zv[j];
    g.neg_item_grad[j] += lambda * zn[j];
  }
  for (std::size_t j = 0; j < p.extra.size(); ++j)
    g.extra_grad[j] += lambda * p.extra[j];
  return g;
}

// --- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelParams& p,
                              const std::string& rng_state = "") {
  nlohmann::json j;
  j["format"] = "dpfair-checkpoint";
  j["version"] = kCheckpointVersion;
  j["architecture"] = to_string(p.scorer);
  j["d1"] = p.dim;
  j["d2"] = p.dim;
  j["n_users"] = p.n_users;
  j["n_items"] = p.n_items;
  j["U"] = p.user_emb;
  j["V"] = p.item_emb;
  j["W"] = p.extra;
  j["rng_state"] = rng_state;
  return j;
}

inline ModelParams params_from_json(const nlohmann::json& j,
                                    std::string* rng_state = nullptr) {
  if (j.value("format", "") != "dpfair-checkpoint")
    throw InvalidInput("not a checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw InvalidInput("unsupported checkpoint version");
  if (j.at("d1").get<std::size_t>() != j.at("d2").get<std::size_t>())
    throw InvalidInput("checkpoint has d1 != d2");
  ModelParams p(parse_scorer(j.at("architecture").get<std::string>()),
                j.at("n_users").get<std::size_t>(),
                j.at("n_items").get<std::size_t>(),
                j.at("d1").get<std::size_t>());
  p.user_emb = j.at("U").get<std::vector<double>>();
  p.item_emb = j.at("V").get<std::vector<double>>();
  p.extra = j.at("W").get<std::vector<double>>();
  if (p.user_emb.size() != p.n_users * p.dim ||
      p.item_emb.size() != p.n_items * p.dim ||
      p.extra.size() != extra_param_count(p.scorer, p.dim))
    throw InvalidInput("checkpoint tensor sizes are inconsistent");
  if (rng_state) *rng_state = j.value("rng_state", "");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::string& path,
                            const std::string& rng_state = "") {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << to_json(p, rng_state).dump() << '\n';
}

inline ModelParams load_checkpoint(const std::string& path,
                                   std::string* rng_state = nullptr) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  return params_from_json(nlohmann::json::parse(in), rng_state);
}

}  // namespace dpfair
