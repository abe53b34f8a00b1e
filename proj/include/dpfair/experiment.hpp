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

// End-to-end harness: configuration, the train -> recommend -> rerank ->
// evaluate chain, grid sweeps and report rows.

#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "dpfair/common.hpp"
#include "dpfair/data.hpp"
#include "dpfair/metrics.hpp"
#include "dpfair/model.hpp"
#include "dpfair/privacy.hpp"
#include "dpfair/rerank.hpp"
#include "dpfair/synthetic.hpp"
#include "dpfair/train.hpp"

namespace dpfair {

// absolute: alpha is the gap bound itself.
// relative: bound = alpha * (constraint gap of the truncated lists).
enum class AlphaMode { kAbsolute, kRelative };

struct ExperimentConfig {
  // [data]
  std::string dataset_path;  // raw interactions or an ingested bundle (.json)
  std::string dataset_name;
  FeedbackKind feedback = FeedbackKind::kExplicitRating;
  bool synthetic = false;
  SyntheticConfig synth;
  std::uint64_t seed = 0;

  // [train] and [privacy]
  TrainConfig train;
  bool auto_clip = false;
  std::size_t auto_clip_steps = 200;

  // [rerank]
  std::size_t K = 20;
  std::size_t k = 10;
  double alpha = std::numeric_limits<double>::infinity();
  AlphaMode alpha_mode = AlphaMode::kAbsolute;
  std::string constraint_split = "test";
  std::string eval_split = "test";
  std::size_t max_nodes = 5'000'000;

  // [sweep]
  std::string sweep_param;  // "C" or "alpha"
  std::vector<double> sweep_grid;

  // [output]
  std::string output_dir = ".";
};

namespace internal {

inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (auto& tok : split_fields(s, ',')) {
    const auto v = parse_double(trim(tok));
    if (!v) throw InvalidInput("bad grid value '" + tok + "'");
    out.push_back(*v);
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InvalidInput(key + ": expected true/false, got '" + s + "'");
}

inline std::string format_fixed(double x, int digits) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << x;
  return ss.str();
}

}  // namespace internal

// Applies one `section.key = value` setting.
inline void set_config_value(ExperimentConfig& c, const std::string& key,
                             const std::string& raw) {
  const std::string v = internal::trim(raw);
  auto num = [&]() {
    const auto d = internal::parse_double(v);
    if (!d) throw InvalidInput(key + ": expected a number, got '" + v + "'");
    return *d;
  };
  auto count = [&]() {
    const double d = num();
    if (d < 0 || d != std::floor(d) || d > 1e15)
      throw InvalidInput(key + ": expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::size_t>(d);
  };
  auto& t = c.train;
  if (key == "data.path") c.dataset_path = v;
  else if (key == "data.name") c.dataset_name = v;
  else if (key == "data.feedback") c.feedback = parse_feedback_kind(v);
  else if (key == "data.seed") c.seed = count();
  else if (key == "data.synthetic") c.synthetic = internal::parse_bool(key, v);
  else if (key == "synthetic.users") c.synth.users = count();
  else if (key == "synthetic.items") c.synth.items = count();
  else if (key == "synthetic.clusters") c.synth.clusters = count();
  else if (key == "synthetic.heavy_fraction") c.synth.heavy_fraction = num();
  else if (key == "synthetic.light_interactions") c.synth.light_interactions = count();
  else if (key == "synthetic.activity_ratio") c.synth.activity_ratio = num();
  else if (key == "synthetic.cluster_affinity") c.synth.cluster_affinity = num();
  else if (key == "synthetic.zipf_exponent") c.synth.zipf_exponent = num();
  else if (key == "train.scorer") t.scorer = parse_scorer(v);
  else if (key == "train.dim") t.dim = count();
  else if (key == "train.learning_rate") t.learning_rate = num();
  else if (key == "train.lr_decay") t.lr_decay = num();
  else if (key == "train.lambda") t.lambda = num();
  else if (key == "train.batch") t.expected_batch = count();
  else if (key == "train.steps") t.steps = count();
  else if (key == "train.log_every") t.log_every = count();
  else if (key == "privacy.clip") t.bounds = ClipBounds::uniform(num());
  else if (key == "privacy.clip_user") t.bounds.user = num();
  else if (key == "privacy.clip_item") t.bounds.item = num();
  else if (key == "privacy.clip_extra") t.bounds.extra = num();
  else if (key == "privacy.auto_clip") c.auto_clip = internal::parse_bool(key, v);
  else if (key == "privacy.auto_clip_steps") c.auto_clip_steps = count();
  else if (key == "privacy.epsilon") t.epsilon_target = num();
  else if (key == "privacy.noise_multiplier") {
    t.noise_multiplier = num();
    t.epsilon_target.reset();
  }
  else if (key == "privacy.delta_exponent") t.delta_exponent = num();
  else if (key == "privacy.delta") t.delta = num();
  else if (key == "rerank.K") c.K = count();
  else if (key == "rerank.k") c.k = count();
  else if (key == "rerank.alpha") c.alpha = num();
  else if (key == "rerank.alpha_mode") {
    if (v == "absolute") c.alpha_mode = AlphaMode::kAbsolute;
    else if (v == "relative") c.alpha_mode = AlphaMode::kRelative;
    else throw InvalidInput(key + ": expected absolute or relative");
  }
  else if (key == "rerank.constraint_split") c.constraint_split = v;
  else if (key == "rerank.eval_split") c.eval_split = v;
  else if (key == "rerank.max_nodes") c.max_nodes = count();
  else if (key == "sweep.param") c.sweep_param = v;
  else if (key == "sweep.grid") c.sweep_grid = internal::parse_grid(v);
  else if (key == "output.dir") c.output_dir = v;
  else throw InvalidInput("unknown config key '" + key + "'");
}

inline void validate_config(ExperimentConfig& c) {
  if (c.dataset_path.empty() && !c.synthetic) {
    // Paths may come from the environment.
    if (const char* env = std::getenv("DPFAIR_DATASET")) c.dataset_path = env;
  }
  if (c.dataset_path.empty() && !c.synthetic)
    throw InvalidInput("data.path is required unless data.synthetic = true");
  if (c.dataset_name.empty())
    c.dataset_name = c.synthetic ? "synthetic" : c.dataset_path;
  c.train.seed = c.seed;
  c.synth.seed = c.seed;
  if (c.k == 0 || c.K < c.k) throw InvalidInput("need 1 <= k <= K");
  if (std::isnan(c.alpha) || c.alpha < 0) throw InvalidInput("alpha must be >= 0");
  for (const auto* s : {&c.constraint_split, &c.eval_split})
    if (*s != "test" && *s != "validation")
      throw InvalidInput("splits must be 'test' or 'validation'");
  if (c.train.dim == 0) throw InvalidInput("train.dim must be >= 1");
  if (!(c.train.learning_rate > 0)) throw InvalidInput("train.learning_rate must be > 0");
  if (c.train.epsilon_target && !(*c.train.epsilon_target > 0))
    throw InvalidInput("privacy.epsilon must be > 0");
  c.train.bounds.validate();
  if (!c.sweep_param.empty() && c.sweep_param != "C" && c.sweep_param != "alpha")
    throw InvalidInput("sweep.param must be C or alpha");
  if (!c.sweep_param.empty() && c.sweep_grid.empty())
    throw InvalidInput("sweep.grid must be nonempty");
}

// INI-style file: `[section]` headers and `key = value` lines; `#` and `;`
// start comments.
inline ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw InvalidInput("config key '" + section + "' outside a section");
    for (const auto& [key, value] : body)
      set_config_value(c, section + "." + key, value.data());
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config '" + path + "'");
  return parse_config(in);
}

// Canonical `key=value` dump; its FNV-1a hash names every artifact of a run.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream s;
  s.precision(17);
  const auto& t = c.train;
  s << "data.path=" << c.dataset_path << '\n'
    << "data.feedback=" << (c.feedback == FeedbackKind::kImplicit ? "implicit" : "rating") << '\n'
    << "data.seed=" << c.seed << '\n'
    << "data.synthetic=" << c.synthetic << '\n';
  if (c.synthetic)
    s << "synthetic=" << c.synth.users << ',' << c.synth.items << ','
      << c.synth.clusters << ',' << c.synth.heavy_fraction << ','
      << c.synth.light_interactions << ',' << c.synth.activity_ratio << ','
      << c.synth.cluster_affinity << ',' << c.synth.zipf_exponent << '\n';
  s << "train=" << to_string(t.scorer) << ',' << t.dim << ',' << t.learning_rate
    << ',' << t.lr_decay << ',' << t.lambda << ',' << t.expected_batch << ','
    << t.steps << '\n'
    << "privacy.clip=" << t.bounds.user << ',' << t.bounds.item << ','
    << t.bounds.extra << ',' << c.auto_clip << ',' << c.auto_clip_steps << '\n'
    << "privacy.epsilon="
    << (t.epsilon_target ? internal::format_double(*t.epsilon_target) : "none") << '\n'
    << "privacy.noise_multiplier=" << t.noise_multiplier << '\n'
    << "privacy.delta=" << t.delta_exponent << ','
    << (t.delta ? internal::format_double(*t.delta) : "auto") << '\n'
    << "rerank=" << c.K << ',' << c.k << ',' << internal::format_double(c.alpha)
    << ',' << (c.alpha_mode == AlphaMode::kRelative ? "relative" : "absolute")
    << ',' << c.constraint_split << ',' << c.eval_split << '\n';
  return s.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_config(c))));
  return buf;
}

// Loads `path` as an ingested bundle (.json) or as raw interactions.
inline Dataset load_any_dataset(const std::string& path, FeedbackKind kind,
                                std::uint64_t seed) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json")
    return load_dataset(path);
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open dataset '" + path + "'");
  return build_dataset(read_interactions(in), kind, seed);
}

inline Dataset load_experiment_dataset(const ExperimentConfig& c) {
  if (c.synthetic)
    return build_dataset(generate_synthetic(c.synth), FeedbackKind::kImplicit, c.seed);
  return load_any_dataset(c.dataset_path, c.feedback, c.seed);
}

struct AlgorithmRows {
  std::string algorithm;  // "DP-SGD" or "DP-Fair"
  GroupMeans ndcg;
  GroupMeans f1;
};

struct ExperimentResult {
  std::string dataset;
  ScorerKind scorer = ScorerKind::kMf;
  PrivacySpec privacy;
  ClipBounds bounds;
  double alpha_bound = 0.0;          // absolute bound handed to the solver
  double baseline_constraint_gap = 0.0;
  double solver_gap = 0.0;
  double solver_objective = 0.0;
  bool solver_feasible = true;
  bool solver_optimal = true;
  std::size_t solver_nodes = 0;
  AlgorithmRows baseline;
  AlgorithmRows fair;
};

inline std::vector<std::vector<Index>> truncate_lists(const RecLists& lists,
                                                      std::size_t k) {
  std::vector<std::vector<Index>> out(lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const auto& it = lists[u].items;
    out[u].assign(it.begin(), it.begin() + std::min(k, it.size()));
  }
  return out;
}

namespace internal {
inline AlgorithmRows rows_for(std::string name,
                              const std::vector<std::vector<Index>>& lists,
                              const RelevanceLabels& labels,
                              const UserGroups& groups, std::size_t k) {
  const auto reps = evaluate_lists(lists, labels, groups, k);
  return {std::move(name), reps[0].values, reps[1].values};
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageFailure&) {
    throw;
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
}
}  // namespace internal

// Stage II plus evaluation for already-trained parameters.
inline ExperimentResult rerank_and_evaluate(const Dataset& ds,
                                            const UserGroups& groups,
                                            const ModelParams& params,
                                            const ExperimentConfig& c,
                                            const PrivacySpec& privacy) {
  ExperimentResult r;
  r.dataset = c.dataset_name;
  r.scorer = params.scorer;
  r.privacy = privacy;
  r.bounds = c.train.bounds;
  const bool need_val = c.constraint_split == "validation";
  const RecLists lists = internal::stage("recommend", [&] {
    return top_k_lists(params, ds, c.K, !need_val);
  });
  for (const auto& l : lists)
    if (l.items.size() < c.k)
      throw StageFailure("recommend", "a user has fewer than k candidate items");
  const auto constraint_labels = RelevanceLabels::from(ds, c.constraint_split);
  const auto eval_labels = RelevanceLabels::from(ds, c.eval_split);

  RerankInstance inst = make_instance(lists, constraint_labels, groups,
                                      std::numeric_limits<double>::infinity(), c.k);
  std::vector<std::size_t> trunc_hits;
  for (const auto& p : build_profiles(inst)) trunc_hits.push_back(p.h_unconstrained);
  r.baseline_constraint_gap = static_cast<double>(abs(signed_f1_gap(inst, trunc_hits)));
  inst.alpha = c.alpha_mode == AlphaMode::kRelative
                   ? c.alpha * r.baseline_constraint_gap
                   : c.alpha;
  r.alpha_bound = inst.alpha;
  const RerankSolution sol = internal::stage("rerank", [&] {
    return solve(inst, SolveOptions{c.max_nodes});
  });
  r.solver_gap = sol.gap;
  r.solver_objective = sol.objective;
  r.solver_feasible = sol.feasible;
  r.solver_optimal = sol.optimal;
  r.solver_nodes = sol.nodes;

  const auto truncated = truncate_lists(lists, c.k);
  r.baseline = internal::rows_for("DP-SGD", truncated, eval_labels, groups, c.k);
  r.fair = internal::rows_for("DP-Fair", lists_by_user(inst, sol, truncated),
                              eval_labels, groups, c.k);
  return r;
}

inline TrainConfig resolved_train_config(const Dataset& ds,
                                         const ExperimentConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  if (c.auto_clip) t.bounds = suggest_clip_bounds(ds, t, c.auto_clip_steps);
  return t;
}

inline ExperimentResult run_experiment_on(const Dataset& ds,
                                          const ExperimentConfig& c) {
  const UserGroups groups = group_users(ds);
  const TrainConfig t = resolved_train_config(ds, c);
  const TrainResult tr = internal::stage("train", [&] { return train_dp(ds, t); });
  ExperimentConfig used = c;
  used.train.bounds = t.bounds;
  return rerank_and_evaluate(ds, groups, tr.params, used, tr.privacy);
}

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  const Dataset ds = internal::stage("ingest", [&] { return load_experiment_dataset(c); });
  return run_experiment_on(ds, c);
}

// --- reports ---------------------------------------------------------------

inline std::string report_header() {
  return "dataset\tscorer\talgorithm\tepsilon\tmetric\ttotal\tactive\tinactive\t"
         "gap\tz\tq\tsteps\tepsilon_certified\tdelta\talpha_bound\tfeasible\t"
         "config_hash";
}

// Two rows per algorithm (NDCG, F1); metric columns are percentages.
inline std::vector<std::string> report_rows(const ExperimentResult& r,
                                            const std::string& hash) {
  using internal::format_fixed;
  std::vector<std::string> out;
  const double eps_label = r.privacy.non_private()
                               ? std::numeric_limits<double>::infinity()
                               : r.privacy.epsilon;
  for (const auto* a : {&r.baseline, &r.fair}) {
    for (const auto& [metric, g] :
         {std::pair<const char*, GroupMeans>{"NDCG@k", a->ndcg}, {"F1@k", a->f1}}) {
      std::ostringstream s;
      s << r.dataset << '\t' << to_string(r.scorer) << '\t' << a->algorithm << '\t'
        << format_fixed(eps_label, 2) << '\t' << metric << '\t'
        << format_fixed(100 * g.total, 2) << '\t' << format_fixed(100 * g.active, 2)
        << '\t' << format_fixed(100 * g.inactive, 2) << '\t'
        << format_fixed(100 * g.gap, 2) << '\t'
        << internal::format_double(r.privacy.noise_multiplier) << '\t'
        << internal::format_double(r.privacy.sampling_rate) << '\t'
        << r.privacy.steps << '\t' << internal::format_double(r.privacy.epsilon)
        << '\t' << internal::format_double(r.privacy.delta) << '\t'
        << internal::format_double(r.alpha_bound) << '\t'
        << (r.solver_feasible ? 1 : 0) << '\t' << hash;
      out.push_back(s.str());
    }
  }
  return out;
}

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> checkpoints;
  std::vector<std::string> reports;
  PrivacySpec certificate;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "dpfair-manifest";
    j["version"] = 1;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["checkpoints"] = checkpoints;
    j["reports"] = reports;
    auto num = [](double x) -> nlohmann::json {
      if (std::isinf(x)) return "inf";
      return x;
    };
    j["certificate"] = {{"z", certificate.noise_multiplier},
                        {"z_effective", certificate.effective_multiplier},
                        {"q", certificate.sampling_rate},
                        {"steps", certificate.steps},
                        {"epsilon", num(certificate.epsilon)},
                        {"delta", certificate.delta},
                        {"rdp_order", certificate.optimal_order}};
    return j;
  }
};

// --- sweeps ----------------------------------------------------------------

struct SweepPoint {
  double value = 0.0;
  std::optional<ExperimentResult> result;
  std::string error;  // set when the point failed
};

// One result per grid value. C sweeps retrain per point; alpha sweeps reuse a
// single trained model. Failures are recorded and the sweep continues.
inline std::vector<SweepPoint> sweep(const Dataset& ds, const ExperimentConfig& c) {
  if (c.sweep_grid.empty()) throw InvalidInput("sweep grid is empty");
  std::vector<SweepPoint> out;
  const UserGroups groups = group_users(ds);
  if (c.sweep_param == "alpha") {
    const TrainConfig t = resolved_train_config(ds, c);
    const TrainResult tr = internal::stage("train", [&] { return train_dp(ds, t); });
    ExperimentConfig point = c;
    point.train.bounds = t.bounds;
    for (double a : c.sweep_grid) {
      SweepPoint sp{a, std::nullopt, {}};
      point.alpha = a;
      try {
        sp.result = rerank_and_evaluate(ds, groups, tr.params, point, tr.privacy);
      } catch (const std::exception& e) {
        sp.error = e.what();
      }
      out.push_back(std::move(sp));
    }
  } else if (c.sweep_param == "C") {
    for (double C : c.sweep_grid) {
      SweepPoint sp{C, std::nullopt, {}};
      try {
        ExperimentConfig point = c;
        point.auto_clip = false;
        point.train.bounds = ClipBounds::uniform(C);
        sp.result = run_experiment_on(ds, point);
      } catch (const std::exception& e) {
        sp.error = e.what();
      }
      out.push_back(std::move(sp));
    }
  } else {
    throw InvalidInput("sweep.param must be C or alpha");
  }
  return out;
}

inline std::string sweep_header() {
  return "param\tvalue\talgorithm\tndcg_total\tndcg_active\tndcg_inactive\t"
         "ndcg_gap\tf1_total\tf1_active\tf1_inactive\tf1_gap\tepsilon_certified\t"
         "error";
}

inline std::vector<std::string> sweep_rows(const std::string& param,
                                           const std::vector<SweepPoint>& pts) {
  std::vector<std::string> out;
  for (const auto& p : pts) {
    if (!p.result) {
      std::ostringstream s;
      s << param << '\t' << internal::format_double(p.value)
        << "\t-\t\t\t\t\t\t\t\t\t\t" << p.error;
      out.push_back(s.str());
      continue;
    }
    for (const auto* a : {&p.result->baseline, &p.result->fair}) {
      std::ostringstream s;
      s << param << '\t' << internal::format_double(p.value) << '\t' << a->algorithm;
      for (const auto& g : {a->ndcg, a->f1})
        s << '\t' << internal::format_fixed(g.total, 6) << '\t'
          << internal::format_fixed(g.active, 6) << '\t'
          << internal::format_fixed(g.inactive, 6) << '\t'
          << internal::format_fixed(g.gap, 6);
      s << '\t' << internal::format_double(p.result->privacy.epsilon) << '\t';
      out.push_back(s.str());
    }
  }
  return out;
}

}  // namespace dpfair
