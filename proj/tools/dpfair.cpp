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

// dpfair command line. Exit codes: 0 success, 2 configuration or input
// error, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include "CLI11.hpp"
#include "dpfair/experiment.hpp"

namespace {

using namespace dpfair;

constexpr int kConfigError = 2;
constexpr int kStageFailure = 3;

std::ofstream open_out(const std::string& path) {
  if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
    std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return in;
}

void print_stats(std::ostream& out, const std::string& label,
                 const DatasetStats& s) {
  out << label << ".users\t" << s.users << '\n'
      << label << ".items\t" << s.items << '\n'
      << label << ".interactions\t" << s.interactions << '\n'
      << label << ".sparsity_percent\t" << internal::format_fixed(s.sparsity_percent, 2)
      << '\n';
}

void print_certificate(std::ostream& out, const PrivacySpec& p) {
  out << "z\t" << internal::format_double(p.noise_multiplier) << '\n'
      << "z_effective\t" << internal::format_double(p.effective_multiplier) << '\n'
      << "q\t" << internal::format_double(p.sampling_rate) << '\n'
      << "steps\t" << p.steps << '\n'
      << "delta\t" << internal::format_double(p.delta) << '\n'
      << "epsilon\t" << internal::format_double(p.epsilon) << '\n'
      << "rdp_order\t" << p.optimal_order << '\n';
}

std::vector<std::vector<Index>> load_lists_any(const std::string& path,
                                               std::size_t n_users) {
  auto in = open_in(path);
  std::string first;
  std::getline(in, first);
  in.seekg(0);
  if (first.rfind("# dpfair-reclists", 0) == 0) {
    const RecLists l = read_rec_lists(in);
    if (l.size() != n_users) throw InvalidInput("list file covers a different user count");
    std::vector<std::vector<Index>> out;
    for (const auto& r : l) out.push_back(r.items);
    return out;
  }
  return read_solution_lists(in, n_users);
}

void write_report(std::ostream& out, const std::vector<MetricsReport>& reps) {
  out << "metric\ttotal\tactive\tinactive\tgap\tusers\n";
  for (const auto& r : reps)
    out << r.metric << '\t' << internal::format_fixed(100 * r.values.total, 2) << '\t'
        << internal::format_fixed(100 * r.values.active, 2) << '\t'
        << internal::format_fixed(100 * r.values.inactive, 2) << '\t'
        << internal::format_fixed(100 * r.values.gap, 2) << '\t' << r.values.n_total
        << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private recommender training with fair re-ranking"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic skewed-activity log");
  SyntheticConfig sc;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output CSV")->required();
  synth->add_option("--users", sc.users);
  synth->add_option("--items", sc.items);
  synth->add_option("--clusters", sc.clusters);
  synth->add_option("--light-interactions", sc.light_interactions);
  synth->add_option("--activity-ratio", sc.activity_ratio);
  synth->add_option("--cluster-affinity", sc.cluster_affinity);
  synth->add_option("--seed", sc.seed);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Binarize, index, split and sample negatives");
  std::string ingest_in, ingest_out, feedback = "rating", rejected_path;
  std::uint64_t ingest_seed = 0;
  ingest->add_option("--input", ingest_in, "user,item,value[,timestamp] file or Amazon JSON lines")
      ->required();
  ingest->add_option("--out", ingest_out, "Dataset bundle (.json)")->required();
  ingest->add_option("--feedback", feedback, "rating or implicit");
  ingest->add_option("--seed", ingest_seed);
  ingest->add_option("--rejected", rejected_path, "Write rejected rows here");

  // train
  auto* train = app.add_subcommand("train", "DP-SGD training");
  std::string cfg_path, ds_path, ckpt_path, log_path;
  train->add_option("--config", cfg_path)->required();
  train->add_option("--dataset", ds_path, "Dataset bundle; defaults to the config's data")
      ->envname("DPFAIR_DATASET_BUNDLE");
  train->add_option("--out", ckpt_path, "Checkpoint (.json)")->required();
  train->add_option("--log", log_path, "Training log (TSV)");

  // recommend
  auto* rec = app.add_subcommand("recommend", "Top-K candidate lists");
  std::string lists_path;
  std::size_t K = 20;
  bool keep_validation = false;
  rec->add_option("--dataset", ds_path)->required();
  rec->add_option("--checkpoint", ckpt_path)->required();
  rec->add_option("--K", K);
  rec->add_flag("--keep-validation", keep_validation,
                "Do not exclude validation positives from candidates");
  rec->add_option("--out", lists_path)->required();

  // rerank
  auto* rr = app.add_subcommand("rerank", "Fairness-constrained re-ranking");
  std::string instance_path, solution_path, instance_out, constraint_split = "test",
                                                        alpha_mode = "absolute";
  double alpha = std::numeric_limits<double>::infinity();
  std::size_t k = 10, max_nodes = 5'000'000;
  rr->add_option("--instance", instance_path, "Instance file (alternative to --dataset/--lists)");
  rr->add_option("--dataset", ds_path);
  rr->add_option("--lists", lists_path);
  rr->add_option("--alpha", alpha);
  rr->add_option("--alpha-mode", alpha_mode, "absolute or relative");
  rr->add_option("--k", k);
  rr->add_option("--constraint-split", constraint_split);
  rr->add_option("--max-nodes", max_nodes);
  rr->add_option("--write-instance", instance_out);
  rr->add_option("--out", solution_path)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "NDCG@k / F1@k by user group");
  std::string split = "test";
  ev->add_option("--dataset", ds_path)->required();
  ev->add_option("--lists", lists_path, "Candidate lists or a solution file")->required();
  ev->add_option("--k", k);
  ev->add_option("--split", split);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid sweep over C or alpha");
  std::string sweep_out;
  sw->add_option("--config", cfg_path)->required();
  sw->add_option("--out", sweep_out)->required();

  // accountant
  auto* acc = app.add_subcommand("accountant", "RDP accounting or noise calibration");
  double q = 0, delta = 0, z = -1, eps = -1;
  std::size_t steps = 0;
  acc->add_option("--q", q)->required();
  acc->add_option("--steps", steps)->required();
  acc->add_option("--delta", delta)->required();
  auto* z_opt = acc->add_option("--z", z, "Noise multiplier -> epsilon");
  auto* e_opt = acc->add_option("--epsilon", eps, "Epsilon target -> noise multiplier");
  z_opt->excludes(e_opt);

  // report
  auto* rep = app.add_subcommand("report", "End-to-end run with report and manifest");
  std::string report_out;
  rep->add_option("--config", cfg_path)->required();
  rep->add_option("--out", report_out, "Report TSV (defaults to <output.dir>/<hash>.report.tsv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*synth) {
      auto out = open_out(synth_out);
      out << "user,item,value\n";
      for (const auto& r : generate_synthetic(sc))
        out << r.user_key << ',' << r.item_key << ",1\n";
    } else if (*ingest) {
      auto in = open_in(ingest_in);
      std::vector<RejectedRow> rejected;
      const auto raw = read_interactions(in, &rejected);
      const Dataset ds = build_dataset(raw, parse_feedback_kind(feedback), ingest_seed, &rejected);
      save_dataset(ds, ingest_out);
      print_stats(std::cout, "raw", raw_stats(raw));
      print_stats(std::cout, "positives", dataset_stats(ds));
      std::cout << "train\t" << ds.train.size() << "\nvalidation\t" << ds.validation.size()
                << "\ntest\t" << ds.test.size() << "\nrejected\t" << rejected.size() << '\n';
      if (!rejected_path.empty()) {
        auto out = open_out(rejected_path);
        for (const auto& r : rejected) out << r.line << '\t' << r.reason << '\n';
      }
    } else if (*train) {
      ExperimentConfig c = load_config(cfg_path);
      const Dataset ds = ds_path.empty() ? load_experiment_dataset(c)
                                         : load_any_dataset(ds_path, c.feedback, c.seed);
      TrainConfig t = resolved_train_config(ds, c);
      std::ofstream log;
      if (!log_path.empty()) {
        log = open_out(log_path);
        log << "step\tbatch\tloss\tepsilon\n";
        if (t.log_every == 0) t.log_every = std::max<std::size_t>(1, t.steps / 20);
        t.on_log = [&](const TrainLogEntry& e) {
          log << e.step << '\t' << e.batch_size << '\t' << e.batch_loss << '\t'
              << internal::format_double(e.epsilon_so_far) << '\n';
        };
      }
      TrainResult r;
      try {
        r = train_dp(ds, t);
      } catch (const TrainingDiverged& e) {
        save_checkpoint(e.last_good(), ckpt_path + ".last_good.json");
        throw;
      }
      save_checkpoint(r.params, ckpt_path);
      print_certificate(std::cout, r.privacy);
      std::cout << "config_hash\t" << config_hash(c) << '\n';
    } else if (*rec) {
      const Dataset ds = load_dataset(ds_path);
      const ModelParams p = load_checkpoint(ckpt_path);
      if (p.n_users != ds.n_users || p.n_items != ds.n_items)
        throw InvalidInput("checkpoint does not match the dataset's index spaces");
      auto out = open_out(lists_path);
      write_rec_lists(out, top_k_lists(p, ds, K, !keep_validation));
    } else if (*rr) {
      RerankInstance inst;
      if (!instance_path.empty()) {
        auto in = open_in(instance_path);
        inst = read_instance(in);
      } else {
        if (ds_path.empty() || lists_path.empty())
          throw InvalidInput("rerank needs --instance or both --dataset and --lists");
        const Dataset ds = load_dataset(ds_path);
        auto in = open_in(lists_path);
        const RecLists lists = read_rec_lists(in);
        inst = make_instance(lists, RelevanceLabels::from(ds, constraint_split),
                             group_users(ds), alpha, k);
        if (alpha_mode == "relative") {
          std::vector<std::size_t> h;
          for (const auto& p : build_profiles(inst)) h.push_back(p.h_unconstrained);
          inst.alpha = alpha * static_cast<double>(Rational(abs(signed_f1_gap(inst, h))));
        } else if (alpha_mode != "absolute") {
          throw InvalidInput("--alpha-mode must be absolute or relative");
        }
      }
      if (!instance_out.empty()) {
        auto out = open_out(instance_out);
        write_instance(out, inst);
      }
      const RerankSolution sol = solve(inst, SolveOptions{max_nodes});
      if (audit_gap(inst, sol.lists) != sol.gap_exact)
        throw StageFailure("rerank", "post-solve audit disagrees with the solver gap");
      auto out = open_out(solution_path);
      write_solution(out, inst, sol);
      std::cout << "objective\t" << internal::format_double(sol.objective) << "\ngap\t"
                << internal::format_double(sol.gap) << "\nfeasible\t" << sol.feasible
                << "\nnodes\t" << sol.nodes << '\n';
      if (!sol.feasible) std::cerr << "warning: no selection meets alpha; gap minimized\n";
    } else if (*ev) {
      const Dataset ds = load_dataset(ds_path);
      const auto lists = load_lists_any(lists_path, ds.n_users);
      write_report(std::cout, evaluate_lists(lists, RelevanceLabels::from(ds, split),
                                             group_users(ds), k));
    } else if (*sw) {
      const ExperimentConfig c = load_config(cfg_path);
      if (c.sweep_param.empty()) throw InvalidInput("config has no [sweep] section");
      const Dataset ds = internal::stage("ingest", [&] { return load_experiment_dataset(c); });
      const auto pts = sweep(ds, c);
      auto out = open_out(sweep_out);
      out << sweep_header() << '\n';
      for (const auto& row : sweep_rows(c.sweep_param, pts)) out << row << '\n';
      std::size_t failed = 0;
      for (const auto& p : pts) failed += !p.result;
      if (failed) std::cerr << failed << " sweep point(s) failed; see the error column\n";
    } else if (*acc) {
      if (*e_opt) {
        const double zz = calibrate_noise(eps, delta, q, steps);
        const auto r = rdp_epsilon(zz, q, steps, delta);
        std::cout << "z\t" << internal::format_double(zz) << "\nepsilon\t"
                  << internal::format_double(r.epsilon) << "\nrdp_order\t" << r.optimal_order
                  << '\n';
      } else {
        if (!*z_opt) throw InvalidInput("accountant needs --z or --epsilon");
        const auto r = rdp_epsilon(z, q, steps, delta);
        std::cout << "epsilon\t" << internal::format_double(r.epsilon) << "\nrdp_order\t"
                  << r.optimal_order << '\n';
      }
    } else if (*rep) {
      const ExperimentConfig c = load_config(cfg_path);
      const std::string hash = config_hash(c);
      const Dataset ds = internal::stage("ingest", [&] { return load_experiment_dataset(c); });
      const UserGroups groups = group_users(ds);
      const TrainConfig t = resolved_train_config(ds, c);
      const TrainResult tr = internal::stage("train", [&] { return train_dp(ds, t); });
      ExperimentConfig used = c;
      used.train.bounds = t.bounds;
      const ExperimentResult r = rerank_and_evaluate(ds, groups, tr.params, used, tr.privacy);

      const std::filesystem::path dir(c.output_dir);
      const std::string ckpt = (dir / (hash + ".checkpoint.json")).string();
      const std::string report = report_out.empty()
                                     ? (dir / (hash + ".report.tsv")).string()
                                     : report_out;
      open_out(ckpt).close();  // creates the output directory
      save_checkpoint(tr.params, ckpt);
      {
        auto out = open_out(report);
        out << report_header() << '\n';
        for (const auto& row : report_rows(r, hash)) out << row << '\n';
      }
      RunManifest m{hash, c.seed, {ckpt}, {report}, tr.privacy};
      auto mout = open_out((dir / (hash + ".manifest.json")).string());
      mout << m.to_json().dump(2) << '\n';
      std::cout << report_header() << '\n';
      for (const auto& row : report_rows(r, hash)) std::cout << row << '\n';
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const StageFailure& e) {
    std::cerr << "stage failure [" << e.stage() << "]: " << e.what() << '\n';
    return kStageFailure;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << '\n';
    return kStageFailure;
  }
  return 0;
}
