// Command-line front end: run, bench, gen-synthetic, check-assumption.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "abc3/data.hpp"
#include "abc3/error.hpp"
#include "abc3/metrics.hpp"
#include "abc3/runner.hpp"

namespace {

using namespace abc3;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  // "0,3,5" or "0-49" or a mix
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    if (part.empty()) continue;
    try {
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash));
        const auto hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw ConfigError("seed range '" + part + "' is reversed");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

struct Overrides {
  std::string config;
  std::string dataset;
  std::string policy;
  std::string seeds;
  std::string out;
  std::string decisions_out;
  std::optional<double> checkpoint_fraction;
  std::optional<double> budget_fraction;
  std::optional<Index> budget;
  bool null_hypothesis = false;
  bool no_refit = false;
  bool no_diagnostics = false;
  bool no_timing = false;
  std::optional<double> alpha;
  std::string acq_kernel;
  std::optional<double> acq_lengthscale;
  std::optional<double> acq_noise;
  std::optional<double> acq_nu;
  std::optional<double> acq_periodicity;
  std::optional<Index> scale_sample_n;
  std::optional<Index> scale_obs_sample;
  std::optional<double> scale_tol;
  std::optional<int> scale_max_iters;
  std::string scale_optimizer;
  std::optional<int> threads;

  void add_to(CLI::App* app, bool with_policy) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--dataset", dataset, "CSV path or synthetic:<kind>:<n>:<d>[:<seed>]");
    if (with_policy) app->add_option("--policy", policy, "one of: " + policy_names());
    app->add_option("--seeds", seeds, "seed list, e.g. 0,1,2 or 0-49");
    app->add_option("--checkpoint-fraction", checkpoint_fraction);
    app->add_option("--budget-fraction", budget_fraction);
    app->add_option("--budget", budget, "absolute observation budget");
    app->add_flag("--null-hypothesis", null_hypothesis, "set y1 := y0 on load");
    app->add_flag("--no-refit", no_refit, "keep regression hyperparameters at their initial values");
    app->add_flag("--no-diagnostics", no_diagnostics, "skip pehe_omega and bound_rhs");
    app->add_flag("--no-timing", no_timing, "write wall_ms = 0");
    app->add_option("--alpha", alpha, "z threshold for the type-1 test");
    app->add_option("--acq-kernel", acq_kernel, "rbf, matern, exp-sine-squared");
    app->add_option("--acq-lengthscale", acq_lengthscale);
    app->add_option("--acq-noise", acq_noise);
    app->add_option("--acq-nu", acq_nu);
    app->add_option("--acq-periodicity", acq_periodicity);
    app->add_option("--scale-sample-n", scale_sample_n);
    app->add_option("--scale-obs-sample", scale_obs_sample);
    app->add_option("--scale-tol", scale_tol);
    app->add_option("--scale-max-iters", scale_max_iters);
    app->add_option("--scale-optimizer", scale_optimizer, "quasi-newton or coordinate-descent");
    app->add_option("--threads", threads);
  }

  void apply(ExperimentConfig& c) const {
    if (!dataset.empty()) c.dataset = dataset;
    if (!policy.empty()) c.policy = parse_policy(policy);
    if (!seeds.empty()) c.seeds = parse_seeds(seeds);
    if (checkpoint_fraction) c.checkpoint_fraction = *checkpoint_fraction;
    if (budget_fraction) c.budget_fraction = *budget_fraction;
    if (budget) c.budget = *budget;
    if (null_hypothesis) c.null_hypothesis = true;
    if (no_refit) c.refit_hyperparams_at_checkpoints = false;
    if (no_diagnostics) c.diagnostics = false;
    if (no_timing) c.timing = false;
    if (alpha) c.alpha = *alpha;
    if (!acq_kernel.empty()) c.acquisition.family = parse_kernel_family(acq_kernel);
    if (acq_lengthscale) c.acquisition.lengthscale = *acq_lengthscale;
    if (acq_noise) c.acquisition.noise_variance = *acq_noise;
    if (acq_nu) c.acquisition.nu = *acq_nu;
    if (acq_periodicity) c.acquisition.periodicity = *acq_periodicity;
    if (scale_sample_n) c.scale.sample_n = *scale_sample_n;
    if (scale_obs_sample) c.scale.obs_sample = *scale_obs_sample;
    if (scale_tol) c.scale.tolerance = *scale_tol;
    if (scale_max_iters) c.scale.max_iters = *scale_max_iters;
    if (!scale_optimizer.empty()) c.scale.optimizer = parse_scale_optimizer(scale_optimizer);
    if (threads) c.threads = *threads;
  }
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

// 0 unless every seed failed, then 2 for numerical failures and 1 otherwise.
int report_failures(const std::vector<SeedFailure>& failures, std::size_t seeds) {
  for (const auto& f : failures) std::cerr << "warning: " << f.message << " (seed skipped)\n";
  if (failures.empty() || failures.size() < seeds) return 0;
  std::cerr << "error: every seed failed\n";
  return failures.front().numerical ? 2 : 1;
}

int cmd_run(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : config_from_json(read_json(o.config));
  o.apply(c);
  if (!o.out.empty()) c.output = o.out;
  if (!o.decisions_out.empty()) c.decisions_output = o.decisions_out;
  const ExperimentResult r = run_experiment(c);
  const int code = report_failures(r.failures, c.seeds.size());
  if (c.output.empty()) write_metrics_jsonl(std::cout, r.records);
  write_outputs(c, r);
  return code;
}

int cmd_bench(const Overrides& o, const std::string& policies, const std::string& records_out,
              const std::string& timing_out) {
  std::vector<ExperimentConfig> configs;
  if (o.config.empty()) {
    configs.emplace_back();
  } else {
    configs = bench_configs_from_json(read_json(o.config));
  }
  if (!policies.empty()) {
    std::vector<ExperimentConfig> expanded;
    std::stringstream ss(policies);
    for (std::string p; std::getline(ss, p, ',');) {
      for (auto c : configs) {
        c.policy = parse_policy(p);
        expanded.push_back(c);
      }
    }
    configs = std::move(expanded);
  }
  for (auto& c : configs) {
    const PolicyKind kept = c.policy;
    o.apply(c);
    if (!policies.empty()) c.policy = kept;
  }
  const BenchResult r = bench(configs);
  for (const auto& f : r.failures)
    std::cerr << "warning: config " << f.config_index << " (" << f.policy << "): "
              << f.failure.message << " (seed skipped)\n";
  write_text(o.out, format_summary_csv(r.summary));
  if (!records_out.empty()) {
    std::ofstream out(records_out);
    if (!out) throw InputError("cannot write " + records_out);
    write_metrics_jsonl(out, r.records);
  }
  if (!timing_out.empty()) write_text(timing_out, format_timing_csv(r.timing));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active Bayesian causal inference experiments"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "run one experiment and write metrics JSONL");
  run_opts.add_to(run, true);
  run->add_option("--out", run_opts.out, "metrics JSONL path (default stdout)");
  run->add_option("--decisions-out", run_opts.decisions_out, "decision log JSONL path");

  Overrides bench_opts;
  std::string bench_policies, bench_records, bench_timing;
  auto* bench_cmd = app.add_subcommand("bench", "run experiments and write a summary CSV");
  bench_opts.add_to(bench_cmd, false);
  bench_cmd->add_option("--policies", bench_policies, "comma list; one of: " + policy_names());
  bench_cmd->add_option("--out", bench_opts.out, "summary CSV path (default stdout)");
  bench_cmd->add_option("--records-out", bench_records, "raw metrics JSONL path");
  bench_cmd->add_option("--timing-out", bench_timing, "wall-time CSV path");

  std::string gen_kind = "smooth-gp", gen_out;
  Index gen_n = 200, gen_d = 5;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0.1;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic pool as CSV");
  gen->add_option("--kind", gen_kind, "smooth-gp, linear or null");
  gen->add_option("--n", gen_n);
  gen->add_option("--d", gen_d);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--noise", gen_noise, "outcome noise sd");
  gen->add_option("--out", gen_out, "CSV path (default stdout)");

  std::string ca_dataset, ca_out;
  int ca_perms = 100;
  std::uint64_t ca_seed = 0;
  double ca_lengthscale = 1.0;
  bool ca_null = false;
  auto* check = app.add_subcommand("check-assumption", "per-n CSV of 2 delta* vs eps*");
  check->add_option("--dataset", ca_dataset)->required();
  check->add_option("--permutations", ca_perms);
  check->add_option("--seed", ca_seed);
  check->add_option("--lengthscale", ca_lengthscale, "RBF lengthscale");
  check->add_flag("--null-hypothesis", ca_null);
  check->add_option("--out", ca_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*bench_cmd) return cmd_bench(bench_opts, bench_policies, bench_records, bench_timing);
    if (*gen) {
      SyntheticOptions opts;
      opts.noise = gen_noise;
      const CovariatePool pool = gen_synthetic(parse_synthetic_kind(gen_kind), gen_n, gen_d, gen_seed, opts);
      write_text(gen_out, format_csv(pool));
      return 0;
    }
    if (*check) {
      const CovariatePool pool = load_dataset(ca_dataset, ca_null);
      Rng rng(ca_seed);
      const auto reports = check_assumption(KernelSpec::rbf(ca_lengthscale), pool.X, ca_perms, rng);
      write_text(ca_out, format_assumption_csv(reports));
      return 0;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
