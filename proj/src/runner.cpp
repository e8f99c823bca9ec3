#include "abc3/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "abc3/error.hpp"
#include "abc3/gp.hpp"
#include "abc3/metrics.hpp"

namespace abc3 {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void require_keys(const json& doc, std::initializer_list<const char*> allowed, const char* what) {
  if (!doc.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& [key, _] : doc.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end())
      throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

bool needs_pool_cache(PolicyKind p) {
  return p == PolicyKind::ABC3 || p == PolicyKind::Mackay || p == PolicyKind::ACE;
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json optional_json(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

std::optional<double> optional_from(const json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<double>();
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

MatrixXd rows_of(const MatrixXd& pool, const std::vector<Index>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), pool.cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = pool.row(idx[r]);
  return out;
}

// State of one seed's run; evaluation reads only what the arm states hold.
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& config, const CovariatePool& pool, std::uint64_t seed,
          const RunHooks& hooks, const std::string& dataset_name)
      : config_(config), seed_(seed), hooks_(hooks), dataset_name_(dataset_name) {
    sp_ = split(pool, SplitSpec{seed, config.train_fraction, config.null_hypothesis});
    if (hooks.mutate_train) hooks.mutate_train(sp_.train, seed);
    n_ = sp_.train.size();
    budget_ = config.budget ? *config.budget
                            : static_cast<Index>(std::ceil(config.budget_fraction *
                                                           static_cast<double>(n_) - 1e-9));
    if (budget_ > n_) {
      std::ostringstream os;
      os << "budget " << budget_ << " exceeds train pool size " << n_;
      throw ConfigError(os.str());
    }
    steps_ = checkpoint_steps(n_, config.checkpoint_fraction, budget_);
  }

  void run(std::vector<MetricsRecord>& records, std::vector<DecisionLogEntry>& decisions) {
    if (steps_.empty()) return;
    const MatrixXd& X = sp_.train.X;
    const bool evaluate = !hooks_.skip_evaluation;
    const bool diagnostics = evaluate && config_.diagnostics;
    if (needs_pool_cache(config_.policy) || diagnostics) {
      const MatrixXd* test = config_.policy == PolicyKind::ACE ? &sp_.test.X : nullptr;
      cache_ = PoolCache::build(config_.acquisition, X, test, diagnostics, Exec::Parallel);
    }
    if (diagnostics) fit_oracle();
    cache_arms_ = needs_pool_cache(config_.policy);

    if (config_.policy == PolicyKind::Leverage)
      run_leverage(records, decisions, evaluate);
    else
      run_sequential(records, decisions, evaluate);
  }

  [[nodiscard]] Index current_step() const { return step_; }
  [[nodiscard]] double decision_ms() const { return decision_ms_; }
  [[nodiscard]] Index decision_count() const { return decision_count_; }
  [[nodiscard]] Index violations() const { return violations_; }

 private:
  void fit_oracle() {
    const MatrixXd& X = sp_.train.X;
    std::vector<Index> all(static_cast<size_t>(n_));
    for (Index i = 0; i < n_; ++i) all[i] = i;
    const RegressionModel m0 = fit_regression(X, all, sp_.train.y0, regression_options(0, 0));
    const RegressionModel m1 = fit_regression(X, all, sp_.train.y1, regression_options(0, 1));
    cate_omega_ = m1.predict(sp_.test.X).mean - m0.predict(sp_.test.X).mean;
  }

  RegressionOptions regression_options(Index step, int arm) const {
    RegressionOptions o;
    o.init = config_.regression;
    o.optimize = config_.refit_hyperparams_at_checkpoints;
    o.restarts = config_.hyper_restarts;
    o.seed = derive_seed(seed_, static_cast<std::uint64_t>(step) + 1, static_cast<std::uint64_t>(arm));
    return o;
  }

  ArmState empty_arm(Arm a) const {
    return ArmState::fit(config_.acquisition, sp_.train.X, {}, VectorXd(0), a, cache_arms_);
  }

  PolicyDecision decide(const ArmState& control, const ArmState& treatment, Rng& rng) {
    const MatrixXd& X = sp_.train.X;
    switch (config_.policy) {
      case PolicyKind::ABC3:
      case PolicyKind::Naive:
      case PolicyKind::Mackay:
      case PolicyKind::ACE: {
        const PolicyContext ctx{X, cache_, control, treatment, rng, &sp_.test.X, Exec::Parallel};
        if (config_.policy == PolicyKind::ABC3) return decide_abc3(ctx);
        if (config_.policy == PolicyKind::Naive) return decide_naive(ctx);
        if (config_.policy == PolicyKind::Mackay) return decide_mackay(ctx);
        return decide_ace(ctx);
      }
      case PolicyKind::ABC3Scaled:
      case PolicyKind::Sample: {
        const ScaleContext ctx{X, config_.acquisition, control.indices(), treatment.indices()};
        if (config_.policy == PolicyKind::Sample) return decide_sample(ctx, config_.scale, rng);
        return decide_abc3_scaled(ctx, config_.scale, rng).decision;
      }
      case PolicyKind::Leverage:
        break;
    }
    throw StateError("leverage is not a sequential policy");
  }

  void run_sequential(std::vector<MetricsRecord>& records,
                      std::vector<DecisionLogEntry>& decisions, bool evaluate) {
    const MatrixXd& X = sp_.train.X;
    OutcomeOracle oracle(sp_.train);
    ArmState arms[2] = {empty_arm(Arm::Control), empty_arm(Arm::Treatment)};
    Rng rng(derive_seed(seed_, 0x706f6c696379ULL));
    size_t next = 0;
    for (step_ = 1; step_ <= budget_; ++step_) {
      const auto start = Clock::now();
      const PolicyDecision d = decide(arms[0], arms[1], rng);
      const double y = oracle.reveal(d.subject, d.arm);
      ArmState& target = arms[arm_index(d.arm)];
      target = target.extend(X, d.subject, y);
      decision_ms_ += ms_since(start);
      ++decision_count_;

      DecisionLogEntry e{seed_, step_, static_cast<Index>(next), d.subject, d.arm, d.score};
      decisions.push_back(e);
      if (hooks_.on_decision) hooks_.on_decision(e);

      if (next < steps_.size() && step_ == steps_[next]) {
        if (evaluate) records.push_back(evaluate_at(arms[0], arms[1]));
        ++next;
      }
    }
    violations_ += oracle.violations();
  }

  void run_leverage(std::vector<MetricsRecord>& records, std::vector<DecisionLogEntry>& decisions,
                    bool evaluate) {
    const MatrixXd& X = sp_.train.X;
    Rng rng(derive_seed(seed_, 0x706f6c696379ULL));
    for (size_t c = 0; c < steps_.size(); ++c) {
      step_ = steps_[c];
      const auto start = Clock::now();
      const std::vector<PolicyDecision> batch = decide_leverage(X, step_, rng);
      OutcomeOracle oracle(sp_.train);
      std::vector<Index> idx[2];
      std::vector<double> ys[2];
      for (const auto& d : batch) {
        idx[arm_index(d.arm)].push_back(d.subject);
        ys[arm_index(d.arm)].push_back(oracle.reveal(d.subject, d.arm));
      }
      ArmState arms[2];
      for (int a = 0; a < 2; ++a) {
        const VectorXd y = Eigen::Map<const VectorXd>(ys[a].data(), static_cast<Index>(ys[a].size()));
        arms[a] = ArmState::fit(config_.acquisition, X, idx[a], y, static_cast<Arm>(a), cache_arms_);
      }
      decision_ms_ += ms_since(start);
      decision_count_ += static_cast<Index>(batch.size());
      violations_ += oracle.violations();

      for (size_t k = 0; k < batch.size(); ++k) {
        DecisionLogEntry e{seed_, static_cast<Index>(k + 1), static_cast<Index>(c),
                           batch[k].subject, batch[k].arm, batch[k].score};
        decisions.push_back(e);
        if (hooks_.on_decision) hooks_.on_decision(e);
      }
      if (evaluate) records.push_back(evaluate_at(arms[0], arms[1]));
    }
  }

  MetricsRecord evaluate_at(const ArmState& control, const ArmState& treatment) {
    const MatrixXd& X = sp_.train.X;
    MetricsRecord r;
    r.dataset = dataset_name_;
    r.policy = to_string(config_.policy);
    r.seed = seed_;
    r.step = step_;
    r.frac_observed = static_cast<double>(step_) / static_cast<double>(n_);
    r.n_treat = treatment.size();
    r.n_control = control.size();
    r.wall_ms = config_.timing ? decision_ms_ : 0.0;

    const RegressionModel m0 =
        fit_regression(X, control.indices(), control.outcomes(), regression_options(step_, 0));
    const RegressionModel m1 =
        fit_regression(X, treatment.indices(), treatment.outcomes(), regression_options(step_, 1));
    const Posterior p0 = m0.predict(sp_.test.X);
    const Posterior p1 = m1.predict(sp_.test.X);
    const VectorXd cate_hat = p1.mean - p0.mean;
    r.pehe = pehe(cate_hat, sp_.test.cate());
    if (cate_omega_.size() > 0) r.pehe_omega = pehe_omega(cate_hat, cate_omega_);

    if (control.size() > 0 && treatment.size() > 0) {
      if (config_.diagnostics && cache_.lambda_star) {
        Rng unused(0);
        const PolicyContext ctx{X, cache_, control, treatment, unused, nullptr, Exec::Parallel};
        const MmdReport m = mmd_bound_report(ctx);
        r.mmd_sq = m.mmd_sq;
        r.bound_rhs = m.bound_rhs;
      } else {
        r.mmd_sq = mmd_sq(config_.acquisition, rows_of(X, control.indices()),
                          rows_of(X, treatment.indices()));
      }
    }
    if (sp_.test.is_null() && sp_.train.is_null())
      r.type1_rate = type1_test(p0, p1, config_.alpha).rejection_rate;
    if (hooks_.on_record) hooks_.on_record(r);
    return r;
  }

  const ExperimentConfig& config_;
  std::uint64_t seed_;
  const RunHooks& hooks_;
  std::string dataset_name_;
  Split sp_;
  Index n_ = 0;
  Index budget_ = 0;
  std::vector<Index> steps_;
  PoolCache cache_;
  bool cache_arms_ = false;
  VectorXd cate_omega_;
  Index step_ = 0;
  double decision_ms_ = 0.0;
  Index decision_count_ = 0;
  Index violations_ = 0;
};

}  // namespace

void ExperimentConfig::validate() const {
  if (!(checkpoint_fraction > 0.0 && checkpoint_fraction <= 1.0))
    throw ConfigError("checkpoint_fraction must be in (0, 1]");
  if (!(budget_fraction >= 0.0 && budget_fraction <= 1.0))
    throw ConfigError("budget_fraction must be in [0, 1]");
  if (budget && *budget < 0) throw ConfigError("budget must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0, 1)");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (hyper_restarts < 1) throw ConfigError("hyper_restarts must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (regression.family != KernelFamily::Composite)
    throw ConfigError("regression kernel must be composite");
  acquisition.validate();
  regression.validate();
  scale.validate();
}

KernelSpec kernel_from_json(const json& doc, const KernelSpec& defaults) {
  require_keys(doc,
               {"family", "lengthscale", "nu", "periodicity", "constant_scale", "white_noise",
                "noise_variance"},
               "kernel");
  KernelSpec k = defaults;
  if (doc.contains("family")) k.family = parse_kernel_family(doc.at("family").get<std::string>());
  k.lengthscale = get_or(doc, "lengthscale", k.lengthscale);
  k.nu = get_or(doc, "nu", k.nu);
  k.periodicity = get_or(doc, "periodicity", k.periodicity);
  k.constant_scale = get_or(doc, "constant_scale", k.constant_scale);
  k.white_noise = get_or(doc, "white_noise", k.white_noise);
  k.noise_variance = get_or(doc, "noise_variance", k.noise_variance);
  k.validate();
  return k;
}

json kernel_to_json(const KernelSpec& k) {
  json j{{"family", to_string(k.family)}, {"lengthscale", k.lengthscale}, {"noise_variance", k.noise_variance}};
  if (k.family == KernelFamily::Matern) j["nu"] = k.nu;
  if (k.family == KernelFamily::ExpSineSquared) j["periodicity"] = k.periodicity;
  if (k.family == KernelFamily::Composite) {
    j["constant_scale"] = k.constant_scale;
    j["white_noise"] = k.white_noise;
  }
  return j;
}

ExperimentConfig config_from_json(const json& doc) {
  require_keys(doc,
               {"dataset", "null_hypothesis", "policy", "seeds", "checkpoint_fraction",
                "budget_fraction", "budget", "train_fraction", "acquisition_kernel",
                "regression_kernel", "refit_hyperparams_at_checkpoints", "hyper_restarts", "alpha",
                "diagnostics", "timing", "scale", "threads", "output", "decisions_output"},
               "config");
  ExperimentConfig c;
  c.dataset = get_or<std::string>(doc, "dataset", c.dataset);
  c.null_hypothesis = get_or(doc, "null_hypothesis", c.null_hypothesis);
  if (doc.contains("policy")) c.policy = parse_policy(doc.at("policy").get<std::string>());
  if (doc.contains("seeds")) {
    const json& s = doc.at("seeds");
    c.seeds.clear();
    if (s.is_number_unsigned()) {
      for (std::uint64_t i = 0; i < s.get<std::uint64_t>(); ++i) c.seeds.push_back(i);
    } else if (s.is_array()) {
      for (const auto& v : s) {
        if (!v.is_number_unsigned()) throw ConfigError("seeds: expected non-negative integers");
        c.seeds.push_back(v.get<std::uint64_t>());
      }
    } else {
      throw ConfigError("seeds: expected a list or a count");
    }
  }
  c.checkpoint_fraction = get_or(doc, "checkpoint_fraction", c.checkpoint_fraction);
  c.budget_fraction = get_or(doc, "budget_fraction", c.budget_fraction);
  if (doc.contains("budget") && !doc.at("budget").is_null()) c.budget = get_or<Index>(doc, "budget", 0);
  c.train_fraction = get_or(doc, "train_fraction", c.train_fraction);
  if (doc.contains("acquisition_kernel"))
    c.acquisition = kernel_from_json(doc.at("acquisition_kernel"), c.acquisition);
  if (doc.contains("regression_kernel"))
    c.regression = kernel_from_json(doc.at("regression_kernel"), c.regression);
  c.refit_hyperparams_at_checkpoints =
      get_or(doc, "refit_hyperparams_at_checkpoints", c.refit_hyperparams_at_checkpoints);
  c.hyper_restarts = get_or(doc, "hyper_restarts", c.hyper_restarts);
  c.alpha = get_or(doc, "alpha", c.alpha);
  c.diagnostics = get_or(doc, "diagnostics", c.diagnostics);
  c.timing = get_or(doc, "timing", c.timing);
  if (doc.contains("scale")) {
    const json& s = doc.at("scale");
    require_keys(s, {"sample_n", "obs_sample", "tolerance", "max_iters", "inner_iters", "optimizer"},
                 "scale");
    c.scale.sample_n = get_or(s, "sample_n", c.scale.sample_n);
    c.scale.obs_sample = get_or(s, "obs_sample", c.scale.obs_sample);
    c.scale.tolerance = get_or(s, "tolerance", c.scale.tolerance);
    c.scale.max_iters = get_or(s, "max_iters", c.scale.max_iters);
    c.scale.inner_iters = get_or(s, "inner_iters", c.scale.inner_iters);
    if (s.contains("optimizer"))
      c.scale.optimizer = parse_scale_optimizer(s.at("optimizer").get<std::string>());
  }
  c.threads = get_or(doc, "threads", c.threads);
  c.output = get_or<std::string>(doc, "output", c.output);
  c.decisions_output = get_or<std::string>(doc, "decisions_output", c.decisions_output);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j{{"dataset", c.dataset},
         {"null_hypothesis", c.null_hypothesis},
         {"policy", to_string(c.policy)},
         {"seeds", c.seeds},
         {"checkpoint_fraction", c.checkpoint_fraction},
         {"budget_fraction", c.budget_fraction},
         {"train_fraction", c.train_fraction},
         {"acquisition_kernel", kernel_to_json(c.acquisition)},
         {"regression_kernel", kernel_to_json(c.regression)},
         {"refit_hyperparams_at_checkpoints", c.refit_hyperparams_at_checkpoints},
         {"hyper_restarts", c.hyper_restarts},
         {"alpha", c.alpha},
         {"diagnostics", c.diagnostics},
         {"timing", c.timing},
         {"scale",
          {{"sample_n", c.scale.sample_n},
           {"obs_sample", c.scale.obs_sample},
           {"tolerance", c.scale.tolerance},
           {"max_iters", c.scale.max_iters},
           {"inner_iters", c.scale.inner_iters},
           {"optimizer", to_string(c.scale.optimizer)}}},
         {"threads", c.threads},
         {"output", c.output},
         {"decisions_output", c.decisions_output}};
  if (c.budget) j["budget"] = *c.budget;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

CovariatePool load_dataset(const std::string& spec, bool null_hypothesis) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) != 0) {
    if (spec.empty()) throw ConfigError("no dataset given");
    return load_csv(spec, CsvOptions{null_hypothesis});
  }
  std::vector<std::string> parts;
  std::stringstream ss(spec.substr(prefix.size()));
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.size() < 3 || parts.size() > 4)
    throw ConfigError("synthetic dataset spec must be synthetic:<kind>:<n>:<d>[:<seed>]");
  auto number = [&](const std::string& s, const char* what) -> std::uint64_t {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError(std::string("synthetic dataset spec: bad ") + what + " '" + s + "'");
    return v;
  };
  const SyntheticKind kind = parse_synthetic_kind(parts[0]);
  const auto n = static_cast<Index>(number(parts[1], "n"));
  const auto d = static_cast<Index>(number(parts[2], "d"));
  const std::uint64_t seed = parts.size() == 4 ? number(parts[3], "seed") : 0;
  CovariatePool pool = gen_synthetic(kind, n, d, seed);
  if (null_hypothesis) pool.y1 = pool.y0;
  pool.name = spec;
  return pool;
}

ordered_json to_json(const MetricsRecord& r) {
  ordered_json j;
  j["dataset"] = r.dataset;
  j["policy"] = r.policy;
  j["seed"] = r.seed;
  j["step"] = r.step;
  j["frac_observed"] = r.frac_observed;
  j["pehe"] = r.pehe;
  j["pehe_omega"] = optional_json(r.pehe_omega);
  j["mmd_sq"] = optional_json(r.mmd_sq);
  j["bound_rhs"] = optional_json(r.bound_rhs);
  j["n_treat"] = r.n_treat;
  j["n_control"] = r.n_control;
  j["type1_rate"] = optional_json(r.type1_rate);
  j["wall_ms"] = r.wall_ms;
  return j;
}

MetricsRecord record_from_json(const json& j) {
  MetricsRecord r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.policy = j.at("policy").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.step = j.at("step").get<Index>();
    r.frac_observed = j.at("frac_observed").get<double>();
    r.pehe = j.at("pehe").get<double>();
    r.pehe_omega = optional_from(j, "pehe_omega");
    r.mmd_sq = optional_from(j, "mmd_sq");
    r.bound_rhs = optional_from(j, "bound_rhs");
    r.n_treat = j.at("n_treat").get<Index>();
    r.n_control = j.at("n_control").get<Index>();
    r.type1_rate = optional_from(j, "type1_rate");
    r.wall_ms = j.at("wall_ms").get<double>();
  } catch (const json::exception& e) {
    throw InputError(std::string("metrics record: ") + e.what());
  }
  return r;
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  for (size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  return read_jsonl<MetricsRecord>(path, record_from_json);
}

ordered_json to_json(const DecisionLogEntry& e) {
  ordered_json j;
  j["seed"] = e.seed;
  j["step"] = e.step;
  j["checkpoint"] = e.checkpoint;
  j["subject"] = e.subject;
  j["arm"] = arm_index(e.arm);
  j["score"] = std::isfinite(e.score) ? json(e.score) : json(nullptr);
  return j;
}

DecisionLogEntry decision_from_json(const json& j) {
  DecisionLogEntry e;
  try {
    e.seed = j.at("seed").get<std::uint64_t>();
    e.step = j.at("step").get<Index>();
    e.checkpoint = j.value("checkpoint", Index{0});
    e.subject = j.at("subject").get<Index>();
    const int arm = j.at("arm").get<int>();
    if (arm != 0 && arm != 1) throw InputError("decision log: arm must be 0 or 1");
    e.arm = static_cast<Arm>(arm);
    e.score = j.at("score").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                      : j.at("score").get<double>();
  } catch (const json::exception& ex) {
    throw InputError(std::string("decision log: ") + ex.what());
  }
  return e;
}

std::vector<DecisionLogEntry> read_decisions_jsonl(const std::filesystem::path& path) {
  return read_jsonl<DecisionLogEntry>(path, decision_from_json);
}

OutcomeOracle::OutcomeOracle(const CovariatePool& pool)
    : pool_(pool), seen_(static_cast<size_t>(pool.size()), -1) {}

double OutcomeOracle::reveal(Index subject, Arm arm) {
  if (subject < 0 || subject >= pool_.size()) throw StateError("reveal: subject outside pool");
  signed char& s = seen_[subject];
  const auto a = static_cast<signed char>(arm_index(arm));
  if (s >= 0 && s != a) ++violations_;
  s = a;
  ++reveals_;
  return arm == Arm::Treatment ? pool_.y1[subject] : pool_.y0[subject];
}

std::vector<Index> checkpoint_steps(Index n, double fraction, Index budget) {
  std::vector<Index> out;
  if (n <= 0 || budget <= 0) return out;
  const int count = static_cast<int>(std::ceil(1.0 / fraction - 1e-9));
  for (int k = 1; k <= count; ++k) {
    const Index s = std::min<Index>(
        n, static_cast<Index>(std::ceil(k * fraction * static_cast<double>(n) - 1e-9)));
    if (s > budget) break;
    if (s > 0 && (out.empty() || s > out.back())) out.push_back(s);
  }
  if (budget < n && (out.empty() || out.back() < budget)) out.push_back(budget);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunHooks& hooks) {
  config.validate();
  if (config.threads > 0) set_threads(config.threads);
  CovariatePool loaded;
  const CovariatePool* pool = hooks.pool;
  if (pool == nullptr) {
    loaded = load_dataset(config.dataset, config.null_hypothesis);
    pool = &loaded;
  }
  const std::string name = config.dataset.empty() ? pool->name : config.dataset;

  ExperimentResult result;
  for (std::uint64_t seed : config.seeds) {
    std::vector<MetricsRecord> records;
    std::vector<DecisionLogEntry> decisions;
    Index step = 0;
    try {
      SeedRun run(config, *pool, seed, hooks, name);
      try {
        run.run(records, decisions);
      } catch (...) {
        step = run.current_step();
        throw;
      }
      result.decision_ms += run.decision_ms();
      result.decision_count += run.decision_count();
      result.oracle_violations += run.violations();
    } catch (const ConfigError&) {
      throw;  // the same for every seed
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "seed " << seed << " step " << step << ": " << e.what();
      const bool numerical = dynamic_cast<const NumericalError*>(&e) != nullptr;
      result.failures.push_back(SeedFailure{seed, step, os.str(), numerical});
      continue;
    }
    result.records.insert(result.records.end(), records.begin(), records.end());
    result.decisions.insert(result.decisions.end(), decisions.begin(), decisions.end());
  }
  return result;
}

void write_metrics_jsonl(std::ostream& out, const std::vector<MetricsRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

void write_decisions_jsonl(std::ostream& out, const std::vector<DecisionLogEntry>& decisions) {
  for (const auto& e : decisions) out << to_json(e).dump() << '\n';
}

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result) {
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    return out;
  };
  if (!config.output.empty()) {
    auto out = open(config.output);
    write_metrics_jsonl(out, result.records);
  }
  if (!config.decisions_output.empty()) {
    auto out = open(config.decisions_output);
    write_decisions_jsonl(out, result.decisions);
  }
}

std::size_t replay_mismatches(const ExperimentConfig& config,
                              const std::vector<DecisionLogEntry>& log, const RunHooks& hooks) {
  RunHooks replay = hooks;
  replay.skip_evaluation = true;
  replay.on_record = nullptr;
  replay.on_decision = nullptr;
  const ExperimentResult again = run_experiment(config, replay);
  std::size_t mismatches = 0;
  const size_t n = std::min(log.size(), again.decisions.size());
  for (size_t i = 0; i < n; ++i) {
    const auto& a = log[i];
    const auto& b = again.decisions[i];
    if (a.seed != b.seed || a.step != b.step || a.subject != b.subject || a.arm != b.arm)
      ++mismatches;
  }
  mismatches += std::max(log.size(), again.decisions.size()) - n;
  return mismatches;
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records) {
  struct Acc {
    std::vector<double> pehe, mmd, type1, wall;
  };
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, Acc> groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.policy, r.frac_observed);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    Acc& a = it->second;
    a.pehe.push_back(r.pehe);
    if (r.mmd_sq) a.mmd.push_back(*r.mmd_sq);
    if (r.type1_rate) a.type1.push_back(*r.type1_rate);
    a.wall.push_back(r.wall_ms);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const Acc& a = groups.at(key);
    SummaryRow row;
    row.policy = key.first;
    row.frac = key.second;
    row.mean_pehe = mean_of(a.pehe);
    row.sd_pehe = sample_sd(a.pehe);
    if (!a.mmd.empty()) row.mean_mmd_sq = mean_of(a.mmd);
    if (!a.type1.empty()) row.mean_type1 = mean_of(a.type1);
    row.wall_ms_mean = mean_of(a.wall);
    row.count = static_cast<int>(a.pehe.size());
    out.push_back(row);
  }
  return out;
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "policy,frac,mean_pehe,sd_pehe,mean_mmd_sq,mean_type1,wall_ms_mean\n";
  for (const auto& r : rows) {
    os << r.policy << ',' << shortest(r.frac) << ',' << shortest(r.mean_pehe) << ','
       << shortest(r.sd_pehe) << ',' << (r.mean_mmd_sq ? shortest(*r.mean_mmd_sq) : "") << ','
       << (r.mean_type1 ? shortest(*r.mean_type1) : "") << ',' << shortest(r.wall_ms_mean) << '\n';
  }
  return os.str();
}

std::vector<TimingRow> timing_table(const std::vector<MetricsRecord>& records) {
  // last record per (policy, seed) carries the cumulative sweep time
  std::vector<std::string> order;
  std::map<std::string, std::map<std::uint64_t, double>> last;
  for (const auto& r : records) {
    if (!last.count(r.policy)) order.push_back(r.policy);
    last[r.policy][r.seed] = r.wall_ms / 1000.0;
  }
  std::vector<TimingRow> out;
  for (const auto& p : order) {
    std::vector<double> v;
    for (const auto& [_, s] : last.at(p)) v.push_back(s);
    out.push_back(TimingRow{p, mean_of(v), sample_sd(v), static_cast<int>(v.size())});
  }
  return out;
}

std::string format_timing_csv(const std::vector<TimingRow>& rows) {
  std::ostringstream os;
  os << "policy,mean_s,sd_s,runs\n";
  for (const auto& r : rows)
    os << r.policy << ',' << shortest(r.mean_s) << ',' << shortest(r.sd_s) << ',' << r.runs << '\n';
  return os.str();
}

BenchResult bench(const std::vector<ExperimentConfig>& configs, const RunHooks& hooks) {
  BenchResult out;
  for (size_t i = 0; i < configs.size(); ++i) {
    ExperimentResult r = run_experiment(configs[i], hooks);
    for (auto& f : r.failures)
      out.failures.push_back(BenchFailure{i, to_string(configs[i].policy), std::move(f)});
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
  }
  out.summary = summarize(out.records);
  out.timing = timing_table(out.records);
  return out;
}

std::vector<ExperimentConfig> bench_configs_from_json(const json& doc) {
  std::vector<ExperimentConfig> out;
  if (!doc.is_object()) throw ConfigError("bench config: expected an object");
  if (doc.contains("experiments")) {
    if (doc.size() != 1) throw ConfigError("bench config: 'experiments' must be the only key");
    for (const auto& e : doc.at("experiments")) out.push_back(config_from_json(e));
  } else {
    json base = doc;
    std::vector<std::string> policies;
    if (base.contains("policies")) {
      policies = base.at("policies").get<std::vector<std::string>>();
      base.erase("policies");
    }
    if (policies.empty()) {
      out.push_back(config_from_json(base));
    } else {
      for (const auto& p : policies) {
        json c = base;
        c["policy"] = p;
        out.push_back(config_from_json(c));
      }
    }
  }
  if (out.empty()) throw ConfigError("bench config: no experiments");
  return out;
}

}  // namespace abc3
