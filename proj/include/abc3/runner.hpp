#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abc3/data.hpp"
#include "abc3/kernel.hpp"
#include "abc3/policy.hpp"
#include "abc3/scale.hpp"

namespace abc3 {

struct ExperimentConfig {
  /// CSV path, or `synthetic:<kind>:<n>:<d>[:<seed>]`.
  std::string dataset;
  bool null_hypothesis = false;
  PolicyKind policy = PolicyKind::ABC3;
  std::vector<std::uint64_t> seeds{0};
  double checkpoint_fraction = 0.1;
  double budget_fraction = 1.0;
  std::optional<Index> budget;  // absolute observation budget; overrides budget_fraction
  double train_fraction = 0.5;
  KernelSpec acquisition = KernelSpec::rbf(1.0, 1.0);
  KernelSpec regression = KernelSpec::composite(1.0, 1.0, 1.0);
  bool refit_hyperparams_at_checkpoints = true;
  int hyper_restarts = 3;
  double alpha = 1.96;
  bool diagnostics = true;  // pehe_omega and bound_rhs; both need pool-sized work
  bool timing = true;       // false writes wall_ms = 0 for byte-stable output
  ScaleConfig scale;
  int threads = 0;  // 0 keeps the OpenMP default
  std::string output;            // metrics JSONL
  std::string decisions_output;  // decision log JSONL

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

KernelSpec kernel_from_json(const nlohmann::json& doc, const KernelSpec& defaults);
nlohmann::json kernel_to_json(const KernelSpec& kernel);

/// Resolves a dataset spec (CSV path or synthetic spec).
CovariatePool load_dataset(const std::string& spec, bool null_hypothesis = false);

struct MetricsRecord {
  std::string dataset;
  std::string policy;
  std::uint64_t seed = 0;
  Index step = 0;
  double frac_observed = 0.0;
  double pehe = 0.0;
  std::optional<double> pehe_omega;
  std::optional<double> mmd_sq;
  std::optional<double> bound_rhs;
  Index n_treat = 0;
  Index n_control = 0;
  std::optional<double> type1_rate;  // null datasets only
  double wall_ms = 0.0;              // cumulative decision + extend time
};

nlohmann::ordered_json to_json(const MetricsRecord& record);
MetricsRecord record_from_json(const nlohmann::json& doc);
std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path);

struct DecisionLogEntry {
  std::uint64_t seed = 0;
  Index step = 0;  // 1-based; leverage batches repeat steps per checkpoint
  Index checkpoint = 0;
  Index subject = -1;
  Arm arm = Arm::Control;
  double score = 0.0;
};

nlohmann::ordered_json to_json(const DecisionLogEntry& entry);
DecisionLogEntry decision_from_json(const nlohmann::json& doc);
std::vector<DecisionLogEntry> read_decisions_jsonl(const std::filesystem::path& path);

struct SeedFailure {
  std::uint64_t seed = 0;
  Index step = 0;
  std::string message;
  bool numerical = false;  // failed with a NumericalError
};

/// Reveals one potential outcome per subject and counts every access.
class OutcomeOracle {
 public:
  explicit OutcomeOracle(const CovariatePool& pool);

  double reveal(Index subject, Arm arm);
  [[nodiscard]] Index reveals() const { return reveals_; }
  /// Number of subjects whose opposite outcome was ever read; must stay 0.
  [[nodiscard]] Index violations() const { return violations_; }

 private:
  const CovariatePool& pool_;
  std::vector<signed char> seen_;  // -1 unseen, else arm index
  Index reveals_ = 0;
  Index violations_ = 0;
};

struct RunHooks {
  /// Replaces the dataset named in the config.
  const CovariatePool* pool = nullptr;
  /// Transforms the train pool after the split (outcome-blindness audits).
  std::function<void(CovariatePool& train, std::uint64_t seed)> mutate_train;
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(const DecisionLogEntry&)> on_decision;
  /// Skip checkpoint evaluation entirely (replay and timing runs).
  bool skip_evaluation = false;
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  std::vector<DecisionLogEntry> decisions;
  std::vector<SeedFailure> failures;
  Index oracle_violations = 0;
  /// Sum over seeds of decision + extend time, and the number of decisions.
  double decision_ms = 0.0;
  Index decision_count = 0;
};

/// Observation steps at which metrics are emitted for a train pool of size n.
std::vector<Index> checkpoint_steps(Index n, double fraction, Index budget);

ExperimentResult run_experiment(const ExperimentConfig& config, const RunHooks& hooks = {});

/// Writes results to the config's output paths when set.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result);
void write_metrics_jsonl(std::ostream& out, const std::vector<MetricsRecord>& records);
void write_decisions_jsonl(std::ostream& out, const std::vector<DecisionLogEntry>& decisions);

/// Re-runs the policies and compares each decision against `log`.
/// Returns the number of mismatching entries (including length differences).
std::size_t replay_mismatches(const ExperimentConfig& config,
                              const std::vector<DecisionLogEntry>& log,
                              const RunHooks& hooks = {});

struct SummaryRow {
  std::string policy;
  double frac = 0.0;
  double mean_pehe = 0.0;
  double sd_pehe = 0.0;
  std::optional<double> mean_mmd_sq;
  std::optional<double> mean_type1;
  double wall_ms_mean = 0.0;
  int count = 0;
};

/// Mean and sample sd per (policy, frac_observed), in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records);
std::string format_summary_csv(const std::vector<SummaryRow>& rows);

struct TimingRow {
  std::string policy;
  double mean_s = 0.0;
  double sd_s = 0.0;
  int runs = 0;
};

/// Total sweep time per policy (wall_ms at each seed's last checkpoint).
std::vector<TimingRow> timing_table(const std::vector<MetricsRecord>& records);
std::string format_timing_csv(const std::vector<TimingRow>& rows);

struct BenchFailure {
  std::size_t config_index = 0;
  std::string policy;
  SeedFailure failure;
};

struct BenchResult {
  std::vector<MetricsRecord> records;
  std::vector<SummaryRow> summary;
  std::vector<TimingRow> timing;
  std::vector<BenchFailure> failures;
};

BenchResult bench(const std::vector<ExperimentConfig>& configs, const RunHooks& hooks = {});

/// Expands a bench document: either {"experiments": [config...]} or a base
/// config with a "policies" list.
std::vector<ExperimentConfig> bench_configs_from_json(const nlohmann::json& doc);

}  // namespace abc3
