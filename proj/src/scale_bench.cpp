#include <cmath>

#include "abc3/runner.hpp"
#include "abc3/scale.hpp"

namespace abc3 {

std::vector<ScaledBenchRow> scaled_bench(Index pool_size, Index dim, Index budget,
                                         const ScaleConfig& cfg,
                                         const std::vector<std::uint64_t>& seeds) {
  std::vector<ScaledBenchRow> rows;
  if (budget <= 0) return rows;
  const PolicyKind policies[] = {PolicyKind::ABC3Scaled, PolicyKind::Sample, PolicyKind::Naive};
  std::vector<std::vector<double>> pehe(3), ms(3);
  for (std::uint64_t seed : seeds) {
    // the train half of the generated pool has pool_size subjects
    const CovariatePool pool = gen_synthetic(SyntheticKind::Null, 2 * pool_size, dim, seed);
    for (int p = 0; p < 3; ++p) {
      ExperimentConfig c;
      c.dataset = "synthetic:null:" + std::to_string(2 * pool_size) + ":" + std::to_string(dim) +
                  ":" + std::to_string(seed);
      c.policy = policies[p];
      c.seeds = {seed};
      c.budget = budget;
      c.checkpoint_fraction = 1.0;
      c.diagnostics = false;
      c.scale = cfg;
      RunHooks hooks;
      hooks.pool = &pool;
      const ExperimentResult r = run_experiment(c, hooks);
      if (r.records.empty()) continue;
      pehe[p].push_back(r.records.back().pehe);
      ms[p].push_back(r.decision_count > 0 ? r.decision_ms / static_cast<double>(r.decision_count)
                                           : 0.0);
    }
  }
  for (int p = 0; p < 3; ++p) {
    ScaledBenchRow row;
    row.policy = to_string(policies[p]);
    row.budget = budget;
    row.seeds = static_cast<int>(pehe[p].size());
    if (row.seeds == 0) continue;
    double s = 0.0, t = 0.0;
    for (size_t i = 0; i < pehe[p].size(); ++i) {
      s += pehe[p][i];
      t += ms[p][i];
    }
    row.mean_pehe = s / row.seeds;
    row.mean_decision_ms = t / row.seeds;
    double ss = 0.0;
    for (double v : pehe[p]) ss += (v - row.mean_pehe) * (v - row.mean_pehe);
    row.sd_pehe = row.seeds > 1 ? std::sqrt(ss / (row.seeds - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace abc3
