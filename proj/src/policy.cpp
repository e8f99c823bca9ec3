#include "abc3/policy.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "abc3/error.hpp"

namespace abc3 {

namespace {

std::atomic<std::uint64_t> g_score_ops{0};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_candidates(const std::vector<Index>& c) {
  if (c.empty()) throw StateError("no unobserved subjects left to query");
}

double diag_with_noise(const ArmState& s) {
  return s.kernel().self_value() + s.kernel().diagonal_noise() + s.jitter();
}

}  // namespace

PolicyKind parse_policy(std::string_view name) {
  if (name == "abc3") return PolicyKind::ABC3;
  if (name == "naive") return PolicyKind::Naive;
  if (name == "mackay") return PolicyKind::Mackay;
  if (name == "ace") return PolicyKind::ACE;
  if (name == "leverage") return PolicyKind::Leverage;
  if (name == "abc3-scaled") return PolicyKind::ABC3Scaled;
  if (name == "sample") return PolicyKind::Sample;
  throw ConfigError("unknown policy '" + std::string(name) + "' (valid: " + policy_names() + ")");
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::ABC3:
      return "abc3";
    case PolicyKind::Naive:
      return "naive";
    case PolicyKind::Mackay:
      return "mackay";
    case PolicyKind::ACE:
      return "ace";
    case PolicyKind::Leverage:
      return "leverage";
    case PolicyKind::ABC3Scaled:
      return "abc3-scaled";
    case PolicyKind::Sample:
      return "sample";
  }
  return "unknown";
}

std::string policy_names() { return "abc3, naive, mackay, ace, leverage, abc3-scaled, sample"; }

PoolCache PoolCache::build(const KernelSpec& kernel, const MatrixXd& pool,
                           const MatrixXd* test_covariates, bool with_lambda_star, Exec exec) {
  PoolCache c;
  c.gram = cross_gram(kernel, pool, pool, exec);
  if (with_lambda_star) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(c.gram, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("eigen-solver failed on pool Gram");
    c.lambda_star = eig.eigenvalues().maxCoeff();
  }
  if (test_covariates != nullptr) {
    c.test_affinity = cross_gram(kernel, *test_covariates, pool, exec).colwise().mean().transpose();
  }
  return c;
}

std::vector<Index> PolicyContext::candidates() const {
  std::vector<char> taken(static_cast<size_t>(pool.rows()), 0);
  for (Index i : control.indices()) taken[i] = 1;
  for (Index i : treatment.indices()) taken[i] = 1;
  std::vector<Index> out;
  out.reserve(pool.rows());
  for (Index i = 0; i < pool.rows(); ++i)
    if (!taken[i]) out.push_back(i);
  return out;
}

double abc3_score(const PolicyContext& ctx, Index candidate, Arm arm) {
  const ArmState& s = ctx.arm(arm);
  if (!s.has_pool_cache()) throw StateError("abc3_score: arm state lacks the pool cache");
  const Index n = ctx.pool.rows();
  const Index t = s.size();
  const auto k_row = ctx.cache.gram.col(candidate);  // symmetric

  double numerator = 0.0;
  double denominator = diag_with_noise(s);
  if (t == 0) {
    numerator = k_row.squaredNorm();
  } else {
    // u = L^-1 k~ ; k~^T (K + s2 I)^-1 k*(x) = u^T (L^-1 k*(x)) = u^T solved_pool(:, x)
    const VectorXd u = s.solve_lower(s.cross_pool().col(candidate));
    const VectorXd r = s.solved_pool().transpose() * u - k_row;
    numerator = r.squaredNorm();
    denominator -= u.squaredNorm();
    g_score_ops.fetch_add(static_cast<std::uint64_t>(t * t / 2 + t * n + n),
                          std::memory_order_relaxed);
  }
  if (t == 0) g_score_ops.fetch_add(static_cast<std::uint64_t>(n), std::memory_order_relaxed);
  if (!(denominator > 1e-12)) {
    std::ostringstream os;
    os << "abc3_score: denominator " << denominator << " for candidate " << candidate
       << " (duplicates an observation without noise?)";
    throw NumericalError(os.str());
  }
  return numerator / static_cast<double>(n) / denominator;
}

Eigen::MatrixX2d abc3_scores(const PolicyContext& ctx, const std::vector<Index>& candidates,
                             Exec exec) {
  Eigen::MatrixX2d out(static_cast<Index>(candidates.size()), 2);
  for_each_index(static_cast<std::ptrdiff_t>(candidates.size()), exec, [&](std::ptrdiff_t i) {
    out(i, 0) = abc3_score(ctx, candidates[i], Arm::Control);
    out(i, 1) = abc3_score(ctx, candidates[i], Arm::Treatment);
  });
  return out;
}

PolicyDecision argmax_decision(const std::vector<Index>& candidates, const Eigen::MatrixX2d& scores,
                               Index pool_size, bool keep_scores) {
  require_candidates(candidates);
  PolicyDecision d;
  bool found = false;
  for (size_t i = 0; i < candidates.size(); ++i) {
    for (int a = 0; a < 2; ++a) {
      const double v = scores(static_cast<Index>(i), a);
      if (std::isnan(v)) continue;
      if (!found || v > d.score) {
        found = true;
        d.subject = candidates[i];
        d.arm = static_cast<Arm>(a);
        d.score = v;
      }
    }
  }
  if (!found) throw StateError("no candidate has a finite score");
  if (keep_scores) {
    Eigen::MatrixX2d full = Eigen::MatrixX2d::Constant(pool_size, 2, kNaN);
    for (size_t i = 0; i < candidates.size(); ++i) full.row(candidates[i]) = scores.row(static_cast<Index>(i));
    d.per_candidate_scores = std::move(full);
  }
  return d;
}

PolicyDecision decide_abc3(const PolicyContext& ctx, bool keep_scores) {
  const auto cand = ctx.candidates();
  require_candidates(cand);
  return argmax_decision(cand, abc3_scores(ctx, cand, ctx.exec), ctx.pool.rows(), keep_scores);
}

PolicyDecision decide_naive(const PolicyContext& ctx) {
  const auto cand = ctx.candidates();
  require_candidates(cand);
  PolicyDecision d;
  d.subject = cand[uniform_index(ctx.rng, cand.size())];
  d.arm = coin(ctx.rng) ? Arm::Treatment : Arm::Control;
  d.score = 0.0;
  return d;
}

PolicyDecision decide_mackay(const PolicyContext& ctx, bool keep_scores) {
  const auto cand = ctx.candidates();
  require_candidates(cand);
  const VectorXd v0 = ctx.control.pool_variance();
  const VectorXd v1 = ctx.treatment.pool_variance();
  Eigen::MatrixX2d scores(static_cast<Index>(cand.size()), 2);
  for (size_t i = 0; i < cand.size(); ++i) {
    scores(static_cast<Index>(i), 0) = v0[cand[i]];
    scores(static_cast<Index>(i), 1) = v1[cand[i]];
  }
  return argmax_decision(cand, scores, ctx.pool.rows(), keep_scores);
}

PolicyDecision decide_ace(const PolicyContext& ctx, bool keep_scores) {
  if (ctx.test_covariates == nullptr) throw ConfigError("ace policy needs test covariates");
  const auto cand = ctx.candidates();
  require_candidates(cand);
  const KernelSpec& kernel = ctx.control.kernel();
  const VectorXd affinity =
      ctx.cache.test_affinity
          ? *ctx.cache.test_affinity
          : VectorXd(cross_gram(kernel, *ctx.test_covariates, ctx.pool).colwise().mean().transpose());

  Eigen::MatrixX2d scores(static_cast<Index>(cand.size()), 2);
  for (int a = 0; a < 2; ++a) {
    const ArmState& s = ctx.arm(static_cast<Arm>(a));
    const VectorXd var = s.pool_variance();
    // mean_i cov(test_i, x) = affinity(x) - (L^-1 g)^T solved_pool(:, x), g_j = affinity(I_j)
    VectorXd h;
    if (s.size() > 0) {
      VectorXd g(s.size());
      for (Index j = 0; j < s.size(); ++j) g[j] = affinity[s.indices()[j]];
      h = s.solve_lower(g);
    }
    for_each_index(static_cast<std::ptrdiff_t>(cand.size()), ctx.exec, [&](std::ptrdiff_t i) {
      const Index c = cand[i];
      double cov = affinity[c];
      if (s.size() > 0) cov -= h.dot(s.solved_pool().col(c));
      scores(i, a) = var[c] > 0.0 ? cov * cov / var[c] : kNaN;
    });
  }
  return argmax_decision(cand, scores, ctx.pool.rows(), keep_scores);
}

MatrixXd leverage_design(const MatrixXd& X) {
  MatrixXd design(X.rows(), X.cols() + 1);
  design.col(0).setOnes();
  for (Index i = 0; i < X.rows(); ++i) {
    const double norm = X.row(i).norm();
    if (norm > 0.0)
      design.row(i).tail(X.cols()) = X.row(i) / norm;
    else
      design.row(i).tail(X.cols()).setZero();
  }
  return design;
}

VectorXd leverage_scores(const MatrixXd& design, double ridge) {
  MatrixXd gram = design.transpose() * design;
  gram.diagonal().array() += ridge;
  Eigen::LLT<MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericalError("leverage: ridge Gram not factorizable");
  const MatrixXd solved = llt.matrixL().solve(design.transpose());  // p x N
  return solved.colwise().squaredNorm().transpose();
}

std::vector<PolicyDecision> decide_leverage(const MatrixXd& X, Index budget, Rng& rng,
                                            double ridge) {
  if (budget < 0 || budget > X.rows()) {
    std::ostringstream os;
    os << "leverage budget " << budget << " exceeds pool size " << X.rows();
    throw InputError(os.str());
  }
  VectorXd weight = leverage_scores(leverage_design(X), ridge);
  std::vector<PolicyDecision> batch;
  batch.reserve(static_cast<size_t>(budget));
  double remaining = weight.sum();
  std::vector<char> used(static_cast<size_t>(X.rows()), 0);
  for (Index k = 0; k < budget; ++k) {
    const double target = uniform01(rng) * remaining;
    double acc = 0.0;
    Index pick = -1;
    for (Index i = 0; i < X.rows(); ++i) {
      if (used[i]) continue;
      pick = i;  // fallback to the last unused index on rounding
      acc += weight[i];
      if (acc > target) break;
    }
    used[pick] = 1;
    remaining -= weight[pick];
    if (remaining < 0.0) remaining = 0.0;
    PolicyDecision d;
    d.subject = pick;
    d.score = weight[pick];
    d.arm = coin(rng) ? Arm::Treatment : Arm::Control;
    batch.push_back(d);
    if (remaining <= 0.0 && k + 1 < budget) {
      // Recompute over unused rows if leverage mass is exhausted by rounding.
      remaining = 0.0;
      for (Index i = 0; i < X.rows(); ++i)
        if (!used[i]) remaining += weight[i];
      if (remaining <= 0.0) {
        for (Index i = 0; i < X.rows(); ++i)
          if (!used[i]) weight[i] = 1.0, remaining += 1.0;
      }
    }
  }
  return batch;
}

namespace instrumentation {
std::uint64_t score_ops() { return g_score_ops.load(); }
void reset_score_ops() { g_score_ops.store(0); }
}  // namespace instrumentation

}  // namespace abc3
