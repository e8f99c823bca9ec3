#include "abc3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "abc3/error.hpp"

namespace abc3 {

namespace {

void check_lengths(const VectorXd& a, const VectorXd& b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << what << ": length mismatch (" << a.size() << " vs " << b.size() << ")";
    throw InputError(os.str());
  }
}

MatrixXd rows_of(const MatrixXd& pool, const std::vector<Index>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), pool.cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = pool.row(idx[r]);
  return out;
}

}  // namespace

double pehe(const VectorXd& cate_hat, const VectorXd& cate_true) {
  check_lengths(cate_hat, cate_true, "pehe");
  if (cate_hat.size() == 0) throw InputError("pehe: empty input");
  return (cate_hat - cate_true).squaredNorm() / static_cast<double>(cate_hat.size());
}

double pehe_omega(const VectorXd& cate_hat, const VectorXd& cate_omega) {
  return pehe(cate_hat, cate_omega);
}

double mmd_sq(const KernelSpec& kernel, const MatrixXd& A, const MatrixXd& B, Exec exec) {
  if (A.rows() == 0 || B.rows() == 0) throw InputError("mmd_sq: empty sample");
  const double na = static_cast<double>(A.rows());
  const double nb = static_cast<double>(B.rows());
  const double aa = cross_gram(kernel, A, A, exec).sum() / (na * na);
  const double bb = cross_gram(kernel, B, B, exec).sum() / (nb * nb);
  const double ab = cross_gram(kernel, A, B, exec).sum() / (na * nb);
  return std::max(0.0, aa + bb - 2.0 * ab);
}

MmdReport mmd_bound_report(const PolicyContext& ctx) {
  const ArmState& t = ctx.treatment;
  const ArmState& c = ctx.control;
  if (t.size() == 0 || c.size() == 0) throw StateError("mmd_bound_report: an arm is empty");
  MmdReport r;
  if (ctx.cache.lambda_star) {
    r.lambda_star = *ctx.cache.lambda_star;
  } else {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(ctx.cache.gram, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("eigen-solver failed on pool Gram");
    r.lambda_star = eig.eigenvalues().maxCoeff();
  }
  r.n_treat = t.size();
  r.n_control = c.size();
  r.mmd_sq = mmd_sq(t.kernel(), rows_of(ctx.pool, t.indices()), rows_of(ctx.pool, c.indices()),
                    ctx.exec);
  r.bound_rhs = 4.0 * r.lambda_star / static_cast<double>(r.n_treat) +
                4.0 * r.lambda_star / static_cast<double>(r.n_control) +
                2.0 * (t.integrated_variance(ctx.pool) + c.integrated_variance(ctx.pool));
  return r;
}

std::vector<AssumptionReport> check_assumption(const KernelSpec& kernel, const MatrixXd& pool,
                                               int permutations, Rng& rng, Exec exec) {
  if (permutations < 1) throw ConfigError("check_assumption: permutations must be >= 1");
  const Index n = pool.rows();
  if (n == 0) throw InputError("check_assumption: empty pool");
  const MatrixXd k = cross_gram(kernel, pool, pool, exec);
  const VectorXd affinity = k.rowwise().mean();  // integral of k(x_i, .) under uniform P
  const double m = affinity.mean();

  std::vector<std::vector<Index>> orders(static_cast<size_t>(permutations));
  for (auto& order : orders) {
    order.resize(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[i], order[uniform_index(rng, static_cast<std::uint64_t>(i + 1))]);
  }

  // gaps[p][n-1], two_delta[p][n-1], eps[p][n-1]
  std::vector<std::vector<double>> gap(orders.size()), two_delta(orders.size()), eps(orders.size());
  for_each_index(static_cast<std::ptrdiff_t>(orders.size()), exec, [&](std::ptrdiff_t p) {
    const auto& order = orders[p];
    gap[p].resize(n);
    two_delta[p].resize(n);
    eps[p].resize(n);
    double within = 0.0;    // sum_{i,j in I_n} k
    double aff_sum = 0.0;   // sum_{i in I_n} affinity_i
    for (Index s = 0; s < n; ++s) {
      const Index add = order[s];
      double cross = 0.0;
      for (Index q = 0; q < s; ++q) cross += k(add, order[q]);
      within += 2.0 * cross + k(add, add);
      aff_sum += affinity[add];
      const double size = static_cast<double>(s + 1);
      const double td = 2.0 * aff_sum / size;
      // The full pool's within-sum is N^2 M by definition.
      const double e = (s + 1 == n) ? 0.0 : m - within / (size * size);
      two_delta[p][s] = td;
      eps[p][s] = e;
      gap[p][s] = td - e;
    }
  });

  std::vector<AssumptionReport> out(static_cast<size_t>(n));
  for (Index s = 0; s < n; ++s) {
    AssumptionReport& r = out[s];
    r.n = s + 1;
    r.M = m;
    r.permutations = permutations;
    r.min_gap = std::numeric_limits<double>::infinity();
    r.two_delta_star_min = std::numeric_limits<double>::infinity();
    r.eps_star_max = -std::numeric_limits<double>::infinity();
    for (size_t p = 0; p < orders.size(); ++p) {
      r.min_gap = std::min(r.min_gap, gap[p][s]);
      r.two_delta_star_min = std::min(r.two_delta_star_min, two_delta[p][s]);
      r.eps_star_max = std::max(r.eps_star_max, eps[p][s]);
    }
  }
  return out;
}

std::string format_assumption_csv(const std::vector<AssumptionReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "n,two_delta_star_min,eps_star_max,min_gap\n";
  for (const auto& r : reports)
    os << r.n << ',' << r.two_delta_star_min << ',' << r.eps_star_max << ',' << r.min_gap << '\n';
  return os.str();
}

Type1Report type1_test(const Posterior& control, const Posterior& treatment, double alpha) {
  check_lengths(control.mean, treatment.mean, "type1_test");
  Type1Report r;
  r.alpha = alpha;
  const Index n = control.mean.size();
  r.per_point_z.resize(n);
  Index rejected = 0;
  for (Index i = 0; i < n; ++i) {
    const double diff = treatment.mean[i] - control.mean[i];
    const double var = treatment.variance[i] + control.variance[i];
    double z;
    if (var > 0.0) {
      z = diff / std::sqrt(var);
    } else {
      z = std::numeric_limits<double>::infinity();
      ++r.zero_variance_points;
    }
    r.per_point_z[i] = z;
    if (std::abs(z) > alpha) ++rejected;
  }
  r.rejection_rate = n > 0 ? static_cast<double>(rejected) / static_cast<double>(n) : 0.0;
  return r;
}

Type1Report type1_test(const RegressionModel& control, const RegressionModel& treatment,
                       const MatrixXd& test_covariates, double alpha) {
  return type1_test(control.predict(test_covariates), treatment.predict(test_covariates), alpha);
}

double sign_test_p_value(int wins, int losses) {
  const int n = wins + losses;
  if (n == 0) return 1.0;
  // log-space binomial tail
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    const double log_term = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                            n * std::log(2.0);
    p += std::exp(log_term);
  }
  return std::min(1.0, p);
}

}  // namespace abc3
