#include "abc3/gp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "abc3/error.hpp"

namespace abc3 {

namespace {

MatrixXd gather_rows(const MatrixXd& pool, std::span<const Index> indices) {
  MatrixXd out(static_cast<Index>(indices.size()), pool.cols());
  for (size_t r = 0; r < indices.size(); ++r) out.row(static_cast<Index>(r)) = pool.row(indices[r]);
  return out;
}

void check_indices(const MatrixXd& pool, std::span<const Index> indices) {
  std::unordered_set<Index> seen;
  for (Index i : indices) {
    if (i < 0 || i >= pool.rows()) {
      std::ostringstream os;
      os << "observation index " << i << " outside pool of size " << pool.rows();
      throw InputError(os.str());
    }
    if (!seen.insert(i).second) {
      std::ostringstream os;
      os << "observation index " << i << " repeated";
      throw InputError(os.str());
    }
  }
}

// Clamps tiny negative variances to zero; larger negativity signals a broken
// factorization.
void clamp_variance(VectorXd& var, double prior) {
  const double tol = -1e-10 * std::max(1.0, prior);
  for (Index i = 0; i < var.size(); ++i) {
    if (var[i] < 0.0) {
      if (var[i] < tol) {
        std::ostringstream os;
        os << "posterior variance " << var[i] << " below tolerance at query " << i;
        throw NumericalError(os.str());
      }
      var[i] = 0.0;
    }
  }
}

}  // namespace

ArmState ArmState::fit(const KernelSpec& kernel, const MatrixXd& pool,
                       std::span<const Index> indices, const VectorXd& outcomes, Arm arm,
                       bool cache_pool) {
  kernel.validate();
  if (static_cast<Index>(indices.size()) != outcomes.size())
    throw InputError("fit: indices and outcomes differ in length");
  if (!outcomes.allFinite()) throw InputError("fit: outcomes must be finite");
  check_indices(pool, indices);

  ArmState s;
  s.arm_ = arm;
  s.kernel_ = kernel;
  s.indices_.assign(indices.begin(), indices.end());
  s.outcomes_ = outcomes;
  s.observed_ = gather_rows(pool, indices);
  s.pool_rows_ = pool.rows();
  s.cached_ = cache_pool;

  const Index t = s.size();
  if (t > 0) {
    MatrixXd a = gram(kernel, s.observed_, 0.0, Exec::Serial).entries;
    a.diagonal().array() += kernel.noise_variance;
    Cholesky c = cholesky_with_jitter(a);
    s.chol_ = std::move(c.lower);
    s.jitter_ = c.jitter;
  } else {
    s.chol_.resize(0, 0);
  }
  s.refresh_alpha();

  if (cache_pool) {
    if (t > 0) {
      s.cross_pool_ = cross_gram(kernel, s.observed_, pool);
      s.solved_pool_ = s.chol_.triangularView<Eigen::Lower>().solve(s.cross_pool_);
    } else {
      s.cross_pool_.resize(0, pool.rows());
      s.solved_pool_.resize(0, pool.rows());
    }
  }
  return s;
}

void ArmState::refresh_alpha() {
  if (size() == 0) {
    alpha_.resize(0);
    return;
  }
  alpha_ = chol_.triangularView<Eigen::Lower>().solve(outcomes_);
  chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha_);
}

VectorXd ArmState::solve_lower(const VectorXd& rhs) const {
  if (rhs.size() != size()) throw InputError("solve_lower: length mismatch");
  if (size() == 0) return VectorXd(0);
  return chol_.triangularView<Eigen::Lower>().solve(rhs);
}

ArmState ArmState::extend(const MatrixXd& pool, Index new_index, double new_outcome) const {
  if (pool.rows() != pool_rows_ || (size() > 0 && pool.cols() != observed_.cols()))
    throw InputError("extend: pool does not match the fitted pool");
  if (new_index < 0 || new_index >= pool.rows()) throw InputError("extend: index outside pool");
  if (std::find(indices_.begin(), indices_.end(), new_index) != indices_.end()) {
    std::ostringstream os;
    os << "extend: index " << new_index << " already observed";
    throw StateError(os.str());
  }
  if (!std::isfinite(new_outcome)) throw InputError("extend: outcome must be finite");

  if (extensions_since_refit_ + 1 >= kRefactorEvery) {
    std::vector<Index> idx = indices_;
    idx.push_back(new_index);
    VectorXd y(outcomes_.size() + 1);
    y << outcomes_, new_outcome;
    ArmState fresh = fit(kernel_, pool, idx, y, arm_, cached_);
    return fresh;
  }

  const Index t = size();
  const VectorXd x_new = pool.row(new_index).transpose();
  VectorXd k_tilde(t);
  for (Index i = 0; i < t; ++i)
    k_tilde[i] = kernel_from_sqdist(kernel_, (observed_.row(i).transpose() - x_new).squaredNorm());
  const VectorXd l = solve_lower(k_tilde);
  const double diag = kernel_.self_value() + kernel_.diagonal_noise() + jitter_;
  const double pivot_sq = diag - l.squaredNorm();
  if (!(pivot_sq > 1e-12 * diag)) {
    std::ostringstream os;
    os << "extend: non-positive pivot " << pivot_sq << " for index " << new_index
       << " (duplicate covariate without observation noise?)";
    throw NumericalError(os.str());
  }
  const double pivot = std::sqrt(pivot_sq);

  ArmState s;
  s.arm_ = arm_;
  s.kernel_ = kernel_;
  s.jitter_ = jitter_;
  s.cached_ = cached_;
  s.pool_rows_ = pool_rows_;
  s.extensions_since_refit_ = extensions_since_refit_ + 1;
  s.indices_ = indices_;
  s.indices_.push_back(new_index);
  s.outcomes_.resize(t + 1);
  s.outcomes_ << outcomes_, new_outcome;
  s.observed_.resize(t + 1, pool.cols());
  if (t > 0) s.observed_.topRows(t) = observed_;
  s.observed_.row(t) = x_new.transpose();

  s.chol_ = MatrixXd::Zero(t + 1, t + 1);
  if (t > 0) {
    s.chol_.topLeftCorner(t, t) = chol_;
    s.chol_.block(t, 0, 1, t) = l.transpose();
  }
  s.chol_(t, t) = pivot;
  s.refresh_alpha();

  if (cached_) {
    Eigen::RowVectorXd c_new(pool.rows());
    for (Index j = 0; j < pool.rows(); ++j)
      c_new[j] = kernel_from_sqdist(kernel_, (pool.row(j).transpose() - x_new).squaredNorm());
    s.cross_pool_.resize(t + 1, pool.rows());
    s.solved_pool_.resize(t + 1, pool.rows());
    if (t > 0) {
      s.cross_pool_.topRows(t) = cross_pool_;
      s.solved_pool_.topRows(t) = solved_pool_;
      s.solved_pool_.row(t) = (c_new - l.transpose() * solved_pool_) / pivot;
    } else {
      s.solved_pool_.row(t) = c_new / pivot;
    }
    s.cross_pool_.row(t) = c_new;
  }
  return s;
}

Posterior ArmState::posterior(const MatrixXd& queries) const {
  const double prior = kernel_.self_value();
  Posterior p;
  if (size() == 0) {
    p.mean = VectorXd::Zero(queries.rows());
    p.variance = VectorXd::Constant(queries.rows(), prior);
    return p;
  }
  if (queries.cols() != observed_.cols()) throw InputError("posterior: query dimension mismatch");
  const MatrixXd cross = cross_gram(kernel_, observed_, queries, Exec::Serial);
  p.mean = cross.transpose() * alpha_;
  const MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(cross);
  p.variance = (prior - v.colwise().squaredNorm().array()).matrix().transpose();
  clamp_variance(p.variance, prior);
  return p;
}

VectorXd ArmState::pool_variance() const {
  if (!cached_) throw StateError("pool_variance: state was fitted without a pool cache");
  const double prior = kernel_.self_value();
  VectorXd var;
  if (size() == 0) {
    var = VectorXd::Constant(pool_rows_, prior);
  } else {
    var = (prior - solved_pool_.colwise().squaredNorm().array()).matrix().transpose();
  }
  clamp_variance(var, prior);
  return var;
}

double ArmState::integrated_variance(const MatrixXd& pool) const {
  if (cached_) return pool_variance().mean();
  return posterior(pool).variance.mean();
}

double log_marginal_likelihood(const KernelSpec& kernel, const MatrixXd& X, const VectorXd& y,
                               Eigen::Vector3d* grad) {
  const Index n = X.rows();
  if (n != y.size()) throw InputError("log_marginal_likelihood: size mismatch");
  MatrixXd a = gram(kernel, X, 0.0, Exec::Serial).entries;
  a.diagonal().array() += kernel.noise_variance;
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const VectorXd alpha = llt.solve(y);
  const MatrixXd lower = llt.matrixL();
  const double log_det = 2.0 * lower.diagonal().array().log().sum();
  const double lml = -0.5 * y.dot(alpha) - 0.5 * log_det -
                     0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (grad != nullptr) {
    if (kernel.family != KernelFamily::Composite)
      throw ConfigError("log_marginal_likelihood: gradient only for composite kernel");
    const MatrixXd q = alpha * alpha.transpose() - llt.solve(MatrixXd::Identity(n, n));
    MatrixXd scaled = a;  // c * R on the off-diagonal, c on the diagonal
    scaled.diagonal().setConstant(kernel.constant_scale);
    MatrixXd d_len(n, n);
    const double l2 = kernel.lengthscale * kernel.lengthscale;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i)
        d_len(i, j) = scaled(i, j) * (X.row(i) - X.row(j)).squaredNorm() / l2;
    (*grad)[0] = 0.5 * q.cwiseProduct(scaled).sum();
    (*grad)[1] = 0.5 * q.cwiseProduct(d_len).sum();
    (*grad)[2] = 0.5 * q.trace() * kernel.white_noise;
  }
  return lml;
}

Posterior RegressionModel::predict(const MatrixXd& queries) const {
  Posterior p = state.posterior(queries);
  p.mean = (p.mean.array() * y_scale + y_mean).matrix();
  p.variance *= y_scale * y_scale;
  return p;
}

RegressionModel fit_regression(const MatrixXd& pool, std::span<const Index> indices,
                               const VectorXd& raw_outcomes, const RegressionOptions& options) {
  RegressionModel m;
  const Index n = raw_outcomes.size();
  if (n > 0) {
    m.y_mean = raw_outcomes.mean();
    const double sd = std::sqrt((raw_outcomes.array() - m.y_mean).square().mean());
    m.y_scale = sd > 1e-12 ? sd : 1.0;
  }
  const VectorXd ystd = ((raw_outcomes.array() - m.y_mean) / m.y_scale).matrix();
  KernelSpec spec = options.init;
  if (options.optimize && n >= 2) {
    HyperparameterFit fit =
        fit_hyperparameters(pool, indices, ystd, options.init, options.restarts, options.seed);
    spec = fit.kernel;
    m.fell_back = fit.fell_back;
  }
  m.state = ArmState::fit(spec, pool, indices, ystd, Arm::Control, false);
  return m;
}

}  // namespace abc3
