#include "abc3/kernel.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "abc3/error.hpp"

namespace abc3 {

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::RBF:
      return "rbf";
    case KernelFamily::Matern:
      return "matern";
    case KernelFamily::ExpSineSquared:
      return "exp-sine-squared";
    case KernelFamily::Composite:
      return "composite";
  }
  return "unknown";
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "rbf") return KernelFamily::RBF;
  if (name == "matern") return KernelFamily::Matern;
  if (name == "exp-sine-squared" || name == "sine") return KernelFamily::ExpSineSquared;
  if (name == "composite") return KernelFamily::Composite;
  throw ConfigError("unknown kernel family '" + std::string(name) +
                    "' (valid: rbf, matern, exp-sine-squared, composite)");
}

KernelSpec KernelSpec::rbf(double lengthscale, double noise_variance) {
  KernelSpec s;
  s.family = KernelFamily::RBF;
  s.lengthscale = lengthscale;
  s.noise_variance = noise_variance;
  return s;
}

KernelSpec KernelSpec::matern(double nu, double lengthscale, double noise_variance) {
  KernelSpec s;
  s.family = KernelFamily::Matern;
  s.nu = nu;
  s.lengthscale = lengthscale;
  s.noise_variance = noise_variance;
  return s;
}

KernelSpec KernelSpec::exp_sine_squared(double lengthscale, double periodicity,
                                        double noise_variance) {
  KernelSpec s;
  s.family = KernelFamily::ExpSineSquared;
  s.lengthscale = lengthscale;
  s.periodicity = periodicity;
  s.noise_variance = noise_variance;
  return s;
}

KernelSpec KernelSpec::composite(double constant_scale, double lengthscale, double white_noise,
                                 double noise_variance) {
  KernelSpec s;
  s.family = KernelFamily::Composite;
  s.constant_scale = constant_scale;
  s.lengthscale = lengthscale;
  s.white_noise = white_noise;
  s.noise_variance = noise_variance;
  return s;
}

void KernelSpec::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(lengthscale)) throw ConfigError("kernel lengthscale must be positive");
  if (!(std::isfinite(noise_variance) && noise_variance >= 0.0))
    throw ConfigError("noise variance must be nonnegative");
  switch (family) {
    case KernelFamily::Matern:
      if (nu != 0.5 && nu != 1.5 && nu != 2.5)
        throw ConfigError("matern smoothness must be one of 0.5, 1.5, 2.5");
      break;
    case KernelFamily::ExpSineSquared:
      if (!positive(periodicity)) throw ConfigError("periodicity must be positive");
      break;
    case KernelFamily::Composite:
      if (!positive(constant_scale)) throw ConfigError("constant scale must be positive");
      if (!(std::isfinite(white_noise) && white_noise >= 0.0))
        throw ConfigError("white-noise variance must be nonnegative");
      break;
    case KernelFamily::RBF:
      break;
  }
}

double kernel_from_sqdist(const KernelSpec& spec, double sqdist) {
  const double l = spec.lengthscale;
  switch (spec.family) {
    case KernelFamily::RBF:
      return std::exp(-0.5 * sqdist / (l * l));
    case KernelFamily::Composite:
      return spec.constant_scale * std::exp(-0.5 * sqdist / (l * l));
    case KernelFamily::Matern: {
      const double r = std::sqrt(sqdist) / l;
      if (spec.nu == 0.5) return std::exp(-r);
      if (spec.nu == 1.5) {
        const double s = std::sqrt(3.0) * r;
        return (1.0 + s) * std::exp(-s);
      }
      const double s = std::sqrt(5.0) * r;
      return (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    case KernelFamily::ExpSineSquared: {
      const double sn = std::sin(std::numbers::pi * std::sqrt(sqdist) / spec.periodicity);
      return std::exp(-2.0 * sn * sn / (l * l));
    }
  }
  return 0.0;
}

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const VectorXd>& x,
                   const Eigen::Ref<const VectorXd>& x2, bool same_row) {
  if (x.size() != x2.size()) {
    std::ostringstream os;
    os << "kernel inputs differ in dimension (" << x.size() << " vs " << x2.size() << ")";
    throw InputError(os.str());
  }
  spec.validate();
  double v = kernel_from_sqdist(spec, (x - x2).squaredNorm());
  if (same_row && spec.family == KernelFamily::Composite) v += spec.white_noise;
  return v;
}

GramMatrix gram(const KernelSpec& spec, const MatrixXd& X, double jitter, Exec exec) {
  if (X.rows() == 0) throw InputError("gram: empty covariate matrix");
  spec.validate();
  const Index n = X.rows();
  const MatrixXd cols = X.transpose();  // one subject per contiguous column
  GramMatrix g;
  g.entries.resize(n, n);
  g.jitter = jitter;
  const double diag = spec.self_value() +
                      (spec.family == KernelFamily::Composite ? spec.white_noise : 0.0) + jitter;
  for_each_index(n, exec, [&](Index j) {
    for (Index i = 0; i < j; ++i) {
      const double v = kernel_from_sqdist(spec, (cols.col(i) - cols.col(j)).squaredNorm());
      g.entries(i, j) = v;
      g.entries(j, i) = v;
    }
    g.entries(j, j) = diag;
  });
  return g;
}

MatrixXd cross_gram(const KernelSpec& spec, const MatrixXd& X, const MatrixXd& Z, Exec exec) {
  if (X.cols() != Z.cols()) {
    std::ostringstream os;
    os << "cross_gram: column dimensions differ (" << X.cols() << " vs " << Z.cols() << ")";
    throw InputError(os.str());
  }
  spec.validate();
  const MatrixXd xc = X.transpose();
  const MatrixXd zc = Z.transpose();
  MatrixXd out(X.rows(), Z.rows());
  for_each_index(Z.rows(), exec, [&](Index j) {
    for (Index i = 0; i < X.rows(); ++i)
      out(i, j) = kernel_from_sqdist(spec, (xc.col(i) - zc.col(j)).squaredNorm());
  });
  return out;
}

Cholesky cholesky_with_jitter(const MatrixXd& matrix) {
  const Index n = matrix.rows();
  Cholesky out;
  if (n == 0) {
    out.lower.resize(0, 0);
    return out;
  }
  const double mean_diag = std::max(matrix.diagonal().mean(), 1e-300);
  Eigen::LLT<MatrixXd> llt(matrix);
  if (llt.info() == Eigen::Success) {
    out.lower = llt.matrixL();
    return out;
  }
  for (double rel = 1e-10; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    const double jitter = rel * mean_diag;
    MatrixXd a = matrix;
    a.diagonal().array() += jitter;
    llt.compute(a);
    if (llt.info() == Eigen::Success) {
      out.lower = llt.matrixL();
      out.jitter = jitter;
      return out;
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(matrix, Eigen::EigenvaluesOnly);
  std::ostringstream os;
  os << "cholesky failed after jitter up to 1e-4*mean-diagonal (n=" << n
     << ", mean diagonal=" << mean_diag << ", min eigenvalue=" << eig.eigenvalues().minCoeff()
     << ", max eigenvalue=" << eig.eigenvalues().maxCoeff() << ")";
  throw NumericalError(os.str());
}

}  // namespace abc3
