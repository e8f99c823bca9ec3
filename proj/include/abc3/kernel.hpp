#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

#include "abc3/exec.hpp"

namespace abc3 {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KernelFamily { RBF, Matern, ExpSineSquared, Composite };

std::string to_string(KernelFamily family);
KernelFamily parse_kernel_family(std::string_view name);

/// Kernel family plus its parameters and the observation-noise variance.
///
/// Composite is `constant_scale * RBF(lengthscale) + white_noise * 1[same row]`,
/// the regression kernel. The white-noise term only contributes on the
/// diagonal of a Gram matrix built from a single set of rows.
struct KernelSpec {
  KernelFamily family = KernelFamily::RBF;
  double lengthscale = 1.0;
  double nu = 2.5;           // Matern only; one of 0.5, 1.5, 2.5
  double periodicity = 1.0;  // ExpSineSquared only
  double constant_scale = 1.0;
  double white_noise = 0.0;
  double noise_variance = 0.0;

  static KernelSpec rbf(double lengthscale, double noise_variance = 0.0);
  static KernelSpec matern(double nu, double lengthscale, double noise_variance = 0.0);
  static KernelSpec exp_sine_squared(double lengthscale, double periodicity = 1.0,
                                     double noise_variance = 0.0);
  static KernelSpec composite(double constant_scale, double lengthscale, double white_noise,
                              double noise_variance = 1e-10);

  /// Throws ConfigError when a parameter is out of range.
  void validate() const;

  /// k(x, x) excluding the white-noise term.
  [[nodiscard]] double self_value() const {
    return family == KernelFamily::Composite ? constant_scale : 1.0;
  }

  /// Total diagonal addition for a training Gram: white noise + noise variance.
  [[nodiscard]] double diagonal_noise() const {
    return (family == KernelFamily::Composite ? white_noise : 0.0) + noise_variance;
  }

  bool operator==(const KernelSpec&) const = default;
};

/// Kernel value from a squared Euclidean distance (white noise excluded).
double kernel_from_sqdist(const KernelSpec& spec, double sqdist);

/// k(x, x2). `same_row` marks the two arguments as the same input row, which
/// switches on the Composite white-noise term.
double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const VectorXd>& x,
                   const Eigen::Ref<const VectorXd>& x2, bool same_row = false);

struct GramMatrix {
  MatrixXd entries;
  double jitter = 0.0;
};

/// Gram over the rows of X, including the Composite white-noise diagonal.
/// `jitter` is added to the diagonal and recorded.
GramMatrix gram(const KernelSpec& spec, const MatrixXd& X, double jitter = 0.0,
                Exec exec = Exec::Parallel);

/// entries(i, j) = k(X_i, Z_j). No white-noise term.
MatrixXd cross_gram(const KernelSpec& spec, const MatrixXd& X, const MatrixXd& Z,
                    Exec exec = Exec::Parallel);

/// Lower Cholesky factor of `matrix`, escalating diagonal jitter from
/// 1e-10 * mean-diagonal by factors of 10 up to 1e-4 * mean-diagonal.
/// A factorization without jitter is attempted first. Throws NumericalError
/// with diagnostics when every level fails.
struct Cholesky {
  MatrixXd lower;
  double jitter = 0.0;
};
Cholesky cholesky_with_jitter(const MatrixXd& matrix);

}  // namespace abc3
