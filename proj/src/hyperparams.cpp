#include <cmath>
#include <limits>

#include "abc3/error.hpp"
#include "abc3/gp.hpp"
#include "abc3/random.hpp"

namespace abc3 {

namespace {

using Vec3 = Eigen::Vector3d;

KernelSpec with_log_params(const KernelSpec& base, const Vec3& theta) {
  KernelSpec k = base;
  k.family = KernelFamily::Composite;
  k.constant_scale = std::exp(theta[0]);
  k.lengthscale = std::exp(theta[1]);
  k.white_noise = std::exp(theta[2]);
  return k;
}

struct Box {
  Vec3 lo, hi;
  [[nodiscard]] Vec3 project(const Vec3& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
};

// Gradient with components removed where a bound is active and the ascent
// direction points outside the box.
Vec3 projected_gradient(const Vec3& x, const Vec3& g, const Box& box) {
  Vec3 pg = g;
  for (int i = 0; i < 3; ++i) {
    if (x[i] <= box.lo[i] && g[i] < 0.0) pg[i] = 0.0;
    if (x[i] >= box.hi[i] && g[i] > 0.0) pg[i] = 0.0;
  }
  return pg;
}

struct Evaluation {
  double value = -std::numeric_limits<double>::infinity();
  Vec3 grad = Vec3::Zero();
};

// Projected BFGS ascent on the log marginal likelihood.
class Ascent {
 public:
  Ascent(const KernelSpec& base, const MatrixXd& X, const VectorXd& y, const Box& box)
      : base_(base), X_(X), y_(y), box_(box) {}

  Evaluation evaluate(const Vec3& theta) const {
    Evaluation e;
    Vec3 g;
    const double v = log_marginal_likelihood(with_log_params(base_, theta), X_, y_, &g);
    if (std::isfinite(v) && g.allFinite()) {
      e.value = v;
      e.grad = g;
    }
    return e;
  }

  std::pair<Vec3, double> run(Vec3 x, int max_iters = 200) const {
    x = box_.project(x);
    Evaluation cur = evaluate(x);
    if (!std::isfinite(cur.value)) return {x, cur.value};
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();  // inverse-Hessian of -f
    for (int it = 0; it < max_iters; ++it) {
      const Vec3 pg = projected_gradient(x, cur.grad, box_);
      if (pg.norm() < 1e-6) break;
      Vec3 dir = h * pg;
      for (int i = 0; i < 3; ++i)
        if (pg[i] == 0.0) dir[i] = 0.0;
      if (dir.dot(pg) <= 0.0) {
        h.setIdentity();
        dir = pg;
      }
      // Cap the step so one move spans at most 2 log-units per coordinate.
      const double max_comp = dir.cwiseAbs().maxCoeff();
      if (max_comp > 2.0) dir *= 2.0 / max_comp;

      double step = 1.0;
      Vec3 next = x;
      Evaluation trial;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls) {
        next = box_.project(x + step * dir);
        trial = evaluate(next);
        if (std::isfinite(trial.value) &&
            trial.value >= cur.value + 1e-4 * pg.dot(next - x)) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        if (h.isIdentity()) break;
        h.setIdentity();
        continue;
      }
      const Vec3 s = next - x;
      const Vec3 yk = cur.grad - trial.grad;  // gradient change of -f
      const double improvement = trial.value - cur.value;
      x = next;
      cur = trial;
      const double sy = s.dot(yk);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
        h = (id - rho * s * yk.transpose()) * h * (id - rho * yk * s.transpose()) +
            rho * s * s.transpose();
      }
      if (improvement < 1e-10 * (1.0 + std::abs(cur.value)) && s.norm() < 1e-8) break;
    }
    return {x, cur.value};
  }

 private:
  const KernelSpec& base_;
  const MatrixXd& X_;
  const VectorXd& y_;
  Box box_;
};

}  // namespace

HyperparameterFit fit_hyperparameters(const MatrixXd& pool, std::span<const Index> indices,
                                      const VectorXd& outcomes, const KernelSpec& init,
                                      int restarts, std::uint64_t seed,
                                      const HyperparameterBox& box) {
  if (indices.size() < 2) throw InputError("fit_hyperparameters: needs at least 2 observations");
  if (static_cast<Index>(indices.size()) != outcomes.size())
    throw InputError("fit_hyperparameters: indices and outcomes differ in length");
  if (restarts < 1) throw ConfigError("fit_hyperparameters: restarts must be >= 1");
  if (init.family != KernelFamily::Composite)
    throw ConfigError("fit_hyperparameters: only the composite kernel is optimized");
  init.validate();

  MatrixXd X(static_cast<Index>(indices.size()), pool.cols());
  for (size_t r = 0; r < indices.size(); ++r) X.row(static_cast<Index>(r)) = pool.row(indices[r]);

  Box b;
  b.lo << box.log_scale_lo, box.log_lengthscale_lo, box.log_white_lo;
  b.hi << box.log_scale_hi, box.log_lengthscale_hi, box.log_white_hi;
  const Ascent ascent(init, X, outcomes, b);

  Rng rng(seed);

  HyperparameterFit best;
  best.kernel = init;
  best.log_likelihood = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (int r = 0; r < restarts; ++r) {
    Vec3 start;
    if (r == 0) {
      start << std::log(init.constant_scale), std::log(init.lengthscale),
          std::log(std::max(init.white_noise, 1e-300));
    } else {
      for (int i = 0; i < 3; ++i) start[i] = b.lo[i] + uniform01(rng) * (b.hi[i] - b.lo[i]);
    }
    auto [theta, value] = ascent.run(start);
    if (std::isfinite(value) && (!any || value > best.log_likelihood)) {
      any = true;
      best.log_likelihood = value;
      best.kernel = with_log_params(init, theta);
    }
  }
  if (!any) {
    best.kernel = init;
    best.fell_back = true;
  }
  return best;
}

}  // namespace abc3
