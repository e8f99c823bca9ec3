#include "abc3/scale.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "abc3/error.hpp"

namespace abc3 {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Floyd's algorithm: m distinct values from [0, n), in draw order.
std::vector<Index> sample_distinct(Index n, Index m, Rng& rng) {
  std::vector<Index> out;
  if (m >= n) {
    out.resize(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  std::unordered_set<Index> chosen;
  chosen.reserve(static_cast<size_t>(m) * 2);
  out.reserve(static_cast<size_t>(m));
  for (Index j = n - m; j < n; ++j) {
    const Index r = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(j + 1)));
    const Index pick = chosen.count(r) ? j : r;
    chosen.insert(pick);
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

MatrixXd gather(const MatrixXd& pool, const std::vector<Index>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), pool.cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = pool.row(idx[r]);
  return out;
}

MatrixXd subsample_observed(const MatrixXd& pool, std::span<const Index> observed, Index cap,
                            Rng& rng) {
  const Index t = static_cast<Index>(observed.size());
  std::vector<Index> idx;
  if (t <= cap) {
    idx.assign(observed.begin(), observed.end());
  } else {
    for (Index pos : sample_distinct(t, cap, rng)) idx.push_back(observed[pos]);
  }
  return gather(pool, idx);
}

std::vector<char> observed_mask(const ScaleContext& ctx) {
  std::vector<char> mask(static_cast<size_t>(ctx.pool.rows()), 0);
  for (Index i : ctx.control) mask[i] = 1;
  for (Index i : ctx.treatment) mask[i] = 1;
  return mask;
}

SampledCriterion draw_criterion(const ScaleContext& ctx, const ScaleConfig& cfg, Rng& rng,
                                std::vector<Index>* support_index = nullptr) {
  std::vector<Index> idx = sample_distinct(ctx.pool.rows(), cfg.sample_n, rng);
  MatrixXd support = gather(ctx.pool, idx);
  if (support_index) *support_index = std::move(idx);
  MatrixXd c = subsample_observed(ctx.pool, ctx.control, cfg.obs_sample, rng);
  MatrixXd t = subsample_observed(ctx.pool, ctx.treatment, cfg.obs_sample, rng);
  return SampledCriterion(ctx.kernel, std::move(support), c, t);
}

using Objective = std::function<double(const VectorXd&)>;

VectorXd numeric_gradient(const Objective& f, const VectorXd& x) {
  VectorXd g(x.size());
  VectorXd probe = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(x[j]));
    probe[j] = x[j] + h;
    const double up = f(probe);
    probe[j] = x[j] - h;
    const double down = f(probe);
    probe[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

// Ascent with BFGS inverse-Hessian updates and backtracking; a step is
// accepted only if it does not decrease f.
VectorXd quasi_newton_ascent(const Objective& f, VectorXd x, int steps) {
  const Index d = x.size();
  double fx = f(x);
  if (!std::isfinite(fx)) return x;
  VectorXd g = numeric_gradient(f, x);
  MatrixXd h = MatrixXd::Identity(d, d);
  for (int it = 0; it < steps; ++it) {
    if (!g.allFinite() || g.norm() < 1e-12) break;
    VectorXd dir = h * g;
    if (dir.dot(g) <= 0.0) {
      h.setIdentity();
      dir = g;
    }
    double step = 1.0;
    bool accepted = false;
    VectorXd x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 30; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= fx + 1e-4 * step * g.dot(dir)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const VectorXd g_new = numeric_gradient(f, x_new);
    const VectorXd s = x_new - x;
    // ascent: curvature pair on -f
    const VectorXd y = g - g_new;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const MatrixXd left = MatrixXd::Identity(d, d) - rho * s * y.transpose();
      h = left * h * left.transpose() + rho * s * s.transpose();
    }
    const double gain = f_new - fx;
    x = x_new;
    fx = f_new;
    g = g_new;
    if (gain <= 1e-14 * std::max(1.0, std::abs(fx))) break;
  }
  return x;
}

VectorXd coordinate_ascent(const Objective& f, VectorXd x, int steps) {
  double fx = f(x);
  if (!std::isfinite(fx)) return x;
  double step = 0.5;
  for (int it = 0; it < steps && step > 1e-6; ++it) {
    bool improved = false;
    for (Index j = 0; j < x.size(); ++j) {
      for (double sign : {1.0, -1.0}) {
        VectorXd probe = x;
        probe[j] += sign * step;
        const double fp = f(probe);
        if (std::isfinite(fp) && fp > fx) {
          x = probe;
          fx = fp;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return x;
}

VectorXd optimize(const Objective& f, const VectorXd& x0, const ScaleConfig& cfg) {
  return cfg.optimizer == ScaleOptimizer::QuasiNewton ? quasi_newton_ascent(f, x0, cfg.inner_iters)
                                                     : coordinate_ascent(f, x0, cfg.inner_iters);
}

// Unobserved subject with the largest kernel value at x; ties to the lowest index.
Index snap(const ScaleContext& ctx, const std::vector<char>& mask, const VectorXd& x) {
  Index best = -1;
  double best_k = kNegInf;
  for (Index i = 0; i < ctx.pool.rows(); ++i) {
    if (mask[i]) continue;
    const double k =
        kernel_from_sqdist(ctx.kernel, (ctx.pool.row(i).transpose() - x).squaredNorm());
    if (k > best_k) {
      best_k = k;
      best = i;
    }
  }
  return best;
}

void pick_arm(const SampledCriterion& crit, const VectorXd& x, PolicyDecision& d) {
  const double s0 = crit.score(x, Arm::Control);
  const double s1 = crit.score(x, Arm::Treatment);
  d.arm = s1 > s0 ? Arm::Treatment : Arm::Control;
  d.score = std::max(s0, s1);
}

}  // namespace

ScaleOptimizer parse_scale_optimizer(std::string_view name) {
  if (name == "quasi-newton" || name == "quasi-newton-numeric-grad") return ScaleOptimizer::QuasiNewton;
  if (name == "coordinate-descent") return ScaleOptimizer::CoordinateDescent;
  throw ConfigError("unknown optimizer '" + std::string(name) +
                    "' (valid: quasi-newton, coordinate-descent)");
}

std::string to_string(ScaleOptimizer optimizer) {
  return optimizer == ScaleOptimizer::QuasiNewton ? "quasi-newton" : "coordinate-descent";
}

void ScaleConfig::validate() const {
  if (sample_n < 2) throw ConfigError("scale: sample_n must be >= 2");
  if (obs_sample < 1) throw ConfigError("scale: obs_sample must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("scale: tolerance must be > 0");
  if (max_iters < 1) throw ConfigError("scale: max_iters must be >= 1");
  if (inner_iters < 1) throw ConfigError("scale: inner_iters must be >= 1");
}

SampledCriterion::SampledCriterion(const KernelSpec& kernel, MatrixXd support,
                                   const MatrixXd& control_rows, const MatrixXd& treatment_rows)
    : kernel_(kernel), support_(std::move(support)) {
  if (support_.rows() == 0) throw InputError("sampled criterion: empty support");
  parts_[0] = make_part(control_rows);
  parts_[1] = make_part(treatment_rows);
}

SampledCriterion::ArmPart SampledCriterion::make_part(const MatrixXd& rows) const {
  ArmPart p;
  p.observed = rows;
  if (rows.rows() == 0) return p;
  MatrixXd a = gram(kernel_, rows, 0.0, Exec::Serial).entries;
  a.diagonal().array() += kernel_.noise_variance;
  Cholesky c = cholesky_with_jitter(a);
  p.chol = std::move(c.lower);
  p.jitter = c.jitter;
  p.solved = p.chol.triangularView<Eigen::Lower>().solve(
      cross_gram(kernel_, rows, support_, Exec::Serial));
  return p;
}

double SampledCriterion::score(const VectorXd& x, Arm arm) const {
  const ArmPart& p = parts_[arm_index(arm)];
  const Index n = support_.rows();
  VectorXd kx(n);
  for (Index j = 0; j < n; ++j)
    kx[j] = kernel_from_sqdist(kernel_, (support_.row(j).transpose() - x).squaredNorm());
  double denominator = kernel_.self_value() + kernel_.diagonal_noise() + p.jitter;
  double numerator;
  const Index t = p.observed.rows();
  if (t == 0) {
    numerator = kx.squaredNorm();
  } else {
    VectorXd k_tilde(t);
    for (Index i = 0; i < t; ++i)
      k_tilde[i] = kernel_from_sqdist(kernel_, (p.observed.row(i).transpose() - x).squaredNorm());
    const VectorXd u = p.chol.triangularView<Eigen::Lower>().solve(k_tilde);
    numerator = (p.solved.transpose() * u - kx).squaredNorm();
    denominator -= u.squaredNorm();
  }
  if (!(denominator > 1e-12)) return kNegInf;
  return numerator / static_cast<double>(n) / denominator;
}

double SampledCriterion::best(const VectorXd& x) const {
  return std::max(score(x, Arm::Control), score(x, Arm::Treatment));
}

ScaledDecision decide_abc3_scaled(const ScaleContext& ctx, const ScaleConfig& cfg, Rng& rng) {
  cfg.validate();
  if (ctx.pool.rows() == 0) throw StateError("abc3-scaled: empty pool");
  const std::vector<char> mask = observed_mask(ctx);

  VectorXd init = VectorXd::Zero(ctx.pool.cols());
  Index unobserved = 0;
  for (Index i = 0; i < ctx.pool.rows(); ++i) {
    if (mask[i]) continue;
    init += ctx.pool.row(i).transpose();
    ++unobserved;
  }
  if (unobserved == 0) throw StateError("abc3-scaled: no unobserved subjects left to query");
  init /= static_cast<double>(unobserved);

  ScaledDecision out;
  VectorXd x = init;
  bool restarted = false;
  std::optional<SampledCriterion> crit;
  std::vector<Index> support_index;
  for (int it = 0; it < cfg.max_iters; ++it) {
    crit.emplace(draw_criterion(ctx, cfg, rng, &support_index));
    const SampledCriterion& c = *crit;
    const Objective f = [&c](const VectorXd& v) { return c.best(v); };
    VectorXd next = optimize(f, x, cfg);
    if (it == 0) {
      // second start from the best unobserved support point
      Index seed_row = -1;
      double seed_val = kNegInf;
      for (Index i : support_index) {
        if (mask[i]) continue;
        const double v = f(ctx.pool.row(i).transpose());
        if (v > seed_val) {
          seed_val = v;
          seed_row = i;
        }
      }
      if (seed_row >= 0) {
        const VectorXd alt = optimize(f, ctx.pool.row(seed_row).transpose(), cfg);
        const double f_alt = f(alt), f_next = f(next);
        if (alt.allFinite() && std::isfinite(f_alt) && !(f_next >= f_alt)) next = alt;
      }
    }
    if (!next.allFinite() || !std::isfinite(f(next))) {
      if (!restarted) {
        restarted = true;
        x = init;
        next = optimize(f, x, cfg);
      }
      if (!next.allFinite() || !std::isfinite(f(next))) {
        out.fell_back = true;
        x = init;
        ++out.iterations;
        break;
      }
    }
    const double moved = (next - x).norm();
    out.movements.push_back(moved);
    x = next;
    ++out.iterations;
    if (moved <= cfg.tolerance) break;
  }

  out.optimum = x;
  out.decision.subject = snap(ctx, mask, x);
  pick_arm(*crit, ctx.pool.row(out.decision.subject).transpose(), out.decision);
  return out;
}

PolicyDecision decide_sample(const ScaleContext& ctx, const ScaleConfig& cfg, Rng& rng) {
  cfg.validate();
  if (ctx.pool.rows() == 0) throw StateError("sample: empty pool");
  const std::vector<char> mask = observed_mask(ctx);
  const Index observed = static_cast<Index>(std::count(mask.begin(), mask.end(), 1));
  const Index free = ctx.pool.rows() - observed;
  if (free == 0) throw StateError("sample: no unobserved subjects left to query");

  std::vector<Index> cand;
  if (free <= cfg.sample_n) {
    for (Index i = 0; i < ctx.pool.rows(); ++i)
      if (!mask[i]) cand.push_back(i);
  } else {
    std::unordered_set<Index> seen;
    while (static_cast<Index>(cand.size()) < cfg.sample_n) {
      const Index i = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(ctx.pool.rows())));
      if (mask[i] || !seen.insert(i).second) continue;
      cand.push_back(i);
    }
    std::sort(cand.begin(), cand.end());
  }

  const SampledCriterion crit = draw_criterion(ctx, cfg, rng);
  Eigen::MatrixX2d scores(static_cast<Index>(cand.size()), 2);
  for (size_t i = 0; i < cand.size(); ++i) {
    const VectorXd x = ctx.pool.row(cand[i]).transpose();
    scores(static_cast<Index>(i), 0) = crit.score(x, Arm::Control);
    scores(static_cast<Index>(i), 1) = crit.score(x, Arm::Treatment);
  }
  return argmax_decision(cand, scores, ctx.pool.rows(), false);
}

}  // namespace abc3
