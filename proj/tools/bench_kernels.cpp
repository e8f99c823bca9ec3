// Serial vs OpenMP timings for the data-parallel kernels, with the largest
// absolute difference between the two paths (expected 0).

#include <chrono>
#include <cstdio>
#include <functional>

#include "abc3/data.hpp"
#include "abc3/gp.hpp"
#include "abc3/metrics.hpp"
#include "abc3/policy.hpp"

using namespace abc3;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() /
         reps;
}

void row(const char* name, double serial, double parallel, double diff) {
  std::printf("%-22s %10.3f %10.3f %8.2fx %12.3g\n", name, serial, parallel, serial / parallel, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const Index n = argc > 1 ? std::atol(argv[1]) : 1000;
  const Index d = 10;
  const CovariatePool pool = gen_synthetic(SyntheticKind::SmoothGp, n, d, 1);
  const KernelSpec k = KernelSpec::rbf(1.0, 1.0);

  std::printf("pool %ld x %ld, %d threads\n", static_cast<long>(n), static_cast<long>(d), max_threads());
  std::printf("%-22s %10s %10s %9s %12s\n", "kernel", "serial ms", "omp ms", "speedup", "max |diff|");

  {
    MatrixXd a, b;
    const double s = time_ms([&] { a = gram(k, pool.X, 0.0, Exec::Serial).entries; }, 3);
    const double p = time_ms([&] { b = gram(k, pool.X, 0.0, Exec::Parallel).entries; }, 3);
    row("gram", s, p, (a - b).cwiseAbs().maxCoeff());
  }
  {
    const MatrixXd half = pool.X.topRows(n / 2);
    MatrixXd a, b;
    const double s = time_ms([&] { a = cross_gram(k, half, pool.X, Exec::Serial); }, 3);
    const double p = time_ms([&] { b = cross_gram(k, half, pool.X, Exec::Parallel); }, 3);
    row("cross_gram", s, p, (a - b).cwiseAbs().maxCoeff());
  }
  {
    const PoolCache cache = PoolCache::build(k, pool.X);
    std::vector<Index> idx0, idx1;
    for (Index i = 0; i < n / 10; ++i) (i % 2 ? idx1 : idx0).push_back(i);
    const ArmState c = ArmState::fit(k, pool.X, idx0, VectorXd::Zero(idx0.size()), Arm::Control);
    const ArmState t = ArmState::fit(k, pool.X, idx1, VectorXd::Zero(idx1.size()), Arm::Treatment);
    Rng rng(0);
    const PolicyContext ctx{pool.X, cache, c, t, rng};
    const auto cand = ctx.candidates();
    Eigen::MatrixX2d a, b;
    const double s = time_ms([&] { a = abc3_scores(ctx, cand, Exec::Serial); }, 3);
    const double p = time_ms([&] { b = abc3_scores(ctx, cand, Exec::Parallel); }, 3);
    row("abc3_scores", s, p, (a - b).cwiseAbs().maxCoeff());
  }
  {
    const MatrixXd small = pool.X.topRows(std::min<Index>(n, 300));
    std::vector<AssumptionReport> a, b;
    const double s = time_ms([&] { Rng r(3); a = check_assumption(k, small, 50, r, Exec::Serial); }, 1);
    const double p = time_ms([&] { Rng r(3); b = check_assumption(k, small, 50, r, Exec::Parallel); }, 1);
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i].min_gap - b[i].min_gap));
    row("check_assumption", s, p, diff);
  }
  return 0;
}
