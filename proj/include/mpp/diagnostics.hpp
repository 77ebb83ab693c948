#ifndef MPP_DIAGNOSTICS_HPP_
#define MPP_DIAGNOSTICS_HPP_

// Monte-Carlo studies that set simulated chains against the mean-field and
// Gaussian limits, plus the exponent arithmetic of the diffusion approximation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpp/arrigoni.hpp"
#include "mpp/ensemble.hpp"
#include "mpp/lna.hpp"
#include "mpp/meanfield.hpp"
#include "mpp/process.hpp"
#include "mpp/stats.hpp"

namespace mpp::diagnostics {

using arrigoni::Chain;
using arrigoni::ModelSpec;
using meanfield::MeanFieldSolution;

enum class Method { kSsa, kTimeChange };

inline std::string to_string(Method m) { return m == Method::kSsa ? "ssa" : "time_change"; }

/*
 * Largest-remainder rounding of N x0: floor every N x0^j, then hand the
 * missing units to the largest fractional parts (ties to the lower type).
 * Sum is exactly N and each component is off by less than 1/N.
 */
inline SparseCounts initial_counts(const DensityVector& x0, std::int64_t N) {
  if (N < 1) throw std::invalid_argument("N must be >= 1");
  const auto& v = x0.dense();
  double total = 0.0;
  for (double a : v) {
    if (a < 0.0) throw std::invalid_argument("initial density has a negative component");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("initial density must sum to 1");
  std::vector<std::int64_t> counts(v.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::int64_t assigned = 0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    const double target = v[j] * static_cast<double>(N);
    counts[j] = static_cast<std::int64_t>(std::floor(target + 1e-9));
    assigned += counts[j];
    frac.emplace_back(target - static_cast<double>(counts[j]), j);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < N && k < frac.size(); ++k, ++assigned) ++counts[frac[k].second];
  for (std::size_t k = frac.size(); assigned > N && k-- > 0;) {
    if (counts[frac[k].second] > 0) {
      --counts[frac[k].second];
      --assigned;
    }
  }
  return SparseCounts(std::move(counts));
}

template <typename Observer = NoObserver>
JumpTrajectory simulate(Method method, const Chain& chain, const SparseCounts& x0, std::int64_t N, double T,
                        std::uint64_t seed, const SimOptions& opt = {}, Observer&& observe = {}) {
  if (method == Method::kSsa) return simulate_ssa(chain, x0, N, T, seed, opt, std::forward<Observer>(observe));
  return simulate_time_change(chain, x0, N, T, seed, opt, std::forward<Observer>(observe));
}

// sup over `grid` of ||path(t) - x_t||_mu, components outside either support counted in full.
inline double sup_error(const std::function<DensityVector(double)>& path, const MeanFieldSolution& mf,
                        const std::vector<double>& grid) {
  double worst = 0.0;
  for (double t : grid) {
    DensityVector diff = path(t);
    diff -= DensityVector(mf.at(t));
    worst = std::max(worst, weighted_norm(diff));
  }
  return worst;
}

inline double sup_error(const JumpTrajectory& traj, const MeanFieldSolution& mf, const std::vector<double>& grid) {
  if (std::abs(traj.horizon - mf.horizon()) > 1e-9 * std::max(1.0, mf.horizon()))
    throw std::invalid_argument("trajectory and mean-field horizons differ");
  return sup_error([&](double t) { return density(traj.at(t), traj.scale); }, mf, grid);
}

struct StudySetup {
  ModelSpec model;
  DensityVector x0;
  double T = 2.0;
  std::size_t M = 60;  // mean-field / LNA truncation
  std::size_t grid_points = 201;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  Method method = Method::kSsa;
  Tolerance tol{1e-9, 1e-12};
};

// Seed for the block of replicas at the n-th N value.
inline std::uint64_t block_seed(std::uint64_t master, std::size_t n) { return splitmix64(master + 0x51ed27ULL * (n + 1)); }

struct ConvergenceStudy {
  std::vector<std::int64_t> N_grid;
  std::size_t replicas = 0;
  std::vector<std::vector<double>> errors;  // [n][replica]
  std::vector<double> mean_error;
  std::vector<double> mean_error_se;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;           // propagated from per-N Monte-Carlo errors
  double slope_residual_se = 0.0;  // from regression residuals
  std::size_t grid_points = 0;
};

inline ConvergenceStudy lln_study(const StudySetup& s, const std::vector<std::int64_t>& N_grid, std::size_t replicas) {
  if (N_grid.size() < 2) throw std::invalid_argument("lln_study needs at least two N values");
  if (replicas < 2) throw std::invalid_argument("lln_study needs at least two replicas");
  const auto grid = uniform_grid(s.T, s.grid_points);
  meanfield::MeanFieldOptions mo;
  mo.tol = s.tol;
  mo.grid = grid;
  const auto mf = meanfield::integrate_meanfield(s.model, s.x0, s.T, s.M, mo);
  const Chain chain(s.model);
  ConvergenceStudy out;
  out.N_grid = N_grid;
  out.replicas = replicas;
  out.grid_points = grid.size();
  std::vector<double> logN, logE, sigma;
  for (std::size_t n = 0; n < N_grid.size(); ++n) {
    const std::int64_t N = N_grid[n];
    const SparseCounts x0 = initial_counts(s.x0, N);
    SimOptions opt;
    opt.recording = Recording::on_grid(grid);
    auto errs = run_replicas(replicas, block_seed(s.seed, n), s.threads, [&](std::size_t, std::uint64_t seed) {
      const auto traj = simulate(s.method, chain, x0, N, s.T, seed, opt);
      return sup_error(traj, mf, grid);
    });
    const double m = stats::mean(errs);
    const double se = stats::standard_error(errs);
    out.errors.push_back(std::move(errs));
    out.mean_error.push_back(m);
    out.mean_error_se.push_back(se);
    logN.push_back(std::log(static_cast<double>(N)));
    logE.push_back(std::log(m));
    sigma.push_back(m > 0.0 ? se / m : 0.0);
  }
  const auto fit = stats::ols(logN, logE);
  out.slope = fit.slope;
  out.intercept = fit.intercept;
  out.slope_residual_se = fit.slope_se;
  out.slope_se = stats::slope_se_from_point_errors(logN, sigma);
  return out;
}

struct CltReport {
  std::int64_t N = 0;
  std::size_t replicas = 0;
  std::size_t M = 0;
  double T = 0.0;
  std::size_t block = 5;
  std::vector<double> mean;        // empirical mean of U_T^i, i < block
  std::vector<double> mean_se;
  std::vector<double> predicted_mean;
  Eigen::MatrixXd empirical_cov;   // block x block
  Eigen::MatrixXd predicted_cov;
  Eigen::MatrixXd cov_se;
  bool cov_pass = false;
  double worst_cov_ratio = 0.0;    // max |emp - pred| / allowance
  std::vector<double> ell;
  double functional_variance = 0.0;
  double ks_statistic = 0.0;
  double ks_p = 0.0;
  std::size_t replicas_above_M = 0;  // replicas with mass above M (excluded components)
  double max_mean_z = 0.0;
};

/*
 * U^N_T = sqrt(N) (x^N_T - x_T) against the Gaussian limit: covariance block
 * within max(rel_tol * |Sigma_ij|, 3 s.e.), and a KS test of <ell, U^N_T>
 * with ell_j = mu(j) on {0..block} against N(<ell, m_T>, ell^T Sigma(T) ell).
 */
inline CltReport clt_study(const StudySetup& s, std::int64_t N, std::size_t replicas, std::size_t block = 5,
                           double rel_tol = 0.15) {
  if (replicas < 3) throw std::invalid_argument("clt_study needs at least three replicas");
  if (block > s.M) throw std::invalid_argument("covariance block exceeds the truncation");
  const auto grid = uniform_grid(s.T, s.grid_points);
  meanfield::MeanFieldOptions mo;
  mo.tol = s.tol;
  mo.grid = grid;
  const auto mf = meanfield::integrate_meanfield(s.model, s.x0, s.T, s.M, mo);
  const SparseCounts x0N = initial_counts(s.x0, N);
  const double rootN = std::sqrt(static_cast<double>(N));
  const std::size_t dim = s.M + 1;

  std::vector<double> mean0(dim);
  for (std::size_t i = 0; i < dim; ++i) mean0[i] = rootN * (static_cast<double>(x0N[i]) / N - s.x0[i]);
  const lna::ArrigoniLinearization lin(s.model, mf);
  const auto gauss = lna::covariance_ode(lin, Eigen::MatrixXd::Zero(dim, dim), {0.0, s.T}, s.tol, mean0);
  const Eigen::MatrixXd& sigmaT = gauss.cov.back();
  const std::vector<double>& meanT = gauss.mean.back();
  const auto xT = mf.values.back();

  const Chain chain(s.model);
  SimOptions opt;
  opt.recording = Recording::on_grid({0.0, s.T});
  struct Sample {
    std::vector<double> u;
    bool above = false;
  };
  auto samples = run_replicas(replicas, block_seed(s.seed, 0), s.threads, [&](std::size_t, std::uint64_t seed) {
    const auto traj = simulate(s.method, chain, x0N, N, s.T, seed, opt);
    const SparseCounts& last = traj.states.back();
    Sample smp;
    smp.u.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) smp.u[i] = rootN * (static_cast<double>(last[i]) / N - xT[i]);
    smp.above = last.extent() > dim;
    return smp;
  });

  CltReport rep;
  rep.N = N;
  rep.replicas = replicas;
  rep.M = s.M;
  rep.T = s.T;
  rep.block = block;
  const double n = static_cast<double>(replicas);
  for (const auto& smp : samples) rep.replicas_above_M += smp.above ? 1 : 0;
  rep.mean.assign(block, 0.0);
  rep.mean_se.assign(block, 0.0);
  rep.predicted_mean.assign(meanT.begin(), meanT.begin() + static_cast<std::ptrdiff_t>(block));
  for (std::size_t i = 0; i < block; ++i) {
    std::vector<double> col(replicas);
    for (std::size_t r = 0; r < replicas; ++r) col[r] = samples[r].u[i];
    rep.mean[i] = stats::mean(col);
    rep.mean_se[i] = stats::standard_error(col);
    if (rep.mean_se[i] > 0.0)
      rep.max_mean_z = std::max(rep.max_mean_z, std::abs(rep.mean[i] - rep.predicted_mean[i]) / rep.mean_se[i]);
  }
  const auto b = static_cast<Eigen::Index>(block);
  rep.empirical_cov = Eigen::MatrixXd::Zero(b, b);
  rep.cov_se = Eigen::MatrixXd::Zero(b, b);
  rep.predicted_cov = sigmaT.topLeftCorner(b, b);
  rep.cov_pass = true;
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      std::vector<double> prod(replicas);
      for (std::size_t r = 0; r < replicas; ++r)
        prod[r] = (samples[r].u[i] - rep.mean[i]) * (samples[r].u[j] - rep.mean[j]);
      const double emp = stats::mean(prod) * n / (n - 1.0);
      const double se = stats::standard_error(prod);
      rep.empirical_cov(i, j) = emp;
      rep.cov_se(i, j) = se;
      const double allowance = std::max(rel_tol * std::abs(rep.predicted_cov(i, j)), 3.0 * se);
      const double ratio = allowance > 0.0 ? std::abs(emp - rep.predicted_cov(i, j)) / allowance
                                           : (emp == rep.predicted_cov(i, j) ? 0.0 : INFINITY);
      rep.worst_cov_ratio = std::max(rep.worst_cov_ratio, ratio);
      if (ratio > 1.0) rep.cov_pass = false;
    }

  rep.ell.resize(block + 1);
  for (std::size_t j = 0; j <= block; ++j) rep.ell[j] = mu_weight(j);
  double center = 0.0;
  rep.functional_variance = 0.0;
  for (std::size_t i = 0; i <= block; ++i) {
    center += rep.ell[i] * meanT[i];
    for (std::size_t j = 0; j <= block; ++j)
      rep.functional_variance += rep.ell[i] * rep.ell[j] *
                                 sigmaT(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  std::vector<double> functional(replicas);
  for (std::size_t r = 0; r < replicas; ++r) {
    double v = 0.0;
    for (std::size_t j = 0; j <= block; ++j) v += rep.ell[j] * samples[r].u[j];
    functional[r] = v;
  }
  const double sd = std::sqrt(std::max(rep.functional_variance, 0.0));
  if (sd > 0.0) {
    const auto ks = stats::ks_one_sample(functional, [&](double v) { return stats::normal_cdf((v - center) / sd); });
    rep.ks_statistic = ks.statistic;
    rep.ks_p = ks.p_value;
  } else {
    const bool degenerate = std::all_of(functional.begin(), functional.end(),
                                        [&](double v) { return std::abs(v - center) < 1e-9; });
    rep.ks_statistic = degenerate ? 0.0 : 1.0;
    rep.ks_p = degenerate ? 1.0 : 0.0;
  }
  return rep;
}

// sup_t S_r(x_t^N) along a recorded jump trajectory (exact for full recording).
inline double sup_moment(const JumpTrajectory& traj, double r) {
  double best = 0.0;
  for (const auto& x : traj.states) best = std::max(best, moment_S(density(x, traj.scale), r));
  return best;
}

struct MomentStudy {
  double r = 2.0;
  double level = 0.99;
  std::vector<std::int64_t> N_grid;
  std::vector<std::vector<double>> sup_values;  // [n][replica]
  std::vector<double> q50, q90, q_level;
  double spread = 0.0;  // max q_level / min q_level - 1
  bool stable = false;
};

// Moment sup is taken over every event time, so it is exact for the
// piecewise-constant path.
inline MomentStudy moment_study(const StudySetup& s, const std::vector<std::int64_t>& N_grid, std::size_t replicas,
                                double r, double level = 0.99, double band = 0.2) {
  if (r < 0.0) throw std::invalid_argument("moment order must be nonnegative");
  const Chain chain(s.model);
  MomentStudy out;
  out.r = r;
  out.level = level;
  out.N_grid = N_grid;
  for (std::size_t n = 0; n < N_grid.size(); ++n) {
    const std::int64_t N = N_grid[n];
    const SparseCounts x0 = initial_counts(s.x0, N);
    SimOptions opt;
    opt.recording = Recording::none();
    auto sups = run_replicas(replicas, block_seed(s.seed, n), s.threads, [&](std::size_t, std::uint64_t seed) {
      // S_r changes only at jumps, and only in the touched components.
      std::vector<double> powers;
      auto weight = [&](std::size_t j) {
        while (powers.size() <= j) powers.push_back(std::pow(nu_weight(powers.size()), r));
        return powers[j];
      };
      double best = 0.0;
      simulate(s.method, chain, x0, N, s.T, seed, opt, [&](double, const SparseCounts& x) {
        double v = 0.0;
        const auto& d = x.dense();
        for (std::size_t j = 0; j < d.size(); ++j)
          if (d[j] != 0) v += static_cast<double>(d[j]) * weight(j);
        best = std::max(best, v / static_cast<double>(N));
      });
      return best;
    });
    out.q50.push_back(stats::quantile(sups, 0.5));
    out.q90.push_back(stats::quantile(sups, 0.9));
    out.q_level.push_back(stats::quantile(sups, level));
    out.sup_values.push_back(std::move(sups));
  }
  const auto [lo, hi] = std::minmax_element(out.q_level.begin(), out.q_level.end());
  out.spread = *lo > 0.0 ? *hi / *lo - 1.0 : (*hi == *lo ? 0.0 : INFINITY);
  out.stable = out.spread <= band;
  return out;
}

struct MartingaleReport {
  std::int64_t N = 0;
  std::size_t replicas = 0;
  double T = 0.0;
  std::vector<double> mean;  // per component of m_T
  std::vector<double> se;
  std::vector<double> z;
  std::vector<std::size_t> flagged;  // components with |mean| > 3 s.e.
  bool all_within() const { return flagged.empty(); }
};

inline MartingaleReport martingale_study(const StudySetup& s, std::int64_t N, std::size_t replicas) {
  if (replicas < 2) throw std::invalid_argument("martingale_study needs at least two replicas");
  const Chain chain(s.model);
  const SparseCounts x0 = initial_counts(s.x0, N);
  SimOptions opt;
  opt.recording = Recording::none();
  auto values = run_replicas(replicas, block_seed(s.seed, 0), s.threads, [&](std::size_t, std::uint64_t seed) {
    MartingaleAccumulator<Chain> acc(chain, N);
    simulate(s.method, chain, x0, N, s.T, seed, opt, [&](double t, const SparseCounts& x) { acc.observe(t, x); });
    return acc.value(s.T);
  });
  std::size_t width = 0;
  for (const auto& v : values) width = std::max(width, v.extent());
  MartingaleReport rep;
  rep.N = N;
  rep.replicas = replicas;
  rep.T = s.T;
  for (std::size_t j = 0; j < width; ++j) {
    std::vector<double> col(replicas);
    for (std::size_t r = 0; r < replicas; ++r) col[r] = values[r][j];
    const double m = stats::mean(col);
    const double se = stats::standard_error(col);
    rep.mean.push_back(m);
    rep.se.push_back(se);
    const double z = se > 0.0 ? m / se : (m == 0.0 ? 0.0 : INFINITY);
    rep.z.push_back(z);
    if (std::abs(z) > 3.0) rep.flagged.push_back(j);
  }
  return rep;
}

struct OuVarianceEstimate {
  double estimate = 0.0;  // mean over replicas of the time-averaged Y^2
  double se = 0.0;
  double target = 0.0;  // s / (2a)
  double dt = 0.0;
};

/*
 * Stationary variance of dY = -a Y dt + sqrt(s) dW by Euler-Maruyama: each
 * replica time-averages Y^2 over (burn, T], which is far less noisy than one
 * endpoint sample per replica.
 */
inline OuVarianceEstimate scalar_ou_study(double a, double s, std::size_t replicas, double T, double burn, double dt,
                                          std::uint64_t seed, unsigned threads = 0) {
  if (!(a > 0.0) || !(s >= 0.0)) throw std::invalid_argument("scalar OU needs a > 0 and s >= 0");
  if (!(burn >= 0.0 && burn < T)) throw std::invalid_argument("burn-in must lie in [0, T)");
  if (replicas < 2) throw std::invalid_argument("scalar_ou_study needs at least two replicas");
  const auto sys = lna::ConstantLinearSde::scalar_ou(a, s);
  auto averages = run_replicas(replicas, seed, threads, [&](std::size_t, std::uint64_t rs) {
    double sum = 0.0;
    std::size_t count = 0;
    lna::simulate_Y(sys, {0.0}, T, dt, rs, 0, [&](double t, const std::vector<double>& y) {
      if (t > burn) {
        sum += y[0] * y[0];
        ++count;
      }
    });
    return sum / static_cast<double>(count);
  });
  return {stats::mean(averages), stats::standard_error(averages), s / (2.0 * a), dt};
}

struct ExponentReport {
  double beta1, beta2, beta3, beta4, beta5;
  double r0 = 0.0;
  double zeta = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double threshold = 0.0;  // 4(beta2 + beta3 + beta4) + 2 beta5
  bool feasible = false;   // 1/r0 < zeta < 1/threshold
};

/*
 * b1 = min{1/4 - zeta(beta2 + beta3 + beta4 + beta5/2), zeta(r0 - beta2 - 2(beta3 + beta4))/2}
 * b2 = min{zeta r0 - 1, 1}
 */
inline ExponentReport exponent_calc(const arrigoni::WeightStructure& w, double r0, double zeta) {
  ExponentReport e{static_cast<double>(w.beta1), static_cast<double>(w.beta2), static_cast<double>(w.beta3),
                   static_cast<double>(w.beta4), static_cast<double>(w.beta5)};
  e.r0 = r0;
  e.zeta = zeta;
  e.threshold = 4.0 * (e.beta2 + e.beta3 + e.beta4) + 2.0 * e.beta5;
  e.b1 = std::min(0.25 - zeta * (e.beta2 + e.beta3 + e.beta4 + e.beta5 / 2.0),
                  zeta * (r0 - e.beta2 - 2.0 * (e.beta3 + e.beta4)) / 2.0);
  e.b2 = std::min(zeta * r0 - 1.0, 1.0);
  e.feasible = r0 > 0.0 && 1.0 / r0 < zeta && zeta < 1.0 / e.threshold;
  return e;
}

}  // namespace mpp::diagnostics

#endif  // MPP_DIAGNOSTICS_HPP_
