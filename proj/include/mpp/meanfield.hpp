#ifndef MPP_MEANFIELD_HPP_
#define MPP_MEANFIELD_HPP_

// Deterministic limit on the truncated type set {0..M}:
//   dx/dt = A x + F(x),
// the semigroup R(t) = exp(tA), and equilibria A x + F(x) = 0.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpp/arrigoni.hpp"
#include "mpp/counts.hpp"
#include "mpp/errors.hpp"
#include "mpp/ode.hpp"

namespace mpp::meanfield {

using arrigoni::ModelSpec;

// Explicit integration cost grows like max|A_jj| ~ M^2 under the logistic law.
inline constexpr std::size_t kMaxTruncation = 2000;

inline void check_truncation(std::size_t M) {
  if (M < 1) throw std::invalid_argument("truncation level M must be >= 1");
  if (M > kMaxTruncation)
    throw std::invalid_argument("truncation level M=" + std::to_string(M) + " exceeds the limit of " +
                                std::to_string(kMaxTruncation));
}

struct MeanFieldSolution {
  std::vector<double> grid;
  std::vector<std::vector<double>> values;  // values[k][i], i = 0..M
  std::size_t M = 0;
  Tolerance tol;
  std::vector<double> dropped;  // cumulative mass carried above M, per grid time
  std::vector<std::string> warnings;
  OdeStats stats;

  double horizon() const { return grid.back(); }
  double dropped_flux() const { return dropped.empty() ? 0.0 : dropped.back(); }

  DensityVector density(std::size_t k) const { return DensityVector(values[k]); }

  // Linear interpolation in time between grid points.
  std::vector<double> at(double t) const {
    if (t <= grid.front()) return values.front();
    if (t >= grid.back()) return values.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), t) - grid.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - grid[lo]) / (grid[hi] - grid[lo]);
    std::vector<double> out(M + 1);
    for (std::size_t i = 0; i <= M; ++i) out[i] = (1.0 - w) * values[lo][i] + w * values[hi][i];
    return out;
  }
};

/*
 * Right-hand side on {0..M}. The extra trailing slot accumulates the flux
 * that leaves the truncation: births out of type M and migrants arriving
 * in patches of size M.
 */
class Vectorfield {
 public:
  Vectorfield(const ModelSpec& m, std::size_t M) : A_(arrigoni::truncated_A(m, M)), rg_(m.rho * m.gamma), kappa_(m.kappa) {}

  std::size_t M() const { return A_.M; }
  const arrigoni::TruncatedOperator& A() const { return A_; }

  // y = A x + F(x) on {0..M}; returns the outflow rate above M.
  double eval(const double* x, double* y) const {
    const std::size_t M = A_.M;
    double s = 0.0;
    for (std::size_t j = 1; j <= M; ++j) s += static_cast<double>(j) * x[j];
    const double rgs = rg_ * s;
    for (std::size_t i = 0; i <= M; ++i) {
      double v = A_.diag[i] * x[i];
      if (i >= 1) v += A_.sub[i] * x[i - 1];
      if (i < M) v += A_.super[i] * x[i + 1];
      v += i == 0 ? kappa_ - rgs * x[0] : rgs * (x[i - 1] - x[i]);
      y[i] = v;
    }
    return (A_.dropped_rate() + rgs) * x[M];
  }

  std::vector<double> operator()(const std::vector<double>& x) const {
    std::vector<double> y(A_.M + 1);
    eval(x.data(), y.data());
    return y;
  }

  // Jacobian A + DF(x) on {0..M}.
  Eigen::MatrixXd jacobian(const std::vector<double>& x) const {
    const std::size_t M = A_.M;
    const auto n = static_cast<Eigen::Index>(M + 1);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    double s = 0.0;
    for (std::size_t j = 1; j <= M; ++j) s += static_cast<double>(j) * x[j];
    for (std::size_t i = 0; i <= M; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      J(r, r) += A_.diag[i] - rg_ * s;
      if (i >= 1) J(r, r - 1) += A_.sub[i] + rg_ * s;
      if (i < M) J(r, r + 1) += A_.super[i];
      // d s / d x^k = k
      const double up = (i >= 1 ? x[i - 1] : 0.0) - x[i];
      for (std::size_t k = 1; k <= M; ++k) J(r, static_cast<Eigen::Index>(k)) += rg_ * up * static_cast<double>(k);
    }
    return J;
  }

 private:
  arrigoni::TruncatedOperator A_;
  double rg_;
  double kappa_;
};

inline std::vector<double> to_dense(const DensityVector& x, std::size_t M) {
  if (x.extent() > M + 1) {
    for (std::size_t j = M + 1; j < x.extent(); ++j)
      if (x[j] != 0.0) throw std::invalid_argument("initial condition has support above M=" + std::to_string(M));
  }
  std::vector<double> out(M + 1, 0.0);
  for (std::size_t j = 0; j <= M; ++j) out[j] = x[j];
  return out;
}

struct MeanFieldOptions {
  Tolerance tol;
  std::vector<double> grid;     // output times; empty means uniform on [0, T]
  std::size_t grid_points = 201;
  // A component below -negativity_slack * tol.abs is an error. The step
  // controller bounds local error only, so the global error in tail
  // components that sit at zero can exceed tol.abs by a small factor.
  double negativity_slack = 10.0;
};

inline MeanFieldSolution integrate_meanfield(const ModelSpec& m, const DensityVector& x0, double T, std::size_t M,
                                             const MeanFieldOptions& opt = {}) {
  check_truncation(M);
  m.validate();
  if (!(T >= 0.0)) throw std::invalid_argument("horizon must be nonnegative");
  const Vectorfield field(m, M);
  MeanFieldSolution sol;
  sol.M = M;
  sol.tol = opt.tol;
  sol.grid = opt.grid.empty() ? uniform_grid(T, opt.grid_points) : opt.grid;
  if (sol.grid.front() != 0.0 || std::abs(sol.grid.back() - T) > 1e-12 * std::max(1.0, T))
    throw std::invalid_argument("output grid must span [0, T]");

  double stiffness = 0.0;
  for (double a : field.A().diag) stiffness = std::max(stiffness, std::abs(a));
  stiffness += m.rho * m.gamma * static_cast<double>(M);
  if (stiffness * T > 1e6) {
    std::ostringstream w;
    w << "stiff regime: max|A_jj| * T = " << stiffness * T << "; explicit steps will be tiny";
    sol.warnings.push_back(w.str());
  }

  std::vector<double> state = to_dense(x0, M);
  state.push_back(0.0);  // dropped-flux accumulator
  auto rhs = [&](const std::vector<double>& x, std::vector<double>& dx, double) {
    dx[M + 1] = field.eval(x.data(), dx.data());
  };
  sol.values.resize(sol.grid.size());
  sol.dropped.resize(sol.grid.size());
  sol.stats = integrate_on_grid(rhs, std::move(state), sol.grid, opt.tol,
                                [&](std::size_t k, double t, const std::vector<double>& x) {
                                  sol.values[k].assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(M + 1));
                                  sol.dropped[k] = x[M + 1];
                                  for (std::size_t i = 0; i <= M; ++i)
                                    if (x[i] < -opt.negativity_slack * opt.tol.abs) {
                                      std::ostringstream msg;
                                      msg << "negative component x^" << i << " = " << x[i] << " at t=" << t;
                                      throw NumericalError(msg.str(), t);
                                    }
                                });
  return sol;
}

// R(t) v: solution of v' = A v on {0..M} (births out of M are lost).
inline std::vector<std::vector<double>> semigroup_apply(const ModelSpec& m, const std::vector<double>& v,
                                                        const std::vector<double>& times, std::size_t M,
                                                        Tolerance tol = {}) {
  check_truncation(M);
  if (v.size() != M + 1) throw std::invalid_argument("vector length must be M+1");
  if (times.empty() || times.front() < 0.0) throw std::invalid_argument("times must be nonnegative");
  const auto A = arrigoni::truncated_A(m, M);
  auto rhs = [&](const std::vector<double>& x, std::vector<double>& dx, double) {
    for (std::size_t i = 0; i <= M; ++i) {
      double y = A.diag[i] * x[i];
      if (i >= 1) y += A.sub[i] * x[i - 1];
      if (i < M) y += A.super[i] * x[i + 1];
      dx[i] = y;
    }
  };
  std::vector<double> grid{0.0};
  for (double t : times)
    if (t > grid.back()) grid.push_back(t);
  std::vector<std::vector<double>> at_grid(grid.size());
  integrate_on_grid(rhs, v, grid, tol, [&](std::size_t k, double, const std::vector<double>& x) { at_grid[k] = x; });
  std::vector<std::vector<double>> out;
  for (double t : times) {
    const auto k = static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), t) - grid.begin());
    out.push_back(at_grid[k]);
  }
  return out;
}

inline std::vector<double> semigroup_apply(const ModelSpec& m, const std::vector<double>& v, double t,
                                           std::size_t M, Tolerance tol = {}) {
  return semigroup_apply(m, v, std::vector<double>{t}, M, tol).front();
}

inline double weighted_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) s += mu_weight(j) * std::abs(v[j]);
  return s;
}

struct Equilibrium {
  std::vector<double> x;
  double residual = 0.0;  // ||A x + F(x)||_mu
  int newton_steps = 0;
  double integration_time = 0.0;
};

struct EquilibriumOptions {
  double tol = 1e-10;
  double settle = 1e-6;        // hand over to Newton below this residual
  double max_time = 5000.0;    // total integration budget
  double chunk = 10.0;
  int max_newton = 60;
  std::vector<double> start;   // empty: spread over {0..min(M, 8)}
};

/*
 * Long-time integration toward an attracting equilibrium followed by damped
 * Newton on A x + F(x) = 0, renormalizing sum x = 1 after every step.
 */
inline Equilibrium find_equilibrium(const ModelSpec& m, std::size_t M, const EquilibriumOptions& opt = {}) {
  check_truncation(M);
  const Vectorfield field(m, M);
  std::vector<double> x = opt.start;
  if (x.empty()) {
    x.assign(M + 1, 0.0);
    const std::size_t top = std::min<std::size_t>(M, 8);
    for (std::size_t j = 0; j <= top; ++j) x[j] = 1.0 / static_cast<double>(top + 1);
  }
  if (x.size() != M + 1) throw std::invalid_argument("start vector length must be M+1");
  auto residual_of = [&](const std::vector<double>& v) { return weighted_norm(field(v)); };
  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    for (double& a : v) a /= s;
  };

  Equilibrium eq;
  double res = residual_of(x);
  MeanFieldOptions mo;
  mo.tol = {1e-10, 1e-13};
  while (res > opt.settle && eq.integration_time < opt.max_time) {
    mo.grid = {0.0, opt.chunk};
    auto sol = integrate_meanfield(m, DensityVector(x), opt.chunk, M, mo);
    x = sol.values.back();
    for (double& a : x) a = std::max(a, 0.0);
    normalize(x);
    eq.integration_time += opt.chunk;
    res = residual_of(x);
  }

  for (; eq.newton_steps < opt.max_newton && res > opt.tol; ++eq.newton_steps) {
    const Eigen::MatrixXd J = field.jacobian(x);
    const auto r = field(x);
    const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    const Eigen::VectorXd delta = J.partialPivLu().solve(rhs);
    double lambda = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, lambda *= 0.5) {
      std::vector<double> trial(x);
      for (std::size_t i = 0; i <= M; ++i) trial[i] += lambda * delta[static_cast<Eigen::Index>(i)];
      normalize(trial);
      const double tr = residual_of(trial);
      if (std::isfinite(tr) && tr < res) {
        x = std::move(trial);
        res = tr;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  eq.x = std::move(x);
  eq.residual = res;
  if (!(res <= opt.tol)) {
    std::ostringstream msg;
    msg << "equilibrium search did not converge: residual " << res << " > " << opt.tol;
    throw NumericalError(msg.str(), eq.integration_time);
  }
  return eq;
}

}  // namespace mpp::meanfield

#endif  // MPP_MEANFIELD_HPP_
