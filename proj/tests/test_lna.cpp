#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "mpp/diagnostics.hpp"
#include "mpp/lna.hpp"
#include "mpp/stats.hpp"

namespace mpp::lna {
namespace {

using arrigoni::Law;

ModelSpec constant_law(double b, double d, double gamma, double rho, double kappa) {
  ModelSpec m;
  m.law = Law::kConstant;
  m.b = b;
  m.d = d;
  m.gamma = gamma;
  m.rho = rho;
  m.kappa = kappa;
  return m;
}

DensityVector default_x0() { return DensityVector({{0, 0.4}, {2, 0.2}, {4, 0.2}, {6, 0.2}}); }

meanfield::MeanFieldSolution path(const ModelSpec& m, std::size_t M, double T, std::size_t points = 41) {
  meanfield::MeanFieldOptions o;
  o.tol = {1e-10, 1e-13};
  o.grid_points = points;
  return meanfield::integrate_meanfield(m, default_x0(), T, M, o);
}

double min_eigenvalue(const Eigen::MatrixXd& S) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

TEST(NoiseMatrix, ZeroStateHasNoNoise) {
  const ModelSpec m;
  const auto Q = noise_matrix(m, DensityVector(std::vector<double>(11, 0.0)), 10);
  EXPECT_EQ(Q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(NoiseMatrix, SingleFamilyIsRankOneOuterProduct) {
  RateTable t;
  t.add(JumpVector{{0, 1}, {1, -1}}, 2.5);
  const auto Q = noise_matrix(t, 2);
  EXPECT_DOUBLE_EQ(Q(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(Q(0, 1), -2.5);
  EXPECT_DOUBLE_EQ(Q(1, 0), -2.5);
  EXPECT_DOUBLE_EQ(Q(1, 1), 2.5);
}

TEST(NoiseMatrix, PositiveSemidefiniteAlongMeanFieldPath) {
  const ModelSpec m;
  const std::size_t M = 30;
  const auto mf = path(m, M, 2.0);
  for (const auto& x : mf.values) {
    const auto Q = noise_matrix(m, DensityVector(x), M);
    EXPECT_LE((Q - Q.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(min_eigenvalue(Q), -1e-12);
  }
}

TEST(NoiseMatrix, RowsSumToZeroAwayFromTheCap) {
  // Every jump sums to zero, so sigma^2 1 = 0 when no jump crosses M.
  const ModelSpec m;
  const std::size_t M = 30;
  const DensityVector x = default_x0();
  const auto Q = noise_matrix(m, x, M);
  for (Eigen::Index i = 0; i <= static_cast<Eigen::Index>(M); ++i) EXPECT_NEAR(Q.row(i).sum(), 0.0, 1e-12);
}

TEST(NoiseMatrix, DiagonalIsTotalRateWeightedBySquaredJumps) {
  // sigma^2_ii = sum_J (J^i)^2 alpha_J: compare against the fluid rate table.
  const ModelSpec m;
  const DensityVector x = default_x0();
  const auto Q = noise_matrix(m, x, 12);
  const auto table = arrigoni::fluid_rates(m, x);
  for (std::size_t i = 0; i <= 12; ++i) {
    double expect = 0.0;
    for (const auto& e : table)
      for (const auto& c : e.jump)
        if (c.index == i) expect += e.rate * c.delta * c.delta;
    EXPECT_NEAR(Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)), expect, 1e-12);
  }
}

TEST(DriftMatrix, LinearizationMatchesVectorfieldJacobian) {
  const ModelSpec m;
  const std::size_t M = 20;
  const auto mf = path(m, M, 1.0);
  const ArrigoniLinearization lin(m, mf);
  const meanfield::Vectorfield f(m, M);
  for (double t : {0.0, 0.37, 1.0}) {
    const auto B = drift_matrix(lin, t);
    const auto J = f.jacobian(mf.at(t));
    EXPECT_LE((B - J).cwiseAbs().maxCoeff(), 1e-12) << "t=" << t;
    EXPECT_NEAR(lin.max_diagonal(t), B.diagonal().cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CovarianceOde, ZeroNoiseZeroStart) {
  const ConstantLinearSde sys(-Eigen::MatrixXd::Identity(3, 3), {});
  const auto g = covariance_ode(sys, Eigen::MatrixXd::Zero(3, 3), uniform_grid(2.0, 5));
  for (const auto& c : g.cov) EXPECT_EQ(c.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CovarianceOde, ScalarClosedForm) {
  const double a = 1.3, s = 0.7, sigma0 = 2.0;
  const auto sys = ConstantLinearSde::scalar_ou(a, s);
  Eigen::MatrixXd S0(1, 1);
  S0(0, 0) = sigma0;
  const auto grid = uniform_grid(3.0, 31);
  const auto g = covariance_ode(sys, S0, grid, {1e-10, 1e-12}, {0.5});
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    EXPECT_NEAR(g.cov[k](0, 0), s / (2 * a) + (sigma0 - s / (2 * a)) * std::exp(-2 * a * t), 1e-8);
    EXPECT_NEAR(g.mean[k][0], 0.5 * std::exp(-a * t), 1e-9);
  }
  EXPECT_EQ(g.cov.front()(0, 0), sigma0);
}

TEST(CovarianceOde, SymmetricPsdAlongArrigoniPath) {
  const ModelSpec m;
  const std::size_t M = 20;
  const auto mf = path(m, M, 2.0);
  const ArrigoniLinearization lin(m, mf);
  Eigen::MatrixXd S0 = Eigen::MatrixXd::Identity(M + 1, M + 1) * 0.01;
  const auto g = covariance_ode(lin, S0, mf.grid, {1e-9, 1e-12});
  EXPECT_EQ(g.cov.front(), S0);
  for (const auto& c : g.cov) {
    EXPECT_LE((c - c.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(min_eigenvalue(c), -1e-9);
  }
  for (const auto& mean : g.mean)
    for (double v : mean) EXPECT_EQ(v, 0.0);
}

TEST(CovarianceOde, RejectsAsymmetricStart) {
  const auto sys = ConstantLinearSde(-Eigen::MatrixXd::Identity(2, 2), {});
  Eigen::MatrixXd S(2, 2);
  S << 1, 0.5, 0, 1;
  EXPECT_THROW(covariance_ode(sys, S, {0.0, 1.0}), std::invalid_argument);
}

TEST(Lyapunov, ScalarClosedForm) {
  Eigen::MatrixXd B(1, 1), Q(1, 1);
  B(0, 0) = -0.8;
  Q(0, 0) = 3.0;
  const auto sol = solve_lyapunov(B, Q);
  EXPECT_NEAR(sol.sigma(0, 0), 3.0 / 1.6, 1e-14);
}

TEST(Lyapunov, SchurAgreesWithIntegration) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  const int n = 6;
  Eigen::MatrixXd B(n, n), L(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      B(i, j) = 0.3 * g(rng);
      L(i, j) = g(rng);
    }
  B -= 2.0 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd Q = L * L.transpose();
  const auto direct = solve_lyapunov(B, Q);
  const auto slow = lyapunov_by_integration(B, Q, 1e-10);
  EXPECT_LT(direct.spectral_abscissa, 0.0);
  EXPECT_LE(direct.residual, 1e-12 * Q.cwiseAbs().maxCoeff());
  EXPECT_LE((direct.sigma - slow.sigma).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(direct.spectral_abscissa, slow.spectral_abscissa, 1e-10);
}

TEST(Lyapunov, UnstableDriftHasNoStationaryLaw) {
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(2, 2) * 0.1;
  EXPECT_THROW(solve_lyapunov(B, Eigen::MatrixXd::Identity(2, 2)), NumericalError);
}

TEST(Stationary, CovarianceOdeConvergesToLyapunovAtEquilibrium) {
  // A fast-relaxing model so that Sigma(t) settles in a short horizon.
  const auto m = constant_law(0.8, 0.6, 0.6, 0.5, 1.0);
  const std::size_t M = 25;
  const auto eq = meanfield::find_equilibrium(m, M);
  const auto st = stationary_covariance(m, eq.x);
  ASSERT_LT(st.spectral_abscissa, -0.2);
  const ArrigoniLinearization frozen(m, eq.x);
  const double T = 40.0 / -st.spectral_abscissa;
  const auto g = covariance_ode(frozen, Eigen::MatrixXd::Zero(M + 1, M + 1), {0.0, T}, {1e-10, 1e-13});
  EXPECT_LE((g.cov.back() - st.sigma).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Stationary, DefaultLogisticAtM100) {
  const ModelSpec m;
  const auto eq = meanfield::find_equilibrium(m, 100);
  const auto st = stationary_covariance(m, eq.x);
  EXPECT_LE(st.residual, 1e-8);
  EXPECT_LE((st.sigma - st.sigma.transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GE(min_eigenvalue(st.sigma), -1e-8 * st.sigma.cwiseAbs().maxCoeff());
}

TEST(SimulateY, ZeroDriftZeroNoiseStaysPut) {
  const ConstantLinearSde sys(Eigen::MatrixXd::Zero(3, 3), {});
  const auto p = simulate_Y(sys, {1.0, -2.0, 0.5}, 1.0, 0.01, 7, 10);
  for (const auto& y : p.values) EXPECT_EQ(y, (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_DOUBLE_EQ(p.times.back(), 1.0);
}

TEST(SimulateY, DeterministicGivenSeed) {
  const ModelSpec m;
  const auto mf = path(m, 10, 1.0);
  const ArrigoniLinearization lin(m, mf);
  const auto a = simulate_Y(lin, std::vector<double>(11, 0.0), 1.0, 1e-3, 99);
  const auto b = simulate_Y(lin, std::vector<double>(11, 0.0), 1.0, 1e-3, 99);
  const auto c = simulate_Y(lin, std::vector<double>(11, 0.0), 1.0, 1e-3, 100);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values.back(), c.values.back());
}

TEST(SimulateY, RejectsStepBeyondStability) {
  const auto sys = ConstantLinearSde::scalar_ou(50.0, 1.0);
  EXPECT_THROW(simulate_Y(sys, {0.0}, 1.0, 0.1, 1), NumericalError);
  EXPECT_THROW(simulate_Y(sys, {0.0, 1.0}, 1.0, 0.001, 1), std::invalid_argument);
}

TEST(SimulateY, AffineInInitialCondition) {
  const ModelSpec m;
  const std::size_t M = 12;
  const auto mf = path(m, M, 1.0);
  const ArrigoniLinearization lin(m, mf);
  std::vector<double> u(M + 1), v(M + 1), uv(M + 1), zero(M + 1, 0.0);
  for (std::size_t i = 0; i <= M; ++i) {
    u[i] = std::sin(1.0 + i);
    v[i] = std::cos(2.0 * i);
    uv[i] = u[i] + v[i];
  }
  const double dt = 1e-3;
  const auto yu = simulate_Y(lin, u, 1.0, dt, 5).values.back();
  const auto yv = simulate_Y(lin, v, 1.0, dt, 5).values.back();
  const auto yuv = simulate_Y(lin, uv, 1.0, dt, 5).values.back();
  const auto y0 = simulate_Y(lin, zero, 1.0, dt, 5).values.back();
  for (std::size_t i = 0; i <= M; ++i) EXPECT_NEAR(yuv[i] - yu[i] - yv[i] + y0[i], 0.0, 1e-12);
}

// The Arrigoni linearization with the noise of jumps that leave {0..M}
// removed: those are the only jumps whose truncated image does not sum to 0.
struct InteriorNoise {
  const ArrigoniLinearization& lin;
  mutable RateTable all{};
  std::size_t dimension() const { return lin.dimension(); }
  void apply_drift(double t, const double* y, double* out) const { lin.apply_drift(t, y, out); }
  void noise(double t, RateTable& table) const {
    lin.noise(t, all);
    table.clear();
    for (const auto& e : all)
      if (e.jump.max_index() < dimension()) table.add(e.jump, e.rate);
  }
  double max_diagonal(double t) const { return lin.max_diagonal(t); }
};

TEST(SimulateY, NoiseDoesNotMoveTheSum) {
  // Columns 0..M-1 of B sum to -kappa but column M also loses births out of
  // the cap, so sum Y is not invariant on a truncation once Y reaches M.
  // What must hold exactly: each step changes sum Y by h * sum(B Y) alone.
  const ModelSpec m;
  const std::size_t M = 60;
  const auto mf = path(m, M, 1.0);
  const ArrigoniLinearization lin(m, mf);
  const InteriorNoise sys{lin};
  std::vector<double> y0(M + 1, 0.0);
  y0[0] = 1.0;
  y0[3] = -1.0;
  const double T = 1.0;
  const double dt = default_dt(lin, T);
  const double h = T / std::ceil(T / dt - 1e-9);
  std::vector<double> prev = y0, d(M + 1);
  double t_prev = 0.0, worst = 0.0;
  int steps = 0;
  simulate_Y(sys, y0, T, dt, 11, 0, [&](double t, const std::vector<double>& y) {
    if (t > 0.0) {
      lin.apply_drift(t_prev, prev.data(), d.data());
      double expected = 0.0, change = 0.0;
      for (std::size_t i = 0; i <= M; ++i) {
        expected += h * d[i];
        change += y[i] - prev[i];
      }
      worst = std::max(worst, std::abs(change - expected));
      ++steps;
    }
    prev = y;
    t_prev = t;
  });
  EXPECT_GT(steps, 100);
  EXPECT_LT(worst, 1e-13);
}

TEST(SimulateY, OneStepIncrementCovarianceIsNoiseMatrix) {
  const ModelSpec m;
  const std::size_t M = 4;
  const std::vector<double> x{0.3, 0.3, 0.2, 0.1, 0.1};
  const ConstantLinearSde sys(Eigen::MatrixXd::Zero(M + 1, M + 1), [&] {
    std::vector<RateEntry> e;
    RateTable t;
    arrigoni::fluid_rates(m, DensityVector(x), t, M);
    for (const auto& r : t) e.push_back(r);
    return e;
  }());
  const auto Q = noise_matrix(sys, 0.0);
  const double dt = 0.01;
  const int n = 20000;
  std::vector<std::vector<double>> prods((M + 1) * (M + 1), std::vector<double>(n));
  for (int r = 0; r < n; ++r) {
    const auto y = simulate_Y(sys, std::vector<double>(M + 1, 0.0), dt, dt, replica_seed(3, r)).values.back();
    for (std::size_t i = 0; i <= M; ++i)
      for (std::size_t j = 0; j <= M; ++j) prods[i * (M + 1) + j][static_cast<std::size_t>(r)] = y[i] * y[j] / dt;
  }
  for (std::size_t i = 0; i <= M; ++i)
    for (std::size_t j = 0; j <= M; ++j) {
      const auto& p = prods[i * (M + 1) + j];
      EXPECT_NEAR(stats::mean(p), Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                  4.0 * stats::standard_error(p) + 1e-12)
          << i << "," << j;
    }
}

TEST(SimulateY, ScalarOuStationaryVariance) {
  const auto est = diagnostics::scalar_ou_study(1.0, 2.0, 200, 60.0, 10.0, 0.01, 21);
  EXPECT_NEAR(est.estimate, est.target, 0.05 * est.target);
  EXPECT_LT(est.se, 0.02 * est.target);
}

TEST(SimulateY, EndpointCovarianceMatchesCovarianceOde) {
  const ModelSpec m;
  const std::size_t M = 6;
  const double T = 1.0;
  const auto mf = path(m, M, T);
  const ArrigoniLinearization lin(m, mf);
  const auto g = covariance_ode(lin, Eigen::MatrixXd::Zero(M + 1, M + 1), {0.0, T}, {1e-10, 1e-13});
  const double dt = 0.01 / lin.max_diagonal(0.0);
  const std::size_t n = 1000;
  auto ends = run_replicas(n, 17, 0, [&](std::size_t, std::uint64_t seed) {
    const ArrigoniLinearization own(m, mf);
    return simulate_Y(own, std::vector<double>(M + 1, 0.0), T, dt, seed).values.back();
  });
  for (std::size_t i = 0; i <= M; ++i)
    for (std::size_t j = i; j <= M; ++j) {
      std::vector<double> p(n);
      for (std::size_t r = 0; r < n; ++r) p[r] = ends[r][i] * ends[r][j];
      EXPECT_NEAR(stats::mean(p), g.cov.back()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                  3.0 * stats::standard_error(p))
          << i << "," << j;
    }
}

}  // namespace
}  // namespace mpp::lna
