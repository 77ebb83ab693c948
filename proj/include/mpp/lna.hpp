#ifndef MPP_LNA_HPP_
#define MPP_LNA_HPP_

/*
 * Gaussian fluctuation limit on {0..M}:
 *   dY = B(t) Y dt + sum_J J sqrt(alpha_J(x_t)) dW_J,   B(t) = A + DF(x_t),
 * its second-moment (Lyapunov) equation, and the stationary covariance at an
 * equilibrium.
 */

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpp/arrigoni.hpp"
#include "mpp/errors.hpp"
#include "mpp/meanfield.hpp"
#include "mpp/ode.hpp"
#include "mpp/process.hpp"
#include "mpp/random.hpp"

namespace mpp::lna {

using arrigoni::ModelSpec;

// dY = B(t) Y dt + sum over noise(t) of J sqrt(rate) dW_J, on R^dimension().
template <typename S>
concept LinearSde = requires(const S& s, double t, const double* y, double* out, RateTable& table) {
  { s.dimension() } -> std::convertible_to<std::size_t>;
  s.apply_drift(t, y, out);
  s.noise(t, table);
  { s.max_diagonal(t) } -> std::convertible_to<double>;
};

// Time-independent B and noise; the scalar Ornstein-Uhlenbeck process is the 1x1 case.
class ConstantLinearSde {
 public:
  ConstantLinearSde(Eigen::MatrixXd B, std::vector<RateEntry> noise) : B_(std::move(B)), noise_(std::move(noise)) {
    if (B_.rows() != B_.cols()) throw std::invalid_argument("drift matrix must be square");
  }

  // dY = -a Y dt + sqrt(s) dW
  static ConstantLinearSde scalar_ou(double a, double s) {
    Eigen::MatrixXd B(1, 1);
    B(0, 0) = -a;
    std::vector<RateEntry> noise;
    if (s > 0.0) noise.push_back({JumpVector{{0, 1}}, s});
    return {B, std::move(noise)};
  }

  std::size_t dimension() const { return static_cast<std::size_t>(B_.rows()); }
  void apply_drift(double, const double* y, double* out) const {
    const auto n = B_.rows();
    Eigen::Map<Eigen::VectorXd>(out, n) = B_ * Eigen::Map<const Eigen::VectorXd>(y, n);
  }
  void noise(double, RateTable& table) const {
    table.clear();
    for (const auto& e : noise_) table.add(e.jump, e.rate);
  }
  double max_diagonal(double) const { return B_.diagonal().cwiseAbs().maxCoeff(); }

 private:
  Eigen::MatrixXd B_;
  std::vector<RateEntry> noise_;
};

// Linearization of the Arrigoni model along a mean-field path (linear interpolation in t).
class ArrigoniLinearization {
 public:
  ArrigoniLinearization(const ModelSpec& m, const meanfield::MeanFieldSolution& mf)
      : model_(m), mf_(&mf), A_(arrigoni::truncated_A(m, mf.M)), rg_(m.rho * m.gamma) {}

  // Frozen at a fixed state (the equilibrium Ornstein-Uhlenbeck case).
  ArrigoniLinearization(const ModelSpec& m, std::vector<double> x_fixed)
      : model_(m), mf_(nullptr), A_(arrigoni::truncated_A(m, x_fixed.size() - 1)), rg_(m.rho * m.gamma) {
    cached_t_ = 0.0;
    cached_x_ = std::move(x_fixed);
    cached_s_ = occupancy(cached_x_);
  }

  std::size_t dimension() const { return A_.M + 1; }
  std::size_t M() const { return A_.M; }

  void apply_drift(double t, const double* y, double* out) const {
    const auto& x = state(t);
    const std::size_t M = A_.M;
    double sy = 0.0;
    for (std::size_t j = 1; j <= M; ++j) sy += static_cast<double>(j) * y[j];
    for (std::size_t i = 0; i <= M; ++i) {
      double v = A_.diag[i] * y[i];
      if (i >= 1) v += A_.sub[i] * y[i - 1];
      if (i < M) v += A_.super[i] * y[i + 1];
      const double xm = i ? x[i - 1] : 0.0, ym = i ? y[i - 1] : 0.0;
      v += rg_ * ((xm - x[i]) * sy + cached_s_ * (ym - y[i]));
      out[i] = v;
    }
  }

  void noise(double t, RateTable& table) const {
    arrigoni::fluid_rates(model_, DensityVector(state(t)), table, A_.M);
  }

  double max_diagonal(double t) const {
    const auto& x = state(t);
    double best = 0.0;
    for (std::size_t i = 0; i <= A_.M; ++i) {
      const double xm = i ? x[i - 1] : 0.0;
      best = std::max(best, std::abs(A_.diag[i] + rg_ * ((xm - x[i]) * static_cast<double>(i) - cached_s_)));
    }
    return best;
  }

  const std::vector<double>& state(double t) const {
    if (mf_ != nullptr && t != cached_t_) {
      cached_x_ = mf_->at(t);
      cached_t_ = t;
      cached_s_ = occupancy(cached_x_);
    }
    return cached_x_;
  }

 private:
  static double occupancy(const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t j = 1; j < x.size(); ++j) s += static_cast<double>(j) * x[j];
    return s;
  }

  ModelSpec model_;
  const meanfield::MeanFieldSolution* mf_;
  arrigoni::TruncatedOperator A_;
  double rg_;
  // Evaluation cache; makes a linearization object unsafe to share across threads.
  mutable double cached_t_ = -1.0;
  mutable std::vector<double> cached_x_;
  mutable double cached_s_ = 0.0;
};

// sigma^2 = sum_J J J^T rate_J over a noise table, restricted to indices < n.
inline Eigen::MatrixXd noise_matrix(const RateTable& table, std::size_t n) {
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& e : table)
    for (const auto& a : e.jump)
      for (const auto& b : e.jump)
        if (a.index < n && b.index < n) Q(a.index, b.index) += e.rate * a.delta * b.delta;
  return Q;
}

// sigma^2(x) = sum_J J J^T alpha_J(x) over jumps supported in {0..M}.
inline Eigen::MatrixXd noise_matrix(const ModelSpec& m, const DensityVector& x, std::size_t M) {
  RateTable t;
  arrigoni::fluid_rates(m, x, t, M);
  return noise_matrix(t, M + 1);
}

template <LinearSde S>
Eigen::MatrixXd noise_matrix(const S& sys, double t) {
  RateTable table;
  sys.noise(t, table);
  return noise_matrix(table, sys.dimension());
}

template <LinearSde S>
Eigen::MatrixXd drift_matrix(const S& sys, double t) {
  const std::size_t n = sys.dimension();
  Eigen::MatrixXd B(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<double> e(n, 0.0), col(n);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    sys.apply_drift(t, e.data(), col.data());
    for (std::size_t i = 0; i < n; ++i) B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    e[j] = 0.0;
  }
  return B;
}

// dt with dt * max_j |B_jj| <= 0.1 over [0, T], and at most T / 10.
template <LinearSde S>
double default_dt(const S& sys, double T) {
  double stiff = 0.0;
  for (int k = 0; k <= 20; ++k) stiff = std::max(stiff, sys.max_diagonal(T * k / 20.0));
  double dt = T / 10.0;
  if (stiff > 0.0) dt = std::min(dt, 0.1 / stiff);
  return dt;
}

struct Path {
  std::vector<double> times;
  std::vector<std::vector<double>> values;
};

struct NoObserver {
  void operator()(double, const std::vector<double>&) const {}
};

/*
 * Euler-Maruyama. The increment over [t, t + dt] is B(t) Y dt plus
 * sum_J J sqrt(rate_J(t) dt) xi_J with independent standard normals xi_J,
 * one per active jump, so no square root of sigma^2 is ever formed.
 * Records every `record_every`-th step (0: endpoints only).
 */
template <LinearSde S, typename Observer = NoObserver>
Path simulate_Y(const S& sys, std::vector<double> y, double T, double dt, std::uint64_t seed,
                std::size_t record_every = 0, Observer&& observe = {}) {
  const std::size_t n = sys.dimension();
  if (y.size() != n) throw std::invalid_argument("Y0 has the wrong dimension");
  if (!(T > 0.0) || !(dt > 0.0)) throw std::invalid_argument("T and dt must be positive");
  const auto steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  const double h = T / static_cast<double>(steps);
  if (h * sys.max_diagonal(0.0) > 1.0) {
    std::ostringstream msg;
    msg << "dt=" << h << " too large for drift stiffness " << sys.max_diagonal(0.0);
    throw NumericalError(msg.str(), 0.0);
  }
  Engine rng = make_engine(seed);
  std::normal_distribution<double> normal;
  RateTable table;
  std::vector<double> drift(n);
  Path path;
  path.times.push_back(0.0);
  path.values.push_back(y);
  observe(0.0, y);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = h * static_cast<double>(k);
    sys.apply_drift(t, y.data(), drift.data());
    sys.noise(t, table);
    for (std::size_t i = 0; i < n; ++i) y[i] += h * drift[i];
    for (const auto& e : table) {
      const double g = normal(rng) * std::sqrt(e.rate * h);
      for (const auto& c : e.jump)
        if (c.index < n) y[c.index] += c.delta * g;
    }
    double norm = 0.0;
    for (double v : y) norm = std::max(norm, std::abs(v));
    const double t_next = k + 1 == steps ? T : h * static_cast<double>(k + 1);
    if (!std::isfinite(norm) || norm > 1e150) throw NumericalError("Y blew up (dt too large?)", t_next);
    observe(t_next, y);
    if (k + 1 == steps || (record_every > 0 && (k + 1) % record_every == 0)) {
      path.times.push_back(t_next);
      path.values.push_back(y);
    }
  }
  return path;
}

struct GaussianSummary {
  std::vector<double> grid;
  std::vector<std::vector<double>> mean;
  std::vector<Eigen::MatrixXd> cov;
};

/*
 * Mean and covariance of Y: m' = B m,  Sigma' = B Sigma + Sigma B^T + sigma^2(t).
 * Integrated with the same adaptive RK machinery as the mean field.
 */
template <LinearSde S>
GaussianSummary covariance_ode(const S& sys, const Eigen::MatrixXd& sigma0, const std::vector<double>& grid,
                               Tolerance tol = {}, std::vector<double> mean0 = {}) {
  const std::size_t n = sys.dimension();
  const auto ni = static_cast<Eigen::Index>(n);
  if (sigma0.rows() != ni || sigma0.cols() != ni) throw std::invalid_argument("Sigma0 has the wrong shape");
  if ((sigma0 - sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + sigma0.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("Sigma0 must be symmetric");
  if (mean0.empty()) mean0.assign(n, 0.0);
  if (mean0.size() != n) throw std::invalid_argument("mean0 has the wrong dimension");
  std::vector<double> state(n * n + n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      state[j * n + i] = 0.5 * (sigma0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                                sigma0(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
  std::copy(mean0.begin(), mean0.end(), state.begin() + static_cast<std::ptrdiff_t>(n * n));

  RateTable table;
  std::vector<double> col(n);
  auto rhs = [&](const std::vector<double>& s, std::vector<double>& ds, double t) {
    // column j of B Sigma
    for (std::size_t j = 0; j < n; ++j) sys.apply_drift(t, s.data() + j * n, ds.data() + j * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = j; i < n; ++i) {
        const double v = ds[j * n + i] + ds[i * n + j];
        ds[j * n + i] = v;
        ds[i * n + j] = v;
      }
    sys.noise(t, table);
    for (const auto& e : table)
      for (const auto& a : e.jump)
        for (const auto& b : e.jump)
          if (a.index < n && b.index < n) ds[b.index * n + a.index] += e.rate * a.delta * b.delta;
    sys.apply_drift(t, s.data() + n * n, ds.data() + n * n);
  };
  GaussianSummary out;
  out.grid = grid;
  out.mean.resize(grid.size());
  out.cov.resize(grid.size());
  integrate_on_grid(rhs, std::move(state), grid, tol, [&](std::size_t k, double, const std::vector<double>& s) {
    Eigen::MatrixXd c = Eigen::Map<const Eigen::MatrixXd>(s.data(), ni, ni);
    out.cov[k] = 0.5 * (c + c.transpose());
    out.mean[k].assign(s.begin() + static_cast<std::ptrdiff_t>(n * n), s.end());
  });
  return out;
}

struct LyapunovSolution {
  Eigen::MatrixXd sigma;
  double residual = 0.0;           // max |B Sigma + Sigma B^T + Q|
  double spectral_abscissa = 0.0;  // max Re(eig B)
};

inline double lyapunov_residual(const Eigen::MatrixXd& B, const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& Q) {
  return (B * sigma + sigma * B.transpose() + Q).cwiseAbs().maxCoeff();
}

/*
 * B Sigma + Sigma B^T + Q = 0 by Bartels-Stewart on the complex Schur form
 * B = U T U^*, followed by a few rounds of residual correction.
 */
inline LyapunovSolution solve_lyapunov(const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q, int refinements = 3) {
  using C = std::complex<double>;
  const Eigen::Index n = B.rows();
  Eigen::ComplexSchur<Eigen::MatrixXd> schur(B);
  if (schur.info() != Eigen::Success) throw NumericalError("Schur decomposition failed");
  const Eigen::MatrixXcd& T = schur.matrixT();
  const Eigen::MatrixXcd& U = schur.matrixU();
  LyapunovSolution out;
  out.spectral_abscissa = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) out.spectral_abscissa = std::max(out.spectral_abscissa, T(i, i).real());
  if (!(out.spectral_abscissa < 0.0)) {
    std::ostringstream msg;
    msg << "drift matrix is not stable (spectral abscissa " << out.spectral_abscissa << "); no stationary law";
    throw NumericalError(msg.str());
  }
  auto solve = [&](const Eigen::MatrixXd& rhs) {
    const Eigen::MatrixXcd Ch = U.adjoint() * rhs.cast<C>() * U;
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(n, n);
    for (Eigen::Index i = n - 1; i >= 0; --i)
      for (Eigen::Index j = n - 1; j >= 0; --j) {
        C acc = -Ch(i, j);
        for (Eigen::Index k = i + 1; k < n; ++k) acc -= T(i, k) * Y(k, j);
        for (Eigen::Index k = j + 1; k < n; ++k) acc -= Y(i, k) * std::conj(T(j, k));
        Y(i, j) = acc / (T(i, i) + std::conj(T(j, j)));
      }
    Eigen::MatrixXd S = (U * Y * U.adjoint()).real();
    return Eigen::MatrixXd(0.5 * (S + S.transpose()));
  };
  out.sigma = solve(Q);
  out.residual = lyapunov_residual(B, out.sigma, Q);
  for (int r = 0; r < refinements && out.residual > 0.0; ++r) {
    const Eigen::MatrixXd R = B * out.sigma + out.sigma * B.transpose() + Q;
    const Eigen::MatrixXd next = out.sigma + solve(R);
    const double res = lyapunov_residual(B, next, Q);
    if (!(res < out.residual)) break;
    out.sigma = next;
    out.residual = res;
  }
  return out;
}

/*
 * The same fixed point reached the slow way: integrate Sigma' = B Sigma +
 * Sigma B^T + Q from Sigma = 0 until max |Sigma'| <= tol.
 */
inline LyapunovSolution lyapunov_by_integration(const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q, double tol,
                                                double chunk = 5.0, double max_time = 1e4) {
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(B.rows(), B.cols());
  const auto n = B.rows();
  auto rhs = [&](const std::vector<double>& s, std::vector<double>& ds, double) {
    Eigen::Map<const Eigen::MatrixXd> S(s.data(), n, n);
    Eigen::Map<Eigen::MatrixXd> D(ds.data(), n, n);
    D = B * S + S * B.transpose() + Q;
  };
  double t = 0.0;
  LyapunovSolution out;
  Tolerance tight{1e-12, 1e-14};
  while (t < max_time) {
    std::vector<double> s(sigma.data(), sigma.data() + sigma.size());
    integrate_on_grid(rhs, std::move(s), {0.0, chunk}, tight, [&](std::size_t k, double, const std::vector<double>& v) {
      if (k == 1) sigma = Eigen::Map<const Eigen::MatrixXd>(v.data(), n, n);
    });
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    t += chunk;
    out.residual = lyapunov_residual(B, sigma, Q);
    if (out.residual <= tol) break;
  }
  out.sigma = sigma;
  Eigen::EigenSolver<Eigen::MatrixXd> es(B, false);
  out.spectral_abscissa = es.eigenvalues().real().maxCoeff();
  if (out.residual > tol) throw NumericalError("Lyapunov integration did not settle", t);
  return out;
}

// Stationary covariance of the equilibrium Ornstein-Uhlenbeck process at x_bar.
inline LyapunovSolution stationary_covariance(const ModelSpec& m, const std::vector<double>& x_bar, double tol = 1e-8) {
  if (x_bar.size() < 2) throw std::invalid_argument("x_bar must cover {0..M} with M >= 1");
  const std::size_t M = x_bar.size() - 1;
  const meanfield::Vectorfield field(m, M);
  const Eigen::MatrixXd B = field.jacobian(x_bar);
  const Eigen::MatrixXd Q = noise_matrix(m, DensityVector(x_bar), M);
  auto sol = solve_lyapunov(B, Q);
  if (!(sol.residual <= tol)) {
    std::ostringstream msg;
    msg << "stationary covariance residual " << sol.residual << " exceeds " << tol;
    throw NumericalError(msg.str());
  }
  return sol;
}

}  // namespace mpp::lna

#endif  // MPP_LNA_HPP_
