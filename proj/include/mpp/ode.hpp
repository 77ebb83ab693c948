#ifndef MPP_ODE_HPP_
#define MPP_ODE_HPP_

// Thin driver over Boost.Odeint's dense-output Dormand-Prince 5(4) stepper:
// adaptive steps, interpolated output on a caller-supplied grid, and
// step-size underflow reported as a NumericalError carrying the time.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "mpp/errors.hpp"

namespace mpp {

struct Tolerance {
  double rel = 1e-8;
  double abs = 1e-10;
};

struct OdeStats {
  std::uint64_t steps = 0;
  double min_step = 0.0;
};

/*
 * Integrates x' = f(x, t) from grid.front() to grid.back(), calling
 * emit(k, t_k, x(t_k)) for every grid point. `rhs` has the odeint signature
 * (const State& x, State& dxdt, double t).
 */
template <typename Rhs, typename Emit>
OdeStats integrate_on_grid(Rhs&& rhs, std::vector<double> x, const std::vector<double>& grid, Tolerance tol,
                           Emit&& emit, std::uint64_t max_steps = 50'000'000) {
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  OdeStats stats;
  if (grid.empty()) return stats;
  const double t0 = grid.front();
  emit(std::size_t{0}, t0, static_cast<const State&>(x));
  if (grid.size() == 1) return stats;
  const double span = grid.back() - t0;
  auto stepper = ode::make_dense_output(tol.abs, tol.rel, ode::runge_kutta_dopri5<State>());
  stepper.initialize(x, t0, std::min(1e-4, span / 16.0));
  State tmp(x.size());
  std::size_t k = 1;
  stats.min_step = span;
  while (k < grid.size()) {
    double t_hi = 0.0;
    try {
      t_hi = stepper.do_step(rhs).second;
    } catch (const ode::step_adjustment_error&) {
      throw NumericalError("step size control failed (stiffness?) at t=" + std::to_string(stepper.current_time()),
                           stepper.current_time());
    }
    const double h = stepper.current_time_step();
    stats.min_step = std::min(stats.min_step, t_hi - stepper.previous_time());
    if (++stats.steps > max_steps)
      throw NumericalError("step budget exhausted at t=" + std::to_string(t_hi), t_hi);
    if (h < 1e-13 * std::max(1.0, std::abs(t_hi)))
      throw NumericalError("step size underflow at t=" + std::to_string(t_hi), t_hi);
    for (double v : stepper.current_state())
      if (!std::isfinite(v)) throw NumericalError("non-finite state at t=" + std::to_string(t_hi), t_hi);
    while (k < grid.size() && grid[k] <= t_hi) {
      stepper.calc_state(grid[k], tmp);
      emit(k, grid[k], static_cast<const State&>(tmp));
      ++k;
    }
  }
  return stats;
}

inline std::vector<double> uniform_grid(double horizon, std::size_t points) {
  if (points < 2) return {0.0, horizon};
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = horizon * static_cast<double>(k) / static_cast<double>(points - 1);
  g.back() = horizon;
  return g;
}

}  // namespace mpp

#endif  // MPP_ODE_HPP_
