#ifndef MPP_PROCESS_HPP_
#define MPP_PROCESS_HPP_

// Exact simulation of density-dependent Markov population processes
//   X -> X + J  at rate  N alpha_J(X / N)
// over a countable type space, by the direct (Gillespie) method and by the
// random time-change representation with one unit-rate Poisson stream per J.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mpp/counts.hpp"
#include "mpp/errors.hpp"
#include "mpp/random.hpp"

namespace mpp {

struct RateEntry {
  JumpVector jump;
  double rate;
};

/*
 * Active jumps at one state with their rates. Zero-rate jumps are never
 * stored, which is how "alpha_J = 0 whenever J would empty an empty type"
 * is enforced.
 */
class RateTable {
 public:
  void clear() {
    entries_.clear();
    total_ = 0.0;
  }

  void add(const JumpVector& jump, double rate) {
    if (!(rate > 0.0)) return;
    if (!std::isfinite(rate)) throw SimulationError("rate overflow for jump " + jump.to_string());
    entries_.push_back({jump, rate});
    total_ += rate;
    if (!std::isfinite(total_)) throw SimulationError("total rate overflow");
  }

  const std::vector<RateEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  double total_rate() const { return total_; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // sum_J J * rate_J, optionally scaled.
  DensityVector drift(double scale = 1.0) const {
    DensityVector d;
    for (const auto& e : entries_)
      for (const auto& t : e.jump) d.ref(t.index) += scale * e.rate * t.delta;
    return d;
  }

 private:
  std::vector<RateEntry> entries_;
  double total_ = 0.0;
};

// Any model that can list its active jumps and their (N-scaled) rates.
template <typename M>
concept JumpModel = requires(const M& m, const SparseCounts& x, std::int64_t n, RateTable& table) {
  { m.enumerate_rates(x, n, table) } -> std::same_as<void>;
};

// Models that can also draw the next jump without materializing the table.
// sample_jump receives u uniform on [0, total_rate) and must select jump J
// with probability rate_J / total_rate, exactly as a scan of the table would.
template <typename M>
concept DirectSampler = JumpModel<M> && requires(const M& m, const SparseCounts& x, std::int64_t n, double u) {
  { m.total_rate(x, n) } -> std::convertible_to<double>;
  { m.sample_jump(x, n, u) } -> std::same_as<JumpVector>;
};

template <typename State>
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::int64_t scale = 1;
  double horizon = 0.0;
  std::uint64_t events = 0;

  std::size_t size() const { return times.size(); }

  // Right-continuous piecewise-constant value at time t.
  const State& at(double t) const {
    std::size_t lo = 0, hi = times.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (times[mid] <= t) lo = mid; else hi = mid;
    }
    return states[lo];
  }
};

using JumpTrajectory = Trajectory<SparseCounts>;

struct Recording {
  enum class Mode { kFull, kGrid, kNone };
  Mode mode = Mode::kFull;
  std::vector<double> grid;  // increasing, first point 0, used in kGrid mode

  static Recording full() { return {}; }
  static Recording none() { return {Mode::kNone, {}}; }
  static Recording on_grid(std::vector<double> g) { return {Mode::kGrid, std::move(g)}; }
  static Recording uniform(double horizon, int points) {
    std::vector<double> g(static_cast<std::size_t>(points));
    for (int k = 0; k < points; ++k) g[static_cast<std::size_t>(k)] = horizon * k / (points - 1);
    g.back() = horizon;
    return on_grid(std::move(g));
  }
};

struct SimOptions {
  std::uint64_t max_events = 100'000'000;
  Recording recording;
  // Force the table-scan direct method even when the model offers a
  // factorized sampler.
  bool generic_direct = false;
};

struct NoObserver {
  void operator()(double, const SparseCounts&) const {}
};

namespace detail {

class Recorder {
 public:
  Recorder(const Recording& rec, JumpTrajectory& out) : rec_(rec), out_(out) {}

  void start(const SparseCounts& x0) {
    if (rec_.mode == Recording::Mode::kGrid) {
      if (rec_.grid.empty() || rec_.grid.front() != 0.0)
        throw std::invalid_argument("recording grid must start at 0");
      out_.times.push_back(0.0);
      out_.states.push_back(x0);
      next_ = 1;
    } else {
      out_.times.push_back(0.0);
      out_.states.push_back(x0);
    }
  }

  // Called before the state jumps at time t; `current` is the pre-jump state.
  void before_jump(double t, const SparseCounts& current) {
    if (rec_.mode == Recording::Mode::kGrid) flush(t, current, false);
  }

  void after_jump(double t, const SparseCounts& next) {
    if (rec_.mode == Recording::Mode::kFull) {
      out_.times.push_back(t);
      out_.states.push_back(next);
    }
  }

  // kNone keeps just the endpoints: the initial state and the state at the horizon.
  void finish(const SparseCounts& last, double horizon) {
    if (rec_.mode == Recording::Mode::kGrid) flush(0.0, last, true);
    if (rec_.mode == Recording::Mode::kNone) {
      out_.times.push_back(horizon);
      out_.states.push_back(last);
    }
  }

 private:
  // Grid points strictly before t take the current (pre-jump) value.
  void flush(double t, const SparseCounts& current, bool all) {
    while (next_ < rec_.grid.size() && (all || rec_.grid[next_] < t)) {
      out_.times.push_back(rec_.grid[next_]);
      out_.states.push_back(current);
      ++next_;
    }
  }

  const Recording& rec_;
  JumpTrajectory& out_;
  std::size_t next_ = 0;
};

inline void check_inputs(const SparseCounts& x0, std::int64_t scale, double horizon) {
  if (scale < 1) throw std::invalid_argument("scale N must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  (void)x0;
}

}  // namespace detail

/*
 * Direct-method SSA: exponential holding time with the total rate, jump
 * drawn proportionally to its rate. Stops at the first event time >= T or
 * when the total rate vanishes. The observer sees (t, state) after every
 * jump and once for the initial state at t = 0.
 */
template <JumpModel Model, typename Observer = NoObserver>
JumpTrajectory simulate_ssa(const Model& model, const SparseCounts& x0, std::int64_t scale, double horizon,
                            std::uint64_t seed, const SimOptions& options = {}, Observer&& observe = {}) {
  detail::check_inputs(x0, scale, horizon);
  JumpTrajectory traj;
  traj.scale = scale;
  traj.horizon = horizon;
  detail::Recorder rec(options.recording, traj);
  Engine rng = make_engine(seed);

  SparseCounts x = x0;
  rec.start(x);
  observe(0.0, x);
  RateTable table;
  double t = 0.0;
  while (true) {
    double total = 0.0;
    JumpVector jump;
    const bool factorized = [&] {
      if constexpr (DirectSampler<Model>) return !options.generic_direct;
      else return false;
    }();
    if (factorized) {
      if constexpr (DirectSampler<Model>) total = model.total_rate(x, scale);
    } else {
      table.clear();
      model.enumerate_rates(x, scale, table);
      total = table.total_rate();
    }
    if (!(total > 0.0)) break;
    if (!std::isfinite(total)) throw SimulationError("total rate overflow");
    t += exponential(rng, total);
    if (t >= horizon) break;
    const double u = uniform01(rng) * total;
    if (factorized) {
      if constexpr (DirectSampler<Model>) jump = model.sample_jump(x, scale, u);
    } else {
      double acc = 0.0;
      const auto& entries = table.entries();
      std::size_t pick = entries.size() - 1;
      for (std::size_t n = 0; n < entries.size(); ++n) {
        acc += entries[n].rate;
        if (u < acc) {
          pick = n;
          break;
        }
      }
      jump = entries[pick].jump;
    }
    if (++traj.events > options.max_events)
      throw SimulationError("event budget of " + std::to_string(options.max_events) + " exhausted at t=" +
                            std::to_string(t));
    rec.before_jump(t, x);
    apply_jump(x, jump);
    rec.after_jump(t, x);
    observe(t, x);
  }
  rec.finish(x, horizon);
  return traj;
}

/*
 * Random time-change representation
 *   X_t = X_0 + sum_J J P_J( N int_0^t alpha_J(x_s) ds )
 * with independent unit-rate Poisson processes P_J. Each J owns a stream
 * whose k-th unit exponential is prf(seed, key(J), k); a stream is created
 * the first time J becomes active and its internal clock is frozen while J
 * is inactive. Between events the rates are constant, so the compensator
 * increments are exact.
 */
template <JumpModel Model, typename Observer = NoObserver>
JumpTrajectory simulate_time_change(const Model& model, const SparseCounts& x0, std::int64_t scale,
                                    double horizon, std::uint64_t seed, const SimOptions& options = {},
                                    Observer&& observe = {}) {
  detail::check_inputs(x0, scale, horizon);
  struct Stream {
    double internal = 0.0;  // compensator accumulated so far
    double next_fire = 0.0; // internal time of the next unit-Poisson point
    std::uint64_t drawn = 0;
  };
  JumpTrajectory traj;
  traj.scale = scale;
  traj.horizon = horizon;
  detail::Recorder rec(options.recording, traj);
  std::unordered_map<JumpVector, Stream, JumpVector::Hash> streams;
  const std::uint64_t master = splitmix64(seed);

  auto stream_for = [&](const JumpVector& j) -> Stream& {
    auto [it, inserted] = streams.try_emplace(j);
    if (inserted) {
      it->second.next_fire = prf_exponential(master, j.key(), 0);
      it->second.drawn = 1;
    }
    return it->second;
  };

  SparseCounts x = x0;
  rec.start(x);
  observe(0.0, x);
  RateTable table;
  std::vector<Stream*> active;
  double t = 0.0;
  while (true) {
    table.clear();
    model.enumerate_rates(x, scale, table);
    if (table.empty()) break;
    const auto& entries = table.entries();
    active.clear();
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t n = 0; n < entries.size(); ++n) {
      Stream& s = stream_for(entries[n].jump);
      active.push_back(&s);
      const double wait = (s.next_fire - s.internal) / entries[n].rate;
      if (wait < best) {
        best = wait;
        pick = n;
      }
    }
    const double dt = std::max(best, 0.0);
    if (t + dt >= horizon) {
      for (std::size_t n = 0; n < entries.size(); ++n) active[n]->internal += entries[n].rate * (horizon - t);
      break;
    }
    t += dt;
    for (std::size_t n = 0; n < entries.size(); ++n) {
      if (n == pick) continue;
      active[n]->internal += entries[n].rate * dt;
    }
    Stream& fired = *active[pick];
    fired.internal = fired.next_fire;
    fired.next_fire += prf_exponential(master, entries[pick].jump.key(), fired.drawn++);
    if (++traj.events > options.max_events)
      throw SimulationError("event budget of " + std::to_string(options.max_events) + " exhausted at t=" +
                            std::to_string(t));
    rec.before_jump(t, x);
    apply_jump(x, entries[pick].jump);
    rec.after_jump(t, x);
    observe(t, x);
  }
  rec.finish(x, horizon);
  return traj;
}

// Models that can report sum_J J * rate_J directly, without listing jumps.
template <typename M>
concept DriftModel = JumpModel<M> && requires(const M& m, const SparseCounts& x, std::int64_t n) {
  { m.drift(x, n) } -> std::same_as<DensityVector>;
};

template <JumpModel Model>
DensityVector chain_drift(const Model& model, const SparseCounts& x, std::int64_t n, RateTable& scratch) {
  if constexpr (DriftModel<Model>) {
    return model.drift(x, n);
  } else {
    scratch.clear();
    model.enumerate_rates(x, n, scratch);
    return scratch.drift();
  }
}

/*
 * Running value of m_t = x_t - x_0 - int_0^t sum_J J alpha_J(x_s) ds, fed
 * one state at a time (e.g. from a simulator observer). The compensator uses
 * the chain's own rates divided by N; rates are constant between jumps, so
 * the integral is exact.
 */
template <JumpModel Model>
class MartingaleAccumulator {
 public:
  MartingaleAccumulator(const Model& model, std::int64_t scale) : model_(model), scale_(scale) {}

  // State `x` holds from time t onward.
  void observe(double t, const SparseCounts& x) {
    if (!started_) {
      x0_ = density(x, scale_);
      started_ = true;
    } else {
      advance(t);
    }
    last_t_ = t;
    current_ = x;
    rate_drift_ = chain_drift(model_, x, scale_, scratch_);
  }

  // m at time t >= the last observed time.
  DensityVector value(double t) {
    advance(t);
    last_t_ = t;
    DensityVector m = density(current_, scale_);
    m -= x0_;
    m -= compensator_;
    return m;
  }

 private:
  void advance(double t) {
    const double dt = t - last_t_;
    if (dt > 0.0) {
      DensityVector inc = rate_drift_;
      inc *= dt / static_cast<double>(scale_);
      compensator_ += inc;
    }
  }

  const Model& model_;
  std::int64_t scale_;
  bool started_ = false;
  double last_t_ = 0.0;
  SparseCounts current_;
  DensityVector x0_, compensator_, rate_drift_;
  RateTable scratch_;
};

struct MartingalePath {
  std::vector<double> times;
  std::vector<DensityVector> values;
};

// m_t along a fully recorded jump trajectory, at every jump time and at the horizon.
template <JumpModel Model>
MartingalePath martingale_path(const JumpTrajectory& traj, const Model& model) {
  MartingalePath out;
  if (traj.times.empty()) return out;
  MartingaleAccumulator<Model> acc(model, traj.scale);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    acc.observe(traj.times[k], traj.states[k]);
    out.times.push_back(traj.times[k]);
    out.values.push_back(acc.value(traj.times[k]));
  }
  if (traj.horizon > traj.times.back()) {
    out.times.push_back(traj.horizon);
    out.values.push_back(acc.value(traj.horizon));
  }
  return out;
}

}  // namespace mpp

#endif  // MPP_PROCESS_HPP_
