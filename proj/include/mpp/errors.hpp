#ifndef MPP_ERRORS_HPP_
#define MPP_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mpp {

// Runaway dynamics: a trajectory exhausted its event budget.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Integrator failure, non-convergence, instability.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, double time = 0.0)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

// Invalid configuration; `key` names the offending entry when known.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace mpp

#endif  // MPP_ERRORS_HPP_
