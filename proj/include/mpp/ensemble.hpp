#ifndef MPP_ENSEMBLE_HPP_
#define MPP_ENSEMBLE_HPP_

// Replica fan-out. Replica r always receives seed master ^ r and writes its
// result into slot r, so the output is independent of thread count and
// completion order.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

#include "mpp/random.hpp"

namespace mpp {

inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename Fn>
auto run_replicas(std::size_t replicas, std::uint64_t master_seed, unsigned threads, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t, std::uint64_t>> {
  using Result = std::invoke_result_t<Fn&, std::size_t, std::uint64_t>;
  std::vector<Result> out(replicas);
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), replicas));
  if (workers <= 1) {
    for (std::size_t r = 0; r < replicas; ++r) out[r] = fn(r, replica_seed(master_seed, r));
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= replicas) return;
      try {
        out[r] = fn(r, replica_seed(master_seed, r));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = replicas;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace mpp

#endif  // MPP_ENSEMBLE_HPP_
