#ifndef MPP_COUNTS_HPP_
#define MPP_COUNTS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpp {

using TypeIndex = std::size_t;

/*
 * Population state X: number of individuals of each type j. Only finitely
 * many types are occupied at any time. Storage is dense up to the largest
 * occupied type (trailing zeros are trimmed), which is far cheaper than a
 * tree map for the small type ranges seen in practice.
 */
class SparseCounts {
 public:
  SparseCounts() = default;

  explicit SparseCounts(std::vector<std::int64_t> dense) : counts_(std::move(dense)) {
    for (auto c : counts_) {
      if (c < 0) throw std::invalid_argument("SparseCounts: negative count");
      total_ += c;
    }
    trim();
  }

  SparseCounts(std::initializer_list<std::pair<TypeIndex, std::int64_t>> entries) {
    for (const auto& [j, c] : entries) add(j, c);
  }

  std::int64_t operator[](TypeIndex j) const { return j < counts_.size() ? counts_[j] : 0; }

  std::int64_t total() const { return total_; }

  // One past the largest occupied type; 0 for the empty state.
  std::size_t extent() const { return counts_.size(); }

  bool empty() const { return counts_.empty(); }

  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(counts_.begin(), counts_.end(), [](auto c) { return c != 0; }));
  }

  void add(TypeIndex j, std::int64_t delta) {
    if (delta == 0) return;
    if (j >= counts_.size()) {
      if (delta < 0) throw std::domain_error("SparseCounts: count would become negative");
      counts_.resize(j + 1, 0);
    }
    const std::int64_t next = counts_[j] + delta;
    if (next < 0) throw std::domain_error("SparseCounts: count would become negative");
    counts_[j] = next;
    total_ += delta;
    trim();
  }

  template <typename Fn>
  void for_each_nonzero(Fn&& fn) const {
    for (std::size_t j = 0; j < counts_.size(); ++j)
      if (counts_[j] != 0) fn(j, counts_[j]);
  }

  std::vector<std::pair<TypeIndex, std::int64_t>> entries() const {
    std::vector<std::pair<TypeIndex, std::int64_t>> out;
    for_each_nonzero([&](TypeIndex j, std::int64_t c) { out.emplace_back(j, c); });
    return out;
  }

  const std::vector<std::int64_t>& dense() const { return counts_; }

  friend bool operator==(const SparseCounts& a, const SparseCounts& b) {
    return a.counts_ == b.counts_;
  }

 private:
  void trim() {
    while (!counts_.empty() && counts_.back() == 0) counts_.pop_back();
  }

  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

/*
 * Finite-support real vector indexed by type. Used for densities x = X/N,
 * mean-field states, drifts and signed perturbations alike. Reads beyond the
 * stored range return zero.
 */
class DensityVector {
 public:
  DensityVector() = default;
  explicit DensityVector(std::vector<double> dense) : values_(std::move(dense)) {}
  DensityVector(std::initializer_list<std::pair<TypeIndex, double>> entries) {
    for (const auto& [j, v] : entries) ref(j) += v;
  }

  static DensityVector unit(TypeIndex j, double value = 1.0) {
    DensityVector v;
    v.ref(j) = value;
    return v;
  }

  double operator[](TypeIndex j) const { return j < values_.size() ? values_[j] : 0.0; }

  double& ref(TypeIndex j) {
    if (j >= values_.size()) values_.resize(j + 1, 0.0);
    return values_[j];
  }

  std::size_t extent() const { return values_.size(); }

  double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

  const std::vector<double>& dense() const { return values_; }
  std::vector<double>& dense() { return values_; }

  DensityVector& operator+=(const DensityVector& o) {
    if (o.values_.size() > values_.size()) values_.resize(o.values_.size(), 0.0);
    for (std::size_t j = 0; j < o.values_.size(); ++j) values_[j] += o.values_[j];
    return *this;
  }
  DensityVector& operator-=(const DensityVector& o) {
    if (o.values_.size() > values_.size()) values_.resize(o.values_.size(), 0.0);
    for (std::size_t j = 0; j < o.values_.size(); ++j) values_[j] -= o.values_[j];
    return *this;
  }
  DensityVector& operator*=(double s) {
    for (auto& v : values_) v *= s;
    return *this;
  }
  friend DensityVector operator+(DensityVector a, const DensityVector& b) { return a += b; }
  friend DensityVector operator-(DensityVector a, const DensityVector& b) { return a -= b; }
  friend DensityVector operator*(double s, DensityVector a) { return a *= s; }

 private:
  std::vector<double> values_;
};

inline DensityVector density(const SparseCounts& counts, std::int64_t scale) {
  std::vector<double> v(counts.extent());
  const double inv = 1.0 / static_cast<double>(scale);
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<double>(counts[j]) * inv;
  return DensityVector(std::move(v));
}

/*
 * Jump J: a sparse integer vector with at most kCapacity nonzero entries,
 * kept sorted by type index with zeros removed so that equal jumps compare
 * and hash equal regardless of how they were assembled.
 */
class JumpVector {
 public:
  static constexpr std::size_t kCapacity = 8;
  struct Entry {
    std::uint32_t index;
    std::int32_t delta;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  JumpVector() = default;
  JumpVector(std::initializer_list<std::pair<TypeIndex, std::int32_t>> terms) {
    for (const auto& [j, v] : terms) add(j, v);
  }

  static JumpVector unit_move(TypeIndex from, TypeIndex to) { return JumpVector{{to, 1}, {from, -1}}; }

  void add(TypeIndex j, std::int32_t delta) {
    if (delta == 0) return;
    const auto idx = static_cast<std::uint32_t>(j);
    auto* first = entries_.data();
    auto* last = first + size_;
    auto* pos = std::lower_bound(first, last, idx, [](const Entry& e, std::uint32_t i) { return e.index < i; });
    if (pos != last && pos->index == idx) {
      pos->delta += delta;
      if (pos->delta == 0) {
        std::move(pos + 1, last, pos);
        --size_;
      }
      return;
    }
    if (size_ == kCapacity) throw std::length_error("JumpVector: too many nonzero entries");
    std::move_backward(pos, last, last + 1);
    *pos = Entry{idx, delta};
    ++size_;
  }

  std::int32_t operator[](TypeIndex j) const {
    for (std::size_t n = 0; n < size_; ++n)
      if (entries_[n].index == j) return entries_[n].delta;
    return 0;
  }

  const Entry* begin() const { return entries_.data(); }
  const Entry* end() const { return entries_.data() + size_; }
  std::size_t size() const { return size_; }
  bool is_zero() const { return size_ == 0; }

  // Total number of individuals affected, sum_m |J^m|.
  std::int64_t influence() const {
    std::int64_t s = 0;
    for (const auto& e : *this) s += std::abs(e.delta);
    return s;
  }

  std::int64_t sum() const {
    std::int64_t s = 0;
    for (const auto& e : *this) s += e.delta;
    return s;
  }

  // Largest type index touched; nu(J) = max_{J^j != 0} nu(j) uses this.
  TypeIndex max_index() const { return size_ == 0 ? 0 : entries_[size_ - 1].index; }

  // 64-bit digest of the canonical (sorted, zero-free) serialization.
  std::uint64_t key() const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ size_;
    for (const auto& e : *this) {
      h = mix(h ^ e.index);
      h = mix(h ^ static_cast<std::uint32_t>(e.delta));
    }
    return h;
  }

  std::string to_string() const {
    std::string s = "{";
    for (std::size_t n = 0; n < size_; ++n) {
      if (n) s += ",";
      s += std::to_string(entries_[n].index) + ":" + std::to_string(entries_[n].delta);
    }
    return s + "}";
  }

  friend bool operator==(const JumpVector& a, const JumpVector& b) {
    return a.size_ == b.size_ && std::equal(a.begin(), a.end(), b.begin());
  }

  struct Hash {
    std::size_t operator()(const JumpVector& j) const { return static_cast<std::size_t>(j.key()); }
  };

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::array<Entry, kCapacity> entries_{};
  std::size_t size_ = 0;
};

// Weight functions of the worked example: nu(j) = mu(j) = j + 1.
inline double nu_weight(TypeIndex j) { return static_cast<double>(j) + 1.0; }
inline double mu_weight(TypeIndex j) { return static_cast<double>(j) + 1.0; }

// ||v||_mu = sum_m mu(m) |v^m|
inline double weighted_norm(const DensityVector& v) {
  double s = 0.0;
  const auto& d = v.dense();
  for (std::size_t m = 0; m < d.size(); ++m) s += mu_weight(m) * std::abs(d[m]);
  return s;
}

// S_r(x) = sum_j x^j nu(j)^r
inline double moment_S(const DensityVector& x, double r) {
  if (r < 0) throw std::invalid_argument("moment_S: r must be nonnegative");
  double s = 0.0;
  const auto& d = x.dense();
  for (std::size_t j = 0; j < d.size(); ++j)
    if (d[j] != 0.0) s += d[j] * std::pow(nu_weight(j), r);
  return s;
}

// Applies X -> X + J. Throws std::domain_error, leaving the state untouched,
// if any component would become negative.
inline void apply_jump(SparseCounts& state, const JumpVector& jump) {
  for (const auto& e : jump)
    if (state[e.index] + e.delta < 0)
      throw std::domain_error("jump " + jump.to_string() + " leaves the state space");
  for (const auto& e : jump)
    if (e.delta < 0) state.add(e.index, e.delta);
  for (const auto& e : jump)
    if (e.delta > 0) state.add(e.index, e.delta);
}

}  // namespace mpp

#endif  // MPP_COUNTS_HPP_
