#ifndef MPP_ARRIGONI_HPP_
#define MPP_ARRIGONI_HPP_

// Structured metapopulation model: N patches, X^i = number of patches holding
// i individuals. Within-patch births and deaths, migration between patches
// with success probability rho, and catastrophes that empty a patch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpp/counts.hpp"
#include "mpp/process.hpp"

namespace mpp::arrigoni {

enum class Law { kConstant, kLogistic, kCustom };

inline std::string to_string(Law law) {
  switch (law) {
    case Law::kConstant: return "constant";
    case Law::kLogistic: return "logistic";
    case Law::kCustom: return "custom";
  }
  return "?";
}

inline std::optional<Law> parse_law(const std::string& s) {
  if (s == "constant") return Law::kConstant;
  if (s == "logistic") return Law::kLogistic;
  if (s == "custom") return Law::kCustom;
  return std::nullopt;
}

/*
 * Demographic law plus migration (gamma, rho) and catastrophe (kappa) rates.
 *   constant:  b_i = b,  d_i = d
 *   logistic:  b_i = b,  d_i = d + c i
 *   custom:    b_i = birth_table[i-1], d_i = death_table[i-1] for i <= cap,
 *              held constant beyond the cap
 */
struct ModelSpec {
  Law law = Law::kLogistic;
  double b = 2.0;
  double d = 0.5;
  double c = 0.25;
  double gamma = 0.5;
  double rho = 0.5;
  double kappa = 0.2;
  std::vector<double> birth_table;
  std::vector<double> death_table;
  std::size_t cap = 0;  // custom tables only; 0 means "table length"

  void validate() const {
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be >= 0");
    };
    nonneg(gamma, "gamma");
    nonneg(kappa, "kappa");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
    if (law == Law::kCustom) {
      if (birth_table.empty() || death_table.empty())
        throw std::invalid_argument("custom law needs nonempty birth and death tables");
      for (double v : birth_table) nonneg(v, "b_i");
      for (double v : death_table) nonneg(v, "d_i");
    } else {
      nonneg(b, "b");
      nonneg(d, "d");
      if (law == Law::kLogistic) nonneg(c, "c");
    }
  }

  double birth(std::size_t i) const {
    if (law != Law::kCustom) return b;
    return table_value(birth_table, i);
  }

  double death(std::size_t i) const {
    switch (law) {
      case Law::kConstant: return d;
      case Law::kLogistic: return d + c * static_cast<double>(i);
      case Law::kCustom: return table_value(death_table, i);
    }
    return d;
  }

  // w = max_{i>=1} (b_i - d_i - gamma - kappa)_+
  double drift_bound() const {
    double w = 0.0;
    const std::size_t last = law == Law::kCustom ? effective_cap() : 1;
    for (std::size_t i = 1; i <= last; ++i) w = std::max(w, birth(i) - death(i) - gamma - kappa);
    if (law == Law::kConstant) w = std::max(0.0, b - d - gamma - kappa);
    return w;
  }

  std::size_t effective_cap() const {
    const std::size_t n = std::max(birth_table.size(), death_table.size());
    return cap == 0 ? n : cap;
  }

 private:
  double table_value(const std::vector<double>& t, std::size_t i) const {
    if (i == 0) return 0.0;
    const std::size_t k = std::min({i, effective_cap(), t.size()});
    return t[k - 1];
  }
};

// Exponents and weights for the approximation theory: nu(j) = mu(j) = j + 1.
struct WeightStructure {
  int beta1 = 1;
  int beta2 = 2;
  int beta3 = 1;
  int beta4 = 1;
  int beta5 = 0;
  double r0 = 0.0;
  double w = 0.0;

  int threshold() const { return 4 * (beta2 + beta3 + beta4) + 2 * beta5; }
};

inline WeightStructure weight_structure(const ModelSpec& m, double r0 = 0.0) {
  WeightStructure ws;
  const bool growing_deaths = m.law == Law::kLogistic;
  ws.beta4 = growing_deaths ? 2 : 1;
  ws.beta5 = growing_deaths ? 1 : 0;
  ws.r0 = r0;
  ws.w = m.drift_bound();
  return ws;
}

/*
 * The five jump families. Index conventions:
 *   kDeath       e^(i-1) - e^(i)                         i >= 1
 *   kBirth       e^(i+1) - e^(i)                         i >= 1
 *   kCatastrophe e^(0) - e^(i)                           i >= 2
 *   kMigration   e^(k+1) - e^(k) + e^(i-1) - e^(i)       i >= 1, k >= 0
 * The catastrophe of a single-individual patch has the same jump vector as
 * its death, so its rate is folded into kDeath at i = 1.
 */
struct Jump {
  enum class Kind { kDeath, kBirth, kCatastrophe, kMigration };
  Kind kind;
  std::size_t i;
  std::size_t k = 0;

  JumpVector vector() const {
    switch (kind) {
      case Kind::kDeath: return JumpVector{{i - 1, 1}, {i, -1}};
      case Kind::kBirth: return JumpVector{{i + 1, 1}, {i, -1}};
      case Kind::kCatastrophe: return JumpVector{{0, 1}, {i, -1}};
      case Kind::kMigration: {
        JumpVector j;
        j.add(k + 1, 1);
        j.add(k, -1);
        j.add(i - 1, 1);
        j.add(i, -1);
        return j;
      }
    }
    return {};
  }
};

// Recovers the family of a jump vector; nullopt if it is not a model jump.
inline std::optional<Jump> classify(const JumpVector& j) {
  using K = Jump::Kind;
  if (j.sum() != 0 || j.is_zero()) return std::nullopt;
  const auto* e = j.begin();
  if (j.size() == 2 && e[0].delta == 1 && e[1].delta == -1) {
    // {lo: +1, hi: -1}
    if (e[1].index == e[0].index + 1) return Jump{K::kDeath, e[1].index};
    if (e[0].index == 0 && e[1].index >= 2) return Jump{K::kCatastrophe, e[1].index};
    return std::nullopt;
  }
  if (j.size() == 2 && e[0].delta == -1 && e[1].delta == 1 && e[1].index == e[0].index + 1)
    return Jump{K::kBirth, e[0].index};
  if (j.size() == 3 && e[0].delta == 1 && e[1].delta == -2 && e[2].delta == 1 &&
      e[1].index == e[0].index + 1 && e[2].index == e[1].index + 1 && e[1].index >= 1)
    return Jump{K::kMigration, e[1].index, e[1].index};
  // i = k + 2: source and target both end at k + 1.
  if (j.size() == 3 && e[0].delta == -1 && e[1].delta == 2 && e[2].delta == -1 &&
      e[1].index == e[0].index + 1 && e[2].index == e[1].index + 1)
    return Jump{K::kMigration, e[2].index, e[0].index};
  if (j.size() == 4) {
    // Negative entries are {i, k}, positive entries {i-1, k+1} with k != i-1.
    std::vector<std::size_t> neg, pos;
    for (const auto& t : j) {
      if (t.delta == -1) neg.push_back(t.index);
      else if (t.delta == 1) pos.push_back(t.index);
      else return std::nullopt;
    }
    if (neg.size() != 2 || pos.size() != 2) return std::nullopt;
    for (int flip = 0; flip < 2; ++flip) {
      const std::size_t i = neg[flip], k = neg[1 - flip];
      if (i >= 1 && ((pos[0] == i - 1 && pos[1] == k + 1) || (pos[1] == i - 1 && pos[0] == k + 1)))
        return Jump{K::kMigration, i, k};
    }
  }
  return std::nullopt;
}

// Fluid rate alpha_J(x) (the chain's rate is N alpha_J(X/N)).
inline double alpha(const ModelSpec& m, const Jump& j, const DensityVector& x) {
  const double xi = x[j.i];
  const double i = static_cast<double>(j.i);
  switch (j.kind) {
    case Jump::Kind::kDeath: {
      if (j.i < 1) throw std::invalid_argument("death jump needs i >= 1");
      double r = i * xi * (m.death(j.i) + m.gamma * (1.0 - m.rho));
      if (j.i == 1) r += xi * m.kappa;
      return r;
    }
    case Jump::Kind::kBirth:
      if (j.i < 1) throw std::invalid_argument("birth jump needs i >= 1");
      return i * xi * m.birth(j.i);
    case Jump::Kind::kCatastrophe:
      if (j.i < 2) throw std::invalid_argument("catastrophe jump needs i >= 2");
      return xi * m.kappa;
    case Jump::Kind::kMigration:
      if (j.i < 1) throw std::invalid_argument("migration jump needs i >= 1");
      if (j.k + 1 == j.i) return 0.0;  // J = 0
      return i * xi * x[j.k] * m.rho * m.gamma;
  }
  throw std::invalid_argument("unknown jump family");
}

inline double alpha(const ModelSpec& m, const JumpVector& jv, const DensityVector& x) {
  const auto j = classify(jv);
  if (!j) throw std::invalid_argument("not a jump of this model: " + jv.to_string());
  return alpha(m, *j, x);
}

/*
 * All jumps with positive fluid rate alpha_J(x). If `max_type` is given,
 * only jumps whose support lies in {0..max_type} are listed.
 */
inline void fluid_rates(const ModelSpec& m, const DensityVector& x, RateTable& out,
                        std::optional<std::size_t> max_type = std::nullopt) {
  out.clear();
  const auto& v = x.dense();
  const std::size_t lim = max_type ? *max_type : std::numeric_limits<std::size_t>::max();
  const double rg = m.rho * m.gamma;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const double xi = v[i];
    if (xi == 0.0) continue;
    const double di = static_cast<double>(i);
    if (i <= lim) {
      double death = di * xi * (m.death(i) + m.gamma * (1.0 - m.rho));
      if (i == 1) death += xi * m.kappa;
      out.add(JumpVector{{i - 1, 1}, {i, -1}}, death);
      if (i >= 2) out.add(JumpVector{{0, 1}, {i, -1}}, xi * m.kappa);
    }
    if (i + 1 <= lim) out.add(JumpVector{{i + 1, 1}, {i, -1}}, di * xi * m.birth(i));
    if (rg == 0.0 || i > lim) continue;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (v[k] == 0.0 || k + 1 == i || k + 1 > lim) continue;
      out.add(Jump{Jump::Kind::kMigration, i, k}.vector(), di * xi * v[k] * rg);
    }
  }
}

inline RateTable fluid_rates(const ModelSpec& m, const DensityVector& x) {
  RateTable t;
  fluid_rates(m, x, t);
  return t;
}

// s(x) = sum_{j>=1} j x^j
inline double occupancy(const DensityVector& x) {
  double s = 0.0;
  const auto& v = x.dense();
  for (std::size_t j = 1; j < v.size(); ++j) s += static_cast<double>(j) * v[j];
  return s;
}

/*
 * Nonlinear part of the drift, written using sum_j x^j = 1:
 *   F^0(x) = -rho gamma x^0 s(x) + kappa
 *   F^i(x) =  rho gamma (x^(i-1) - x^i) s(x),   i >= 1
 */
inline DensityVector drift_F(const ModelSpec& m, const DensityVector& x) {
  const double rgs = m.rho * m.gamma * occupancy(x);
  const std::size_t n = x.extent();
  std::vector<double> f(n + 1, 0.0);
  f[0] = -rgs * x[0] + m.kappa;
  for (std::size_t i = 1; i <= n; ++i) f[i] = rgs * (x[i - 1] - x[i]);
  return DensityVector(std::move(f));
}

// DF(x)[h]^i = rho gamma (x^(i-1) - x^i) s(h) + rho gamma s(x) (h^(i-1) - h^i), x^(-1) = 0
inline DensityVector drift_DF(const ModelSpec& m, const DensityVector& x, const DensityVector& h) {
  const double rg = m.rho * m.gamma;
  const double sx = occupancy(x), sh = occupancy(h);
  const std::size_t n = std::max(x.extent(), h.extent());
  std::vector<double> out(n + 1, 0.0);
  for (std::size_t i = 0; i <= n; ++i) {
    const double xm = i ? x[i - 1] : 0.0, hm = i ? h[i - 1] : 0.0;
    out[i] = rg * (xm - x[i]) * sh + rg * sx * (hm - h[i]);
  }
  return DensityVector(std::move(out));
}

// D_kl F^i = rho gamma { k [1(l = i-1) - 1(l = i)] + l [1(k = i-1) - 1(k = i)] }
inline double drift_D2F(const ModelSpec& m, std::size_t i, std::size_t k, std::size_t l) {
  auto ind = [](std::size_t a, std::size_t b) { return a == b ? 1.0 : 0.0; };
  const double up_l = (i >= 1 ? ind(l, i - 1) : 0.0) - ind(l, i);
  const double up_k = (i >= 1 ? ind(k, i - 1) : 0.0) - ind(k, i);
  return m.rho * m.gamma * (static_cast<double>(k) * up_l + static_cast<double>(l) * up_k);
}

// A x on the full (untruncated) type space.
inline DensityVector apply_A(const ModelSpec& m, const DensityVector& x) {
  const std::size_t n = x.extent();
  std::vector<double> out(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    if (i == 0) {
      out[0] -= m.kappa * xi;
      continue;
    }
    const double di = static_cast<double>(i);
    out[i] -= (m.kappa + di * (m.birth(i) + m.death(i) + m.gamma)) * xi;
    out[i - 1] += di * (m.death(i) + m.gamma) * xi;
    out[i + 1] += di * m.birth(i) * xi;
  }
  return DensityVector(std::move(out));
}

/*
 * A restricted to {0..M}: tridiagonal, column i holding the flows out of
 * type i. Flow from M to M+1 is dropped (absorbing cap) but the diagonal
 * keeps its full value, so truncation loses mass rather than creating it.
 */
struct TruncatedOperator {
  std::size_t M = 0;
  std::vector<double> diag;   // A_ii
  std::vector<double> sub;    // A_{i,i-1}, i = 1..M  (stored at index i)
  std::vector<double> super;  // A_{i,i+1}, i = 0..M-1 (stored at index i)
  ModelSpec params;

  double operator()(std::size_t row, std::size_t col) const {
    if (row == col) return diag[row];
    if (row == col + 1) return sub[row];
    if (col == row + 1) return super[row];
    return 0.0;
  }

  // Flow from type M to M+1 that the truncation discards, per unit x^M.
  double dropped_rate() const { return static_cast<double>(M) * params.birth(M); }
};

inline TruncatedOperator truncated_A(const ModelSpec& m, std::size_t M) {
  if (M < 1) throw std::invalid_argument("truncation level M must be >= 1");
  TruncatedOperator a;
  a.M = M;
  a.params = m;
  a.diag.assign(M + 1, 0.0);
  a.sub.assign(M + 1, 0.0);
  a.super.assign(M + 1, 0.0);
  a.diag[0] = -m.kappa;
  for (std::size_t i = 1; i <= M; ++i) {
    const double di = static_cast<double>(i);
    a.diag[i] = -(m.kappa + di * (m.birth(i) + m.death(i) + m.gamma));
    a.super[i - 1] = di * (m.death(i) + m.gamma);
    if (i + 1 <= M) a.sub[i + 1] = di * m.birth(i);
  }
  return a;
}

// (A^T mu)_i on the untruncated operator.
inline double At_mu(const ModelSpec& m, std::size_t i) {
  if (i == 0) return -m.kappa * mu_weight(0);
  const double di = static_cast<double>(i);
  return -(m.kappa + di * (m.birth(i) + m.death(i) + m.gamma)) * mu_weight(i) +
         di * (m.death(i) + m.gamma) * mu_weight(i - 1) + di * m.birth(i) * mu_weight(i + 1);
}

struct MomentPair {
  double U;
  double V;
};

// U_r(x) = sum_J alpha_J(x) sum_j J^j nu(j)^r,  V_r(x) = sum_J alpha_J(x) (sum_j J^j nu(j)^r)^2
inline MomentPair moment_UV(const ModelSpec& m, const DensityVector& x, double r) {
  RateTable t;
  fluid_rates(m, x, t);
  MomentPair out{0.0, 0.0};
  for (const auto& e : t) {
    double inner = 0.0;
    for (const auto& c : e.jump) inner += c.delta * std::pow(nu_weight(c.index), r);
    out.U += e.rate * inner;
    out.V += e.rate * inner * inner;
  }
  return out;
}

// sum_J alpha_J(x) sum_j |J^j| nu(j)^r0
inline double weighted_rate_sum(const ModelSpec& m, const DensityVector& x, double r0) {
  RateTable t;
  fluid_rates(m, x, t);
  double s = 0.0;
  for (const auto& e : t) {
    double inner = 0.0;
    for (const auto& c : e.jump) inner += std::abs(c.delta) * std::pow(nu_weight(c.index), r0);
    s += e.rate * inner;
  }
  return s;
}

/*
 * The N-patch chain. Rates follow the transition table with x = X/N, except
 * that a migrant lands in a patch other than its own: the (i, k = i) move
 * needs two distinct patches of size i and runs at i X^i (X^i - 1) rho gamma / N.
 * Migrations with k = i - 1 leave the state unchanged and are not listed.
 */
class Chain {
 public:
  explicit Chain(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const ModelSpec& spec() const { return spec_; }

  void enumerate_rates(const SparseCounts& x, std::int64_t n, RateTable& out) const {
    const auto& v = x.dense();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double rg = spec_.rho * spec_.gamma;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] == 0) continue;
      const double xi = static_cast<double>(v[i]);
      const double di = static_cast<double>(i);
      double death = di * xi * (spec_.death(i) + spec_.gamma * (1.0 - spec_.rho));
      if (i == 1) death += xi * spec_.kappa;
      out.add(JumpVector{{i - 1, 1}, {i, -1}}, death);
      out.add(JumpVector{{i + 1, 1}, {i, -1}}, di * xi * spec_.birth(i));
      if (i >= 2) out.add(JumpVector{{0, 1}, {i, -1}}, xi * spec_.kappa);
      if (rg == 0.0) continue;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (k + 1 == i) continue;
        const double targets = static_cast<double>(v[k]) - (k == i ? 1.0 : 0.0);
        if (targets <= 0.0) continue;
        out.add(Jump{Jump::Kind::kMigration, i, k}.vector(), di * xi * targets * rg * inv_n);
      }
    }
  }

  double total_rate(const SparseCounts& x, std::int64_t n) const {
    double total = 0.0;
    const auto& v = x.dense();
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] != 0) total += source_rate(v, x.total(), i, n).total();
    return total;
  }

  // Same law as scanning enumerate_rates: pick the source type, then the
  // event family, then (for migrations) the target type.
  JumpVector sample_jump(const SparseCounts& x, std::int64_t n, double u) const {
    const auto& v = x.dense();
    std::size_t last = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] == 0) continue;
      const SourceRates r = source_rate(v, x.total(), i, n);
      const double tot = r.total();
      if (tot <= 0.0) continue;
      last = i;
      if (u >= tot) {
        u -= tot;
        continue;
      }
      if (u < r.death) return JumpVector{{i - 1, 1}, {i, -1}};
      u -= r.death;
      if (u < r.birth) return JumpVector{{i + 1, 1}, {i, -1}};
      u -= r.birth;
      if (u < r.catastrophe) return JumpVector{{0, 1}, {i, -1}};
      u -= r.catastrophe;
      return pick_target(v, i, n, u);
    }
    // Rounding pushed u past the total: fall back to the last source's final event.
    if (last == 0) throw std::logic_error("sample_jump called with zero total rate");
    const SourceRates r = source_rate(v, x.total(), last, n);
    if (r.migration > 0.0) return pick_target(v, last, n, r.migration);
    if (r.catastrophe > 0.0) return JumpVector{{0, 1}, {last, -1}};
    if (r.birth > 0.0) return JumpVector{{last + 1, 1}, {last, -1}};
    return JumpVector{{last - 1, 1}, {last, -1}};
  }

  // sum_J J * rate_J in O(types), same value as enumerate_rates(...).drift().
  DensityVector drift(const SparseCounts& x, std::int64_t n) const {
    const auto& v = x.dense();
    const std::size_t top = v.size();
    std::vector<double> out(top + 1, 0.0);
    const double rgn = spec_.rho * spec_.gamma / static_cast<double>(n);
    double individuals = 0.0;
    for (std::size_t i = 1; i < top; ++i) individuals += static_cast<double>(i) * static_cast<double>(v[i]);
    for (std::size_t i = 1; i < top; ++i) {
      if (v[i] == 0) continue;
      const SourceRates r = source_rate(v, x.total(), i, n);
      out[i - 1] += r.death + r.migration;
      out[i] -= r.death + r.birth + r.catastrophe + r.migration;
      out[i + 1] += r.birth;
      out[0] += r.catastrophe;
    }
    if (rgn > 0.0) {
      // Target side: a patch of size k gains one migrant, k -> k + 1.
      for (std::size_t k = 0; k < top; ++k) {
        if (v[k] == 0) continue;
        const double vk = static_cast<double>(v[k]);
        const double next = k + 1 < top ? static_cast<double>(k + 1) * static_cast<double>(v[k + 1]) : 0.0;
        const double flow = rgn * (vk * (individuals - next) - static_cast<double>(k) * vk);
        out[k + 1] += flow;
        out[k] -= flow;
      }
    }
    return DensityVector(std::move(out));
  }

 private:
  struct SourceRates {
    double death, birth, catastrophe, migration;
    double total() const { return death + birth + catastrophe + migration; }
  };

  SourceRates source_rate(const std::vector<std::int64_t>& v, std::int64_t patches, std::size_t i,
                          std::int64_t n) const {
    const double xi = static_cast<double>(v[i]);
    const double di = static_cast<double>(i);
    SourceRates r{};
    r.death = di * xi * (spec_.death(i) + spec_.gamma * (1.0 - spec_.rho)) + (i == 1 ? xi * spec_.kappa : 0.0);
    r.birth = di * xi * spec_.birth(i);
    r.catastrophe = i >= 2 ? xi * spec_.kappa : 0.0;
    // Targets: every other patch except those of size i - 1 (no-op moves).
    const double others = static_cast<double>(patches - 1 - v[i - 1]);
    r.migration = others > 0.0 ? di * xi * others * spec_.rho * spec_.gamma / static_cast<double>(n) : 0.0;
    return r;
  }

  JumpVector pick_target(const std::vector<std::int64_t>& v, std::size_t i, std::int64_t n, double u) const {
    const double scale = static_cast<double>(i) * static_cast<double>(v[i]) * spec_.rho * spec_.gamma /
                         static_cast<double>(n);
    // Patches of size zero beyond the stored range do not exist; all types
    // with v[k] > 0 are within range, and type 0 is implicitly stored.
    std::size_t chosen = static_cast<std::size_t>(-1);
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (k + 1 == i) continue;
      const double targets = static_cast<double>(v[k]) - (k == i ? 1.0 : 0.0);
      if (targets <= 0.0) continue;
      chosen = k;
      const double w = targets * scale;
      if (u < w) break;
      u -= w;
    }
    if (chosen == static_cast<std::size_t>(-1)) throw std::logic_error("migration with no target");
    return Jump{Jump::Kind::kMigration, i, chosen}.vector();
  }

  ModelSpec spec_;
};

static_assert(DirectSampler<Chain>);

}  // namespace mpp::arrigoni

#endif  // MPP_ARRIGONI_HPP_
