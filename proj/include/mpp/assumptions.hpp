#ifndef MPP_ASSUMPTIONS_HPP_
#define MPP_ASSUMPTIONS_HPP_

/*
 * Numerical audit of the standing assumptions for the Arrigoni model on a
 * truncation {0..M}. Sign and drift conditions are checked entrywise.
 * Conditions that only assert existence of constants are reported as fitted
 * constants, and fail only on a structural violation: a growth exponent
 * beyond the declared beta (plus 0.1 slack) over the window [M/2, M].
 */

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mpp/arrigoni.hpp"
#include "mpp/counts.hpp"

namespace mpp::arrigoni {

struct AssumptionCheck {
  std::string name;
  bool pass = true;
  std::string detail;
  std::vector<std::pair<std::string, double>> values;
  bool structural = true;  // false: a requirement on the chosen moment order, not on the model
};

struct AssumptionReport {
  WeightStructure weights;
  std::size_t M = 0;
  std::vector<AssumptionCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
  bool structural_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass || !c.structural; });
  }
  const AssumptionCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

namespace detail {

// log-log slope of f between j and 2j, averaged over the window.
template <typename Fn>
double growth_exponent(Fn&& f, std::size_t lo, std::size_t hi) {
  if (hi <= lo) return 0.0;
  const double a = f(lo), b = f(hi);
  if (!(a > 0.0) || !(b > 0.0)) return 0.0;
  return std::log(b / a) / std::log(nu_weight(hi) / nu_weight(lo));
}

}  // namespace detail

/*
 * `samples` are densities with support in {0..M}. r0 is the moment order
 * whose threshold comparison is reported; r1 = r0 + 1, b = 2, k2 = 1 are used
 * for fitting the rate-moment constant.
 */
inline AssumptionReport check_assumptions(const ModelSpec& m, std::size_t M, const std::vector<DensityVector>& samples,
                                          double r0) {
  m.validate();
  AssumptionReport rep;
  rep.M = M;
  rep.weights = weight_structure(m, r0);
  const auto& ws = rep.weights;
  const auto A = truncated_A(m, std::max<std::size_t>(M, 1));
  const std::size_t lo = std::max<std::size_t>(1, M / 2);

  {
    AssumptionCheck c{"A-assn-1"};
    double worst = 0.0;
    for (std::size_t i = 0; i <= M; ++i) {
      if (i >= 1) worst = std::min(worst, A.sub[i]);
      if (i < M) worst = std::min(worst, A.super[i]);
    }
    c.pass = worst >= 0.0;
    c.detail = "off-diagonal entries of A are nonnegative";
    c.values = {{"min_offdiag", worst}};
    rep.checks.push_back(c);
  }
  {
    AssumptionCheck c{"A-assn-2"};
    double worst = -1e300;
    for (std::size_t i = 0; i <= M; ++i) worst = std::max(worst, At_mu(m, i) - ws.w * mu_weight(i));
    c.pass = worst <= 1e-12 * (1.0 + ws.w) * mu_weight(M);
    c.detail = "(A^T mu)_i <= w mu_i for i <= M";
    c.values = {{"w", ws.w}, {"max_excess", worst}};
    rep.checks.push_back(c);
  }
  {
    AssumptionCheck c{"mu-A-growth"};
    bool mu_ok = true;
    double k_diag = 0.0;
    for (std::size_t j = 0; j <= M; ++j) {
      mu_ok = mu_ok && mu_weight(j) <= std::pow(nu_weight(j), ws.beta3);
      k_diag = std::max(k_diag, std::abs(A.diag[j]) / std::pow(nu_weight(j), ws.beta4));
    }
    const double growth = detail::growth_exponent([&](std::size_t j) { return std::abs(A.diag[j]); }, lo, M);
    c.pass = mu_ok && growth <= ws.beta4 + 0.1;
    c.detail = "mu(j) <= nu(j)^beta3 and |A_jj| <= K nu(j)^beta4";
    c.values = {{"beta3", ws.beta3}, {"beta4", ws.beta4}, {"K_diag", k_diag}, {"diag_growth_exponent", growth}};
    rep.checks.push_back(c);
  }
  {
    AssumptionCheck c{"zeta-bnd"};
    const double r1 = r0 + 1.0;
    double k1 = 0.0;
    for (const auto& x : samples) {
      const double lhs = weighted_rate_sum(m, x, r0);
      const double s = moment_S(x, r1);
      if (s > 0.0) k1 = std::max(k1, (std::sqrt(lhs) - 1.0) / s);
    }
    c.pass = std::isfinite(k1);
    c.detail = "sum_J alpha_J sum_j |J^j| nu(j)^r0 <= (k1 S_r1 + k2)^b, fitted with r1 = r0 + 1, b = 2, k2 = 1";
    c.values = {{"r0", r0}, {"r1", r1}, {"b", 2.0}, {"k2", 1.0}, {"k1", k1}};
    rep.checks.push_back(c);
  }
  {
    // Lipschitz constant of alpha_J in the mu-norm: max_m |d alpha_J / d x^m| / mu(m).
    AssumptionCheck c{"alpha-lip"};
    const double rg = m.rho * m.gamma;
    double xmax = 0.0;
    for (const auto& x : samples)
      for (std::size_t j = 0; j < x.extent(); ++j) xmax = std::max(xmax, std::abs(x[j]));
    auto family_lip = [&](std::size_t i) {
      const double di = static_cast<double>(i);
      double death = di * (m.death(i) + m.gamma * (1.0 - m.rho)) + (i == 1 ? m.kappa : 0.0);
      double birth = di * m.birth(i);
      double migration = rg * di * xmax;  // d/dx^i of i x^i x^k
      return std::max({death, birth, m.kappa, migration}) / mu_weight(i);
    };
    // nu(J) for the families from source type i is at most nu(i + 1).
    double k_alpha = 0.0;
    for (std::size_t i = 1; i <= M; ++i) k_alpha = std::max(k_alpha, family_lip(i) / std::pow(nu_weight(i + 1), ws.beta5));
    // Migration also depends on x^k through i x^i: bounded by rg * max_i i x^i / mu(k).
    double mig_k = 0.0;
    for (const auto& x : samples)
      for (std::size_t i = 1; i < x.extent(); ++i) mig_k = std::max(mig_k, rg * static_cast<double>(i) * x[i]);
    k_alpha = std::max(k_alpha, mig_k);
    const double growth = detail::growth_exponent(family_lip, lo, M);
    c.pass = growth <= ws.beta5 + 0.1;
    c.detail = "|alpha_J(z1) - alpha_J(z2)| <= K_alpha nu(J)^beta5 ||z1 - z2||_mu";
    c.values = {{"beta5", ws.beta5}, {"K_alpha", k_alpha}, {"lip_growth_exponent", growth}};
    rep.checks.push_back(c);
  }
  {
    AssumptionCheck c{"r0-threshold"};
    c.pass = r0 > ws.threshold();
    c.detail = "r0 > 4(beta2 + beta3 + beta4) + 2 beta5";
    c.values = {{"r0", r0}, {"threshold", ws.threshold()}};
    c.structural = false;
    rep.checks.push_back(c);
  }
  return rep;
}

}  // namespace mpp::arrigoni

#endif  // MPP_ASSUMPTIONS_HPP_
