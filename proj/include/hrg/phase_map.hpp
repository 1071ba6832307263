#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"

namespace hrg {

enum class PhaseRegime { mu0_fixed, mu0_below_T };

inline std::string to_string(PhaseRegime r) { return r == PhaseRegime::mu0_fixed ? "mu0_fixed" : "mu0_below_T"; }

struct PhaseConstants {
  double C1 = 1.0;
  double C2 = 1.0;
  PhaseRegime regime = PhaseRegime::mu0_fixed;

  void validate() const {
    if (!(C1 > 0) || !(C2 > 0)) throw InvalidParameter("domain constants must be positive");
  }
  // Constants of the mu0 <= T form.
  double C1p() const { return std::sqrt(C1); }
  double C2p() const { return C2 / 4; }
};

struct OutOfRegime : std::domain_error {
  using std::domain_error::domain_error;
};

// Radius of the analyticity domain R_T: C2 / log^2(mu0 T / C1), or with mu0 replaced by T when mu0 <= T.
inline double lambda_max(double T, double mu0, const PhaseConstants& c) {
  c.validate();
  if (!(T > 0) || !(mu0 > 0)) throw InvalidParameter("T and mu0 must be positive");
  double x = c.regime == PhaseRegime::mu0_fixed ? mu0 * T / c.C1 : T * T / c.C1;
  if (x >= 1) throw OutOfRegime("mu0 T / C1 must lie in (0,1)");
  double l = std::log(x);
  return c.C2 / (l * l);
}

// Lower edge of the convergence region for coupling lambda.
inline double critical_temperature(double lambda, double mu0, const PhaseConstants& c) {
  c.validate();
  if (lambda == 0) throw std::domain_error("critical temperature undefined at lambda = 0");
  double a = std::abs(lambda);
  if (c.regime == PhaseRegime::mu0_fixed) return c.C1 / mu0 * std::exp(-std::sqrt(c.C2 / a));
  return c.C1p() * std::exp(-std::sqrt(c.C2p() / a));
}

// The connected-function domain |lambda log(mu0 T)| <= c1.
inline bool in_connected_domain(double lambda, double T, double mu0, double c1) {
  return std::abs(lambda * std::log(mu0 * T)) <= c1;
}

struct PhaseRow {
  double T = 0, mu0 = 0, lambda_max = 0;
  bool inclusion = true;
};

// lambda_max on a log grid, with the R_T subset R^C_T check at c1 = C2.
inline std::vector<PhaseRow> phase_grid(const std::vector<double>& Ts, const std::vector<double>& mu0s, const PhaseConstants& c) {
  std::vector<PhaseRow> out;
  for (double m : mu0s)
    for (double T : Ts) {
      PhaseRow r{T, m, lambda_max(T, m, c), true};
      r.inclusion = in_connected_domain(r.lambda_max, T, m, c.C2);
      out.push_back(r);
    }
  return out;
}

inline std::vector<double> log_grid(double lo, double hi, int n) {
  if (n < 2 || !(lo > 0) || !(hi > lo)) throw InvalidParameter("log grid needs n >= 2 and 0 < lo < hi");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return g;
}

}  // namespace hrg
