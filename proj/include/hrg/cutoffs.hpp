#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "model.hpp"

namespace hrg {

// Smooth step 0 -> 1 on [0,1] built from psi(u) = exp(-u^(-1/(h-1))).
// Derivatives grow like (n!)^h, so the bump is Gevrey of index h.
struct GevreyBump {
  double h = 2.0;
  double gamma_g = 1.0;

  double psi(double u) const {
    if (u <= 0) return 0.0;
    return std::exp(-std::pow(u, -1.0 / (h - 1.0)));
  }
  double step(double u) const {
    if (u <= 0) return 0.0;
    if (u >= 1) return 1.0;
    double a = psi(u), b = psi(1 - u);
    return a / (a + b);
  }
  // chi(t): 1 on |t| <= 1, 0 on |t| >= 2.
  double operator()(double t) const {
    t = std::abs(t);
    if (t <= 1) return 1.0;
    if (t >= 2) return 0.0;
    double u = t - 1, a = psi(u), b = psi(1 - u);
    return b / (a + b);
  }
};

inline GevreyBump make_bump(double h = 2.0, double gamma_g = 1.0) {
  if (!(h > 1)) throw InvalidParameter("Gevrey index h must exceed 1");
  if (!(gamma_g > 0)) throw InvalidParameter("bump width parameter must be positive");
  return {h, gamma_g};
}

inline double chi_j(double t, int j, const GevreyBump& chi, double gamma) {
  if (j < 0) throw InvalidParameter("scale index must be >= 0");
  if (j == 0) return 1.0 - chi(t);
  return chi(std::pow(gamma, 2 * j - 2) * t) - chi(std::pow(gamma, 2 * j) * t);
}

// Raw windows: v_s = chi_{s+1} for s < j, v_j = chi(gamma^{2j} r); they sum to chi(r).
inline double sector_window(double r, int s, int j, const GevreyBump& chi, double gamma) {
  if (s < 0 || s > j) throw InvalidParameter("window index out of range");
  if (s == j) return chi(std::pow(gamma, 2 * j) * r);
  return chi_j(r, s + 1, chi, gamma);
}

// Lowest admissible window index, ceil((j - j0)/2) clipped at 0.
inline int window_floor(int j, int j0) { return j <= j0 ? 0 : (j - j0 + 1) / 2; }

// Windows restricted to [s_lo, j]: everything below s_lo is absorbed in v_{s_lo},
// so the family sums to 1 on the whole axis.
inline double completed_window(double r, int s, int j, int j0, const GevreyBump& chi, double gamma) {
  int lo = window_floor(j, j0);
  if (s < lo || s > j) throw InvalidParameter("window index out of range");
  if (s == lo) {
    if (s == j) return 1.0;
    return 1.0 - chi(std::pow(gamma, 2 * s + 2) * r);
  }
  return sector_window(r, s, j, chi, gamma);
}

// Immutable evaluator for one (gamma, jmax, j0) configuration.
class PartitionSet {
 public:
  PartitionSet(GevreyBump chi, double gamma, int jmax, int j0) : chi_(chi), gamma_(gamma), jmax_(jmax), j0_(j0) {}

  double chi(double t) const { return chi_(t); }
  double chi_j(double t, int j) const { return hrg::chi_j(t, j, chi_, gamma_); }
  double window(double r, int s, int j) const { return sector_window(r, s, j, chi_, gamma_); }
  double completed(double r, int s, int j) const { return completed_window(r, s, j, j0_, chi_, gamma_); }

  // chi_0 + ... + chi_J
  double partial_sum(double t, int J) const {
    double s = 0;
    for (int j = 0; j <= J; ++j) s += chi_j(t, j);
    return s;
  }
  // Indices j whose shell contains t.
  std::vector<int> active_scales(double t) const {
    std::vector<int> out;
    for (int j = 0; j <= jmax_; ++j)
      if (chi_j(t, j) != 0.0) out.push_back(j);
    return out;
  }

  const GevreyBump& bump() const { return chi_; }
  double gamma() const { return gamma_; }
  int jmax() const { return jmax_; }
  int j0() const { return j0_; }

 private:
  GevreyBump chi_;
  double gamma_;
  int jmax_;
  int j0_;
};

}  // namespace hrg
