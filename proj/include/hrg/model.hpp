#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrg {

using cplx = std::complex<double>;
inline constexpr double pi = std::numbers::pi;

struct PoleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Largest integer n with gamma^n <= x, robust against log round-off.
inline int floor_log(double x, double gamma) {
  int n = static_cast<int>(std::floor(std::log(x) / std::log(gamma)));
  while (std::pow(gamma, n + 1) <= x * (1 + 1e-14)) ++n;
  while (std::pow(gamma, n) > x * (1 + 1e-14)) --n;
  return n;
}

struct ModelParams {
  double mu0 = 1e-2;
  double temperature = 1e-3;
  double gamma = 10.0;
  double lambda = 1e-2;
  int jmax_override = -1;

  void validate() const {
    if (!(mu0 > 0 && mu0 < 1)) throw InvalidParameter("mu0 must lie in (0,1)");
    if (!(temperature > 0)) throw InvalidParameter("temperature must be positive");
    if (!(gamma >= 10)) throw InvalidParameter("gamma must be >= 10");
  }
  double beta() const { return 1.0 / temperature; }
  // j0 = floor(|log_gamma mu0|)
  int j0() const { return floor_log(1.0 / mu0, gamma); }
  // gamma^(jmax-1) <= 1/(sqrt2 pi T) < gamma^jmax
  int jmax() const {
    if (jmax_override >= 0) return jmax_override;
    return floor_log(1.0 / (std::sqrt(2.0) * pi * temperature), gamma) + 1;
  }
};

// (k0, k+, k-) in rotated coordinates k+ = k1 + k2, k- = k2 - k1.
struct Momentum {
  double k0 = 0;
  double kplus = 0;
  double kminus = 0;
};

struct Vec2 {
  double x = 0, y = 0;
  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

inline Vec2 rotate(double k1, double k2) { return {k1 + k2, k2 - k1}; }
inline Vec2 unrotate(double kp, double km) { return {(kp - km) / 2, (kp + km) / 2}; }

inline double wrap_pi(double a) {
  double r = std::remainder(a, 2 * pi);
  if (r <= -pi) r += 2 * pi;
  return r;
}

// Reduce a rotated momentum to the first zone |k+| + |k-| <= 2 pi.
inline Vec2 to_zone(double kp, double km) {
  Vec2 o = unrotate(kp, km);
  return rotate(wrap_pi(o.x), wrap_pi(o.y));
}

inline double band_energy_original(double k1, double k2, double mu0) {
  return mu0 - std::cos(k1) - std::cos(k2);
}

inline double band_energy(double kp, double km, double mu0) {
  return mu0 - 2 * std::cos(kp / 2) * std::cos(km / 2);
}

inline double band_energy(const Momentum& k, const ModelParams& p) {
  return band_energy(k.kplus, k.kminus, p.mu0);
}

inline Vec2 band_gradient(double kp, double km) {
  return {std::sin(kp / 2) * std::cos(km / 2), std::cos(kp / 2) * std::sin(km / 2)};
}

inline double matsubara(double T, long n) { return 2 * pi * T * (static_cast<double>(n) + 0.5); }

inline std::vector<double> matsubara_frequencies(const ModelParams& p, int n_cut) {
  if (n_cut < 1) throw InvalidParameter("n_cut must be >= 1");
  std::vector<double> out;
  out.reserve(2 * n_cut);
  for (long n = -n_cut; n < n_cut; ++n) out.push_back(matsubara(p.temperature, n));
  return out;
}

inline cplx free_propagator(double k0, double e) {
  if (std::abs(k0) < 1e-14 && std::abs(e) < 1e-14) throw PoleError("free propagator evaluated at its pole");
  return 1.0 / cplx(-e, k0);
}

inline cplx free_propagator(const Momentum& k, const ModelParams& p) {
  return free_propagator(k.k0, band_energy(k, p));
}

}  // namespace hrg
