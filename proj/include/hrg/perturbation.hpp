#pragma once

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cutoffs.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "phase_map.hpp"
#include "propagator.hpp"
#include "quadrature.hpp"

namespace hrg {

// Fermion loop sign times spin multiplicity 1 for the on-site up-down vertex.
inline constexpr double sunset_sign = -1.0;

enum class AmplitudeKind { tadpole, self_energy, counterterm_mu, counterterm_nu, dressed_ratio };

inline std::string to_string(AmplitudeKind k) {
  switch (k) {
    case AmplitudeKind::tadpole: return "tadpole";
    case AmplitudeKind::self_energy: return "self_energy";
    case AmplitudeKind::counterterm_mu: return "counterterm_mu";
    case AmplitudeKind::counterterm_nu: return "counterterm_nu";
    case AmplitudeKind::dressed_ratio: return "dressed_ratio";
  }
  return "?";
}

struct AmplitudeReport {
  AmplitudeKind quantity = AmplitudeKind::tadpole;
  std::map<int, cplx> per_scale;
  double fitted_exponent = 0;
  std::map<int, double> bound_ratios;
  std::map<std::string, double> metadata;
};

// ---------------------------------------------------------------- tadpole

// States per site at e0 = e; log singular at the saddle level e = mu0.
inline double density_of_states(double e, double mu0) {
  double eps = mu0 - e;
  if (std::abs(eps) >= 2) return 0.0;
  // K(k)/pi^2 with K = pi / (2 agm(1, k')), k' = |eps|/2; avoids forming k = sqrt(1 - k'^2) near 1
  double a = 1, b = std::abs(eps) / 2;
  if (b == 0) return std::numeric_limits<double>::infinity();
  for (int it = 0; it < 64 && std::abs(a - b) > 1e-15 * a; ++it) {
    double m = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = m;
  }
  return 1 / (2 * pi * a);
}

// g_j(e) = T sum_n chi_j(k0^2 + e^2) (-e)/(k0^2 + e^2), imaginary parts cancel in pairs.
// For j = 0 the untruncated sum is taken in closed form, -tanh(beta e / 2)/2.
inline double matsubara_kernel(double e, int j, const ModelParams& p, const GevreyBump& chi = make_bump()) {
  double T = p.temperature;
  double kmax = j == 0 ? std::sqrt(2.0) : std::sqrt(2.0) * std::pow(p.gamma, 1 - j);
  double lo = j == 0 ? 1.0 : std::pow(p.gamma, 2 * j - 2), hi = std::pow(p.gamma, 2 * j);
  double s = 0;
  for (long n = 0;; ++n) {
    double k0 = matsubara(T, n);
    if (k0 > kmax) break;
    double t = k0 * k0 + e * e;
    double w = j == 0 ? -chi(t) : chi(lo * t) - chi(hi * t);
    if (w != 0.0) s += w * (-e) / t;
  }
  s *= 2 * T;
  if (j == 0) s += -0.5 * std::tanh(e / (2 * T));
  return s;
}

namespace detail {

// Panels on [a,b] refined geometrically towards the interior singular point c.
inline void graded_breaks(std::vector<double>& br, double a, double b, double c, double ratio = 0.25, int levels = 40) {
  if (!(c > a && c < b)) return;
  double d = std::min(c - a, b - c);
  for (int k = 1; k <= levels; ++k) {
    double h = d * std::pow(ratio, k);
    if (h < 1e-13 * std::max(std::abs(c), d)) break;
    br.push_back(c - h);
    br.push_back(c + h);
  }
  br.push_back(c);
}

inline QuadRule tadpole_rule(int j, const ModelParams& p, int nodes) {
  double lo = p.mu0 - 2, hi = p.mu0 + 2;
  double scale = j == 0 ? 1.0 : std::pow(p.gamma, -j);
  if (j > 0) {
    double s = std::sqrt(2.0) * std::pow(p.gamma, 1 - j);
    lo = std::max(lo, -s);
    hi = std::min(hi, s);
  }
  // g_j is smooth on the shell scale; the j = 0 tanh step of width T is resolved by grading towards 0
  int panels = std::max(8, static_cast<int>(std::ceil(8 * (hi - lo) / scale)));
  std::vector<double> br;
  for (int i = 0; i <= panels; ++i) {
    double x = lo + (hi - lo) * i / panels;
    // a uniform break a few ulps off a singular point would leave a degenerate panel
    if (i > 0 && i < panels && (std::abs(x - p.mu0) < 1e-12 || (j == 0 && std::abs(x) < 1e-12))) continue;
    br.push_back(x);
  }
  graded_breaks(br, lo, hi, p.mu0);
  if (j == 0) graded_breaks(br, lo, hi, 0.0);
  std::sort(br.begin(), br.end());
  br.erase(std::unique(br.begin(), br.end()), br.end());
  return composite_gauss(br, nodes);
}

}  // namespace detail

struct TadpoleNotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// T^j = lambda int de rho(e) g_j(e): the sector sum of the sliced tadpole, taken over the whole shell.
inline double tadpole_slice(int j, const ModelParams& p, int nodes = 32, const GevreyBump& chi = make_bump()) {
  if (j < 0 || j > p.jmax()) throw InvalidParameter("tadpole scale outside [0, jmax]");
  auto eval = [&](int q) {
    auto rule = detail::tadpole_rule(j, p, q);
    KahanSum s;
    for (size_t i = 0; i < rule.x.size(); ++i) s.add(rule.w[i] * density_of_states(rule.x[i], p.mu0) * matsubara_kernel(rule.x[i], j, p, chi));
    return p.lambda * s.value();
  };
  double v = eval(nodes), w = eval(nodes / 2);
  if (std::abs(v - w) > 1e-9 * std::abs(v) + 1e-300) throw TadpoleNotConverged("tadpole quadrature not converged");
  return v;
}

// Dense Brillouin-zone trapezoid (no density of states, no sectors).
inline double tadpole_dense_grid(int j, const ModelParams& p, int n, const GevreyBump& chi = make_bump()) {
  std::vector<double> c(n);
  for (int i = 0; i < n; ++i) c[i] = std::cos(2 * pi * (i + 0.5) / n);
  KahanSum s;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) s.add(matsubara_kernel(p.mu0 - c[a] - c[b], j, p, chi));
  return p.lambda * s.value() / (static_cast<double>(n) * n);
}

// The anchored-sector tadpole: int dq W(q) g_j(e(k_F + q)) / (2 (2pi)^2), on the same q rules as the slice.
inline double anchored_tadpole(const AnchoredSector& a, const GevreyBump& chi = make_bump()) {
  const auto& p = a.params();
  Vec2 kf = face_center(p.mu0);
  const auto &qp = a.rule_plus(), &qm = a.rule_minus();
  KahanSum s;
  for (size_t i = 0; i < qp.x.size(); ++i)
    for (size_t k = 0; k < qm.x.size(); ++k) {
      double w = a.window_product(qp.x[i], qm.x[k]);
      if (w == 0.0) continue;
      double e = band_energy(kf.x + qp.x[i], kf.y + qm.x[k], p.mu0);
      s.add(qp.w[i] * qm.w[k] * w * matsubara_kernel(e, a.sector().j, p, chi));
    }
  return s.value() / (2 * 4 * pi * pi);
}

// delta mu^r = -T^r, cumulative flow and its exact cancellation.
struct MuFlow {
  std::vector<double> tadpole;       // T^r
  std::vector<double> delta_mu;      // delta mu^r
  std::vector<double> tadpole_cum;   // T^{<= r}
  std::vector<double> delta_mu_cum;  // delta mu^{<= r}
  bool cancels = true;
};

inline MuFlow delta_mu_flow(const ModelParams& p, int r_max) {
  MuFlow f;
  double tc = 0, mc = 0;
  for (int r = 0; r <= r_max; ++r) {
    double t = tadpole_slice(r, p);
    f.tadpole.push_back(t);
    f.delta_mu.push_back(-t);
    tc += t;
    mc += -t;
    f.tadpole_cum.push_back(tc);
    f.delta_mu_cum.push_back(mc);
    f.cancels = f.cancels && tc + mc == 0.0;
  }
  return f;
}

inline AmplitudeReport mu_report(const MuFlow& f, const ModelParams& p) {
  AmplitudeReport r;
  r.quantity = AmplitudeKind::counterterm_mu;
  for (size_t i = 0; i < f.delta_mu.size(); ++i) {
    r.per_scale[static_cast<int>(i)] = f.delta_mu_cum[i];
    r.bound_ratios[static_cast<int>(i)] = std::abs(f.delta_mu_cum[i]) / std::abs(p.lambda);
  }
  r.metadata = {{"mu0", p.mu0}, {"T", p.temperature}, {"lambda", p.lambda}, {"gamma", p.gamma}};
  return r;
}

// ---------------------------------------------------------------- sunset

struct SunsetGrid {
  int L = 0;  // lattice side, 0 picks the smallest power of two >= 2/T (at least 64)
  int gauss = 12;
  double first_panel = 0.02;
  double growth = 1.5;
};

inline int auto_lattice(double T) {
  int L = 64;
  while (L < 2.0 / T) L *= 2;
  return L;
}

// Gauss panels on [0, beta/2], widths growing geometrically from tau = 0.
inline QuadRule half_tau_rule(double beta, const SunsetGrid& g) {
  std::vector<double> br{0.0};
  double h = g.first_panel;
  while (br.back() + h < beta / 2) {
    br.push_back(br.back() + h);
    h *= g.growth;
  }
  if (br.size() > 1 && beta / 2 - br.back() < 0.25 * h / g.growth)
    br.back() = beta / 2;
  else
    br.push_back(beta / 2);
  return composite_gauss(br, g.gauss);
}

// Free propagator at imaginary time 0 < tau < beta: e^{e tau} / (e^{beta e} + 1).
inline double tau_propagator(double tau, double e, double beta) {
  if (e > 0) return std::exp(-e * (beta - tau)) / (1 + std::exp(-beta * e));
  return std::exp(e * tau) / (1 + std::exp(beta * e));
}

namespace detail {

// Infrared part chi(gamma^{2r} t) C(tau, k) as a function of e, tabulated and interpolated
// with 4-point Lagrange weights. Only momenta with |e| <= sqrt2 gamma^{-r} are touched.
class InfraredTable {
 public:
  InfraredTable(const ModelParams& p, int r, const std::vector<double>& e_points, const GevreyBump& chi) {
    double T = p.temperature, g2r = std::pow(p.gamma, 2 * r);
    emax_ = std::sqrt(2.0) * std::pow(p.gamma, -r);
    for (long n = 0;; ++n) {
      double k0 = matsubara(T, n);
      if (k0 > emax_) break;
      k0_.push_back(k0);
    }
    h_ = std::min(pi * T / 24, std::pow(p.gamma, -r) / 200);
    G_ = static_cast<int>(std::ceil(2 * emax_ / h_)) + 5;
    e0_ = -emax_ - 2 * h_;
    ae_.assign(static_cast<size_t>(G_) * k0_.size(), 0.0);
    ak_.assign(ae_.size(), 0.0);
    for (int g = 0; g < G_; ++g) {
      double e = e0_ + g * h_;
      for (size_t n = 0; n < k0_.size(); ++n) {
        double t = k0_[n] * k0_[n] + e * e;
        double a = 2 * T * chi(g2r * t) / t;
        ae_[g * k0_.size() + n] = a * e;
        ak_[g * k0_.size() + n] = a * k0_[n];
      }
    }
    for (size_t i = 0; i < e_points.size(); ++i) {
      double e = e_points[i];
      if (std::abs(e) > emax_) continue;
      double u = (e - e0_) / h_;
      int b = static_cast<int>(std::floor(u)) - 1;
      idx_.push_back(i);
      base_.push_back(b);
      w_.push_back(weights(u - b));
    }
    E_.resize(G_);
    K_.resize(G_);
  }

  // Subtracts the infrared part at tau and at beta - tau.
  void subtract(double tau, double* a, double* b) {
    size_t F = k0_.size();
    std::vector<double> c(F), s(F);
    for (size_t n = 0; n < F; ++n) c[n] = std::cos(k0_[n] * tau), s[n] = std::sin(k0_[n] * tau);
    for (int g = 0; g < G_; ++g) {
      double E = 0, K = 0;
      const double *pe = &ae_[g * F], *pk = &ak_[g * F];
      for (size_t n = 0; n < F; ++n) E += pe[n] * c[n], K += pk[n] * s[n];
      E_[g] = E;
      K_[g] = K;
    }
    for (size_t q = 0; q < idx_.size(); ++q) {
      double E = 0, K = 0;
      for (int m = 0; m < 4; ++m) E += w_[q][m] * E_[base_[q] + m], K += w_[q][m] * K_[base_[q] + m];
      a[idx_[q]] -= -E + K;
      b[idx_[q]] -= E + K;
    }
  }

  // Direct sum for one e (test oracle for the interpolation).
  double exact(double tau, double e, const ModelParams& p, int r, const GevreyBump& chi) const {
    double s = 0, g2r = std::pow(p.gamma, 2 * r);
    for (double k0 : k0_) {
      double t = k0 * k0 + e * e;
      s += 2 * p.temperature * chi(g2r * t) * (-e * std::cos(k0 * tau) + k0 * std::sin(k0 * tau)) / t;
    }
    return s;
  }
  double interpolated(double tau, double e) const {
    double u = (e - e0_) / h_;
    int b = static_cast<int>(std::floor(u)) - 1;
    auto w = weights(u - b);
    double out = 0;
    for (int m = 0; m < 4; ++m) {
      double E = 0, K = 0;
      for (size_t n = 0; n < k0_.size(); ++n) {
        E += ae_[(b + m) * k0_.size() + n] * std::cos(k0_[n] * tau);
        K += ak_[(b + m) * k0_.size() + n] * std::sin(k0_[n] * tau);
      }
      out += w[m] * (-E + K);
    }
    return out;
  }

 private:
  // cubic Lagrange weights for nodes at s = 0, 1, 2, 3
  static std::array<double, 4> weights(double s) {
    return {-(s - 1) * (s - 2) * (s - 3) / 6, s * (s - 2) * (s - 3) / 2, -s * (s - 1) * (s - 3) / 2, s * (s - 1) * (s - 2) / 6};
  }

  double emax_ = 0, h_ = 0, e0_ = 0;
  int G_ = 0;
  std::vector<double> k0_, ae_, ak_, E_, K_;
  std::vector<size_t> idx_;
  std::vector<int> base_;
  std::vector<std::array<double, 4>> w_;
};

}  // namespace detail

// Second-order sunset Sigma(x) = sign lambda^2 C(x)^2 C(-x) on an L x L periodic lattice,
// transformed to Sigma^(k0, k) for a fixed list of external frequencies.
// With ir_scale = r the internal lines carry C (1 - chi(gamma^{2r} t)), i.e. scales <= r only.
class Sunset {
 public:
  Sunset(const ModelParams& p, std::vector<double> k0s, int ir_scale = -1, SunsetGrid g = {},
         double sign = sunset_sign, const GevreyBump& chi = make_bump())
      : p_(p), k0s_(std::move(k0s)), ir_(ir_scale), g_(g), sign_(sign) {
    p_.validate();
    if (g_.L == 0) g_.L = auto_lattice(p.temperature);
    if (g_.L < 8 || g_.L % 2) throw InvalidParameter("lattice side must be even and >= 8");
    run(chi);
  }

  int lattice() const { return g_.L; }
  const ModelParams& params() const { return p_; }
  const std::vector<double>& frequencies() const { return k0s_; }
  size_t tau_nodes() const { return tau_count_; }

  size_t index_of(double k0) const {
    for (size_t m = 0; m < k0s_.size(); ++m)
      if (k0s_[m] == k0) return m;
    throw InvalidParameter("external frequency was not requested");
  }

  // Sigma^ and its directional k-derivatives (order 0, 1, 2); k, dir in rotated coordinates.
  cplx value(double k0, Vec2 k, Vec2 dir = {}, int order = 0) const {
    auto bil = bilinear(k0, k);
    double pref = sign_ * p_.lambda * p_.lambda;
    // x_d = al x1 + be x2 for a rotated direction d
    double al = (dir.x - dir.y) / 2, be = (dir.x + dir.y) / 2;
    if (order == 0) return pref * bil(0, 0);
    if (order == 1) return pref * cplx(0, -1) * (al * bil(1, 0) + be * bil(0, 1));
    if (order == 2) return -pref * (al * al * bil(2, 0) + 2 * al * be * bil(1, 1) + be * be * bil(0, 2));
    throw InvalidParameter("derivative order must be 0, 1 or 2");
  }

  // Second derivatives in (k+, k-): {d++, d--, d+-}.
  std::array<cplx, 3> hessian(double k0, Vec2 k) const {
    auto bil = bilinear(k0, k);
    double pref = -sign_ * p_.lambda * p_.lambda / 4;
    cplx b20 = bil(2, 0), b02 = bil(0, 2), b11 = bil(1, 1);
    return {pref * (b20 + 2.0 * b11 + b02), pref * (b20 - 2.0 * b11 + b02), pref * (b02 - b20)};
  }

 private:
  // (qa, qb) -> sum_x x1^qa x2^qb e^{-i k x} S(x)
  std::function<cplx(int, int)> bilinear(double k0, Vec2 k) const {
    size_t m = index_of(k0);
    Vec2 o = unrotate(k.x, k.y);
    int N = g_.L / 2 + 1;
    std::array<std::vector<cplx>, 3> F, G;
    for (int q = 0; q < 3; ++q) F[q].assign(N, 0.0), G[q].assign(N, 0.0);
    for (int a = 0; a < N; ++a) {
      double wa = a == 0 ? 0.5 : (a == N - 1 ? 0.5 : 1.0);
      double ca = std::cos(o.x * a), sa = std::sin(o.x * a), cb = std::cos(o.y * a), sb = std::sin(o.y * a);
      // sum over x = +a, -a of x^q e^{-i k x}
      F[0][a] = 2 * wa * ca, F[1][a] = cplx(0, -2 * wa * a * sa), F[2][a] = 2 * wa * a * a * ca;
      G[0][a] = 2 * wa * cb, G[1][a] = cplx(0, -2 * wa * a * sb), G[2][a] = 2 * wa * a * a * cb;
    }
    return [this, m, N, F = std::move(F), G = std::move(G)](int qa, int qb) {
      cplx s = 0;
      for (int a = 0; a < N; ++a) {
        cplx row = 0;
        const double *pr = &sre_[m][static_cast<size_t>(a) * N], *pi_ = &sim_[m][static_cast<size_t>(a) * N];
        for (int b = 0; b < N; ++b) row += G[qb][b] * cplx(pr[b], pi_[b]);
        s += F[qa][a] * row;
      }
      return s;
    };
  }

  void run(const GevreyBump& chi) {
    int L = g_.L, N = L / 2 + 1;
    size_t NN = static_cast<size_t>(N) * N;
    double beta = p_.beta();
    std::vector<double> ck(N);
    for (int a = 0; a < N; ++a) ck[a] = std::cos(2 * pi * a / L);
    std::vector<double> e(NN);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) e[static_cast<size_t>(a) * N + b] = p_.mu0 - ck[a] - ck[b];

    std::optional<detail::InfraredTable> ir;
    if (ir_ >= 0) ir.emplace(p_, ir_, e, chi);

    auto alloc = [&] { return static_cast<double*>(fftw_malloc(sizeof(double) * NN)); };
    struct Free {
      void operator()(double* p) const { fftw_free(p); }
    };
    std::unique_ptr<double, Free> ia(alloc()), ib(alloc()), oa(alloc()), ob(alloc());
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lk(detail::fftw_plan_mutex());
      plan = fftw_plan_r2r_2d(N, N, ia.get(), oa.get(), FFTW_REDFT00, FFTW_REDFT00, FFTW_ESTIMATE);
    }
    sre_.assign(k0s_.size(), std::vector<double>(NN, 0.0));
    sim_ = sre_;
    auto rule = half_tau_rule(beta, g_);
    tau_count_ = 2 * rule.x.size();
    double inv = 1.0 / (static_cast<double>(L) * L);
    for (size_t i = 0; i < rule.x.size(); ++i) {
      double t1 = rule.x[i], t2 = beta - t1, w = rule.w[i];
      double *A = ia.get(), *B = ib.get();
      for (size_t q = 0; q < NN; ++q) A[q] = tau_propagator(t1, e[q], beta), B[q] = tau_propagator(t2, e[q], beta);
      if (ir) ir->subtract(t1, A, B);
      fftw_execute_r2r(plan, A, oa.get());
      fftw_execute_r2r(plan, B, ob.get());
      const double *X = oa.get(), *Y = ob.get();
      std::vector<double> c1(k0s_.size()), s1(c1), c2(c1), s2(c1);
      for (size_t m = 0; m < k0s_.size(); ++m) {
        c1[m] = w * std::cos(k0s_[m] * t1), s1[m] = w * std::sin(k0s_[m] * t1);
        c2[m] = w * std::cos(k0s_[m] * t2), s2[m] = w * std::sin(k0s_[m] * t2);
      }
      for (size_t q = 0; q < NN; ++q) {
        double x = X[q] * inv, y = Y[q] * inv;
        // C(-tau, -x) = -C(beta - tau, x); the lattice propagator is even in x
        double f1 = -x * x * y, f2 = -y * y * x;
        for (size_t m = 0; m < k0s_.size(); ++m) {
          sre_[m][q] += c1[m] * f1 + c2[m] * f2;
          sim_[m][q] -= s1[m] * f1 + s2[m] * f2;
        }
      }
    }
    std::lock_guard<std::mutex> lk(detail::fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }

  ModelParams p_;
  std::vector<double> k0s_;
  int ir_;
  SunsetGrid g_;
  double sign_;
  size_t tau_count_ = 0;
  std::vector<std::vector<double>> sre_, sim_;
};

// Oracle for small lattices: the tau integral done in closed form,
// Sigma^(k) = sign lambda^2 / L^4 sum_{p,q} (n_p n_q n~_r + n~_p n~_q n_r) / (e_p + e_q - e_r - i k0), r = p + q - k.
inline cplx sunset_closed_form(const ModelParams& p, int L, double k0, int k1, int k2, double sign = sunset_sign) {
  auto nf = [&](double e) { return e > 0 ? std::exp(-p.beta() * e) / (1 + std::exp(-p.beta() * e)) : 1 / (1 + std::exp(p.beta() * e)); };
  auto en = [&](int a, int b) { return p.mu0 - std::cos(2 * pi * a / L) - std::cos(2 * pi * b / L); };
  cplx s = 0;
  for (int a1 = 0; a1 < L; ++a1)
    for (int a2 = 0; a2 < L; ++a2)
      for (int b1 = 0; b1 < L; ++b1)
        for (int b2 = 0; b2 < L; ++b2) {
          double ep = en(a1, a2), eq = en(b1, b2), er = en(((a1 + b1 - k1) % L + L) % L, ((a2 + b2 - k2) % L + L) % L);
          double num = nf(ep) * nf(eq) * nf(-er) + nf(-ep) * nf(-eq) * nf(er);
          s += num / cplx(ep + eq - er, -k0);
        }
  return sign * p.lambda * p.lambda * s / std::pow(static_cast<double>(L), 4);
}

// Internal-scale slicing: Sigma^r = Sigma^{<=r} - Sigma^{<=r-1}, with Sigma^{<= jmax} the full sunset.
class SlicedSunset {
 public:
  SlicedSunset(const ModelParams& p, std::vector<double> k0s, SunsetGrid g = {})
      : p_(p) {
    int top = p.jmax();
    for (int r = 0; r < top; ++r) cut_.push_back(std::make_unique<Sunset>(p, k0s, r, g));
    cut_.push_back(std::make_unique<Sunset>(p, k0s, -1, g));
  }
  int r_max() const { return static_cast<int>(cut_.size()) - 1; }
  const Sunset& cumulative(int r) const { return *cut_.at(r); }
  const Sunset& full() const { return *cut_.back(); }

  cplx slice(int r, double k0, Vec2 k, Vec2 dir = {}, int order = 0) const {
    if (r < 1 || r > r_max()) throw InvalidParameter("slice index outside [1, r_max]");
    return cut_[r]->value(k0, k, dir, order) - cut_[r - 1]->value(k0, k, dir, order);
  }

 private:
  ModelParams p_;
  std::vector<std::unique_ptr<Sunset>> cut_;
};

// ---------------------------------------------------------------- localization and counter-terms

enum class LocalizationFrequency { two_pi_t, pi_t };

inline double localization_frequency(const ModelParams& p, LocalizationFrequency f = LocalizationFrequency::two_pi_t) {
  return f == LocalizationFrequency::two_pi_t ? 2 * pi * p.temperature : pi * p.temperature;
}

struct Localized {
  std::vector<cplx> local;      // Sigma at (k0_loc, P_F k)
  std::vector<cplx> remainder;  // Sigma(k) - local
};

struct LocalizationOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// sigma(k0, k) evaluated on the samples and at their localization points.
template <class Sigma>
Localized localize(Sigma&& sigma, const std::vector<Momentum>& samples, const ModelParams& p,
                   LocalizationFrequency f = LocalizationFrequency::two_pi_t) {
  Localized out;
  double kl = localization_frequency(p, f);
  for (auto& k : samples) {
    FermiPoint fp;
    try {
      fp = project_to_fs({k.kplus, k.kminus}, p);
    } catch (const InvalidParameter&) {
      throw LocalizationOutOfRange("sample too far from the Fermi surface to localize");
    }
    Vec2 pf{fp.kplus, fp.kminus};
    // a sample sitting on its own localization point is localized there verbatim
    bool self = k.k0 == kl && (pf - Vec2{k.kplus, k.kminus}).norm() <= 1e-12;
    if (self) pf = {k.kplus, k.kminus};
    cplx loc = sigma(kl, pf);
    cplx val = self ? loc : sigma(k.k0, Vec2{k.kplus, k.kminus});
    out.local.push_back(loc);
    out.remainder.push_back(val - loc);
  }
  return out;
}

// nu^r(k) = -tau Sigma^r(k), on Fermi-surface points; each sample keeps the value it cancels.
struct NuSample {
  Vec2 k;
  cplx tau_sigma;
  cplx nu;
};

inline std::vector<NuSample> nu_counterterm(const SlicedSunset& s, int r, const std::vector<Vec2>& fs_points,
                                            LocalizationFrequency f = LocalizationFrequency::two_pi_t) {
  std::vector<NuSample> out;
  double kl = localization_frequency(s.full().params(), f);
  for (auto& k : fs_points) {
    cplx t = s.slice(r, kl, k);
    out.push_back({k, t, -t});
  }
  return out;
}

struct PoleProximity : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// R(lambda, k) = C(k) [T(lambda) + delta mu + nu(k) + Sigma^(k)] at second order.
struct DressedSample {
  Momentum k;
  cplx ratio;
};

inline std::vector<DressedSample> dressed_ratio(const Sunset& full, double tadpole, double delta_mu,
                                                const std::vector<Momentum>& samples,
                                                LocalizationFrequency f = LocalizationFrequency::two_pi_t) {
  const auto& p = full.params();
  double kl = localization_frequency(p, f);
  std::vector<DressedSample> out;
  for (auto& k : samples) {
    cplx c = free_propagator(k, p);
    if (std::abs(c) > 1e12) throw PoleProximity("sample too close to the propagator pole");
    auto fp = project_to_fs({k.kplus, k.kminus}, p);
    cplx nu = -full.value(kl, {fp.kplus, fp.kminus});
    cplx sig = full.value(k.k0, {k.kplus, k.kminus});
    out.push_back({k, c * ((tadpole + delta_mu) + (sig + nu))});
  }
  return out;
}

// ---------------------------------------------------------------- studies

inline std::vector<Vec2> octant_samples(double mu0, int stride = 8) {
  const auto& tab = fermi_surface(mu0)->octant_table();
  std::vector<Vec2> out;
  for (size_t i = 0; i < tab.size(); i += stride) out.push_back(tab[i]);
  return out;
}

// Moves along the normal of the Fermi point until e0 equals the target.
inline Vec2 offset_to_level(Vec2 fermi, double e_target, double mu0) {
  Vec2 g = band_gradient(fermi.x, fermi.y);
  Vec2 n = g * (1 / g.norm());
  double s = e_target / g.norm();
  for (int it = 0; it < 50; ++it) {
    Vec2 k = fermi + n * s;
    double d = band_energy(k.x, k.y, mu0) - e_target;
    if (std::abs(d) < 1e-15) break;
    s -= d / band_gradient(k.x, k.y).dot(n);
  }
  return fermi + n * s;
}

struct ExternalSample {
  Momentum k;
  Vec2 fermi;
  int scale = 0;
};

// Momenta on the plateau of chi_r(k0^2 + e^2): t = sqrt2 gamma^{1-2r}, split between k0 and e.
inline std::vector<ExternalSample> external_samples(const ModelParams& p, int r, const std::vector<Vec2>& fs,
                                                    const GevreyBump& chi = make_bump()) {
  double t = std::sqrt(2.0) * std::pow(p.gamma, 1 - 2 * r);
  std::vector<double> k0s{matsubara(p.temperature, 0)};
  long n = std::lround(std::sqrt(t / 2) / (2 * pi * p.temperature) - 0.5);
  if (n > 0) k0s.push_back(matsubara(p.temperature, n));
  std::vector<ExternalSample> out;
  for (double k0 : k0s) {
    if (k0 * k0 >= t) continue;
    double e = std::sqrt(t - k0 * k0);
    for (auto& f : fs)
      for (int sg : {-1, 1}) {
        Vec2 k = offset_to_level(f, sg * e, p.mu0);
        double ee = band_energy(k.x, k.y, p.mu0);
        if (chi_j(k0 * k0 + ee * ee, r, chi, p.gamma) != 1.0) continue;
        out.push_back({{k0, k.x, k.y}, f, r});
      }
  }
  return out;
}

struct SliceRow {
  int r = 0;
  double sup = 0;          // sup over Fermi points of |Sigma^r(pi T, k)|
  double bound_ratio = 0;  // sup / (lambda^2 r gamma^-r)
  double d1 = 0;           // sup of first k-derivatives
  double d1_ratio = 0;     // d1 / (lambda^2 r)
  double nu_sup = 0;       // sup |nu^{<= r}|
  double nu_ratio = 0;     // nu_sup / (lambda^2 r gamma^-r)
  double nu_fd1 = 0, nu_fd2 = 0;  // arc finite differences of nu^{<= r} at the face centre
};

struct GainRow {
  int r_external = 0, r_internal = 0;
  double remainder_sup = 0, sigma_sup = 0, ratio = 0;
  double ratio_alt = 0;  // same with the other localization frequency
};

struct SelfEnergyStudy {
  ModelParams params;
  int lattice = 0;
  size_t tau_nodes = 0;
  std::vector<SliceRow> slices;
  std::vector<GainRow> gains;
  double band = 0;  // max/min of bound_ratio over r
  Regression d1_fit;
  bool nu_cancels = true;
  bool remainder_zero = true;
  bool gain_below_one = true;
  double max_gain_above = 0;      // largest ratio with r_external > r_internal
  double max_gain_above_alt = 0;  // same with the other localization frequency
  LocalizationFrequency localization = LocalizationFrequency::two_pi_t;
};

inline SelfEnergyStudy self_energy_study(const ModelParams& p, SunsetGrid g = {},
                                         LocalizationFrequency lf = LocalizationFrequency::two_pi_t) {
  SelfEnergyStudy st;
  st.params = p;
  st.localization = lf;
  auto alt = lf == LocalizationFrequency::two_pi_t ? LocalizationFrequency::pi_t : LocalizationFrequency::two_pi_t;
  auto fs = octant_samples(p.mu0);
  double T = p.temperature, l2 = p.lambda * p.lambda;
  int top = p.jmax();
  std::vector<std::vector<ExternalSample>> ext(top + 1);
  std::vector<double> k0s{pi * T, 2 * pi * T};
  for (int r = 1; r <= top; ++r) {
    ext[r] = external_samples(p, r, {fs[0], fs[3], fs[6], fs[9], fs[12]});
    for (auto& e : ext[r])
      if (std::find(k0s.begin(), k0s.end(), e.k.k0) == k0s.end()) k0s.push_back(e.k.k0);
  }
  SlicedSunset s(p, k0s, g);
  st.lattice = s.full().lattice();
  st.tau_nodes = s.full().tau_nodes();
  double kl = localization_frequency(p, lf);

  auto fsh = fermi_surface(p.mu0);
  double h = 0.05;
  std::array<Vec2, 3> arc{fsh->on_ray(pi / 2 + h), fsh->on_ray(pi / 2), fsh->on_ray(pi / 2 - h)};
  double ds = 0.5 * ((arc[0] - arc[1]).norm() + (arc[2] - arc[1]).norm());

  std::vector<double> xr, yr;
  for (int r = 1; r <= s.r_max(); ++r) {
    SliceRow row;
    row.r = r;
    for (auto& k : fs) {
      row.sup = std::max(row.sup, std::abs(s.slice(r, pi * T, k)));
      row.d1 = std::max({row.d1, std::abs(s.slice(r, pi * T, k, {1, 0}, 1)), std::abs(s.slice(r, pi * T, k, {0, 1}, 1))});
    }
    double unit = l2 * r * std::pow(p.gamma, -r);
    row.bound_ratio = row.sup / unit;
    row.d1_ratio = row.d1 / (l2 * r);
    xr.push_back(r * std::log(p.gamma));
    yr.push_back(std::log(row.d1_ratio));

    auto nu = nu_counterterm(s, r, fs, lf);
    for (auto& v : nu) st.nu_cancels = st.nu_cancels && v.nu + v.tau_sigma == cplx(0.0);
    const Sunset& cum = s.cumulative(r);
    for (auto& k : fs) row.nu_sup = std::max(row.nu_sup, std::abs(cum.value(kl, k)));
    row.nu_ratio = row.nu_sup / unit;
    cplx a = -cum.value(kl, arc[0]), b = -cum.value(kl, arc[1]), c = -cum.value(kl, arc[2]);
    row.nu_fd1 = std::abs(a - c) / (2 * ds);
    row.nu_fd2 = std::abs(a - 2.0 * b + c) / (ds * ds);
    st.slices.push_back(row);
  }
  double lo = 1e300, hi = 0;
  for (auto& r : st.slices) lo = std::min(lo, r.bound_ratio), hi = std::max(hi, r.bound_ratio);
  st.band = hi / lo;
  if (xr.size() >= 2) st.d1_fit = ols(xr, yr);

  // remainder at the localization points themselves
  std::vector<Momentum> at_loc;
  for (auto& k : fs) at_loc.push_back({kl, k.x, k.y});
  for (int r = 1; r <= s.r_max(); ++r) {
    auto loc = localize([&](double k0, Vec2 k) { return s.slice(r, k0, k); }, at_loc, p, lf);
    for (auto& v : loc.remainder) st.remainder_zero = st.remainder_zero && v == cplx(0.0);
  }

  for (int re = 1; re <= top; ++re) {
    if (ext[re].empty()) continue;
    std::vector<Momentum> ks;
    for (auto& e : ext[re]) ks.push_back(e.k);
    for (int rr = 1; rr <= s.r_max(); ++rr) {
      auto sig = [&](double k0, Vec2 k) { return s.slice(rr, k0, k); };
      auto loc = localize(sig, ks, p, lf);
      auto other = localize(sig, ks, p, alt);
      GainRow gr{re, rr, 0, 0, 0, 0};
      double other_sup = 0;
      for (size_t i = 0; i < ks.size(); ++i) {
        gr.remainder_sup = std::max(gr.remainder_sup, std::abs(loc.remainder[i]));
        gr.sigma_sup = std::max(gr.sigma_sup, std::abs(loc.remainder[i] + loc.local[i]));
        other_sup = std::max(other_sup, std::abs(other.remainder[i]));
      }
      gr.ratio = gr.remainder_sup / gr.sigma_sup;
      gr.ratio_alt = other_sup / gr.sigma_sup;
      if (re > rr) {
        st.max_gain_above = std::max(st.max_gain_above, gr.ratio);
        st.max_gain_above_alt = std::max(st.max_gain_above_alt, gr.ratio_alt);
        st.gain_below_one = st.gain_below_one && gr.ratio < 1;
      }
      st.gains.push_back(gr);
    }
  }
  return st;
}

inline AmplitudeReport self_energy_report(const SelfEnergyStudy& st) {
  AmplitudeReport r;
  r.quantity = AmplitudeKind::self_energy;
  for (auto& row : st.slices) {
    r.per_scale[row.r] = row.sup;
    r.bound_ratios[row.r] = row.bound_ratio;
  }
  r.fitted_exponent = st.d1_fit.slope;
  r.metadata = {{"mu0", st.params.mu0}, {"T", st.params.temperature}, {"lambda", st.params.lambda}, {"gamma", st.params.gamma},
                {"lattice", st.lattice}, {"tau_nodes", static_cast<double>(st.tau_nodes)}, {"band", st.band}};
  return r;
}

inline AmplitudeReport nu_report(const SelfEnergyStudy& st) {
  AmplitudeReport r;
  r.quantity = AmplitudeKind::counterterm_nu;
  double sup = 0;
  for (auto& row : st.slices) {
    r.per_scale[row.r] = row.nu_sup;
    r.bound_ratios[row.r] = row.nu_ratio;
    sup = std::max(sup, row.nu_sup);
  }
  r.metadata = {{"mu0", st.params.mu0}, {"T", st.params.temperature}, {"lambda", st.params.lambda},
                {"sup_nu_over_lambda", sup / std::abs(st.params.lambda)}};
  return r;
}

struct CurvaturePoint {
  double T = 0;
  int lattice = 0;
  double lambda = 0;
  double sup_d2 = 0;        // sup over Fermi points and (mu, nu) of |d^2 Sigma^| / lambda^2
  double face_d2 = 0;       // |d^2/dk-^2 Sigma^| / lambda^2 at the face centre
  double dressed_sup = 0;   // sup |R| / |lambda| near the Fermi surface
  double dressed_at_loc = 0;  // sup |R| at the localization points
};

struct CurvatureSweep {
  std::vector<CurvaturePoint> points;
  Regression fit;               // log sup_d2 against log 1/T
  double lattice_change = 0;    // relative change of sup_d2 at the lowest T under L -> L/2
};

// Second k-derivative of the full sunset at k0 = pi T across temperatures; lambda is set to half the
// analyticity radius at each T (C1 = C2 = 1) for the dressed ratio.
inline CurvatureSweep curvature_sweep(const ModelParams& base, const std::vector<double>& Ts, SunsetGrid g = {},
                                      bool check_lattice = true) {
  CurvatureSweep out;
  auto fs = octant_samples(base.mu0);
  auto sup_d2 = [&](const Sunset& s, double T) {
    double m = 0;
    for (auto& k : fs)
      for (auto& v : s.hessian(pi * T, k)) m = std::max(m, std::abs(v));
    return m;
  };
  std::vector<double> x, y;
  for (double T : Ts) {
    ModelParams p = base;
    p.temperature = T;
    p.lambda = 0.5 * lambda_max(T, p.mu0, {});
    SunsetGrid gg = g;
    gg.L = g.L ? g.L : auto_lattice(T);
    Sunset s(p, {pi * T, 2 * pi * T}, -1, gg);
    CurvaturePoint cp;
    cp.T = T;
    cp.lattice = s.lattice();
    cp.lambda = p.lambda;
    double l2 = p.lambda * p.lambda;
    cp.sup_d2 = sup_d2(s, T) / l2;
    cp.face_d2 = std::abs(s.value(pi * T, fs[0], {0, 1}, 2)) / l2;

    auto flow = delta_mu_flow(p, p.jmax());
    double tad = flow.tadpole_cum.back(), dmu = flow.delta_mu_cum.back();
    std::vector<Momentum> near, loc;
    for (auto& f : {fs[0], fs[6], fs[12]})
      for (int sg : {-1, 1}) {
        Vec2 k = offset_to_level(f, sg * pi * T, p.mu0);
        near.push_back({pi * T, k.x, k.y});
      }
    for (auto& d : dressed_ratio(s, tad, dmu, near)) cp.dressed_sup = std::max(cp.dressed_sup, std::abs(d.ratio) / p.lambda);
    for (auto& f : fs) loc.push_back({2 * pi * T, f.x, f.y});
    for (auto& d : dressed_ratio(s, tad, dmu, loc)) cp.dressed_at_loc = std::max(cp.dressed_at_loc, std::abs(d.ratio));
    out.points.push_back(cp);
    x.push_back(std::log(1 / T));
    y.push_back(std::log(cp.sup_d2));
  }
  if (x.size() >= 2) out.fit = ols(x, y);
  if (check_lattice && !Ts.empty()) {
    auto it = std::min_element(Ts.begin(), Ts.end());
    ModelParams p = base;
    p.temperature = *it;
    p.lambda = 0.5 * lambda_max(*it, p.mu0, {});
    SunsetGrid gg = g;
    gg.L = (g.L ? g.L : auto_lattice(*it)) / 2;
    Sunset s(p, {pi * *it}, -1, gg);
    double coarse = sup_d2(s, *it) / (p.lambda * p.lambda);
    double fine = out.points[static_cast<size_t>(it - Ts.begin())].sup_d2;
    out.lattice_change = std::abs(coarse - fine) / fine;
  }
  return out;
}

// One renormalized self-energy insertion on a tadpole line,
// lambda T sum_k0 L^-2 sum_k chi(t) C(k)^2 [Sigma^(k) + nu(k)], truncated at |k0| <= 2 pi T n_freq.
inline cplx generalized_tadpole(const ModelParams& p, int L, int n_freq, const GevreyBump& chi = make_bump()) {
  double T = p.temperature;
  std::vector<double> k0s;
  for (int n = 0; n < n_freq; ++n) k0s.push_back(matsubara(T, n));
  double kl = localization_frequency(p);
  k0s.push_back(kl);
  Sunset s(p, k0s, -1, SunsetGrid{L});
  auto fsh = fermi_surface(p.mu0);
  int N = L / 2 + 1;
  cplx acc = 0;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      double m = (a == 0 || a == N - 1 ? 1 : 2) * (b == 0 || b == N - 1 ? 1 : 2);
      double k1 = 2 * pi * a / L, k2 = 2 * pi * b / L;
      double e = band_energy_original(k1, k2, p.mu0);
      if (std::abs(e) >= 1.5) continue;
      Vec2 k = rotate(k1, k2);
      auto fp = fsh->project(k, false, 1.5);
      cplx nu = -s.value(kl, {fp.kplus, fp.kminus});
      for (int n = 0; n < n_freq; ++n) {
        double k0 = k0s[n], w = chi(k0 * k0 + e * e);
        if (w == 0.0) continue;
        cplx c = free_propagator(k0, e), sg = s.value(k0, k);
        // at -k0 both C and Sigma^ are conjugated, nu is not
        acc += m * w * (c * c * (sg + nu) + std::conj(c * c) * (std::conj(sg) + nu));
      }
    }
  return p.lambda * T * acc / (static_cast<double>(L) * L);
}

}  // namespace hrg
