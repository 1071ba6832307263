#pragma once

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "cutoffs.hpp"
#include "quadrature.hpp"
#include "sectors.hpp"

namespace hrg {

struct QuadratureNotConverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GridTooSmall : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Label-level sectorized propagator: C(k) chi_j(t) times the folded window weight of sector s at
// the quasi-momentum of k.
inline cplx sectorized_propagator_k(const Momentum& k, const SectorIndex& s, const SectorClassifier& cls) {
  double weight = 0;
  for (auto& m : cls.memberships(k))
    if (m.sector == s) weight += m.weight;
  if (weight == 0.0) return 0.0;
  return weight * free_propagator(k, cls.params());
}

struct SliceGrid {
  int gauss_nodes = 24;       // per momentum panel
  double x_extent = 24.0;     // half-width in units of gamma^{s+-}
  int x_points = 129;         // per spatial axis (odd, centred on 0)
  int x0_points = 512;        // FFT length over one period beta
  bool check_convergence = true;
};

struct DecayFit {
  double c = 0;
  double alpha = 0;
  double log_n = 0;
  double rms = 0;
};

struct PropagatorSlice {
  SectorIndex sector;
  double temperature = 0;
  std::vector<double> x0, xplus, xminus;
  // values[(i0 * nplus + ip) * nminus + im]
  std::vector<cplx> values;
  double sup_norm = 0;
  double l1_norm = 0;
  double decay_length_plus = 0;
  double decay_length_minus = 0;
  double decay_length_x0 = 0;
  double origin_value_direct = 0;  // T sum_k0 int d2k/(2pi)^2 of the sliced propagator, no grid
  double convergence_change = 0;   // relative change of the sup under node doubling
  DecayFit decay_fit;

  cplx at(size_t i0, size_t ip, size_t im) const { return values[(i0 * xplus.size() + ip) * xminus.size() + im]; }
};

namespace detail {

inline std::vector<double> window_breaks(int s, int j, double g) {
  if (s == j) {
    double a = std::pow(g, -j);
    return {-std::sqrt(2.0) * a, -a, -0.5 * a, 0.0, 0.5 * a, a, std::sqrt(2.0) * a};
  }
  double lo = std::pow(g, -s - 1), hi = std::pow(g, -s);
  std::vector<double> pos{lo, std::sqrt(2.0) * lo, std::sqrt(lo * hi), hi, std::sqrt(2.0) * hi};
  std::vector<double> out;
  for (auto it = pos.rbegin(); it != pos.rend(); ++it) out.push_back(-*it);
  out.push_back(0.0);  // gap (-lo, lo) is skipped below
  for (double v : pos) out.push_back(v);
  return out;
}

inline QuadRule window_rule(int s, int j, double g, int n) {
  auto br = window_breaks(s, j, g);
  if (s == j) return composite_gauss(br, n);
  QuadRule q;
  for (size_t k = 0; k + 1 < br.size(); ++k) {
    if (br[k] == 0.0 || br[k + 1] == 0.0) continue;
    QuadRule p = composite_gauss({br[k], br[k + 1]}, n);
    q.x.insert(q.x.end(), p.x.begin(), p.x.end());
    q.w.insert(q.w.end(), p.w.begin(), p.w.end());
  }
  return q;
}

inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

// The single-sector piece anchored at the face centre k_F = (0, k*): q = k - k_F, windows on q+^2, q-^2.
class AnchoredSector {
 public:
  AnchoredSector(SectorIndex s, ModelParams p, int nodes, GevreyBump bump = make_bump())
      : s_(s), p_(p), chi_(bump) {
    kf_ = face_center(p.mu0);
    qp_ = detail::window_rule(s.splus, s.j, p.gamma, nodes);
    qm_ = detail::window_rule(s.sminus, s.j, p.gamma, nodes);
    double kmax = std::sqrt(2.0) * std::pow(p.gamma, -s.j + 1);
    long nmax = static_cast<long>(std::ceil(kmax / (2 * pi * p.temperature))) + 1;
    for (long n = -nmax; n < nmax; ++n) {
      double k0 = matsubara(p.temperature, n);
      if (std::abs(k0) <= kmax) freq_.push_back(n);
    }
  }

  const QuadRule& rule_plus() const { return qp_; }
  const QuadRule& rule_minus() const { return qm_; }
  const std::vector<long>& frequencies() const { return freq_; }

  double window_product(double qp, double qm) const {
    return sector_window(qp * qp, s_.splus, s_.j, chi_, p_.gamma) * sector_window(qm * qm, s_.sminus, s_.j, chi_, p_.gamma);
  }

  cplx value(double k0, double qp, double qm) const {
    double e = band_energy(kf_.x + qp, kf_.y + qm, p_.mu0);
    double cj = chi_j(k0 * k0 + e * e, s_.j, chi_, p_.gamma);
    if (cj == 0.0) return 0.0;
    double w = window_product(qp, qm);
    if (w == 0.0) return 0.0;
    return cj * w * free_propagator(k0, e);
  }

  // T sum_n int dk+ dk- / (2 (2pi)^2) of the piece: its direct-space value at the origin.
  cplx origin_value() const {
    cplx acc = 0;
    for (size_t a = 0; a < qp_.x.size(); ++a)
      for (size_t b = 0; b < qm_.x.size(); ++b) {
        cplx f = 0;
        for (long n : freq_) f += value(matsubara(p_.temperature, n), qp_.x[a], qm_.x[b]);
        acc += qp_.w[a] * qm_.w[b] * f;
      }
    return p_.temperature * acc / (2 * 4 * pi * pi);
  }

  cplx point_value(double x0, double xp, double xm) const {
    cplx acc = 0;
    for (size_t a = 0; a < qp_.x.size(); ++a)
      for (size_t b = 0; b < qm_.x.size(); ++b) {
        cplx f = 0;
        for (long n : freq_) {
          double k0 = matsubara(p_.temperature, n);
          f += std::polar(1.0, k0 * x0) * value(k0, qp_.x[a], qm_.x[b]);
        }
        acc += qp_.w[a] * qm_.w[b] * std::polar(1.0, qp_.x[a] * xp + qm_.x[b] * xm) * f;
      }
    return p_.temperature * acc / (2 * 4 * pi * pi);
  }

  const SectorIndex& sector() const { return s_; }
  const ModelParams& params() const { return p_; }

 private:
  SectorIndex s_;
  ModelParams p_;
  GevreyBump chi_;
  Vec2 kf_;
  QuadRule qp_, qm_;
  std::vector<long> freq_;
};

inline PropagatorSlice direct_space_slice(const SectorIndex& s, const SliceGrid& grid, const ModelParams& p) {
  if (!s.admissible()) throw InvalidParameter("slice requested for a non-admissible sector");
  if (grid.x_extent < 3.0) throw GridTooSmall("spatial extent must cover at least 3 decay lengths");
  if (p.beta() < 3 * std::pow(p.gamma, s.j)) throw GridTooSmall("beta must cover at least 3 decay lengths in x0");
  if (grid.x_points < 5 || grid.x0_points < 16) throw GridTooSmall("too few grid points");

  AnchoredSector piece(s, p, grid.gauss_nodes);
  const QuadRule& qp = piece.rule_plus();
  const QuadRule& qm = piece.rule_minus();
  const auto& freq = piece.frequencies();
  const int N = grid.x0_points;
  if (static_cast<int>(freq.size()) >= N) throw GridTooSmall("x0 grid shorter than the Matsubara support");
  const double T = p.temperature, beta = p.beta();
  const size_t np = qp.x.size(), nm = qm.x.size();

  PropagatorSlice out;
  out.sector = s;
  out.temperature = T;
  for (int m = -N / 2; m < N / 2; ++m) out.x0.push_back(m * beta / N);
  auto axis = [&](int sidx) {
    std::vector<double> v;
    double half = grid.x_extent * std::pow(p.gamma, sidx);
    int n = grid.x_points | 1;
    for (int i = 0; i < n; ++i) v.push_back(-half + 2 * half * i / (n - 1));
    return v;
  };
  out.xplus = axis(s.splus);
  out.xminus = axis(s.sminus);
  const size_t nxp = out.xplus.size(), nxm = out.xminus.size();

  // Step 1: g(x0_m; q) = T sum_n e^{i k0 x0_m} C(k0, q) by an FFT over n mod N.
  // x0_m = m beta/N, so e^{i k0 x0} = e^{i pi m/N} e^{2 pi i n m/N}.
  Eigen::MatrixXcd G(N, np * nm);
  {
    fftw_complex* buf = fftw_alloc_complex(N);
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lk(detail::fftw_plan_mutex());
      plan = fftw_plan_dft_1d(N, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    for (size_t a = 0; a < np; ++a)
      for (size_t b = 0; b < nm; ++b) {
        std::fill(reinterpret_cast<double*>(buf), reinterpret_cast<double*>(buf) + 2 * N, 0.0);
        for (long n : freq) {
          cplx v = piece.value(matsubara(T, n), qp.x[a], qm.x[b]);
          long bin = ((n % N) + N) % N;
          buf[bin][0] += v.real();
          buf[bin][1] += v.imag();
        }
        fftw_execute_dft(plan, buf, buf);
        for (int i = 0; i < N; ++i) {
          int m = i - N / 2;
          int bin = ((m % N) + N) % N;
          cplx ph = std::polar(1.0, pi * m / N);
          G(i, a * nm + b) = T * ph * cplx(buf[bin][0], buf[bin][1]);
        }
      }
    {
      std::lock_guard<std::mutex> lk(detail::fftw_plan_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(buf);
  }

  // Step 2: sum over q- against e^{i q- x-}; step 3: sum over q+ against e^{i q+ x+}.
  // The common phase e^{i k_F . x} has unit modulus and is left out.
  Eigen::MatrixXcd Em(nm, nxm), Ep(np, nxp);
  for (size_t b = 0; b < nm; ++b)
    for (size_t i = 0; i < nxm; ++i) Em(b, i) = qm.w[b] * std::polar(1.0, qm.x[b] * out.xminus[i]);
  for (size_t a = 0; a < np; ++a)
    for (size_t i = 0; i < nxp; ++i) Ep(a, i) = qp.w[a] * std::polar(1.0, qp.x[a] * out.xplus[i]);

  // H[(x0, x-), q+]
  Eigen::MatrixXcd H(static_cast<Eigen::Index>(N) * nxm, np);
  for (size_t a = 0; a < np; ++a) {
    Eigen::MatrixXcd blk = G.middleCols(a * nm, nm) * Em;  // N x nxm
    for (int i = 0; i < N; ++i)
      for (size_t im = 0; im < nxm; ++im) H(static_cast<Eigen::Index>(i) * nxm + im, a) = blk(i, im);
  }
  Eigen::MatrixXcd C = H * Ep;  // (N*nxm) x nxp
  const double norm = 1.0 / (2 * 4 * pi * pi);
  out.values.resize(static_cast<size_t>(N) * nxp * nxm);
  for (int i = 0; i < N; ++i)
    for (size_t ip = 0; ip < nxp; ++ip)
      for (size_t im = 0; im < nxm; ++im)
        out.values[(i * nxp + ip) * nxm + im] = norm * C(static_cast<Eigen::Index>(i) * nxm + im, ip);

  // norms
  double sup = 0;
  for (auto& v : out.values) sup = std::max(sup, std::abs(v));
  out.sup_norm = sup;
  double dx0 = beta / N, dxp = out.xplus[1] - out.xplus[0], dxm = out.xminus[1] - out.xminus[0];
  KahanSum l1;
  for (int i = 0; i < N; ++i)
    for (size_t ip = 0; ip < nxp; ++ip) {
      double wp = (ip == 0 || ip + 1 == nxp) ? 0.5 : 1.0;
      for (size_t im = 0; im < nxm; ++im) {
        double wm = (im == 0 || im + 1 == nxm) ? 0.5 : 1.0;
        l1.add(wp * wm * std::abs(out.values[(i * nxp + ip) * nxm + im]));
      }
    }
  // one lattice site occupies area 2 in (x+, x-)
  out.l1_norm = 2 * l1.value() * dx0 * dxp * dxm;
  out.origin_value_direct = piece.origin_value().real();

  // Richardson-style check: the maximum re-evaluated with doubled nodes per momentum panel.
  if (grid.check_convergence) {
    size_t arg = 0;
    for (size_t i = 0; i < out.values.size(); ++i)
      if (std::abs(out.values[i]) > std::abs(out.values[arg])) arg = i;
    size_t im = arg % nxm, ip = (arg / nxm) % nxp, i0 = arg / (nxm * nxp);
    AnchoredSector fine(s, p, 2 * grid.gauss_nodes);
    double ref = std::abs(fine.point_value(out.x0[i0], out.xplus[ip], out.xminus[im]));
    out.convergence_change = std::abs(ref - out.sup_norm) / ref;
    if (out.convergence_change > 5e-3) throw QuadratureNotConverged("sup norm moved by more than 0.5% under node doubling");
  }
  return out;
}

// Marginal sup-profiles P(x) = max |C| over the other two coordinates; the decay length on an
// axis is the largest |x| where P still reaches eps * sup.
inline void measure_decay_lengths(PropagatorSlice& s, double eps) {
  size_t n0 = s.x0.size(), np = s.xplus.size(), nm = s.xminus.size();
  std::vector<double> p0(n0, 0.0), pp(np, 0.0), pm(nm, 0.0);
  for (size_t i = 0; i < n0; ++i)
    for (size_t a = 0; a < np; ++a)
      for (size_t b = 0; b < nm; ++b) {
        double v = std::abs(s.at(i, a, b));
        p0[i] = std::max(p0[i], v);
        pp[a] = std::max(pp[a], v);
        pm[b] = std::max(pm[b], v);
      }
  double thr = eps * s.sup_norm;
  auto length = [&](const std::vector<double>& prof, const std::vector<double>& x) {
    double l = 0;
    for (size_t i = 0; i < x.size(); ++i)
      if (prof[i] >= thr) l = std::max(l, std::abs(x[i]));
    return l;
  };
  s.decay_length_x0 = length(p0, s.x0);
  s.decay_length_plus = length(pp, s.xplus);
  s.decay_length_minus = length(pm, s.xminus);
  if (s.decay_length_plus >= 0.95 * s.xplus.back() || s.decay_length_minus >= 0.95 * s.xminus.back())
    throw GridTooSmall("decay length reaches the edge of the spatial grid");
}

// Fit log|C| = log N - c d^alpha over grid points above eps * sup, with
// d = gamma^-j |x0| + gamma^-s+ |x+| + gamma^-s- |x-|.  alpha by golden search.
inline DecayFit fit_decay(const PropagatorSlice& s, double gamma, double eps = 1e-6) {
  std::vector<double> d, y;
  double a0 = std::pow(gamma, -s.sector.j), ap = std::pow(gamma, -s.sector.splus), am = std::pow(gamma, -s.sector.sminus);
  // upper envelope: per distance bin keep the largest |C|
  const int bins = 60;
  double dmax = 0;
  for (size_t i = 0; i < s.x0.size(); ++i)
    for (size_t ip = 0; ip < s.xplus.size(); ++ip)
      for (size_t im = 0; im < s.xminus.size(); ++im)
        dmax = std::max(dmax, a0 * std::abs(s.x0[i]) + ap * std::abs(s.xplus[ip]) + am * std::abs(s.xminus[im]));
  std::vector<double> env(bins, 0.0);
  for (size_t i = 0; i < s.x0.size(); ++i)
    for (size_t ip = 0; ip < s.xplus.size(); ++ip)
      for (size_t im = 0; im < s.xminus.size(); ++im) {
        double dd = a0 * std::abs(s.x0[i]) + ap * std::abs(s.xplus[ip]) + am * std::abs(s.xminus[im]);
        int b = std::min(bins - 1, static_cast<int>(dd / dmax * bins));
        env[b] = std::max(env[b], std::abs(s.at(i, ip, im)));
      }
  for (int b = 0; b < bins; ++b) {
    if (env[b] < eps * s.sup_norm || env[b] <= 0) continue;
    d.push_back((b + 0.5) * dmax / bins);
    y.push_back(std::log(env[b]));
  }
  auto lsq = [&](double alpha, DecayFit& f) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = static_cast<double>(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
      double x = std::pow(d[i], alpha);
      sx += x, sy += y[i], sxx += x * x, sxy += x * y[i];
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double icpt = (sy - slope * sx) / n;
    double r = 0;
    for (size_t i = 0; i < d.size(); ++i) {
      double e = y[i] - (icpt + slope * std::pow(d[i], alpha));
      r += e * e;
    }
    f = {-slope, alpha, icpt, std::sqrt(r / n)};
    return f.rms;
  };
  DecayFit best;
  if (d.size() < 4) return best;
  double lo = 0.1, hi = 1.5;
  for (int it = 0; it < 80; ++it) {
    DecayFit f1, f2;
    double m1 = lo + (hi - lo) * 0.382, m2 = lo + (hi - lo) * 0.618;
    if (lsq(m1, f1) < lsq(m2, f2))
      hi = m2;
    else
      lo = m1;
  }
  lsq(0.5 * (lo + hi), best);
  return best;
}

struct Regression {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

// OLS of y on x.
inline Regression ols(const std::vector<double>& x, const std::vector<double>& y) {
  size_t n = x.size();
  if (n < 2) throw InvalidParameter("regression needs at least two points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw InvalidParameter("regression abscissae have no spread");
  Regression r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  r.r2 = syy == 0 ? 1.0 : sxy * sxy / (sxx * syy);
  return r;
}

enum class ScalingTarget { supnorm, l1, decay_plus, decay_minus };

// Regress log(norm) on predicted-exponent * log(gamma); slope 1 means the bound's scaling.
inline Regression scaling_regression(const std::vector<PropagatorSlice>& slices, ScalingTarget target, double gamma) {
  std::vector<double> x, y;
  for (auto& s : slices) {
    const SectorIndex& q = s.sector;
    double pred = 0, val = 0;
    switch (target) {
      case ScalingTarget::supnorm:
        pred = -0.5 * q.two_l() - 1.5 * q.j + 0.5 * q.j0;
        val = s.sup_norm;
        break;
      case ScalingTarget::l1:
        pred = q.j;
        val = s.l1_norm;
        break;
      case ScalingTarget::decay_plus:
        pred = q.splus;
        val = s.decay_length_plus;
        break;
      case ScalingTarget::decay_minus:
        pred = q.sminus;
        val = s.decay_length_minus;
        break;
    }
    x.push_back(pred * std::log(gamma));
    y.push_back(std::log(val));
  }
  if (slices.size() < 4) throw InvalidParameter("insufficient span: need at least 4 slices");
  std::vector<double> ux = x;
  std::sort(ux.begin(), ux.end());
  ux.erase(std::unique(ux.begin(), ux.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), ux.end());
  if (ux.size() < 3) throw InvalidParameter("insufficient span: need 3 distinct exponents");
  return ols(x, y);
}

}  // namespace hrg
