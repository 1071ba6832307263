#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <numeric>
#include <ostream>
#include <vector>

#include "cutoffs.hpp"
#include "geometry.hpp"
#include "model.hpp"
#include "quadrature.hpp"
#include "rng.hpp"

namespace hrg {

struct SectorIndex {
  int j = 0;
  int splus = 0;
  int sminus = 0;
  int j0 = 0;

  // 2l = 2(s+ + s-) - 3j + j0, kept doubled so half-integers stay exact.
  int two_l() const { return 2 * (splus + sminus) - 3 * j + j0; }
  double depth() const { return 0.5 * two_l(); }
  int r() const { return (j + splus + sminus) / 2; }
  bool admissible() const {
    int lo = window_floor(j, j0);
    return splus >= lo && sminus >= lo && splus <= j && sminus <= j && two_l() >= 0;
  }
  auto operator<=>(const SectorIndex&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const SectorIndex& s) {
  return os << "(" << s.j << "," << s.splus << "," << s.sminus << ")";
}

struct Rational {
  long num = 0;
  long den = 1;
  double value() const { return static_cast<double>(num) / den; }
  bool operator==(const Rational&) const = default;
};

inline Rational make_rational(long n, long d) {
  long g = std::gcd(n, d);
  if (g == 0) g = 1;
  if (d < 0) g = -g;
  return {n / g, d / g};
}

struct DepthR {
  Rational l;
  int r;
};

inline DepthR depth_and_r(const SectorIndex& s) {
  if (!s.admissible()) throw InvalidParameter("depth requested for a non-admissible sector");
  return {make_rational(s.two_l(), 2), s.r()};
}

inline std::vector<SectorIndex> enumerate_sectors(int j, int j0) {
  if (j < 0) throw InvalidParameter("scale index must be >= 0");
  std::vector<SectorIndex> out;
  int lo = window_floor(j, j0);
  for (int a = lo; a <= j; ++a)
    for (int b = lo; b <= j; ++b) {
      SectorIndex s{j, a, b, j0};
      if (s.two_l() >= 0) out.push_back(s);
    }
  return out;
}

// Non-admissible window pairs are merged into the nearest admissible pair by raising the
// smaller index (s- on ties).
inline SectorIndex fold_to_admissible(SectorIndex s) {
  while (s.two_l() < 0) {
    if (s.splus < s.sminus)
      ++s.splus;
    else
      ++s.sminus;
  }
  return s;
}

struct Membership {
  SectorIndex sector;
  double weight = 0;  // chi_j(t) times the folded window product
};

struct RawActivation {
  int j;
  int splus;
  int sminus;
};

class SectorClassifier {
 public:
  explicit SectorClassifier(const ModelParams& p, GevreyBump bump = make_bump())
      : p_(p), ps_(bump, p.gamma, p.jmax(), p.j0()), fs_(fermi_surface(p.mu0)) {}

  const PartitionSet& partition() const { return ps_; }
  const ModelParams& params() const { return p_; }

  // Quasi-momentum q = k - P_F(k); zero when the projection is not needed.
  Vec2 quasi_momentum(Vec2 k) const {
    Vec2 z = to_zone(k.x, k.y);
    FermiPoint f = fs_->project(z, false, std::sqrt(2.0) + 1e-9);
    return {z.x - f.kplus, z.y - f.kminus};
  }

  std::vector<Membership> memberships(const Momentum& k) const {
    std::vector<Membership> out;
    double e = band_energy(k.kplus, k.kminus, p_.mu0);
    double t = k.k0 * k.k0 + e * e;
    bool have_q = false;
    Vec2 q;
    for (int j = 0; j <= ps_.jmax(); ++j) {
      double cj = ps_.chi_j(t, j);
      if (cj == 0.0) continue;
      int lo = window_floor(j, p_.j0());
      if (lo == j) {
        out.push_back({{j, j, j, p_.j0()}, cj});
        continue;
      }
      if (!have_q) q = quasi_momentum({k.kplus, k.kminus}), have_q = true;
      double rp = q.x * q.x, rm = q.y * q.y;
      std::vector<Membership> here;
      for (int a = lo; a <= j; ++a) {
        double va = ps_.completed(rp, a, j);
        if (va == 0.0) continue;
        for (int b = lo; b <= j; ++b) {
          double vb = ps_.completed(rm, b, j);
          if (vb == 0.0) continue;
          SectorIndex s = fold_to_admissible({j, a, b, p_.j0()});
          auto it = std::find_if(here.begin(), here.end(), [&](const Membership& m) { return m.sector == s; });
          if (it == here.end())
            here.push_back({s, cj * va * vb});
          else
            it->weight += cj * va * vb;
        }
      }
      std::sort(here.begin(), here.end(), [](const Membership& x, const Membership& y) { return x.sector < y.sector; });
      out.insert(out.end(), here.begin(), here.end());
    }
    return out;
  }

  std::vector<SectorIndex> classify(const Momentum& k) const {
    std::vector<SectorIndex> out;
    for (auto& m : memberships(k)) out.push_back(m.sector);
    return out;
  }

  // Window pairs with nonzero product before folding (for the constraint-consistency audit).
  std::vector<RawActivation> raw_activations(const Momentum& k) const {
    std::vector<RawActivation> out;
    double e = band_energy(k.kplus, k.kminus, p_.mu0);
    double t = k.k0 * k.k0 + e * e;
    Vec2 q{0, 0};
    bool have_q = false;
    for (int j = 0; j <= ps_.jmax(); ++j) {
      if (ps_.chi_j(t, j) == 0.0) continue;
      int lo = window_floor(j, p_.j0());
      if (lo == j) {
        out.push_back({j, j, j});
        continue;
      }
      if (!have_q) q = quasi_momentum({k.kplus, k.kminus}), have_q = true;
      for (int a = lo; a <= j; ++a)
        for (int b = lo; b <= j; ++b)
          if (ps_.completed(q.x * q.x, a, j) != 0.0 && ps_.completed(q.y * q.y, b, j) != 0.0) out.push_back({j, a, b});
    }
    return out;
  }

 private:
  ModelParams p_;
  PartitionSet ps_;
  std::shared_ptr<const FermiSurface> fs_;
};

inline std::vector<SectorIndex> classify_momentum(const Momentum& k, const ModelParams& p) {
  return SectorClassifier(p).classify(k);
}

// Per axis: the two smallest indices differ by at most one, or the smallest one equals its own
// scale and that scale is strictly the smallest of the four.
inline bool vertex_constraint(const std::array<SectorIndex, 4>& s) {
  auto axis_ok = [&](auto get) {
    std::array<int, 4> idx{0, 1, 2, 3};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return get(s[a]) < get(s[b]); });
    int a = idx[0], b = idx[1];
    if (get(s[b]) - get(s[a]) <= 1) return true;
    if (get(s[a]) != s[a].j) return false;
    for (int i = 0; i < 4; ++i)
      if (i != a && s[i].j <= s[a].j) return false;
    return true;
  };
  return axis_ok([](const SectorIndex& x) { return x.splus; }) && axis_ok([](const SectorIndex& x) { return x.sminus; });
}

inline double counting_sum(int j, int j0, const SectorIndex& sigma4, double gamma) {
  SectorIndex s4 = sigma4;
  s4.j0 = j0;
  if (s4.j != j || !s4.admissible()) throw InvalidParameter("sigma4 must be admissible at scale j");
  auto secs = enumerate_sectors(j, j0);
  KahanSum acc;
  for (auto& a : secs)
    for (auto& b : secs)
      for (auto& c : secs) {
        if (!vertex_constraint({a, b, c, s4})) continue;
        acc.add(std::pow(gamma, -(a.two_l() + b.two_l() + c.two_l()) / 8.0));
      }
  return acc.value();
}

struct ConservationReport {
  long accepted = 0;
  long trials = 0;
  long violations = 0;
  std::vector<std::array<SectorIndex, 4>> examples;
};

// Three momenta drawn near F0 in random shells 1..jmax with Matsubara frequencies from the shell
// support; the fourth closes the sum. Every combination of memberships is tested.
inline ConservationReport conservation_search(const SectorClassifier& cls, long quadruples, std::uint64_t seed,
                                              std::uint64_t stream = 0, int keep_examples = 5) {
  const ModelParams& p = cls.params();
  auto fs = fermi_surface(p.mu0);
  auto rng = case_rng(seed, stream);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int jmax = std::max(1, p.jmax());
  ConservationReport rep;
  std::array<std::vector<SectorIndex>, 4> c;
  while (rep.accepted < quadruples) {
    ++rep.trials;
    double sp = 0, sm = 0, s0 = 0;
    std::array<Momentum, 4> k;
    for (int i = 0; i < 3; ++i) {
      int j = 1 + static_cast<int>(uni(rng) * jmax);
      Vec2 f = fs->on_ray(2 * pi * uni(rng));
      Vec2 g = band_gradient(f.x, f.y);
      double rho = (2.8 * uni(rng) - 1.4) * std::pow(p.gamma, -j) / g.dot(g);
      long nmax = std::max(1L, static_cast<long>(std::sqrt(2.0) * std::pow(p.gamma, -j) / (2 * pi * p.temperature)));
      long n = static_cast<long>(std::floor(uni(rng) * 2 * nmax)) - nmax;
      Vec2 z = to_zone(f.x + rho * g.x, f.y + rho * g.y);
      k[i] = {matsubara(p.temperature, n), z.x, z.y};
      sp += z.x, sm += z.y, s0 += k[i].k0;
    }
    Vec2 z = to_zone(-sp, -sm);
    k[3] = {-s0, z.x, z.y};
    double e = band_energy(z.x, z.y, p.mu0);
    if (k[3].k0 * k[3].k0 + e * e > 2.0) continue;
    ++rep.accepted;
    for (int i = 0; i < 4; ++i) c[i] = cls.classify(k[i]);
    bool bad = false;
    for (auto& a : c[0]) {
      for (auto& b : c[1]) {
        for (auto& cc : c[2]) {
          for (auto& d : c[3]) {
            if (!vertex_constraint({a, b, cc, d})) {
              bad = true;
              if (static_cast<int>(rep.examples.size()) < keep_examples) rep.examples.push_back({a, b, cc, d});
              break;
            }
          }
          if (bad) break;
        }
        if (bad) break;
      }
      if (bad) break;
    }
    rep.violations += bad;
  }
  return rep;
}

}  // namespace hrg
