#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "model.hpp"

namespace hrg {

struct FermiPoint {
  double kplus = 0;
  double kminus = 0;
  Vec2 tangent;
  Vec2 normal;  // points towards increasing e0 (outwards)
  double curvature_radius = 0;
  double distance = 0;  // distance from the projected input point
};

struct DegeneratePoint : std::domain_error {
  using std::domain_error::domain_error;
};

struct AmbiguousProjection : std::runtime_error {
  FermiPoint first, second;
  AmbiguousProjection(FermiPoint a, FermiPoint b)
      : std::runtime_error("nearest Fermi point is not unique"), first(a), second(b) {}
};

// Level value L of the curve 2 cos(k+/2) cos(k-/2) = L: mu0 for F0, mu0 -/+ gamma^-j for the
// outer (+) / inner (-) shell boundaries.
inline double level_value(std::optional<int> j, int sign, const ModelParams& p) {
  if (!j) return p.mu0;
  return p.mu0 - sign * std::pow(p.gamma, -*j);
}

inline double curvature_radius_closed(double kp, double km, double level) {
  double cp = std::cos(kp / 2), sp = std::sin(kp / 2), cm = std::cos(km / 2), sm = std::sin(km / 2);
  double den = level * (sp * sp + sm * sm);
  if (std::abs(den) < 1e-14) throw DegeneratePoint("curvature denominator vanishes");
  return 4 * std::pow(cp * cp * sm * sm + sp * sp * cm * cm, 1.5) / den;
}

inline double curvature_radius(Vec2 p, std::optional<int> j, int sign, const ModelParams& params) {
  double L = level_value(j, sign, params);
  double res = 2 * std::cos(p.x / 2) * std::cos(p.y / 2) - L;
  if (std::abs(res) > 1e-10) throw InvalidParameter("point is not on the requested curve");
  return curvature_radius_closed(p.x, p.y, L);
}

// Face-center maximum and corner minimum of the radius on the curve with level L.
inline double r_max_closed(double L) { return 4 * std::sqrt(1 - L * L / 4) / L; }
inline double r_min_closed(double L) { return 2 * std::sqrt(L) * std::sqrt(1 - L / 2); }
// Corner minimum in the form printed alongside the maximum; it differs from the curve's value.
inline double r_min_printed(double L) { return 2 * std::sqrt(L) * std::sqrt(1 - L * L / 4); }

inline Vec2 face_center(double L) { return {0.0, 2 * std::acos(L / 2)}; }
inline Vec2 corner_point(double L) {
  double c = 2 * std::acos(std::sqrt(L / 2));
  return {c, c};
}

// Normal width of shell j at a point of F0, measured along the face the point belongs to.
inline double shell_width(Vec2 p, int j, const ModelParams& params) {
  if (j < 0) throw InvalidParameter("scale index must be >= 0");
  double along = std::min(std::abs(p.x), std::abs(p.y));
  double c2 = std::pow(std::cos(along / 2), 2) - params.mu0 * params.mu0 / 4;
  double g = std::pow(params.gamma, -j);
  double den = 2 * std::sqrt(std::max(c2, 0.0)) + 2 * std::sqrt(std::max(c2 + params.mu0 * g, 0.0));
  if (den < 1e-14) throw DegeneratePoint("shell width denominator vanishes");
  return g / den;
}

inline double chord_width(double R, double delta) {
  if (!(R > 0) || !(delta > 0)) throw InvalidParameter("chord width needs positive R and delta");
  return std::sqrt(R * delta);
}

struct ShellSpec {
  int j = 0;
  double inner_level = 0;  // 2cc on F0^{(j),-}
  double outer_level = 0;  // 2cc on F0^{(j),+}
  bool contains(double kp, double km) const {
    double v = 2 * std::cos(kp / 2) * std::cos(km / 2);
    return v >= outer_level && v <= inner_level;
  }
};

inline ShellSpec make_shell(int j, const ModelParams& p) {
  return {j, level_value(j, -1, p), level_value(j, +1, p)};
}

// Curvature radius from three traced points of the level set, Richardson-extrapolated.
inline double curvature_radius_fd(Vec2 p, double level, double h = 2e-3) {
  auto on_curve = [&](Vec2 x) {
    for (int it = 0; it < 50; ++it) {
      double f = 2 * std::cos(x.x / 2) * std::cos(x.y / 2) - level;
      Vec2 g{-std::sin(x.x / 2) * std::cos(x.y / 2), -std::cos(x.x / 2) * std::sin(x.y / 2)};
      double n2 = g.dot(g);
      x = x - g * (f / n2);
      if (std::abs(f) < 1e-16) break;
    }
    return x;
  };
  auto circum = [&](double hh) {
    Vec2 g = band_gradient(p.x, p.y);
    Vec2 t = Vec2{-g.y, g.x} * (1.0 / g.norm());
    Vec2 a = on_curve(p - t * hh), b = p, c = on_curve(p + t * hh);
    double ab = (a - b).norm(), bc = (b - c).norm(), ca = (c - a).norm();
    double area = std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)) / 2;
    return ab * bc * ca / (4 * area);
  };
  double r1 = circum(h), r2 = circum(h / 2);
  return (4 * r2 - r1) / 3;
}

// Fermi surface F0 in rotated coordinates, with a precomputed table over the fundamental
// octant 0 <= k+ <= k- (from the face centre (0, k*) to the corner).
class FermiSurface {
 public:
  explicit FermiSurface(double mu0, int table_size = 96) : mu0_(mu0) {
    if (!(mu0 > 0 && mu0 < 2)) throw InvalidParameter("mu0 out of range");
    table_.reserve(table_size + 1);
    for (int i = 0; i <= table_size; ++i) {
      // uniform in angle from the k- axis to the diagonal
      double phi = pi / 2 - (pi / 4) * i / table_size;
      table_.push_back(on_ray(phi));
    }
  }

  double mu0() const { return mu0_; }
  const std::vector<Vec2>& octant_table() const { return table_; }

  // Point of F0 on the ray at angle phi from the origin.
  Vec2 on_ray(double phi) const {
    double c = std::cos(phi), s = std::sin(phi);
    double lo = 0, hi = pi / std::max(std::abs(c), std::abs(s));
    auto f = [&](double r) { return 2 * std::cos(r * c / 2) * std::cos(r * s / 2) - mu0_; };
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      double mid = 0.5 * (lo + hi);
      (f(mid) > 0 ? lo : hi) = mid;
    }
    double r = 0.5 * (lo + hi);
    return {r * c, r * s};
  }

  FermiPoint make_point(Vec2 x, double dist = 0) const {
    Vec2 g = band_gradient(x.x, x.y);
    double n = g.norm();
    FermiPoint fp;
    fp.kplus = x.x;
    fp.kminus = x.y;
    fp.normal = g * (1 / n);
    fp.tangent = {-fp.normal.y, fp.normal.x};
    fp.curvature_radius = curvature_radius_closed(x.x, x.y, mu0_);
    fp.distance = dist;
    return fp;
  }

  // Nearest point of F0. Ties (equidistant within 1e-10) are reported when strict, otherwise
  // resolved in favour of the smaller |k+ - k-|, then the smaller k+, then the smaller k-.
  FermiPoint project(Vec2 k, bool strict = false, double max_abs_e = 1.0) const {
    Vec2 z = to_zone(k.x, k.y);
    double e = band_energy(z.x, z.y, mu0_);
    if (!(std::abs(e) < max_abs_e)) throw InvalidParameter("projection requires |e0| below the infrared bound");
    int sp = z.x < 0 ? -1 : 1, sm = z.y < 0 ? -1 : 1;
    double a = std::abs(z.x), b = std::abs(z.y);
    bool swapped = a > b;
    if (swapped) std::swap(a, b);
    Vec2 c = nearest_in_octant({a, b});
    double d = (Vec2{a, b} - c).norm();

    std::vector<Vec2> cands;
    auto unfold = [&](Vec2 q, bool sw, int s1, int s2) {
      if (sw) std::swap(q.x, q.y);
      return Vec2{s1 * q.x, s2 * q.y};
    };
    cands.push_back(unfold(c, swapped, sp, sm));
    // Mirror candidates exist when the folded input lies on a symmetry line.
    const double tol = 1e-10;
    if (std::abs(a - b) < tol && std::abs(c.x - c.y) > tol) cands.push_back(unfold(c, !swapped, sp, sm));
    if (std::abs(z.x) < tol && std::abs(c.x) > tol) {
      Vec2 q = unfold(c, swapped, sp, sm);
      if (std::abs(q.x) > tol) cands.push_back({-q.x, q.y});
    }
    if (std::abs(z.y) < tol && std::abs(c.x) > tol) {
      Vec2 q = unfold(c, swapped, sp, sm);
      if (std::abs(q.y) > tol) cands.push_back({q.x, -q.y});
    }
    std::sort(cands.begin(), cands.end(), [](Vec2 u, Vec2 v) {
      double du = std::abs(u.x - u.y), dv = std::abs(v.x - v.y);
      if (std::abs(du - dv) > 1e-12) return du < dv;
      if (u.x != v.x) return u.x < v.x;
      return u.y < v.y;
    });
    if (strict && cands.size() > 1) throw AmbiguousProjection(make_point(cands[0], d), make_point(cands[1], d));
    // express the result in the same zone image as the input
    Vec2 shift = k - z;
    return make_point(cands[0] + shift, d);
  }

 private:
  // Newton on {e0(x) = 0, (p - x) x grad e0(x) = 0}, seeded from the octant table.
  Vec2 nearest_in_octant(Vec2 p) const {
    size_t best = 0;
    double bd = 1e300;
    for (size_t i = 0; i < table_.size(); ++i) {
      double d = (table_[i] - p).dot(table_[i] - p);
      if (d < bd) bd = d, best = i;
    }
    Vec2 x = table_[best];
    for (int it = 0; it < 60; ++it) {
      double ca = std::cos(x.x / 2), sa = std::sin(x.x / 2), cb = std::cos(x.y / 2), sb = std::sin(x.y / 2);
      double gx = sa * cb, gy = ca * sb;
      double hxx = 0.5 * ca * cb, hxy = -0.5 * sa * sb, hyy = 0.5 * ca * cb;
      double F1 = mu0_ - 2 * ca * cb;
      double dx = p.x - x.x, dy = p.y - x.y;
      double F2 = -dx * gy + dy * gx;
      double J11 = gx, J12 = gy;
      double J21 = gy - dx * hxy + dy * hxx;
      double J22 = -dx * hyy - gx + dy * hxy;
      double det = J11 * J22 - J12 * J21;
      if (std::abs(det) < 1e-300) break;
      double ux = (F1 * J22 - F2 * J12) / det, uy = (J11 * F2 - J21 * F1) / det;
      x.x -= ux;
      x.y -= uy;
      if (std::abs(ux) + std::abs(uy) < 1e-15) break;
    }
    // polish onto the level set along the gradient
    for (int it = 0; it < 3; ++it) {
      Vec2 g = band_gradient(x.x, x.y);
      double f = band_energy(x.x, x.y, mu0_);
      x = x - g * (f / g.dot(g));
    }
    if (x.x < 0) x.x = -x.x;
    if (x.x > x.y) std::swap(x.x, x.y);
    return x;
  }

  double mu0_;
  std::vector<Vec2> table_;
};

// One immutable surface per mu0, shared between callers.
inline std::shared_ptr<const FermiSurface> fermi_surface(double mu0) {
  static std::mutex m;
  static std::map<double, std::shared_ptr<const FermiSurface>> cache;
  std::lock_guard<std::mutex> lk(m);
  auto& s = cache[mu0];
  if (!s) s = std::make_shared<const FermiSurface>(mu0);
  return s;
}

inline FermiPoint project_to_fs(Vec2 k, const ModelParams& p, bool strict = false) {
  return fermi_surface(p.mu0)->project(k, strict);
}

// Dense-sampling reference for the projection (test oracle).
inline Vec2 project_to_fs_dense(Vec2 k, double mu0, int samples = 1000000) {
  auto s = fermi_surface(mu0);
  auto dist = [&](double phi) {
    Vec2 q = s->on_ray(phi);
    return (q - k).dot(q - k);
  };
  double h = 2 * pi / samples, best = 0, bd = 1e300;
  for (int i = 0; i < samples; ++i) {
    double d = dist(h * (i + 0.5));
    if (d < bd) bd = d, best = h * (i + 0.5);
  }
  double lo = best - h, hi = best + h;
  for (int it = 0; it < 100; ++it) {
    double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    (dist(m1) < dist(m2) ? hi : lo) = (dist(m1) < dist(m2) ? m2 : m1);
  }
  return s->on_ray(0.5 * (lo + hi));
}

}  // namespace hrg
