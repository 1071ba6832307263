#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "model.hpp"

namespace hrg {

struct QuadRule {
  std::vector<double> x;
  std::vector<double> w;
};

// Gauss-Legendre rule on [-1,1]; Newton on std::legendre with the Tricomi seed.
inline QuadRule gauss_legendre_raw(int n) {
  if (n < 1) throw InvalidParameter("quadrature needs at least one node");
  QuadRule q;
  q.x.resize(n);
  q.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p = std::legendre(n, x);
      double pm = n > 1 ? std::legendre(n - 1, x) : 1.0;
      dp = n * (x * p - pm) / (x * x - 1);
      double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p = std::legendre(n, x), pm = n > 1 ? std::legendre(n - 1, x) : 1.0;
    dp = n * (x * p - pm) / (x * x - 1);
    double w = 2 / ((1 - x * x) * dp * dp);
    q.x[i] = -x;
    q.x[n - 1 - i] = x;
    q.w[i] = q.w[n - 1 - i] = w;
  }
  if (n % 2 == 1) q.x[n / 2] = 0.0;
  return q;
}

inline const QuadRule& gauss_legendre(int n) {
  static std::mutex m;
  static std::map<int, QuadRule> cache;
  std::lock_guard<std::mutex> lk(m);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre_raw(n)).first;
  return it->second;
}

// Composite rule on [a,b] with the given breakpoints-in-between.
inline QuadRule composite_gauss(const std::vector<double>& breaks, int n) {
  const QuadRule& g = gauss_legendre(n);
  QuadRule q;
  for (size_t k = 0; k + 1 < breaks.size(); ++k) {
    double a = breaks[k], b = breaks[k + 1];
    if (b <= a) continue;
    double c = 0.5 * (a + b), h = 0.5 * (b - a);
    for (int i = 0; i < n; ++i) {
      q.x.push_back(c + h * g.x[i]);
      q.w.push_back(h * g.w[i]);
    }
  }
  return q;
}

inline QuadRule gauss_on(double a, double b, int n, int panels = 1) {
  std::vector<double> br(panels + 1);
  for (int i = 0; i <= panels; ++i) br[i] = a + (b - a) * i / panels;
  return composite_gauss(br, n);
}

template <class F>
double integrate(F&& f, const QuadRule& q) {
  double s = 0;
  for (size_t i = 0; i < q.x.size(); ++i) s += q.w[i] * f(q.x[i]);
  return s;
}

// Neumaier compensated sum.
struct KahanSum {
  double s = 0, c = 0;
  void add(double v) {
    double t = s + v;
    if (std::abs(s) >= std::abs(v))
      c += (s - t) + v;
    else
      c += (v - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

}  // namespace hrg
