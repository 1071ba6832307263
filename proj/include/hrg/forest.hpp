#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <queue>
#include <random>
#include <utility>
#include <vector>

#include "model.hpp"
#include "quadrature.hpp"

namespace hrg {

using Edge = std::pair<int, int>;

// Pairs (i<j) of n vertices in lexicographic order; the index of a pair is its position here.
inline std::vector<Edge> vertex_pairs(int n) {
  std::vector<Edge> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.push_back({i, j});
  return out;
}

inline int pair_index(int n, int i, int j) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a), b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

struct Forest {
  int n = 0;
  std::vector<Edge> edges;  // i < j, lexicographic

  bool acyclic() const {
    DisjointSets d(n);
    for (auto [a, b] : edges)
      if (!d.unite(a, b)) return false;
    return true;
  }
  bool contains(const Edge& e) const { return std::binary_search(edges.begin(), edges.end(), e); }
  // component label (smallest vertex) per vertex
  std::vector<int> components() const {
    DisjointSets d(n);
    for (auto [a, b] : edges) d.unite(a, b);
    std::vector<int> c(n);
    for (int v = 0; v < n; ++v) c[v] = d.find(v);
    return c;
  }
  // edges on the unique path u -> v, empty if not connected or u == v
  std::optional<std::vector<Edge>> path(int u, int v) const {
    std::vector<int> prev(n, -1);
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(u);
    seen[u] = 1;
    while (!q.empty()) {
      int x = q.front();
      q.pop();
      for (auto [a, b] : edges) {
        int y = a == x ? b : b == x ? a : -1;
        if (y < 0 || seen[y]) continue;
        seen[y] = 1;
        prev[y] = x;
        q.push(y);
      }
    }
    if (!seen[v]) return std::nullopt;
    std::vector<Edge> out;
    for (int x = v; x != u; x = prev[x]) out.push_back({std::min(x, prev[x]), std::max(x, prev[x])});
    return out;
  }
  bool operator==(const Forest&) const = default;
};

// Every acyclic subset of the complete graph K_n, empty forest first, then by edge bitmask.
inline std::vector<Forest> enumerate_forests(int n) {
  if (n < 1 || n > 7) throw InvalidParameter("forest enumeration is limited to 1 <= n <= 7");
  auto pairs = vertex_pairs(n);
  const int m = static_cast<int>(pairs.size());
  std::vector<Forest> out;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    if (std::popcount(mask) > n - 1) continue;
    DisjointSets d(n);
    bool ok = true;
    for (int b = 0; b < m && ok; ++b)
      if (mask >> b & 1u) ok = d.unite(pairs[b].first, pairs[b].second);
    if (!ok) continue;
    Forest f{n, {}};
    for (int b = 0; b < m; ++b)
      if (mask >> b & 1u) f.edges.push_back(pairs[b]);
    out.push_back(std::move(f));
  }
  return out;
}

struct InterpolationMatrix {
  Eigen::MatrixXd x;
  double min_eigenvalue = 0;
  bool psd = false;
};

// x_ii = 1, x_ij = 0 across components, otherwise the infimum of w over the unique path.
inline InterpolationMatrix bkar_weights(const Forest& f, const std::vector<double>& w) {
  if (w.size() != f.edges.size()) throw InvalidParameter("one weight per forest edge is required");
  InterpolationMatrix out;
  out.x = Eigen::MatrixXd::Identity(f.n, f.n);
  for (int i = 0; i < f.n; ++i)
    for (int j = i + 1; j < f.n; ++j) {
      auto p = f.path(i, j);
      if (!p) continue;
      double m = 1.0;
      for (auto& e : *p) {
        auto it = std::lower_bound(f.edges.begin(), f.edges.end(), e);
        m = std::min(m, w[it - f.edges.begin()]);
      }
      out.x(i, j) = out.x(j, i) = m;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.x, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = f.n ? es.eigenvalues().minCoeff() : 0.0;
  out.psd = out.min_eigenvalue >= -1e-12;
  return out;
}

// Truncated multilinear jet: coefficients indexed by subsets of k nilpotent directions
// (eps_i^2 = 0). The top coefficient of f(x + sum eps_i e_i) is the exact mixed partial.
class Jet {
 public:
  Jet() = default;
  Jet(double v, int k = 0) : c_(std::size_t{1} << k, 0.0), k_(k) { c_[0] = v; }
  static Jet variable(double v, int k, int dir) {
    Jet j(v, k);
    j.c_[std::size_t{1} << dir] = 1.0;
    return j;
  }
  int dims() const { return k_; }
  double value() const { return c_[0]; }
  double top() const { return c_.back(); }
  double coeff(std::size_t mask) const { return c_[mask]; }

  friend Jet operator+(Jet a, const Jet& b) { return a.lift(b.k_), a += b, a; }
  friend Jet operator-(Jet a, const Jet& b) { return a.lift(b.k_), a += b * Jet(-1.0), a; }
  friend Jet operator*(const Jet& a, const Jet& b) {
    int k = std::max(a.k_, b.k_);
    Jet x = a, y = b;
    x.lift(k), y.lift(k);
    Jet r(0.0, k);
    std::size_t full = r.c_.size();
    for (std::size_t m = 0; m < full; ++m)
      for (std::size_t s = m;; s = (s - 1) & m) {
        r.c_[m] += x.c_[s] * y.c_[m ^ s];
        if (s == 0) break;
      }
    return r;
  }
  Jet& operator+=(const Jet& b) {
    lift(b.k_);
    Jet y = b;
    y.lift(k_);
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += y.c_[i];
    return *this;
  }
  friend Jet exp(const Jet& a) {
    Jet n = a;
    n.c_[0] = 0;
    Jet term(1.0, a.k_), sum(1.0, a.k_);
    for (int i = 1; i <= a.k_; ++i) {
      term = term * n * Jet(1.0 / i);
      sum += term;
    }
    return sum * Jet(std::exp(a.c_[0]));
  }

 private:
  void lift(int k) {
    if (k <= k_) return;
    std::vector<double> c(std::size_t{1} << k, 0.0);
    std::copy(c_.begin(), c_.end(), c.begin());
    c_ = std::move(c);
    k_ = k;
  }
  std::vector<double> c_{0.0};
  int k_ = 0;
};

// Leibniz expansion (ring operations only, so it works on jets).
inline Jet jet_determinant(const std::vector<std::vector<Jet>>& m) {
  int n = static_cast<int>(m.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Jet acc(0.0);
  do {
    int inv = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) inv += perm[i] > perm[j];
    Jet t(inv % 2 ? -1.0 : 1.0);
    for (int i = 0; i < n; ++i) t = t * m[i][perm[i]];
    acc += t;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return acc;
}

// f(X) with X = layers x pairs entries, index k * n(n-1)/2 + pair_index.
using JetFunctional = std::function<Jet(const std::vector<Jet>&)>;
using RealFunctional = std::function<double(const std::vector<double>&)>;

struct Jungle {
  std::vector<Forest> layers;  // F_1 subset ... subset F_m
};

// All m-layer jungles on n vertices (non-strict inclusions), m in {1, 2}.
inline std::vector<Jungle> enumerate_jungles(int n, int m) {
  if (m < 1 || m > 2) throw InvalidParameter("jungles are limited to 1 or 2 layers");
  auto forests = enumerate_forests(n);
  std::vector<Jungle> out;
  if (m == 1) {
    for (auto& f : forests) out.push_back({{f}});
    return out;
  }
  for (auto& f2 : forests)
    for (auto& f1 : forests)
      if (std::includes(f2.edges.begin(), f2.edges.end(), f1.edges.begin(), f1.edges.end())) out.push_back({{f1, f2}});
  return out;
}

struct BkarTerm {
  Jungle jungle;
  double value = 0;
};

struct BkarResult {
  double lhs = 0;
  double rhs = 0;
  double abs_err = 0;
  double rhs_half_nodes = 0;  // same right side with half the nodes
  std::vector<BkarTerm> terms;
};

struct QuadratureNotConvergedBkar : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// For layer k and pair (i,j): 1 if joined in F_{k-1}, 0 if not joined in F_k, else the set of
// F_k \ F_{k-1} edge slots on the path (the entry is their minimum).
struct PairRule {
  int kind = 0;  // 0 zero, 1 one, 2 min over slots
  std::vector<int> slots;
};

inline std::vector<PairRule> pair_rules(const Jungle& jg, int n, const std::vector<Edge>& all_edges) {
  auto pairs = vertex_pairs(n);
  std::vector<PairRule> rules;
  Forest prev{n, {}};
  for (auto& f : jg.layers) {
    auto cp = prev.components(), cf = f.components();
    for (auto [i, j] : pairs) {
      PairRule r;
      if (cp[i] == cp[j]) {
        r.kind = 1;
      } else if (cf[i] == cf[j]) {
        r.kind = 2;
        auto path = *f.path(i, j);
        for (auto& e : path)
          if (!prev.contains(e)) r.slots.push_back(static_cast<int>(std::lower_bound(all_edges.begin(), all_edges.end(), e) - all_edges.begin()));
      }
      rules.push_back(std::move(r));
    }
    prev = f;
  }
  return rules;
}

}  // namespace detail

// Right side of the forest (m = 1) or two-layer jungle (m = 2) formula, integrated over every
// ordering simplex of the w variables with a collapsed tensor Gauss rule, so that each path
// infimum is a single smooth variable on each piece.
inline double bkar_term(const JetFunctional& f, const Jungle& jg, int n, int nodes) {
  const Forest& top = jg.layers.back();
  const auto& E = top.edges;
  const int k = static_cast<int>(E.size());
  const int np = n * (n - 1) / 2;
  const int m = static_cast<int>(jg.layers.size());
  auto rules = detail::pair_rules(jg, n, E);
  // derivative direction of every edge: it is differentiated in the layer where it first appears
  std::vector<int> layer_of(k, 0);
  for (int e = 0; e < k; ++e)
    for (int l = 0; l < m; ++l)
      if (jg.layers[l].contains(E[e])) {
        layer_of[e] = l;
        break;
      }
  auto eval = [&](const std::vector<double>& w) {
    std::vector<Jet> X(static_cast<size_t>(m) * np);
    for (int l = 0; l < m; ++l)
      for (int p = 0; p < np; ++p) {
        const auto& r = rules[l * np + p];
        double v = r.kind == 0 ? 0.0 : 1.0;
        for (int s : r.slots) v = std::min(v, w[s]);
        X[l * np + p] = Jet(v, k);
      }
    for (int e = 0; e < k; ++e) {
      int idx = layer_of[e] * np + pair_index(n, E[e].first, E[e].second);
      X[idx] = Jet::variable(X[idx].value(), k, e);
    }
    return f(X).top();
  };
  if (k == 0) return eval({});
  const QuadRule& g = gauss_legendre(nodes);
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  KahanSum acc;
  std::vector<int> idx(k, 0);
  std::vector<double> w(k);
  do {
    // w_perm[0] <= w_perm[1] <= ... : t_i = t_{i-1} + (1 - t_{i-1}) u_i
    std::fill(idx.begin(), idx.end(), 0);
    for (;;) {
      double t = 0, jac = 1;
      for (int i = 0; i < k; ++i) {
        double u = 0.5 * (g.x[idx[i]] + 1);
        jac *= 0.5 * g.w[idx[i]] * (1 - t);
        t = t + (1 - t) * u;
        w[perm[i]] = t;
      }
      acc.add(jac * eval(w));
      int d = 0;
      while (d < k && ++idx[d] == nodes) idx[d++] = 0;
      if (d == k) break;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return acc.value();
}

inline BkarResult bkar_verify(const JetFunctional& f, int n, int nodes, int layers = 1, bool keep_terms = false,
                              double converge_tol = 1e-6) {
  if (n < 1 || n > 5) throw InvalidParameter("BKAR verification is limited to n <= 5");
  if (layers == 2 && n > 4) throw InvalidParameter("two-layer verification is limited to n <= 4");
  const int np = n * (n - 1) / 2;
  BkarResult r;
  std::vector<Jet> ones(static_cast<size_t>(layers) * np, Jet(1.0));
  r.lhs = f(ones).value();
  KahanSum rhs, half;
  for (auto& jg : enumerate_jungles(n, layers)) {
    double v = bkar_term(f, jg, n, nodes);
    rhs.add(v);
    half.add(bkar_term(f, jg, n, std::max(1, nodes / 2)));
    if (keep_terms) r.terms.push_back({jg, v});
  }
  r.rhs = rhs.value();
  r.rhs_half_nodes = half.value();
  r.abs_err = std::abs(r.lhs - r.rhs);
  if (std::abs(r.rhs - r.rhs_half_nodes) > converge_tol * std::max(1.0, std::abs(r.rhs)))
    throw QuadratureNotConvergedBkar("BKAR right side moved under node halving");
  return r;
}

// Black-box functionals: mixed partials by central differences with step h.
inline JetFunctional finite_difference_functional(RealFunctional f, double h = 1e-5) {
  return [f, h](const std::vector<Jet>& X) {
    int k = 0;
    for (auto& x : X) k = std::max(k, x.dims());
    std::vector<double> base(X.size());
    std::vector<int> dir_of(k, -1);
    for (size_t i = 0; i < X.size(); ++i) {
      base[i] = X[i].value();
      for (int d = 0; d < X[i].dims(); ++d)
        if (X[i].coeff(std::size_t{1} << d) != 0.0) dir_of[d] = static_cast<int>(i);
    }
    Jet out(f(base), k);
    if (k == 0) return out;
    double mixed = 0;
    for (std::uint32_t s = 0; s < (1u << k); ++s) {
      std::vector<double> y = base;
      int minus = 0;
      for (int d = 0; d < k; ++d) {
        bool neg = s >> d & 1u;
        y[dir_of[d]] += neg ? -h : h;
        minus += neg;
      }
      mixed += (minus % 2 ? -1.0 : 1.0) * f(y);
    }
    mixed /= std::pow(2 * h, k);
    // only the top coefficient is used by the verifier
    Jet top = Jet(mixed);
    for (int d = 0; d < k; ++d) top = top * Jet::variable(0.0, k, d);
    return out + top;
  };
}

struct GramHadamard {
  double det = 0;
  double bound = 0;
  bool holds = false;
};

inline GramHadamard gram_hadamard_check(const std::vector<Eigen::VectorXd>& A, const std::vector<Eigen::VectorXd>& B) {
  if (A.size() != B.size()) throw InvalidParameter("Gram-Hadamard needs equal counts");
  const int n = static_cast<int>(A.size());
  Eigen::MatrixXd G(n, n);
  double bound = 1;
  for (int i = 0; i < n; ++i) {
    if (A[i].size() != B[i].size() || A[i].size() != A[0].size()) throw InvalidParameter("Gram-Hadamard needs equal dimensions");
    for (int j = 0; j < n; ++j) G(i, j) = A[i].dot(B[j]);
    bound *= A[i].norm() * B[i].norm();
  }
  GramHadamard r;
  r.det = n ? G.determinant() : 1.0;
  r.bound = bound;
  r.holds = std::abs(r.det) <= bound * (1 + 1e-10);
  return r;
}

struct Graph {
  int n = 0;
  std::vector<Edge> edges;
};

struct RingResult {
  bool two_pi = false;  // two internally vertex-disjoint y-z paths exist
  std::vector<int> path1, path2;
};

// Two internally vertex-disjoint y-z paths by unit-capacity augmenting paths on the vertex-split graph.
inline RingResult find_ring(const Graph& g, int y, int z) {
  if (y == z) throw InvalidParameter("ring endpoints must differ");
  // node v -> in 2v, out 2v+1
  const int N = 2 * g.n;
  struct Arc {
    int to, cap, rev;
  };
  std::vector<std::vector<Arc>> adj(N);
  auto add = [&](int a, int b, int c) {
    adj[a].push_back({b, c, static_cast<int>(adj[b].size())});
    adj[b].push_back({a, 0, static_cast<int>(adj[a].size()) - 1});
  };
  for (int v = 0; v < g.n; ++v) add(2 * v, 2 * v + 1, (v == y || v == z) ? 2 : 1);
  for (auto [a, b] : g.edges) {
    add(2 * a + 1, 2 * b, 1);
    add(2 * b + 1, 2 * a, 1);
  }
  const int s = 2 * y + 1, t = 2 * z;
  int flow = 0;
  while (flow < 2) {
    std::vector<std::pair<int, int>> prev(N, {-1, -1});
    std::queue<int> q;
    q.push(s);
    prev[s] = {s, -1};
    while (!q.empty() && prev[t].first < 0) {
      int x = q.front();
      q.pop();
      for (int i = 0; i < static_cast<int>(adj[x].size()); ++i) {
        auto& a = adj[x][i];
        if (a.cap > 0 && prev[a.to].first < 0) {
          prev[a.to] = {x, i};
          q.push(a.to);
        }
      }
    }
    if (prev[t].first < 0) break;
    for (int v = t; v != s; v = prev[v].first) {
      auto& a = adj[prev[v].first][prev[v].second];
      a.cap -= 1;
      adj[v][a.rev].cap += 1;
    }
    ++flow;
  }
  RingResult r;
  if (flow < 2) return r;
  r.two_pi = true;
  // walk saturated vertex-to-vertex arcs from y
  auto walk = [&]() {
    std::vector<int> path{y};
    int v = y;
    while (v != z) {
      for (auto& a : adj[2 * v + 1]) {
        if (a.to % 2 == 0 && a.to != 2 * v && adj[a.to][a.rev].cap > 0 && a.cap == 0) {
          adj[a.to][a.rev].cap -= 1;  // consume the unit so the second walk takes the other path
          v = a.to / 2;
          break;
        }
      }
      path.push_back(v);
    }
    return path;
  };
  r.path1 = walk();
  r.path2 = walk();
  if (r.path2.size() < r.path1.size() || (r.path2.size() == r.path1.size() && r.path2 < r.path1)) std::swap(r.path1, r.path2);
  return r;
}

// Independent checker: both paths are y-z walks along graph edges, simple, and share only y, z.
inline bool ring_paths_valid(const Graph& g, int y, int z, const std::vector<int>& p1, const std::vector<int>& p2) {
  auto has_edge = [&](int a, int b) {
    for (auto [u, v] : g.edges)
      if ((u == a && v == b) || (u == b && v == a)) return true;
    return false;
  };
  auto simple = [&](const std::vector<int>& p) {
    if (p.size() < 2 || p.front() != y || p.back() != z) return false;
    for (size_t i = 0; i + 1 < p.size(); ++i)
      if (!has_edge(p[i], p[i + 1])) return false;
    auto q = p;
    std::sort(q.begin(), q.end());
    return std::adjacent_find(q.begin(), q.end()) == q.end();
  };
  if (!simple(p1) || !simple(p2) || p1 == p2) return false;
  for (size_t i = 1; i + 1 < p1.size(); ++i)
    if (std::find(p2.begin() + 1, p2.end() - 1, p1[i]) != p2.end() - 1) return false;
  return true;
}

// Random simple 2-connected graph by ear decomposition: a cycle plus open ears.
inline Graph random_two_connected(std::mt19937_64& rng, int cycle_len, int ears, int max_ear_len = 3) {
  Graph g;
  g.n = cycle_len;
  for (int i = 0; i < cycle_len; ++i) g.edges.push_back({std::min(i, (i + 1) % cycle_len), std::max(i, (i + 1) % cycle_len)});
  auto has = [&](int a, int b) {
    Edge e{std::min(a, b), std::max(a, b)};
    return std::find(g.edges.begin(), g.edges.end(), e) != g.edges.end();
  };
  for (int k = 0; k < ears; ++k) {
    std::uniform_int_distribution<int> pick(0, g.n - 1), len(0, max_ear_len);
    int a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    int inner = len(rng);
    if (inner == 0 && has(a, b)) inner = 1;
    int prev = a;
    for (int i = 0; i < inner; ++i) {
      int v = g.n++;
      g.edges.push_back({std::min(prev, v), std::max(prev, v)});
      prev = v;
    }
    g.edges.push_back({std::min(prev, b), std::max(prev, b)});
  }
  return g;
}

}  // namespace hrg
