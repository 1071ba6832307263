#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "forest.hpp"
#include "model.hpp"

namespace hrg {

struct InconsistentAssignment : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A contraction of field fa of vertex a with field fb of vertex b at scale r.
// Tree lines build the jungle; loop lines only remove fields.
struct GNLine {
  int a = 0, fa = 0;
  int b = 0, fb = 0;
  int scale = 1;
  bool tree = true;
};

struct GNInput {
  std::vector<int> vertex_fields;  // 4 for an interaction vertex, 2 for a counter-term vertex
  std::vector<GNLine> lines;
  int r_max = 0;
};

// Node at layer r: a connected component of the forest of tree lines with scale <= r.
// Layer 0 holds the bare vertices (leaves); layer r_max holds the root.
struct GNNode {
  int r = 0;
  std::vector<int> vertices;
  int e = 0;
  int parent = -1;
  std::vector<int> children;
};

struct GNTree {
  std::vector<GNNode> nodes;
  int root = -1;
  int order = 0;
  int r_max = 0;
  std::vector<int> leaves;
};

inline void validate_gn_input(const GNInput& in) {
  const int n = static_cast<int>(in.vertex_fields.size());
  if (n < 1) throw InconsistentAssignment("at least one vertex is required");
  if (in.r_max < 0) throw InconsistentAssignment("r_max must be >= 0");
  for (int f : in.vertex_fields)
    if (f != 2 && f != 4) throw InconsistentAssignment("vertices carry 4 fields (interaction) or 2 (counter-term)");
  std::set<std::pair<int, int>> used;
  DisjointSets d(n);
  std::vector<GNLine> tree;
  for (auto& l : in.lines) {
    if (l.a < 0 || l.a >= n || l.b < 0 || l.b >= n) throw InconsistentAssignment("line endpoint out of range");
    if (l.fa < 0 || l.fa >= in.vertex_fields[l.a] || l.fb < 0 || l.fb >= in.vertex_fields[l.b])
      throw InconsistentAssignment("field index out of range");
    if (l.a == l.b && l.fa == l.fb) throw InconsistentAssignment("a field cannot be contracted with itself");
    if (!used.insert({l.a, l.fa}).second || !used.insert({l.b, l.fb}).second)
      throw InconsistentAssignment("a field is contracted twice");
    if (l.scale < 1 || l.scale > in.r_max) throw InconsistentAssignment("line scale outside [1, r_max]");
    if (l.tree) {
      if (l.a == l.b || !d.unite(l.a, l.b)) throw InconsistentAssignment("tree lines form a loop");
      tree.push_back(l);
    }
  }
  for (int v = 1; v < n; ++v)
    if (d.find(v) != d.find(0)) throw InconsistentAssignment("tree lines do not span the vertices");
  // a loop line must lie inside one component at its own scale
  for (auto& l : in.lines) {
    if (l.tree) continue;
    DisjointSets c(n);
    for (auto& t : tree)
      if (t.scale <= l.scale) c.unite(t.a, t.b);
    if (c.find(l.a) != c.find(l.b)) throw InconsistentAssignment("loop line joins two components at its scale");
  }
}

inline GNTree build_gn_tree(const GNInput& in) {
  validate_gn_input(in);
  const int n = static_cast<int>(in.vertex_fields.size());
  GNTree t;
  t.order = n;
  t.r_max = in.r_max;
  std::vector<int> prev_node_of(n, -1);
  for (int r = 0; r <= in.r_max; ++r) {
    DisjointSets d(n);
    for (auto& l : in.lines)
      if (l.tree && l.scale <= r) d.unite(l.a, l.b);
    std::map<int, int> node_of_root;
    std::vector<int> node_of(n);
    for (int v = 0; v < n; ++v) {
      int c = d.find(v);
      auto it = node_of_root.find(c);
      if (it == node_of_root.end()) {
        it = node_of_root.emplace(c, static_cast<int>(t.nodes.size())).first;
        t.nodes.push_back({r, {}, 0, -1, {}});
      }
      node_of[v] = it->second;
      t.nodes[it->second].vertices.push_back(v);
    }
    for (auto& [c, id] : node_of_root) {
      GNNode& g = t.nodes[id];
      int fields = 0;
      for (int v : g.vertices) fields += in.vertex_fields[v];
      int contracted = 0;
      for (auto& l : in.lines)
        if (l.scale <= r && d.find(l.a) == c) ++contracted;
      g.e = fields - 2 * contracted;
      if (r == 0) t.leaves.push_back(id);
    }
    if (r > 0) {
      std::set<int> linked;
      for (int v = 0; v < n; ++v) {
        int child = prev_node_of[v], parent = node_of[v];
        if (linked.insert(child).second) {
          t.nodes[child].parent = parent;
          t.nodes[parent].children.push_back(child);
        }
      }
    }
    prev_node_of = node_of;
  }
  t.root = prev_node_of[0];
  return t;
}

enum class PowerClass { vacuum, relevant, marginal, irrelevant };

inline PowerClass power_class(int e) {
  if (e == 0) return PowerClass::vacuum;
  if (e == 2) return PowerClass::relevant;
  if (e == 4) return PowerClass::marginal;
  return PowerClass::irrelevant;
}

inline const char* to_string(PowerClass c) {
  switch (c) {
    case PowerClass::vacuum: return "vacuum";
    case PowerClass::relevant: return "relevant";
    case PowerClass::marginal: return "marginal";
    case PowerClass::irrelevant: return "irrelevant";
  }
  return "?";
}

struct PowerCounting {
  std::vector<int> exponent;  // 2 - e/2 per node (gamma exponent)
  std::vector<PowerClass> cls;
  int total = 0;
  double factor = 1;  // gamma^total
};

inline PowerCounting power_counting(const GNTree& t, double gamma) {
  PowerCounting p;
  for (auto& g : t.nodes) {
    p.exponent.push_back(2 - g.e / 2);
    p.cls.push_back(power_class(g.e));
    p.total += p.exponent.back();
  }
  p.factor = std::pow(gamma, p.total);
  return p;
}

// Field scale: the scale of the line that contracts it, r_max + 1 if it is never contracted
// (the number of layers in which it is external).
inline std::vector<int> field_scales(const GNInput& in) {
  std::vector<int> offset(in.vertex_fields.size() + 1, 0);
  for (size_t v = 0; v < in.vertex_fields.size(); ++v) offset[v + 1] = offset[v] + in.vertex_fields[v];
  std::vector<int> r(offset.back(), in.r_max + 1);
  for (auto& l : in.lines) {
    r[offset[l.a] + l.fa] = l.scale;
    r[offset[l.b] + l.fb] = l.scale;
  }
  return r;
}

struct IdentityCheck {
  long lhs = 0;  // gamma exponents
  long rhs = 0;
  bool equal() const { return lhs == rhs; }
};

struct InductiveIdentities {
  IdentityCheck fields;  // prod_f gamma^{-r_f/2} = prod_nodes gamma^{-e/2}  (exponents doubled)
  IdentityCheck lines;   // prod_tree-lines gamma^{2 r_l} = gamma^{-2 r_max - 2} prod_nodes gamma^2
  bool all_equal() const { return fields.equal() && lines.equal(); }
};

inline InductiveIdentities verify_inductive_identities(const GNTree& t, const GNInput& in) {
  InductiveIdentities out;
  for (int r : field_scales(in)) out.fields.lhs -= r;
  for (auto& g : t.nodes) out.fields.rhs -= g.e;
  for (auto& l : in.lines)
    if (l.tree) out.lines.lhs += 2L * l.scale;
  out.lines.rhs = -2L * in.r_max - 2 + 2L * static_cast<long>(t.nodes.size());
  return out;
}

// e recomputed field by field: a field is external to a node at layer r when its line has
// scale > r or it is never contracted.
inline std::vector<int> recount_external_fields(const GNTree& t, const GNInput& in) {
  auto rf = field_scales(in);
  std::vector<int> offset(in.vertex_fields.size() + 1, 0);
  for (size_t v = 0; v < in.vertex_fields.size(); ++v) offset[v + 1] = offset[v] + in.vertex_fields[v];
  std::vector<int> out;
  for (auto& g : t.nodes) {
    int e = 0;
    for (int v : g.vertices)
      for (int f = 0; f < in.vertex_fields[v]; ++f) e += rf[offset[v] + f] > g.r;
    out.push_back(e);
  }
  return out;
}

struct Classification {
  std::vector<int> bipeds, quadrupeds, convergent;  // multi-vertex nodes at r >= 1
  std::map<int, int> degree;                         // d_Q over Q u {root}
  long degree_sum = 0;
  long expected = 0;  // |Q u {root}| + n - 1
  bool quadruped_identity = false;
};

// Quadruped tree: leaves, quadrupeds and the root; d_Q counts the nearest quadruped-tree nodes below Q.
inline Classification classify_and_extract(const GNTree& t) {
  Classification c;
  for (int i = 0; i < static_cast<int>(t.nodes.size()); ++i) {
    const GNNode& g = t.nodes[i];
    // a lone vertex above layer 0 is the bare vertex again, not a new cluster
    if (g.r == 0 || g.vertices.size() < 2) continue;
    if (g.e == 2) c.bipeds.push_back(i);
    if (g.e == 4) c.quadrupeds.push_back(i);
    if (g.e >= 6) c.convergent.push_back(i);
  }
  std::set<int> keep(c.quadrupeds.begin(), c.quadrupeds.end());
  keep.insert(t.root);
  std::set<int> qt = keep;
  qt.insert(t.leaves.begin(), t.leaves.end());
  for (int q : keep) c.degree[q] = 0;
  for (int leaf_or_q : qt) {
    if (leaf_or_q == t.root) continue;
    int p = t.nodes[leaf_or_q].parent;
    while (p >= 0 && !keep.count(p)) p = t.nodes[p].parent;
    if (p >= 0) ++c.degree[p];
  }
  for (auto& [q, d] : c.degree) c.degree_sum += d;
  c.expected = static_cast<long>(keep.size()) + t.order - 1;
  c.quadruped_identity = c.degree_sum == c.expected;
  return c;
}

// Random consistent input: random labelled spanning tree with scales in [1, r_max], optional
// loop lines among free fields, optional counter-term vertices.
inline GNInput random_gn_input(std::mt19937_64& rng, int n, int r_max, double counterterm_prob = 0.2,
                               int max_loop_lines = 3) {
  std::uniform_real_distribution<double> u(0, 1);
  GNInput in;
  in.r_max = r_max;
  for (int v = 0; v < n; ++v) in.vertex_fields.push_back(u(rng) < counterterm_prob ? 2 : 4);
  std::vector<std::vector<int>> free(n);
  for (int v = 0; v < n; ++v)
    for (int f = 0; f < in.vertex_fields[v]; ++f) free[v].push_back(f);
  auto take = [&](int v) {
    std::uniform_int_distribution<size_t> k(0, free[v].size() - 1);
    size_t i = k(rng);
    int f = free[v][i];
    free[v].erase(free[v].begin() + static_cast<long>(i));
    return f;
  };
  std::uniform_int_distribution<int> sc(1, std::max(1, r_max));
  for (int v = 1; v < n; ++v) {
    // attach to an earlier vertex with a free field
    std::vector<int> cand;
    for (int w = 0; w < v; ++w)
      if (!free[w].empty()) cand.push_back(w);
    if (cand.empty() || free[v].empty()) throw InvalidParameter("no free field left to build a spanning tree");
    int w = cand[static_cast<size_t>(u(rng) * cand.size())];
    in.lines.push_back({w, take(w), v, take(v), sc(rng), true});
  }
  int loops = static_cast<int>(u(rng) * (max_loop_lines + 1));
  for (int k = 0; k < loops; ++k) {
    std::vector<int> cand;
    for (int v = 0; v < n; ++v)
      if (!free[v].empty()) cand.push_back(v);
    if (cand.size() < 1) break;
    int a = cand[static_cast<size_t>(u(rng) * cand.size())];
    int b = cand[static_cast<size_t>(u(rng) * cand.size())];
    if (a == b && free[a].size() < 2) continue;
    // lowest scale at which a and b are joined by tree lines
    int lo = 1;
    for (; lo <= r_max; ++lo) {
      DisjointSets d(n);
      for (auto& l : in.lines)
        if (l.tree && l.scale <= lo) d.unite(l.a, l.b);
      if (d.find(a) == d.find(b)) break;
    }
    if (lo > r_max) continue;
    std::uniform_int_distribution<int> ls(lo, r_max);
    int fa = take(a), fb = take(b);
    in.lines.push_back({a, fa, b, fb, ls(rng), false});
  }
  return in;
}

inline std::string to_dot(const GNTree& t) {
  std::ostringstream os;
  os << "digraph gn {\n  rankdir=BT;\n";
  for (size_t i = 0; i < t.nodes.size(); ++i) {
    const GNNode& g = t.nodes[i];
    os << "  n" << i << " [label=\"r=" << g.r << " e=" << g.e << "\\n{";
    for (size_t k = 0; k < g.vertices.size(); ++k) os << (k ? "," : "") << g.vertices[k];
    os << "}\"";
    if (static_cast<int>(i) == t.root) os << ", shape=doublecircle";
    else if (g.r == 0) os << ", shape=box";
    os << "];\n";
  }
  for (size_t i = 0; i < t.nodes.size(); ++i)
    if (t.nodes[i].parent >= 0) os << "  n" << i << " -> n" << t.nodes[i].parent << ";\n";
  os << "}\n";
  return os.str();
}

}  // namespace hrg
