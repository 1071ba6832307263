#include <doctest.h>

#include "hrg/gn_tree.hpp"
#include "hrg/rng.hpp"

using namespace hrg;

TEST_CASE("single vertex chain") {
  GNInput in{{4}, {}, 3};
  auto t = build_gn_tree(in);
  CHECK(t.nodes.size() == 4);
  for (auto& g : t.nodes) CHECK(g.e == 4);
  CHECK(t.nodes[t.root].r == 3);
  CHECK(t.leaves.size() == 1);
  auto id = verify_inductive_identities(t, in);
  CHECK(id.all_equal());
  CHECK(id.fields.lhs == -4 * 4);
  CHECK(id.lines.lhs == 0);
}

TEST_CASE("two vertices joined at scale 1") {
  GNInput in{{4, 4}, {{0, 0, 1, 0, 1, true}}, 1};
  auto t = build_gn_tree(in);
  REQUIRE(t.nodes.size() == 3);
  CHECK(t.nodes[t.root].e == 6);
  CHECK(t.nodes[t.root].children.size() == 2);
  auto id = verify_inductive_identities(t, in);
  // gamma^2 = gamma^-4 gamma^6
  CHECK(id.lines.lhs == 2);
  CHECK(id.lines.rhs == 2);
  CHECK(id.all_equal());
  auto pc = power_counting(t, 10);
  CHECK(pc.exponent[t.root] == -1);
  CHECK(pc.cls[t.root] == PowerClass::irrelevant);
}

TEST_CASE("power counting table") {
  CHECK(power_class(2) == PowerClass::relevant);
  CHECK(power_class(4) == PowerClass::marginal);
  CHECK(power_class(6) == PowerClass::irrelevant);
  CHECK(power_class(8) == PowerClass::irrelevant);
  GNInput bubble{{4, 4}, {{0, 0, 1, 0, 1, true}, {0, 1, 1, 1, 1, false}}, 1};
  auto t = build_gn_tree(bubble);
  auto pc = power_counting(t, 10);
  CHECK(t.nodes[t.root].e == 4);
  CHECK(pc.exponent[t.root] == 0);
  GNInput two{{4, 4}, {{0, 0, 1, 0, 1, true}, {0, 1, 1, 1, 1, false}, {0, 2, 1, 2, 1, false}}, 1};
  auto t2 = build_gn_tree(two);
  CHECK(t2.nodes[t2.root].e == 2);
  CHECK(power_counting(t2, 10).exponent[t2.root] == 1);
  CHECK(power_counting(t2, 10).cls[t2.root] == PowerClass::relevant);
}

TEST_CASE("quadruped identity") {
  // one quadruped merging two bare vertices: 2 = 1 + 2 - 1
  GNInput bubble{{4, 4}, {{0, 0, 1, 0, 1, true}, {0, 1, 1, 1, 1, false}}, 1};
  auto c = classify_and_extract(build_gn_tree(bubble));
  CHECK(c.quadrupeds.size() == 1);
  CHECK(c.degree_sum == 2);
  CHECK(c.quadruped_identity);
  // no internal e <= 4 nodes: only the root above the leaves
  GNInput chain{{4, 4, 4}, {{0, 0, 1, 0, 1, true}, {1, 1, 2, 0, 2, true}}, 2};
  auto d = classify_and_extract(build_gn_tree(chain));
  CHECK(d.bipeds.empty());
  CHECK(d.quadrupeds.empty());
  CHECK(d.degree_sum == 3);
  CHECK(d.quadruped_identity);
}

TEST_CASE("inconsistent assignments") {
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {}, 1}), InconsistentAssignment);
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {{0, 0, 1, 0, 1, true}, {0, 0, 1, 1, 1, false}}, 1}), InconsistentAssignment);
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {{0, 0, 1, 0, 2, true}}, 1}), InconsistentAssignment);
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {{0, 5, 1, 0, 1, true}}, 1}), InconsistentAssignment);
  CHECK_THROWS_AS(build_gn_tree({{4, 3}, {{0, 0, 1, 0, 1, true}}, 1}), InconsistentAssignment);
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {{0, 0, 1, 0, 1, true}, {0, 1, 1, 1, 1, true}}, 1}), InconsistentAssignment);
  // loop line below the scale at which its endpoints join
  CHECK_THROWS_AS(build_gn_tree({{4, 4}, {{0, 0, 1, 0, 2, true}, {0, 1, 1, 1, 1, false}}, 2}), InconsistentAssignment);
}

TEST_CASE("random trees") {
  int fail_recount = 0, fail_ident = 0, fail_quad = 0, fail_even = 0, fail_conv = 0, convergent_trees = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    auto rng = case_rng(8, k);
    int n = 1 + static_cast<int>(k % 6);
    int r_max = 1 + static_cast<int>((k / 6) % 5);
    auto in = random_gn_input(rng, n, r_max);
    auto t = build_gn_tree(in);
    fail_recount += recount_external_fields(t, in) != [&] {
      std::vector<int> e;
      for (auto& g : t.nodes) e.push_back(g.e);
      return e;
    }();
    fail_ident += !verify_inductive_identities(t, in).all_equal();
    fail_quad += !classify_and_extract(t).quadruped_identity;
    for (auto& g : t.nodes) fail_even += g.e % 2 != 0 || g.e < 0;
    bool all6 = true;
    int internal = 0, total = 0;
    auto pc = power_counting(t, 10);
    for (size_t i = 0; i < t.nodes.size(); ++i) {
      if (t.nodes[i].r == 0) continue;
      all6 = all6 && t.nodes[i].e >= 6;
      ++internal;
      total += pc.exponent[i];
    }
    if (all6) {
      ++convergent_trees;
      fail_conv += total > -internal;
    }
  }
  CHECK(fail_recount == 0);
  CHECK(fail_ident == 0);
  CHECK(fail_quad == 0);
  CHECK(fail_even == 0);
  CHECK(fail_conv == 0);
  CHECK(convergent_trees > 0);
}

TEST_CASE("dot output") {
  GNInput in{{4, 4}, {{0, 0, 1, 0, 1, true}}, 1};
  auto s = to_dot(build_gn_tree(in));
  CHECK(s.find("digraph gn") == 0);
  CHECK(s.find("n0 -> n2") != std::string::npos);
  CHECK(s.find("e=6") != std::string::npos);
}
