#include <CLI11.hpp>
#include <Eigen/Core>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <openssl/opensslv.h>
#include <random>

#include "hrg/forest.hpp"
#include "hrg/gn_tree.hpp"
#include "hrg/io.hpp"
#include "hrg/parallel.hpp"
#include "hrg/perturbation.hpp"
#include "hrg/phase_map.hpp"
#include "hrg/sectors.hpp"

using namespace hrg;
using io::Csv;
using io::json;

namespace {

constexpr const char* program_version = "1.0.0";

struct Check {
  std::string module, name;
  double value = 0, threshold = 0;
  bool pass = false;
};

struct Run {
  ModelParams p;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  json config;
  json seeds = json::array();
  std::vector<Check> checks;
  io::RunDir* dir = nullptr;

  void check(const std::string& m, const std::string& n, double v, double thr, bool ok) {
    checks.push_back({m, n, v, thr, ok});
    std::printf("%-10s %-34s %s  value=%-12.6g threshold=%g\n", m.c_str(), n.c_str(), ok ? "PASS" : "FAIL", v, thr);
  }
};

json params_json(const ModelParams& p) {
  return {{"gamma", p.gamma}, {"mu0", p.mu0}, {"T", p.temperature}, {"lambda", p.lambda}, {"jmax_override", p.jmax_override},
          {"j0", p.j0()}, {"jmax", p.jmax()}};
}

json report_json(const AmplitudeReport& r) {
  json j{{"quantity", to_string(r.quantity)}, {"fitted_exponent", r.fitted_exponent}};
  for (auto& [k, v] : r.per_scale) j["per_scale"][std::to_string(k)] = {v.real(), v.imag()};
  for (auto& [k, v] : r.bound_ratios) j["bound_ratios"][std::to_string(k)] = v;
  for (auto& [k, v] : r.metadata) j["metadata"][k] = v;
  return j;
}

// ---------------------------------------------------------------- geometry

struct GeometryOpts {
  std::vector<double> mu0s{0.1, 0.01};
  int points = 1000;
  std::vector<int> js{2, 3, 4, 5};
};

void run_geometry(Run& run, const GeometryOpts& o) {
  run.config["geometry"] = {{"mu0s", o.mu0s}, {"points", o.points}, {"j", o.js}};
  std::vector<std::string> head{"mu0", "phi", "kplus", "kminus", "R", "R_fd", "rel_err"};
  for (int j : o.js) head.push_back("delta_j" + std::to_string(j));
  Csv surf(head);
  Csv special({"mu0", "point", "kplus", "kminus", "R", "closed_form", "rel_err"});
  double worst = 0, worst_special = 0;
  for (double mu0 : o.mu0s) {
    ModelParams p = run.p;
    p.mu0 = mu0;
    p.validate();
    auto fsh = fermi_surface(mu0);
    auto rows = parallel_map(o.points, run.workers, [&](size_t i) {
      double phi = 2 * pi * (i + 0.37) / o.points;
      Vec2 q = fsh->on_ray(phi);
      double a = curvature_radius_closed(q.x, q.y, mu0), b = curvature_radius_fd(q, mu0);
      std::vector<io::Cell> r{mu0, phi, q.x, q.y, a, b, std::abs(a - b) / a};
      for (int j : o.js) r.push_back(shell_width(q, j, p));
      return r;
    });
    for (auto& r : rows) {
      worst = std::max(worst, std::get<double>(r[6]));
      surf.row(r);
    }
    Vec2 f = face_center(mu0), c = corner_point(mu0);
    double rf = curvature_radius_closed(f.x, f.y, mu0), rc = curvature_radius_closed(c.x, c.y, mu0);
    double ef = std::abs(rf - r_max_closed(mu0)) / r_max_closed(mu0), ec = std::abs(rc - r_min_closed(mu0)) / r_min_closed(mu0);
    special.row({mu0, std::string("face_center"), f.x, f.y, rf, r_max_closed(mu0), ef});
    special.row({mu0, std::string("corner"), c.x, c.y, rc, r_min_closed(mu0), ec});
    worst_special = std::max({worst_special, ef, ec});
  }
  run.dir->write_csv("geometry_surface.csv", surf);
  run.dir->write_csv("geometry_special_points.csv", special);
  run.check("geometry", "curvature_fd_rel_err", worst, 1e-4, worst < 1e-4);
  run.check("geometry", "rmax_rmin_closed_rel_err", worst_special, 1e-8, worst_special < 1e-8);
}

// ---------------------------------------------------------------- sectors

struct SectorOpts {
  std::vector<int> js{4};
  long quadruples = 0;
  bool counting = false;
  std::vector<int> counting_js{2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> counting_j0s{1, 2, 3};
};

void run_sectors(Run& run, const SectorOpts& o) {
  run.config["sectors"] = {{"j", o.js}, {"quadruples", o.quadruples}, {"counting", o.counting},
                           {"counting_j", o.counting_js}, {"counting_j0", o.counting_j0s}};
  const ModelParams& p = run.p;
  Csv table({"j", "splus", "sminus", "j0", "two_l", "depth", "r"});
  for (int j : o.js) {
    if (j < 0) throw InvalidParameter("scale index must be >= 0");
    for (auto& s : enumerate_sectors(j, p.j0()))
      table.row({(long long)s.j, (long long)s.splus, (long long)s.sminus, (long long)s.j0, (long long)s.two_l(), s.depth(), (long long)s.r()});
  }
  run.dir->write_csv("sectors_table.csv", table);
  std::printf("sectors: %zu rows\n", table.rows() - 1);

  if (o.quadruples > 0) {
    const long chunk = 10000;
    size_t jobs = static_cast<size_t>((o.quadruples + chunk - 1) / chunk);
    SectorClassifier cls(p);
    auto reps = parallel_map(jobs, run.workers, [&](size_t i) {
      long n = std::min(chunk, o.quadruples - static_cast<long>(i) * chunk);
      return conservation_search(cls, n, run.seed, i);
    });
    ConservationReport tot;
    Csv ex({"chunk", "slot", "j", "splus", "sminus"});
    for (size_t i = 0; i < reps.size(); ++i) {
      tot.accepted += reps[i].accepted;
      tot.trials += reps[i].trials;
      tot.violations += reps[i].violations;
      for (auto& q : reps[i].examples)
        for (int k = 0; k < 4; ++k) ex.row({(long long)i, (long long)k, (long long)q[k].j, (long long)q[k].splus, (long long)q[k].sminus});
    }
    run.seeds.push_back({{"module", "sectors.conservation_search"}, {"seed", run.seed}, {"streams", jobs}});
    run.dir->write_json("sectors_conservation.json", {{"accepted", tot.accepted}, {"trials", tot.trials}, {"violations", tot.violations},
                                                      {"violation_fraction", double(tot.violations) / tot.accepted}});
    run.dir->write_csv("sectors_conservation_examples.csv", ex);
    run.check("sectors", "conservation_violations", double(tot.violations), 0, tot.violations == 0);
  }

  if (o.counting) {
    std::vector<std::pair<int, int>> cases;
    for (int j0 : o.counting_j0s)
      for (int j : o.counting_js) cases.push_back({j, j0});
    auto res = parallel_map(cases.size(), run.workers, [&](size_t i) {
      auto [j, j0] = cases[i];
      double mx = 0, mn = 1e300;
      for (auto& s : enumerate_sectors(j, j0)) {
        double c = counting_sum(j, j0, s, p.gamma);
        mx = std::max(mx, c), mn = std::min(mn, c);
      }
      return std::pair{mx, mn};
    });
    Csv c({"j", "j0", "sup_sigma4", "inf_sigma4", "ratio_sup"});
    double lo = 1e300, hi = 0;
    for (size_t i = 0; i < cases.size(); ++i) {
      double r = res[i].first / (cases[i].first + cases[i].second);
      lo = std::min(lo, r), hi = std::max(hi, r);
      c.row({(long long)cases[i].first, (long long)cases[i].second, res[i].first, res[i].second, r});
    }
    run.dir->write_csv("sectors_counting.csv", c);
    run.check("sectors", "counting_band", hi / lo, 4, hi / lo <= 4);
  }
}

// ---------------------------------------------------------------- propagator

struct PropagatorOpts {
  std::vector<int> js{2, 3, 4, 5};
  SliceGrid grid;
  double decay_eps = 0.05;
};

void run_propagator(Run& run, const PropagatorOpts& o) {
  run.config["propagator"] = {{"j", o.js}, {"gauss_nodes", o.grid.gauss_nodes}, {"x_extent", o.grid.x_extent},
                              {"x_points", o.grid.x_points}, {"x0_points", o.grid.x0_points}, {"decay_eps", o.decay_eps}};
  auto slices = parallel_map(o.js.size(), run.workers, [&](size_t i) {
    int j = o.js[i];
    ModelParams p = run.p;
    p.temperature = std::pow(p.gamma, -j) / 40;
    p.jmax_override = j + 2;
    SectorIndex s{j, window_floor(j, p.j0()), j, p.j0()};
    auto sl = direct_space_slice(s, o.grid, p);
    measure_decay_lengths(sl, o.decay_eps);
    sl.decay_fit = fit_decay(sl, p.gamma);
    sl.values.clear();
    sl.values.shrink_to_fit();
    return sl;
  });
  Csv c({"j", "splus", "sminus", "j0", "T", "sup_norm", "l1_norm", "decay_plus", "decay_minus", "decay_x0", "origin_value",
         "convergence_change", "decay_alpha"});
  for (auto& s : slices)
    c.row({(long long)s.sector.j, (long long)s.sector.splus, (long long)s.sector.sminus, (long long)s.sector.j0, s.temperature, s.sup_norm,
           s.l1_norm, s.decay_length_plus, s.decay_length_minus, s.decay_length_x0, s.origin_value_direct, s.convergence_change,
           s.decay_fit.alpha});
  run.dir->write_csv("propagator_slices.csv", c);
  if (slices.size() < 4) {
    std::printf("propagator: fewer than 4 slices, no scaling regression\n");
    return;
  }
  json reg;
  auto one = [&](const char* name, ScalingTarget t, double tol) {
    auto r = scaling_regression(slices, t, run.p.gamma);
    reg[name] = {{"slope", r.slope}, {"intercept", r.intercept}, {"r2", r.r2}};
    run.check("propagator", std::string(name) + "_slope", r.slope, tol, std::abs(r.slope - 1) <= tol);
  };
  one("supnorm", ScalingTarget::supnorm, 0.15);
  one("l1", ScalingTarget::l1, 0.2);
  one("decay_plus", ScalingTarget::decay_plus, 0.2);
  one("decay_minus", ScalingTarget::decay_minus, 0.2);
  run.dir->write_json("propagator_regression.json", reg);
}

// ---------------------------------------------------------------- bkar

struct BkarOpts {
  int n = 3;
  int nodes = 32;
  long gram_trials = 10000;
  int gram_dim = 8;
};

JetFunctional exp_functional(double a) {
  return [a](const std::vector<Jet>& x) {
    Jet s(0.0);
    for (auto& v : x) s += v;
    return exp(s * Jet(a));
  };
}

JetFunctional gram_det_functional(int n, std::vector<double> g) {
  return [n, g](const std::vector<Jet>& x) {
    std::vector<std::vector<Jet>> m(n, std::vector<Jet>(n, Jet(0.0)));
    for (int i = 0; i < n; ++i) m[i][i] = Jet(1.0);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        int p = pair_index(n, i, j);
        m[i][j] = m[j][i] = x[p] * Jet(g[p]);
      }
    return jet_determinant(m);
  };
}

void run_bkar(Run& run, const BkarOpts& o) {
  run.config["bkar"] = {{"n", o.n}, {"nodes", o.nodes}, {"gram_trials", o.gram_trials}, {"gram_dim", o.gram_dim}};
  Csv counts({"n", "forests"});
  const std::map<int, long> expect{{2, 2}, {3, 7}, {4, 38}};
  bool counts_ok = true;
  for (auto [n, e] : expect) {
    long c = static_cast<long>(enumerate_forests(n).size());
    counts.row({(long long)n, (long long)c});
    counts_ok = counts_ok && c == e;
  }
  run.dir->write_csv("bkar_forest_counts.csv", counts);
  run.check("bkar", "forest_counts_2_7_38", counts_ok, 1, counts_ok);

  auto rng = case_rng(run.seed, 0);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> g(o.n * (o.n - 1) / 2);
  for (auto& x : g) x = u(rng);
  run.seeds.push_back({{"module", "bkar.gram_functional"}, {"seed", run.seed}, {"streams", 1}});
  auto re = bkar_verify(exp_functional(0.3), o.n, o.nodes);
  auto rg = bkar_verify(gram_det_functional(o.n, g), o.n, o.nodes);
  json rep{{"n", o.n}, {"nodes", o.nodes}};
  rep["exponential"] = {{"lhs", re.lhs}, {"rhs", re.rhs}, {"abs_err", re.abs_err}, {"rhs_half_nodes", re.rhs_half_nodes}};
  rep["gram_determinant"] = {{"lhs", rg.lhs}, {"rhs", rg.rhs}, {"abs_err", rg.abs_err}, {"rhs_half_nodes", rg.rhs_half_nodes}, {"couplings", g}};
  run.dir->write_json("bkar_report.json", rep);
  run.check("bkar", "exp_abs_err", re.abs_err, 1e-8, re.abs_err < 1e-8);
  run.check("bkar", "gram_det_abs_err", rg.abs_err, 1e-8, rg.abs_err < 1e-8);

  if (o.gram_trials > 0) {
    auto res = parallel_map(static_cast<size_t>(o.gram_trials), run.workers, [&](size_t t) {
      auto r = case_rng(run.seed, 1000000 + t);
      std::normal_distribution<double> nd;
      int dim = 1 + static_cast<int>(t % o.gram_dim);
      std::vector<Eigen::VectorXd> A, B;
      for (int i = 0; i < dim; ++i) {
        Eigen::VectorXd a(dim), b(dim);
        for (int k = 0; k < dim; ++k) a[k] = nd(r), b[k] = nd(r);
        A.push_back(a.normalized());
        B.push_back(b.normalized());
      }
      auto h = gram_hadamard_check(A, B);
      return std::tuple{dim, h.det, h.holds};
    });
    Csv c({"trial", "dim", "det", "holds"});
    long fails = 0;
    for (size_t t = 0; t < res.size(); ++t) {
      auto [d, det, ok] = res[t];
      fails += !ok;
      c.row({(long long)t, (long long)d, det, (long long)ok});
    }
    run.seeds.push_back({{"module", "bkar.gram_trials"}, {"seed", run.seed}, {"streams", o.gram_trials}});
    run.dir->write_csv("bkar_gram_trials.csv", c);
    run.check("bkar", "gram_hadamard_failures", double(fails), 0, fails == 0);
  }
}

// ---------------------------------------------------------------- gntree

struct GnOpts {
  long trees = 1000;
  int n_max = 6;
  int r_max = 5;
};

void run_gntree(Run& run, const GnOpts& o) {
  run.config["gntree"] = {{"trees", o.trees}, {"n_max", o.n_max}, {"r_max", o.r_max}};
  struct Row {
    int n = 0, r = 0, nodes = 0, e_root = 0, total = 0;
    bool ident = false, quad = false, recount = false;
  };
  auto rows = parallel_map(static_cast<size_t>(o.trees), run.workers, [&](size_t k) {
    auto rng = case_rng(run.seed, 7000000 + k);
    int n = 1 + static_cast<int>(k % o.n_max), r = 1 + static_cast<int>((k / o.n_max) % o.r_max);
    auto in = random_gn_input(rng, n, r);
    auto t = build_gn_tree(in);
    std::vector<int> e;
    for (auto& g : t.nodes) e.push_back(g.e);
    Row w{n, r, static_cast<int>(t.nodes.size()), t.nodes[t.root].e, power_counting(t, run.p.gamma).total,
          verify_inductive_identities(t, in).all_equal(), classify_and_extract(t).quadruped_identity, recount_external_fields(t, in) == e};
    return w;
  });
  run.seeds.push_back({{"module", "gntree.random_trees"}, {"seed", run.seed}, {"streams", o.trees}});
  Csv c({"tree", "n", "r_max", "nodes", "e_root", "power_total", "inductive_identities", "quadruped_identity", "field_recount"});
  long bad = 0;
  for (size_t k = 0; k < rows.size(); ++k) {
    auto& w = rows[k];
    bad += !(w.ident && w.quad && w.recount);
    c.row({(long long)k, (long long)w.n, (long long)w.r, (long long)w.nodes, (long long)w.e_root, (long long)w.total, (long long)w.ident,
           (long long)w.quad, (long long)w.recount});
  }
  run.dir->write_csv("gntree_trees.csv", c);

  Csv pc({"e", "exponent", "class"});
  bool table_ok = true;
  for (int e : {2, 4, 6, 8, 10}) {
    auto cl = power_class(e);
    pc.row({(long long)e, (long long)(2 - e / 2), std::string(to_string(cl))});
    table_ok = table_ok && cl == (e == 2 ? PowerClass::relevant : e == 4 ? PowerClass::marginal : PowerClass::irrelevant);
  }
  run.dir->write_csv("gntree_power_classes.csv", pc);

  auto rng = case_rng(run.seed, 6999999);
  auto in = random_gn_input(rng, std::min(4, o.n_max), std::min(3, o.r_max));
  auto t = build_gn_tree(in);
  run.dir->write("gntree_sample.dot", to_dot(t));
  json nodes = json::array();
  for (size_t i = 0; i < t.nodes.size(); ++i) {
    auto& g = t.nodes[i];
    nodes.push_back({{"id", i}, {"r", g.r}, {"e", g.e}, {"vertices", g.vertices}, {"parent", g.parent}, {"children", g.children},
                     {"class", to_string(power_class(g.e))}});
  }
  run.dir->write_json("gntree_sample.json", {{"root", t.root}, {"order", t.order}, {"r_max", t.r_max}, {"nodes", nodes}});
  run.check("gntree", "identity_failures", double(bad), 0, bad == 0);
  run.check("gntree", "power_class_table", table_ok, 1, table_ok);
}

// ---------------------------------------------------------------- tadpole

struct TadpoleOpts {
  std::vector<int> js;  // empty: 0..jmax
  int nodes = 32;
  int oracle_grid = 400;
  double oracle_T = 0.1;
  std::vector<int> band_js{2, 3, 4, 5};
};

void run_tadpole(Run& run, const TadpoleOpts& o) {
  const ModelParams& p = run.p;
  std::vector<int> js = o.js;
  if (js.empty())
    for (int j = 0; j <= p.jmax(); ++j) js.push_back(j);
  run.config["tadpole"] = {{"j", js}, {"nodes", o.nodes}, {"oracle_grid", o.oracle_grid}, {"oracle_T", o.oracle_T}, {"band_j", o.band_js}};
  auto vals = parallel_map(js.size(), run.workers, [&](size_t i) { return tadpole_slice(js[i], p, o.nodes); });
  Csv c({"j", "tadpole", "bound_unit", "ratio"});
  double lo = 1e300, hi = 0;
  int in_band = 0;
  for (size_t i = 0; i < js.size(); ++i) {
    int j = js[i];
    double unit = std::abs(p.lambda) * (j + p.j0()) * std::pow(p.gamma, -1.5 * j + 0.5 * p.j0());
    double r = std::abs(vals[i]) / unit;
    c.row({(long long)j, vals[i], unit, r});
    if (std::find(o.band_js.begin(), o.band_js.end(), j) != o.band_js.end()) lo = std::min(lo, r), hi = std::max(hi, r), ++in_band;
  }
  run.dir->write_csv("tadpole_scales.csv", c);
  if (in_band >= 2) run.check("tadpole", "bound_ratio_band", hi / lo, 5, hi / lo <= 5);

  // counter-term flow from the same slices
  MuFlow f;
  double tc = 0, mc = 0;
  Csv fl({"r", "tadpole", "delta_mu", "tadpole_cum", "delta_mu_cum", "sum"});
  for (size_t i = 0; i < js.size(); ++i) {
    tc += vals[i];
    mc += -vals[i];
    f.cancels = f.cancels && tc + mc == 0.0;
    fl.row({(long long)js[i], vals[i], -vals[i], tc, mc, tc + mc});
  }
  run.dir->write_csv("tadpole_mu_flow.csv", fl);
  run.check("tadpole", "mu_flow_cancels", f.cancels, 1, f.cancels);

  if (o.oracle_grid > 0) {
    ModelParams q = p;
    q.temperature = o.oracle_T;
    q.jmax_override = -1;
    double v = tadpole_slice(0, q, o.nodes), d = tadpole_dense_grid(0, q, o.oracle_grid);
    double rel = std::abs(v - d) / std::abs(d);
    run.dir->write_json("tadpole_oracle.json", {{"T", o.oracle_T}, {"grid", o.oracle_grid}, {"dos_quadrature", v}, {"dense_grid", d}, {"rel_diff", rel}});
    run.check("tadpole", "dense_grid_oracle_j0", rel, 1e-6, rel < 1e-6);
  }
}

// ---------------------------------------------------------------- selfenergy

struct SelfEnergyOpts {
  int lattice = 0;
  std::string localization = "2piT";
  bool curvature = false;
  std::vector<double> curvature_Ts{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  bool lattice_check = false;
};

void run_selfenergy(Run& run, const SelfEnergyOpts& o) {
  run.config["selfenergy"] = {{"lattice", o.lattice}, {"localization", o.localization}, {"curvature", o.curvature},
                              {"curvature_T", o.curvature_Ts}, {"lattice_check", o.lattice_check}};
  auto lf = o.localization == "piT" ? LocalizationFrequency::pi_t : LocalizationFrequency::two_pi_t;
  auto st = self_energy_study(run.p, SunsetGrid{o.lattice}, lf);
  Csv s({"r", "sup", "bound_ratio", "d1", "d1_ratio", "nu_sup", "nu_ratio", "nu_fd1", "nu_fd2"});
  for (auto& r : st.slices) s.row({(long long)r.r, r.sup, r.bound_ratio, r.d1, r.d1_ratio, r.nu_sup, r.nu_ratio, r.nu_fd1, r.nu_fd2});
  run.dir->write_csv("selfenergy_slices.csv", s);
  Csv g({"r_external", "r_internal", "remainder_sup", "sigma_sup", "ratio", "ratio_other_frequency"});
  for (auto& r : st.gains) g.row({(long long)r.r_external, (long long)r.r_internal, r.remainder_sup, r.sigma_sup, r.ratio, r.ratio_alt});
  run.dir->write_csv("selfenergy_gains.csv", g);
  run.dir->write_json("selfenergy_report.json",
                      {{"params", params_json(run.p)}, {"lattice", st.lattice}, {"tau_nodes", st.tau_nodes}, {"localization", o.localization},
                       {"band", st.band}, {"d1_slope", st.d1_fit.slope}, {"max_gain_above", st.max_gain_above},
                       {"max_gain_above_other_frequency", st.max_gain_above_alt}, {"self_energy", report_json(self_energy_report(st))},
                       {"counterterm_nu", report_json(nu_report(st))}});
  run.check("selfenergy", "slice_bound_band", st.band, 50, st.band <= 50);
  run.check("selfenergy", "nu_cancels_tau_sigma", st.nu_cancels, 1, st.nu_cancels);
  run.check("selfenergy", "remainder_zero_at_localization", st.remainder_zero, 1, st.remainder_zero);
  run.check("selfenergy", "gain_below_one", st.max_gain_above, 1, st.gain_below_one);

  if (o.curvature) {
    auto pts = parallel_map(o.curvature_Ts.size(), run.workers, [&](size_t i) {
      return curvature_sweep(run.p, {o.curvature_Ts[i]}, SunsetGrid{}, false).points.at(0);
    });
    Csv c({"T", "lattice", "lambda", "sup_d2", "face_d2", "dressed_sup", "dressed_at_loc"});
    std::vector<double> x, y;
    for (auto& q : pts) {
      c.row({q.T, (long long)q.lattice, q.lambda, q.sup_d2, q.face_d2, q.dressed_sup, q.dressed_at_loc});
      x.push_back(std::log(1 / q.T));
      y.push_back(std::log(q.sup_d2));
    }
    run.dir->write_csv("selfenergy_curvature.csv", c);
    json cj;
    if (x.size() >= 2) {
      auto fit = ols(x, y);
      cj = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
      run.check("selfenergy", "curvature_slope", fit.slope, 0.3, std::abs(fit.slope - 1) <= 0.3);
    }
    if (o.lattice_check) {
      auto lc = curvature_sweep(run.p, {*std::min_element(o.curvature_Ts.begin(), o.curvature_Ts.end())}, SunsetGrid{}, true);
      cj["lattice_change"] = lc.lattice_change;
    }
    run.dir->write_json("selfenergy_curvature_fit.json", cj);
  }
}

// ---------------------------------------------------------------- phase

struct PhaseOpts {
  double c1 = 1, c2 = 1;
  std::string regime = "mu0_fixed";
  std::optional<double> lambda;
  int grid = 100;
};

void run_phase(Run& run, const PhaseOpts& o) {
  PhaseConstants c{o.c1, o.c2, o.regime == "mu0_below_T" ? PhaseRegime::mu0_below_T : PhaseRegime::mu0_fixed};
  c.validate();
  double lam = o.lambda.value_or(run.p.lambda);
  run.config["phase"] = {{"c1", o.c1}, {"c2", o.c2}, {"regime", o.regime}, {"lambda", lam}, {"grid", o.grid}};
  double mu0 = run.p.mu0;
  double Tc = critical_temperature(lam, mu0, c);
  double back = lambda_max(Tc, mu0, c);
  double rel = std::abs(back - std::abs(lam)) / std::abs(lam);
  run.dir->write_json("phase_tc.json", {{"lambda", lam}, {"mu0", mu0}, {"C1", o.c1}, {"C2", o.c2}, {"regime", to_string(c.regime)},
                                        {"T_c", Tc}, {"lambda_max_at_T_c", back}, {"round_trip_rel_err", rel}});
  std::printf("T_c = %.6g\n", Tc);
  run.check("phase", "round_trip_rel_err", rel, 1e-10, rel <= 1e-10);
  if (o.grid >= 2) {
    auto Ts = log_grid(1e-10, 1e-2, o.grid), mus = log_grid(1e-6, 0.5, o.grid);
    auto rows = phase_grid(Ts, mus, c);
    Csv g({"T", "mu0", "lambda_max", "inclusion"});
    long bad = 0;
    for (auto& r : rows) {
      g.row({r.T, r.mu0, r.lambda_max, (long long)r.inclusion});
      bad += !r.inclusion;
    }
    run.dir->write_csv("phase_grid.csv", g);
    run.check("phase", "domain_inclusion_failures", double(bad), 0, bad == 0);
  }
}

// ---------------------------------------------------------------- driver

std::string timestamp() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

json versions() {
  return {{"program", std::string(program_version)},
          {"compiler", __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"cli11", CLI11_VERSION},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"schema_version", io::schema_version}};
}

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  CLI::App app{"Multiscale analysis laboratory for the half-filled square-lattice model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI configuration file ([section] per subcommand)");

  ModelParams p;
  std::uint64_t seed = 1;
  unsigned workers = default_workers();
  std::string out_root = "runs", run_name;
  app.add_option("--gamma", p.gamma, "scale ratio (>= 10)")->capture_default_str();
  app.add_option("--mu0", p.mu0, "distance from half filling, 0 < mu0 < 1")->capture_default_str();
  app.add_option("--T,--temperature", p.temperature, "temperature")->capture_default_str();
  app.add_option("--lambda", p.lambda, "coupling")->capture_default_str();
  app.add_option("--jmax", p.jmax_override, "override of the largest scale index (-1: from T)")->capture_default_str();
  app.add_option("--seed", seed, "seed for randomized searches")->capture_default_str();
  app.add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::Range(1u, 1024u));
  app.add_option("--out", out_root, "output root")->envname("HRG_OUT_ROOT")->capture_default_str();
  app.add_option("--run-name", run_name, "run directory name (default: subcommand and UTC timestamp)");

  GeometryOpts go;
  auto* geo = app.add_subcommand("geometry", "Fermi-surface curvature and shell widths");
  geo->add_option("--mu0-list", go.mu0s)->capture_default_str();
  geo->add_option("--points", go.points)->check(CLI::PositiveNumber)->capture_default_str();
  geo->add_option("--j", go.js)->capture_default_str();

  SectorOpts so;
  auto* sec = app.add_subcommand("sectors", "sector table, constraint search and counting sums");
  sec->add_option("--j", so.js)->capture_default_str();
  sec->add_option("--quadruples", so.quadruples, "momentum-conserving quadruples to test (0: skip)")->capture_default_str();
  sec->add_flag("--counting", so.counting, "evaluate the counting sums");
  sec->add_option("--counting-j", so.counting_js)->capture_default_str();
  sec->add_option("--counting-j0", so.counting_j0s)->capture_default_str();

  PropagatorOpts po;
  auto* prop = app.add_subcommand("propagator", "direct-space sector slices and their scaling");
  prop->add_option("--j", po.js)->capture_default_str();
  prop->add_option("--nodes", po.grid.gauss_nodes)->capture_default_str();
  prop->add_option("--x-extent", po.grid.x_extent)->capture_default_str();
  prop->add_option("--x-points", po.grid.x_points)->capture_default_str();
  prop->add_option("--x0-points", po.grid.x0_points)->capture_default_str();

  BkarOpts bo;
  auto* bk = app.add_subcommand("bkar", "forest formula, forest counts and Gram-Hadamard trials");
  bk->add_option("--n", bo.n)->check(CLI::Range(1, 5))->capture_default_str();
  bk->add_option("--nodes", bo.nodes)->check(CLI::PositiveNumber)->capture_default_str();
  bk->add_option("--gram-trials", bo.gram_trials)->capture_default_str();
  bk->add_option("--gram-dim", bo.gram_dim)->check(CLI::Range(1, 12))->capture_default_str();

  GnOpts gn;
  auto* gt = app.add_subcommand("gntree", "random GN trees, inductive identities and power counting");
  gt->add_option("--trees", gn.trees)->capture_default_str();
  gt->add_option("--n-max", gn.n_max)->check(CLI::Range(1, 8))->capture_default_str();
  gt->add_option("--r-max", gn.r_max)->check(CLI::Range(1, 10))->capture_default_str();

  TadpoleOpts to;
  auto* tad = app.add_subcommand("tadpole", "sliced tadpole, mass counter-term flow and grid oracle");
  tad->add_option("--j", to.js, "scales (default 0..jmax)");
  tad->add_option("--nodes", to.nodes)->capture_default_str();
  tad->add_option("--oracle-grid", to.oracle_grid, "dense-grid side for the j = 0 check (0: skip)")->capture_default_str();
  tad->add_option("--oracle-T", to.oracle_T)->capture_default_str();
  tad->add_option("--band-j", to.band_js)->capture_default_str();

  SelfEnergyOpts se;
  auto* sig = app.add_subcommand("selfenergy", "second-order self-energy slices, counter-terms and curvature");
  sig->add_option("--lattice", se.lattice, "lattice side (0: automatic)")->capture_default_str();
  sig->add_option("--localization", se.localization)->check(CLI::IsMember({"2piT", "piT"}))->capture_default_str();
  sig->add_flag("--curvature", se.curvature, "run the temperature sweep of the second derivative");
  sig->add_option("--curvature-T", se.curvature_Ts)->capture_default_str();
  sig->add_flag("--lattice-check", se.lattice_check);

  PhaseOpts ph;
  auto* pha = app.add_subcommand("phase", "analyticity radius, critical temperature and domain inclusion");
  pha->add_option("--c1", ph.c1)->capture_default_str();
  pha->add_option("--c2", ph.c2)->capture_default_str();
  pha->add_option("--regime", ph.regime)->check(CLI::IsMember({"mu0_fixed", "mu0_below_T"}))->capture_default_str();
  pha->add_option("--lambda", ph.lambda, "coupling (default: the global one)");
  pha->add_option("--grid", ph.grid)->capture_default_str();

  app.add_subcommand("all", "every module with its configured defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Run run;
  run.p = p;
  run.seed = seed;
  run.workers = workers;
  std::string sub = app.get_subcommands().front()->get_name();
  try {
    p.validate();
    if (p.jmax_override >= 0 && p.jmax_override < 1) throw InvalidParameter("jmax override must be >= 1");
    run.config = {{"subcommand", sub}, {"model", params_json(p)}, {"seed", seed}};

    io::fs::path root(out_root);
    std::string tmp_name = run_name.empty() ? sub + "-" + timestamp() : run_name;
    io::fs::path dir = root / tmp_name;
    for (int k = 2; run_name.empty() && io::fs::exists(dir); ++k) dir = root / (tmp_name + "-" + std::to_string(k));
    io::RunDir rd(dir);
    run.dir = &rd;

    auto t0 = std::chrono::steady_clock::now();
    auto timed = [&](const char* name, auto&& f) {
      auto s = std::chrono::steady_clock::now();
      f();
      std::printf("[%s] %.2f s\n", name, std::chrono::duration<double>(std::chrono::steady_clock::now() - s).count());
    };
    bool every = sub == "all";
    if (every || sub == "geometry") timed("geometry", [&] { run_geometry(run, go); });
    if (every || sub == "sectors") timed("sectors", [&] { run_sectors(run, so); });
    if (every || sub == "propagator") timed("propagator", [&] { run_propagator(run, po); });
    if (every || sub == "bkar") timed("bkar", [&] { run_bkar(run, bo); });
    if (every || sub == "gntree") timed("gntree", [&] { run_gntree(run, gn); });
    if (every || sub == "tadpole") timed("tadpole", [&] { run_tadpole(run, to); });
    if (every || sub == "selfenergy") timed("selfenergy", [&] { run_selfenergy(run, se); });
    if (every || sub == "phase") timed("phase", [&] { run_phase(run, ph); });

    Csv checks({"module", "check", "value", "threshold", "pass"});
    bool ok = true;
    for (auto& c : run.checks) {
      checks.row({c.module, c.name, c.value, c.threshold, (long long)c.pass});
      ok = ok && c.pass;
    }
    rd.write_csv("checks.csv", checks);

    json manifest{{"schema_version", io::schema_version},
                  {"subcommand", sub},
                  {"config", run.config},
                  {"config_sha256", io::sha256_hex(run.config.dump())},
                  {"seed", seed},
                  {"seeded_searches", run.seeds},
                  {"versions", versions()},
                  {"files", rd.files()},
                  {"run", {{"timestamp", timestamp()}, {"workers", workers}, {"directory", dir.string()}}},
                  {"status", ok ? "pass" : "property_check_failure"}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
    std::printf("run directory: %s\n", dir.string().c_str());
    std::printf("total %.2f s\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return ok ? 0 : 1;
  } catch (const InvalidParameter& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const OutOfRegime& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const InconsistentAssignment& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const TadpoleNotConverged& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const QuadratureNotConverged& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const QuadratureNotConvergedBkar& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const GridTooSmall& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const PoleProximity& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const io::IoError& e) {
    std::fprintf(stderr, "output error: %s\n", e.what());
    return 2;  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 3;
  }
}
