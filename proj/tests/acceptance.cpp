#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>

#include "hrg/forest.hpp"
#include "hrg/gn_tree.hpp"
#include "hrg/io.hpp"
#include "hrg/parallel.hpp"
#include "hrg/perturbation.hpp"
#include "hrg/phase_map.hpp"
#include "hrg/sectors.hpp"

using namespace hrg;
namespace fs = std::filesystem;

namespace {

// gates
constexpr double partition_tol = 1e-12;
constexpr double curvature_fd_tol = 1e-4;
constexpr double closed_form_tol = 1e-8;
constexpr double counting_band_max = 4;
constexpr double sup_slope_tol = 0.15, l1_slope_tol = 0.2, decay_slope_tol = 0.2;
constexpr double bkar_tol = 1e-8;
constexpr double tadpole_band_max = 5, tadpole_oracle_tol = 1e-6;
constexpr double slice_band_max = 50, curvature_slope_tol = 0.3;
constexpr double phase_round_trip_tol = 1e-10;

// budgets in seconds
constexpr double budget[14] = {0, 1, 10, 60, 30, 600, 120, 10, 30, 300, 300, 1800, 1, 1e9};

unsigned workers = default_workers();
int passed = 0, failed = 0;

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void report(int id, const char* name, bool ok, double secs, const std::string& detail) {
  bool in_time = secs <= budget[id];
  bool pass = ok && in_time;
  (pass ? passed : failed)++;
  std::printf("CRITERION %2d %s  %-28s %s; %.2f s (budget %g s%s)\n", id, pass ? "PASS" : "FAIL", name, detail.c_str(), secs, budget[id],
              in_time ? "" : ", exceeded");
}

template <class... A>
std::string fmt(const char* f, A... a) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

void c1_partition() {
  auto t0 = std::chrono::steady_clock::now();
  auto chi = make_bump();
  const double g = 10;
  const int J = 8;
  PartitionSet ps(chi, g, J, 2);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-18, 0.5);
  double worst_scale = 0, worst_raw = 0, worst_completed = 0;
  for (int i = 0; i < 100000; ++i) {
    double t = std::pow(10.0, u(rng));
    worst_scale = std::max(worst_scale, std::abs(ps.partial_sum(t, J) - (1 - chi(std::pow(g, 2 * J) * t))));
    int j = i % (J + 1);
    double raw = 0, comp = 0;
    for (int s = 0; s <= j; ++s) raw += ps.window(t, s, j);
    for (int s = window_floor(j, 2); s <= j; ++s) comp += ps.completed(t, s, j);
    worst_raw = std::max(worst_raw, std::abs(raw - chi(t)));
    worst_completed = std::max(worst_completed, std::abs(comp - 1));
  }
  double w = std::max({worst_scale, worst_raw, worst_completed});
  report(1, "partition_of_unity", w < partition_tol, seconds_since(t0),
         fmt("max residual chi_j %.2e, v_s %.2e, completed v_s %.2e (gate %.0e, 1e5 points)", worst_scale, worst_raw, worst_completed,
             partition_tol));
}

void c2_geometry() {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0, worst_special = 0;
  for (double mu0 : {0.1, 0.01}) {
    auto fsh = fermi_surface(mu0);
    auto errs = parallel_map(1000, workers, [&](size_t i) {
      Vec2 q = fsh->on_ray(2 * pi * (i + 0.37) / 1000);
      double a = curvature_radius_closed(q.x, q.y, mu0);
      return std::abs(a - curvature_radius_fd(q, mu0)) / a;
    });
    for (double e : errs) worst = std::max(worst, e);
    Vec2 f = face_center(mu0), c = corner_point(mu0);
    worst_special = std::max({worst_special, std::abs(curvature_radius_closed(f.x, f.y, mu0) / r_max_closed(mu0) - 1),
                              std::abs(curvature_radius_closed(c.x, c.y, mu0) / r_min_closed(mu0) - 1)});
  }
  report(2, "geometry_closed_forms", worst < curvature_fd_tol && worst_special < closed_form_tol, seconds_since(t0),
         fmt("curvature vs traced FD max rel %.2e (gate %.0e); R_max/R_min rel %.2e (gate %.0e)", worst, curvature_fd_tol, worst_special,
             closed_form_tol));
}

void c3_conservation() {
  auto t0 = std::chrono::steady_clock::now();
  ModelParams p;
  p.mu0 = 0.01;
  p.temperature = 1e-5;
  SectorClassifier cls(p);
  const long total = 1000000, chunk = 10000;
  auto reps = parallel_map(total / chunk, workers, [&](size_t i) { return conservation_search(cls, chunk, 2024, i, 1); });
  long acc = 0, bad = 0;
  for (auto& r : reps) acc += r.accepted, bad += r.violations;
  std::string ex;
  if (!reps.empty())
    for (auto& r : reps)
      if (!r.examples.empty()) {
        std::ostringstream os;
        for (auto& s : r.examples[0]) os << s;
        ex = ", e.g. " + os.str();
        break;
      }
  report(3, "sector_constraint", bad == 0, seconds_since(t0),
         fmt("%ld violations in %ld quadruples (%.1f%%) at mu0 = 0.01, T = 1e-5%s", bad, acc, 100.0 * bad / acc, ex.c_str()));
}

void c4_counting() {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<int, int>> cases;
  for (int j0 = 1; j0 <= 3; ++j0)
    for (int j = 2; j <= 10; ++j) cases.push_back({j, j0});
  auto sup = parallel_map(cases.size(), workers, [&](size_t i) {
    double m = 0;
    for (auto& s : enumerate_sectors(cases[i].first, cases[i].second)) m = std::max(m, counting_sum(cases[i].first, cases[i].second, s, 10));
    return m / (cases[i].first + cases[i].second);
  });
  double lo = *std::min_element(sup.begin(), sup.end()), hi = *std::max_element(sup.begin(), sup.end());
  report(4, "sector_counting", hi / lo <= counting_band_max, seconds_since(t0),
         fmt("sup_sigma4 sum/(j+j0) in [%.3g, %.3g], band %.2f (gate %.0f)", lo, hi, hi / lo, counting_band_max));
}

void c5_propagator() {
  auto t0 = std::chrono::steady_clock::now();
  std::vector<int> js{2, 3, 4, 5};
  auto slices = parallel_map(js.size(), workers, [&](size_t i) {
    int j = js[i];
    ModelParams p;
    p.mu0 = 0.01;
    p.temperature = std::pow(p.gamma, -j) / 40;
    p.jmax_override = j + 2;
    auto sl = direct_space_slice({j, window_floor(j, p.j0()), j, p.j0()}, SliceGrid{}, p);
    measure_decay_lengths(sl, 0.05);
    sl.values.clear();
    sl.values.shrink_to_fit();
    return sl;
  });
  double s = scaling_regression(slices, ScalingTarget::supnorm, 10).slope;
  double l = scaling_regression(slices, ScalingTarget::l1, 10).slope;
  double dp = scaling_regression(slices, ScalingTarget::decay_plus, 10).slope;
  double dm = scaling_regression(slices, ScalingTarget::decay_minus, 10).slope;
  bool ok = std::abs(s - 1) <= sup_slope_tol && std::abs(l - 1) <= l1_slope_tol && std::abs(dp - 1) <= decay_slope_tol &&
            std::abs(dm - 1) <= decay_slope_tol;
  report(5, "propagator_scaling", ok, seconds_since(t0),
         fmt("slopes sup %.4f (1+-%.2f), L1 %.4f (1+-%.2f), decay+ %.4f, decay- %.4f (1+-%.2f)", s, sup_slope_tol, l, l1_slope_tol, dp, dm,
             decay_slope_tol));
}

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
      for (int j = i + 1; j < n; ++j) m[i][j] = m[j][i] = x[pair_index(n, i, j)] * Jet(g[pair_index(n, i, j)]);
    return jet_determinant(m);
  };
}

void c6_bkar() {
  auto t0 = std::chrono::steady_clock::now();
  long c2 = enumerate_forests(2).size(), c3 = enumerate_forests(3).size(), c4 = enumerate_forests(4).size();
  double e = bkar_verify(exp_functional(0.3), 3, 32).abs_err;
  double d = bkar_verify(gram_det_functional(3, {0.4, -0.3, 0.25}), 3, 32).abs_err;
  bool ok = c2 == 2 && c3 == 7 && c4 == 38 && e < bkar_tol && d < bkar_tol;
  report(6, "bkar_formula", ok, seconds_since(t0),
         fmt("forests {%ld, %ld, %ld}; abs_err exp %.1e, Gram det %.1e (gate %.0e, n = 3, 32 nodes)", c2, c3, c4, e, d, bkar_tol));
}

void c7_gram() {
  auto t0 = std::chrono::steady_clock::now();
  auto ok = parallel_map(10000, workers, [](size_t t) {
    auto rng = case_rng(77, t);
    std::normal_distribution<double> nd;
    int dim = 1 + static_cast<int>(t % 8);
    std::vector<Eigen::VectorXd> A, B;
    for (int i = 0; i < dim; ++i) {
      Eigen::VectorXd a(dim), b(dim);
      for (int k = 0; k < dim; ++k) a[k] = nd(rng), b[k] = nd(rng);
      A.push_back(a);
      B.push_back(b);
    }
    return gram_hadamard_check(A, B).holds;
  });
  long fails = std::count(ok.begin(), ok.end(), false);
  report(7, "gram_hadamard", fails == 0, seconds_since(t0), fmt("%ld failures in 10000 systems, dimension 1..8", fails));
}

void c8_gn() {
  auto t0 = std::chrono::steady_clock::now();
  auto bad = parallel_map(1000, workers, [](size_t k) {
    auto rng = case_rng(88, k);
    auto in = random_gn_input(rng, 1 + static_cast<int>(k % 6), 1 + static_cast<int>((k / 6) % 5));
    auto t = build_gn_tree(in);
    std::vector<int> e;
    for (auto& g : t.nodes) e.push_back(g.e);
    return !(verify_inductive_identities(t, in).all_equal() && classify_and_extract(t).quadruped_identity && recount_external_fields(t, in) == e);
  });
  long nb = std::count(bad.begin(), bad.end(), true);
  bool table = power_class(2) == PowerClass::relevant && power_class(4) == PowerClass::marginal && power_class(6) == PowerClass::irrelevant &&
               power_class(8) == PowerClass::irrelevant;
  report(8, "gn_tree_identities", nb == 0 && table, seconds_since(t0),
         fmt("%ld identity failures in 1000 trees (n <= 6); power-class table %s", nb, table ? "exact" : "wrong"));
}

void c9_tadpole() {
  auto t0 = std::chrono::steady_clock::now();
  ModelParams p;
  p.mu0 = 0.01;
  p.temperature = 1e-6;
  p.lambda = 1;
  std::vector<int> js{2, 3, 4, 5};
  auto v = parallel_map(js.size(), workers, [&](size_t i) { return tadpole_slice(js[i], p); });
  std::string rs;
  double lo = 1e300, hi = 0;
  for (size_t i = 0; i < js.size(); ++i) {
    int j = js[i];
    double r = std::abs(v[i]) / ((j + p.j0()) * std::pow(p.gamma, -1.5 * j + 0.5 * p.j0()));
    lo = std::min(lo, r), hi = std::max(hi, r);
    rs += fmt("%s%.3g", i ? ", " : "", r);
  }
  ModelParams q = p;
  q.temperature = 0.1;
  double a = tadpole_slice(0, q), b = tadpole_dense_grid(0, q, 400);
  double rel = std::abs(a - b) / std::abs(b);
  report(9, "tadpole_bound", hi / lo <= tadpole_band_max && rel < tadpole_oracle_tol, seconds_since(t0),
         fmt("ratios j=2..5 {%s}, band %.2f (gate %.0f); j=0 oracle rel %.1e (gate %.0e)", rs.c_str(), hi / lo, tadpole_band_max, rel,
             tadpole_oracle_tol));
}

struct Study {
  SelfEnergyStudy st;
  double secs = 0;
};

const Study& study() {
  static Study s = [] {
    auto t0 = std::chrono::steady_clock::now();
    ModelParams p;
    p.mu0 = 0.01;
    p.temperature = 1e-3;
    p.lambda = 0.01;
    Study r{self_energy_study(p, SunsetGrid{2048}), 0};
    r.secs = seconds_since(t0);
    return r;
  }();
  return s;
}

void c10_cancellations() {
  auto t0 = std::chrono::steady_clock::now();
  bool flow = true;
  for (double mu0 : {0.005, 0.01, 0.02})
    for (double lam : {1e-3, 1e-2, -1e-2}) {
      ModelParams p;
      p.mu0 = mu0;
      p.temperature = 1e-3;
      p.lambda = lam;
      flow = flow && delta_mu_flow(p, p.jmax()).cancels;
    }
  double own = seconds_since(t0);
  const auto& s = study();
  bool ok = flow && s.st.nu_cancels && s.st.remainder_zero && s.st.gain_below_one;
  report(10, "renormalization_cancellations", ok, own + s.secs,
         fmt("delta_mu + T exact %s; nu + tau Sigma exact %s; remainder at localization %s; max gain (r_ext > r_int) %.3g at k0 = 2piT "
             "(gate < 1), %.3g with k0 = piT",
             flow ? "yes" : "no", s.st.nu_cancels ? "yes" : "no", s.st.remainder_zero ? "zero" : "nonzero", s.st.max_gain_above,
             s.st.max_gain_above_alt));
}

void c11_self_energy() {
  auto t0 = std::chrono::steady_clock::now();
  const auto& s = study();
  double before = seconds_since(t0);
  ModelParams base;
  base.mu0 = 0.01;
  std::vector<double> Ts{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  auto t1 = std::chrono::steady_clock::now();
  auto sw = curvature_sweep(base, Ts);
  std::string vals;
  for (auto& q : sw.points) vals += fmt("%s%.3g", vals.empty() ? "" : ", ", q.sup_d2);
  bool ok = s.st.band <= slice_band_max && std::abs(sw.fit.slope - 1) <= curvature_slope_tol;
  report(11, "self_energy_scaling", ok, seconds_since(t1) + (before > 1 ? before : s.secs),
         fmt("slice band %.2f (gate %.0f, L = %d); |d2 Sigma|/lambda^2 = {%s}, log-log slope %.3f (gate 1+-%.1f), lattice change %.2g%%", s.st.band,
             slice_band_max, s.st.lattice, vals.c_str(), sw.fit.slope, curvature_slope_tol, 100 * sw.lattice_change));
}

void c12_phase() {
  auto t0 = std::chrono::steady_clock::now();
  PhaseConstants c;
  double worst = 0;
  for (double l : {1e-4, 1e-3, 1e-2, 5e-2})
    for (double mu0 : {1e-3, 1e-2, 0.1}) worst = std::max(worst, std::abs(lambda_max(critical_temperature(l, mu0, c), mu0, c) / l - 1));
  auto rows = phase_grid(log_grid(1e-10, 1e-2, 100), log_grid(1e-6, 0.5, 100), c);
  long bad = std::count_if(rows.begin(), rows.end(), [](const PhaseRow& r) { return !r.inclusion; });
  report(12, "phase_map_algebra", worst <= phase_round_trip_tol && bad == 0, seconds_since(t0),
         fmt("round trip max rel %.1e (gate %.0e); inclusion failures %ld of %zu", worst, phase_round_trip_tol, bad, rows.size()));
}

void c13_determinism() {
  auto t0 = std::chrono::steady_clock::now();
  fs::path dir = fs::temp_directory_path() / ("hrg_acceptance_" + std::to_string(getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "all.ini");
    f << "mu0 = 0.01\nT = 0.05\nlambda = 0.01\nseed = 13\n\n[geometry]\npoints = 200\n\n[sectors]\nj = [2, 4]\nquadruples = 20000\n"
         "counting = true\ncounting-j = [2, 3, 4]\n\n[propagator]\nj = [2, 3]\nx-points = 33\nx0-points = 256\nx-extent = 16\n\n"
         "[bkar]\ngram-trials = 500\n\n[gntree]\ntrees = 200\n\n[tadpole]\noracle-grid = 400\n\n[selfenergy]\nlattice = 32\ncurvature = true\n"
         "curvature-T = [0.1, 0.05, 0.03]\n\n[phase]\ngrid = 20\n";
  }
  std::vector<int> ws{1, 4, 8};
  std::vector<int> codes;
  for (int w : ws) {
    std::string cmd = std::string(HRG_CLI_PATH) + " --config " + (dir / "all.ini").string() + " all --workers " + std::to_string(w) + " --out " +
                      dir.string() + " --run-name w" + std::to_string(w) + " > " + (dir / ("w" + std::to_string(w) + ".log")).string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    codes.push_back(WIFEXITED(rc) ? WEXITSTATUS(rc) : -1);
  }
  bool ok = true;
  size_t files = 0;
  std::string why;
  try {
    auto m1 = io::json::parse(io::read_file(dir / "w1" / "manifest.json"));
    for (int w : {4, 8}) {
      auto mw = io::json::parse(io::read_file(dir / ("w" + std::to_string(w)) / "manifest.json"));
      if (mw["files"] != m1["files"]) ok = false, why = " (manifest file lists differ)";
    }
    for (auto& f : m1["files"]) {
      std::string a = io::read_file(dir / "w1" / f["name"].get<std::string>());
      for (int w : {4, 8})
        if (a != io::read_file(dir / ("w" + std::to_string(w)) / f["name"].get<std::string>())) ok = false, why = " (" + f["name"].get<std::string>() + ")";
      ++files;
    }
  } catch (const std::exception& e) {
    ok = false;
    why = std::string(" (") + e.what() + ")";
  }
  // the runs themselves report the counting-band property failure (exit 1); anything else is an error
  for (int c : codes) ok = ok && (c == 0 || c == 1);
  report(13, "determinism", ok && files > 0, seconds_since(t0),
         fmt("%zu output files byte-identical across 1, 4, 8 workers: %s%s; exit codes %d/%d/%d", files, ok ? "yes" : "no", why.c_str(), codes[0],
             codes[1], codes[2]));
  if (ok) fs::remove_all(dir);
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  std::printf("acceptance run with %u worker(s)\n", workers);
  std::vector<std::function<void()>> all{c1_partition, c2_geometry, c3_conservation, c4_counting, c5_propagator, c6_bkar,    c7_gram,
                                         c8_gn,        c9_tadpole,  c10_cancellations, c11_self_energy, c12_phase, c13_determinism};
  for (auto& f : all) {
    try {
      f();
    } catch (const std::exception& e) {
      ++failed;
      std::printf("CRITERION    FAIL  (exception: %s)\n", e.what());
    }
  }
  std::printf("SUMMARY %d PASS, %d FAIL\n", passed, failed);
  return failed == 0 ? 0 : 1;
}
