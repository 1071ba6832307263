#include <doctest.h>

#include "hrg/phase_map.hpp"

using namespace hrg;

TEST_CASE("analyticity radius") {
  PhaseConstants c;
  // mu0 T = e^-10
  double mu0 = 0.01, T = std::exp(-10.0) / mu0;
  CHECK(lambda_max(T, mu0, c) == doctest::Approx(0.01).epsilon(1e-13));
  double prev = 0;
  for (double t : log_grid(1e-8, 1e-2, 50)) {
    double l = lambda_max(t, mu0, c);
    CHECK(l > prev);
    prev = l;
  }
  // increasing in T
  CHECK(lambda_max(1e-3, mu0, c) > lambda_max(1e-6, mu0, c));
  CHECK_THROWS_AS(lambda_max(200.0, 0.01, c), OutOfRegime);
  CHECK_THROWS_AS(lambda_max(-1.0, 0.01, c), InvalidParameter);
  CHECK_THROWS_AS(lambda_max(1e-3, 0.01, {0.0, 1.0}), InvalidParameter);
}

TEST_CASE("critical temperature") {
  PhaseConstants c;
  CHECK(critical_temperature(0.01, 0.01, c) == doctest::Approx(100 * std::exp(-10.0)).epsilon(1e-13));
  CHECK(critical_temperature(-0.01, 0.01, c) == critical_temperature(0.01, 0.01, c));
  CHECK_THROWS_AS(critical_temperature(0.0, 0.01, c), std::domain_error);
  // round trip through lambda_max
  for (double l : {1e-3, 5e-3, 0.02}) {
    double Tc = critical_temperature(l, 0.01, c);
    CHECK(lambda_max(Tc, 0.01, c) == doctest::Approx(l).epsilon(1e-10));
  }
  PhaseConstants d{2.0, 3.0, PhaseRegime::mu0_below_T};
  CHECK(d.C1p() == doctest::Approx(std::sqrt(2.0)));
  CHECK(d.C2p() == doctest::Approx(0.75));
  for (double l : {1e-3, 0.02}) {
    double Tc = critical_temperature(l, 1e-9, d);
    CHECK(lambda_max(Tc, 1e-9, d) == doctest::Approx(l).epsilon(1e-10));
  }
  CHECK(to_string(PhaseRegime::mu0_below_T) == "mu0_below_T");
}

TEST_CASE("radius sits inside the connected-function domain") {
  PhaseConstants c;
  auto Ts = log_grid(1e-10, 1e-2, 100), mus = log_grid(1e-6, 0.5, 100);
  auto rows = phase_grid(Ts, mus, c);
  CHECK(rows.size() == 10000);
  int bad = 0;
  for (auto& r : rows) bad += !r.inclusion;
  CHECK(bad == 0);
  CHECK(!in_connected_domain(1.0, 1e-3, 0.01, 1.0));
  CHECK_THROWS_AS(log_grid(1.0, 0.5, 10), InvalidParameter);
  CHECK_THROWS_AS(log_grid(1e-3, 1.0, 1), InvalidParameter);
}
