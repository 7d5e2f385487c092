#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fsqkd/acceptance.hpp"
#include "fsqkd/skr.hpp"
#include "fsqkd/trace.hpp"

using namespace fsqkd;

namespace {

// Values below come from tests/oracles/skr_oracle.py (mpmath, 50 digits).
constexpr double kZ60 = 0.33017353437245692288;
constexpr double kVB60 = 1.0745556281199999969;
constexpr double kLambda1 = 1.2531668557767667475;
constexpr double kLambda2 = 1.0277224838967667556;
constexpr double kLambda3Hom = 1.2482443342714426801;
constexpr double kLambda3Het = 1.2474516077938141415;
constexpr double kIHom60 = 0.016894342452751779823;
constexpr double kSHomUntrustedCov = 0.11349134804822456924;
constexpr double kSHom60 = 0.010288874284921967931;
constexpr double kG05 = 1.3774437510817342722;
constexpr double kSkrHom60 = 0.004916033922554634285;
constexpr double kSkrHet30 = 0.0056797611718406657758;
constexpr double kIHet30 = 0.027558917737300690876;
constexpr double kSHet30 = 0.019123264791729956625;

SystemParams hom60() {
  SystemParams p;
  p.transmittance = 0.4433;
  p.detector_efficiency = 0.99;
  p.visibility = 0.6;
  p.modulation_variance = 0.3;
  p.excess_noise = 0.001;
  p.electronic_noise = 0.027;
  p.reconciliation_efficiency = 0.9;
  p.detection = Detection::homodyne;
  return p;
}

SystemParams het30() {
  auto p = hom60();
  p.transmittance = 0.0644;
  p.visibility = 0.55;
  p.modulation_variance = 2.0;
  p.detection = Detection::heterodyne;
  return p;
}

}  // namespace

TEST_SUITE("skr") {
  TEST_CASE("covariance entries for the 60 cm homodyne fixture") {
    const auto p = hom60();
    CHECK(correlation_coefficient(p) == doctest::Approx(kZ60).epsilon(1e-14));
    CHECK(bob_variance_model(p) == doctest::Approx(kVB60).epsilon(1e-14));
    const auto cov = build_covariance(p);
    CHECK(cov.v == doctest::Approx(1.3));
    CHECK(cov.z == doctest::Approx(kZ60).epsilon(1e-14));
    CHECK(cov.v_b == doctest::Approx(kVB60).epsilon(1e-14));
    CHECK(build_covariance(p, 1.2).v_b == 1.2);
  }

  TEST_CASE("symplectic eigenvalues and conditional lambda3") {
    const auto cov = build_covariance(hom60());
    const auto s = symplectic_spectrum(cov);
    CHECK(s.lambda1 == doctest::Approx(kLambda1).epsilon(1e-13));
    CHECK(s.lambda2 == doctest::Approx(kLambda2).epsilon(1e-13));
    CHECK(lambda3(cov, Detection::homodyne) == doctest::Approx(kLambda3Hom).epsilon(1e-13));
    CHECK(lambda3(cov, Detection::heterodyne) == doctest::Approx(kLambda3Het).epsilon(1e-13));
  }

  TEST_CASE("closed form agrees with the Omega*Gamma eigen solver") {
    for (double z : {0.0, 0.1, kZ60, 0.9}) {
      TwoModeCovariance cov{1.3, kVB60, z};
      if (cov.v * cov.v_b - z * z < 1.0) continue;
      const auto a = symplectic_spectrum(cov);
      const auto b = brute_force_symplectic(cov);
      CHECK(a.lambda1 == doctest::Approx(b.lambda1).epsilon(1e-12));
      CHECK(a.lambda2 == doctest::Approx(b.lambda2).epsilon(1e-12));
    }
  }

  TEST_CASE("G function") {
    CHECK(g_function(0.0) == 0.0);
    CHECK(g_function(0.5) == doctest::Approx(kG05).epsilon(1e-15));
    CHECK(g_function(1.0) == doctest::Approx(2.0));
  }

  TEST_CASE("mutual information and Holevo bound") {
    CHECK(mutual_information(hom60()) == doctest::Approx(kIHom60).epsilon(1e-14));
    CHECK(mutual_information(het30()) == doctest::Approx(kIHet30).epsilon(1e-14));
    CHECK(holevo_bound(build_covariance(hom60()), Detection::homodyne) ==
          doctest::Approx(kSHomUntrustedCov).epsilon(1e-12));
  }

  TEST_CASE("key rate with trusted electronic noise") {
    const auto hom = compute_skr(hom60());
    CHECK(hom.skr == doctest::Approx(kSkrHom60).epsilon(1e-11));
    CHECK(hom.holevo_bound == doctest::Approx(kSHom60).epsilon(1e-11));
    CHECK(hom.covariance.v_b == doctest::Approx(kVB60 - 0.027).epsilon(1e-14));
    CHECK(hom.positive);

    const auto het = compute_skr(het30());
    CHECK(het.skr == doctest::Approx(kSkrHet30).epsilon(1e-11));
    CHECK(het.holevo_bound == doctest::Approx(kSHet30).epsilon(1e-11));
    CHECK(het.positive);
  }

  TEST_CASE("untrusted electronic noise leaves v_el in the covariance") {
    auto p = hom60();
    p.trust = NoiseTrust::untrusted;
    const auto r = compute_skr(p);
    CHECK(r.holevo_bound == doctest::Approx(kSHomUntrustedCov).epsilon(1e-12));
    CHECK(r.skr == doctest::Approx(0.9 * kIHom60 - kSHomUntrustedCov).epsilon(1e-12));
    CHECK_FALSE(r.positive);
  }

  TEST_CASE("zero visibility carries no key") {
    auto p = hom60();
    p.visibility = 0.0;
    const auto r = compute_skr(p);
    CHECK(r.mutual_information == 0.0);
    CHECK(r.skr <= 0.0);
    CHECK_FALSE(r.positive);
  }

  TEST_CASE("excess noise estimators") {
    CHECK(excess_noise_estimate(1.05, 0.027, 0.4433, Detection::homodyne) ==
          doctest::Approx(0.051883600270697044891).epsilon(1e-14));
    CHECK(excess_noise_estimate(1.05, 0.027, 0.4433, Detection::heterodyne) ==
          doctest::Approx(2 * 0.051883600270697044891).epsilon(1e-14));
    const auto p = hom60();
    CHECK(excess_noise_model_consistent(bob_variance_model(p), 0.027, p) ==
          doctest::Approx(p.excess_noise).epsilon(1e-9));
  }

  TEST_CASE("parameter validation") {
    auto bad = [](auto mutate) {
      auto p = hom60();
      mutate(p);
      return p;
    };
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.transmittance = 1.5; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.transmittance = -0.1; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.visibility = 1.01; })), std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.modulation_variance = -1; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.excess_noise = -1e-3; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.electronic_noise = -1e-3; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.reconciliation_efficiency = 1.2; })),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_skr(bad([](auto& p) { p.detector_efficiency = std::nan(""); })),
                    std::invalid_argument);
  }

  TEST_CASE("detection names") {
    CHECK(detection_from_string("homodyne") == Detection::homodyne);
    CHECK(detection_from_string("heterodyne") == Detection::heterodyne);
    CHECK_THROWS_AS(detection_from_string("photon-counting"), std::invalid_argument);
    CHECK(std::string(to_string(Detection::heterodyne)) == "heterodyne");
  }

  TEST_CASE("modulation optimizer") {
    auto p = hom60();
    const auto r = optimize_modulation_variance(p, 0.01, 20.0);
    CHECK(r.positive);
    CHECK(r.modulation_variance > 0.01);
    CHECK(r.modulation_variance < 20.0);
    for (double va : {0.05, 0.2, 0.5, 1.0, 3.0}) {
      p.modulation_variance = va;
      CHECK(compute_skr(p).skr <= r.skr + 1e-12);
    }
    CHECK_THROWS_AS(optimize_modulation_variance(p, 2.0, 1.0), std::invalid_argument);
  }

  TEST_CASE("maximum tolerable excess noise is the zero crossing") {
    const auto p = hom60();
    const double xi = max_tolerable_excess_noise(p);
    CHECK(xi > 0.0);
    CHECK(xi < 1.0);
    auto below = p;
    below.excess_noise = xi * 0.98;
    CHECK(optimize_modulation_variance(below, 0.01, 20.0).skr > 0.0);
    auto above = p;
    above.excess_noise = xi * 1.02;
    CHECK(optimize_modulation_variance(above, 0.01, 20.0).skr < 0.0);

    auto dark = p;
    dark.transmittance = 0.0;
    CHECK(max_tolerable_excess_noise(dark) == 0.0);
  }
}
