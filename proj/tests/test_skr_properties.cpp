#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <random>

#include "fsqkd/acceptance.hpp"
#include "fsqkd/skr.hpp"

using namespace fsqkd;

namespace {

SystemParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SystemParams p;
  p.transmittance = u(rng);
  p.detector_efficiency = 0.5 + 0.5 * u(rng);
  p.visibility = u(rng);
  p.modulation_variance = 0.01 + 30.0 * u(rng);
  p.excess_noise = 0.2 * u(rng);
  p.electronic_noise = 0.1 * u(rng);
  p.reconciliation_efficiency = 0.8 + 0.2 * u(rng);
  p.detection = u(rng) < 0.5 ? Detection::homodyne : Detection::heterodyne;
  p.trust = u(rng) < 0.5 ? NoiseTrust::trusted : NoiseTrust::untrusted;
  return p;
}

}  // namespace

TEST_SUITE("skr-properties") {
  TEST_CASE("1000 random physical covariances") {
    std::mt19937_64 rng(20240611);
    for (int i = 0; i < 1000; ++i) {
      const auto p = random_params(rng);
      CAPTURE(i);
      const auto cov = build_covariance(p);
      const auto s = symplectic_spectrum(cov);
      const auto b = brute_force_symplectic(cov);
      REQUIRE(std::isfinite(s.lambda1));
      CHECK(s.lambda1 >= s.lambda2);
      CHECK(s.lambda2 >= 1.0 - 1e-12);
      CHECK(s.lambda1 == doctest::Approx(b.lambda1).epsilon(1e-10));
      CHECK(s.lambda2 == doctest::Approx(b.lambda2).epsilon(1e-10));
      // lambda1 * lambda2 = sqrt(det Gamma)
      CHECK(s.lambda1 * s.lambda2 ==
            doctest::Approx(cov.v * cov.v_b - cov.z * cov.z).epsilon(1e-10));
      for (auto d : {Detection::homodyne, Detection::heterodyne}) {
        CHECK(lambda3(cov, d) >= 1.0 - 1e-12);
      }

      const auto r = compute_skr(p);
      CHECK(r.mutual_information >= 0.0);
      CHECK(r.holevo_bound >= -1e-12);
      CHECK(r.skr == doctest::Approx(p.reconciliation_efficiency * r.mutual_information -
                                     r.holevo_bound));
      CHECK(r.positive == (r.skr > 0.0));
    }
  }

  TEST_CASE("pure two-mode squeezed state has unit spectrum") {
    for (double v : {1.0, 1.5, 4.0, 30.0}) {
      TwoModeCovariance cov{v, v, std::sqrt(v * v - 1.0)};
      const auto s = symplectic_spectrum(cov);
      CHECK(s.lambda1 == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(s.lambda2 == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("G is zero at zero, increasing and concave") {
    double prev = g_function(0.0);
    CHECK(prev == 0.0);
    double prev_step = INFINITY;
    for (int k = 1; k <= 200; ++k) {
      const double x = 0.05 * k;
      const double g = g_function(x);
      CHECK(g > prev);
      CHECK(g - prev <= prev_step + 1e-12);
      CHECK(g >= std::log2(x + 1.0));
      prev_step = g - prev;
      prev = g;
    }
  }

  TEST_CASE("key rate is monotone in excess noise and transmittance") {
    SystemParams p;
    p.transmittance = 0.4433;
    p.detector_efficiency = 0.99;
    p.visibility = 0.6;
    p.modulation_variance = 0.3;
    p.electronic_noise = 0.027;
    p.reconciliation_efficiency = 0.9;
    for (auto d : {Detection::homodyne, Detection::heterodyne}) {
      p.detection = d;
      p.modulation_variance = d == Detection::homodyne ? 0.3 : 2.0;
      double prev = INFINITY;
      for (int k = 0; k <= 50; ++k) {
        p.excess_noise = 0.002 * k;
        const double skr = compute_skr(p).skr;
        CHECK(skr < prev);
        prev = skr;
      }
      p.excess_noise = 0.001;
      prev = -INFINITY;
      for (int k = 1; k <= 50; ++k) {
        p.transmittance = 0.02 * k;
        const double skr = compute_skr(p).skr;
        CHECK(skr > prev);
        prev = skr;
      }
      p.transmittance = 0.4433;
    }
  }

  TEST_CASE("key rate is non-decreasing in visibility where a key exists, and in reconciliation efficiency") {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 100; ++trial) {
      SystemParams p = random_params(rng);
      double prev = -INFINITY;
      for (int k = 0; k <= 40; ++k) {
        p.visibility = 0.025 * k;
        const double skr = compute_skr(p).skr;
        if (prev > 0.0) CHECK(skr >= prev - 1e-12);
        prev = skr;
      }
      p = random_params(rng);
      prev = -INFINITY;
      for (int k = 0; k <= 40; ++k) {
        p.reconciliation_efficiency = 0.6 + 0.01 * k;
        const double skr = compute_skr(p).skr;
        CHECK(skr >= prev - 1e-12);
        prev = skr;
      }
    }
  }

  TEST_CASE("visibility folds into the transmittance") {
    std::mt19937_64 rng(505);
    for (int trial = 0; trial < 200; ++trial) {
      SystemParams p = random_params(rng);
      SystemParams folded = p;
      folded.transmittance = p.transmittance * p.visibility * p.visibility;
      folded.visibility = 1.0;
      const auto a = compute_skr(p);
      const auto b = compute_skr(folded);
      CHECK(std::abs(a.skr - b.skr) <= 1e-12);
      CHECK(std::abs(a.holevo_bound - b.holevo_bound) <= 1e-12);
      CHECK(std::abs(a.mutual_information - b.mutual_information) <= 1e-12);
    }
  }

  TEST_CASE("heterodyne and homodyne agree at zero modulation") {
    SystemParams p;
    p.transmittance = 0.3;
    p.visibility = 0.8;
    p.modulation_variance = 0.0;
    for (auto d : {Detection::homodyne, Detection::heterodyne}) {
      p.detection = d;
      const auto r = compute_skr(p);
      CHECK(r.mutual_information == doctest::Approx(0.0));
      CHECK(r.holevo_bound == doctest::Approx(0.0).epsilon(1e-9));
    }
  }
}
