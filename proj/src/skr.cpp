#include "fsqkd/skr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

namespace fsqkd {

namespace {

void check_unit(const char* name, double x) {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw std::invalid_argument(fmt::format("{} must lie in [0, 1], got {}", name, x));
  }
}

void check_nonnegative(const char* name, double x) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument(fmt::format("{} must be finite and >= 0, got {}", name, x));
  }
}

double checked_sqrt(double x, const char* what) {
  if (x < 0.0) {
    throw std::domain_error(fmt::format("negative radicand in {}: {}", what, x));
  }
  return std::sqrt(x);
}

}  // namespace

const char* to_string(Detection d) {
  return d == Detection::homodyne ? "homodyne" : "heterodyne";
}

Detection detection_from_string(const std::string& s) {
  if (s == "homodyne" || s == "hom") return Detection::homodyne;
  if (s == "heterodyne" || s == "het") return Detection::heterodyne;
  throw std::invalid_argument(fmt::format("unknown detection scheme '{}'", s));
}

SystemParams SystemParams::with_amplitude(SystemParams base, double alpha) {
  base.modulation_variance = 2.0 * alpha * alpha;
  return base;
}

void SystemParams::validate() const {
  check_unit("transmittance", transmittance);
  check_unit("detector_efficiency", detector_efficiency);
  check_unit("visibility", visibility);
  check_unit("reconciliation_efficiency", reconciliation_efficiency);
  check_nonnegative("modulation_variance", modulation_variance);
  check_nonnegative("excess_noise", excess_noise);
  check_nonnegative("electronic_noise", electronic_noise);
}

double correlation_coefficient(const SystemParams& p) {
  const double a2 = p.alpha_squared();
  return 2.0 * checked_sqrt(p.effective_transmittance(), "correlation coefficient") *
         checked_sqrt(a2 * a2 + a2, "correlation coefficient");
}

double bob_variance_model(const SystemParams& p) {
  return 1.0 + p.effective_transmittance() * (2.0 * p.alpha_squared() + p.excess_noise) +
         p.electronic_noise;
}

TwoModeCovariance build_covariance(const SystemParams& p, std::optional<double> measured_v_b) {
  p.validate();
  TwoModeCovariance cov;
  cov.v = p.modulation_variance + 1.0;
  cov.z = correlation_coefficient(p);
  cov.v_b = measured_v_b ? *measured_v_b : bob_variance_model(p);
  return cov;
}

SymplecticSpectrum symplectic_spectrum(const TwoModeCovariance& cov) {
  const double z2 = cov.z * cov.z;
  const double delta = cov.v * cov.v + cov.v_b * cov.v_b - 2.0 * z2;
  const double det = cov.v * cov.v_b - z2;
  double disc = delta * delta - 4.0 * det * det;
  if (disc < -1e-9) {
    throw std::domain_error(fmt::format(
        "non-physical covariance (V={}, V_B={}, Z={}): discriminant {}", cov.v, cov.v_b, cov.z,
        disc));
  }
  disc = std::max(disc, 0.0);
  const double root = std::sqrt(disc);
  SymplecticSpectrum s;
  s.lambda1 = std::sqrt((delta + root) / 2.0);
  // (delta - root)/2 = det^2 / ((delta + root)/2) avoids cancellation when
  // the second eigenvalue is close to 1 and the first is large.
  const double upper = (delta + root) / 2.0;
  s.lambda2 = upper > 0.0 ? std::sqrt(det * det / upper) : 0.0;
  return s;
}

double lambda3(const TwoModeCovariance& cov, Detection d) {
  const double z2 = cov.z * cov.z;
  if (d == Detection::homodyne) {
    if (!(cov.v_b > 0.0)) {
      throw std::domain_error(fmt::format("homodyne lambda3 requires V_B > 0, got {}", cov.v_b));
    }
    return checked_sqrt(cov.v * (cov.v - z2 / cov.v_b), "homodyne lambda3");
  }
  if (!(cov.v_b + 1.0 > 0.0)) {
    throw std::domain_error(fmt::format("heterodyne lambda3 requires V_B > -1, got {}", cov.v_b));
  }
  return cov.v - z2 / (cov.v_b + 1.0);
}

double g_function(double x) {
  if (x < -1e-12 || std::isnan(x)) {
    throw std::domain_error(fmt::format("G(x) requires x >= 0, got {}", x));
  }
  if (x <= 0.0) return 0.0;
  return (x + 1.0) * std::log2(x + 1.0) - x * std::log2(x);
}

double mutual_information(const SystemParams& p) {
  const double t = p.effective_transmittance();
  const double denom = 2.0 + t * p.excess_noise;
  if (!(denom > 0.0)) {
    throw std::domain_error("mutual information denominator is not positive");
  }
  const double bits = std::log2(1.0 + 2.0 * t * p.alpha_squared() / denom);
  return p.detection == Detection::homodyne ? 0.5 * bits : bits;
}

double holevo_bound(const TwoModeCovariance& cov, Detection d, SkrResult* detail) {
  const auto spectrum = symplectic_spectrum(cov);
  const double l3 = lambda3(cov, d);
  // Eigenvalues within 1e-9 below 1 are rounding, not physics.
  auto g_of = [](double lambda) { return g_function(std::max((lambda - 1.0) / 2.0, 0.0)); };
  for (double l : {spectrum.lambda1, spectrum.lambda2, l3}) {
    if (l < 1.0 - 1e-9) {
      throw std::domain_error(fmt::format("symplectic eigenvalue {} below vacuum", l));
    }
  }
  if (detail) {
    detail->symplectic_eigenvalues = {spectrum.lambda1, spectrum.lambda2, l3};
    detail->covariance = cov;
  }
  return g_of(spectrum.lambda1) + g_of(spectrum.lambda2) - g_of(l3);
}

SkrResult compute_skr(const SystemParams& p) {
  auto cov = build_covariance(p);
  if (p.trust == NoiseTrust::trusted) {
    cov.v_b -= p.electronic_noise;
  }
  SkrResult r;
  r.mutual_information = mutual_information(p);
  r.holevo_bound = holevo_bound(cov, p.detection, &r);
  r.skr = p.reconciliation_efficiency * r.mutual_information - r.holevo_bound;
  r.positive = r.skr > 0.0;
  return r;
}

OptimizeResult optimize_modulation_variance(SystemParams p, double lower, double upper) {
  if (!(lower > 0.0) || !(upper > lower)) {
    throw std::invalid_argument(
        fmt::format("modulation search bounds must satisfy 0 < lower < upper, got [{}, {}]",
                    lower, upper));
  }
  auto rate = [&p](double va) {
    p.modulation_variance = va;
    return compute_skr(p).skr;
  };

  constexpr int grid = 64;
  const double step = (upper - lower) / (grid - 1);
  int best = 0;
  double best_rate = rate(lower);
  for (int i = 1; i < grid; ++i) {
    const double r = rate(lower + i * step);
    if (r > best_rate) {
      best_rate = r;
      best = i;
    }
  }

  double a = lower + std::max(best - 1, 0) * step;
  double b = lower + std::min(best + 1, grid - 1) * step;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = rate(c);
  double fd = rate(d);
  while (b - a > 1e-4) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = rate(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = rate(d);
    }
  }

  OptimizeResult out;
  out.modulation_variance = (a + b) / 2.0;
  out.skr = rate(out.modulation_variance);
  if (best_rate > out.skr) {
    out.modulation_variance = lower + best * step;
    out.skr = best_rate;
  }
  out.positive = out.skr > 0.0;
  return out;
}

double max_tolerable_excess_noise(SystemParams p, ModulationBounds bounds) {
  auto best_rate = [&](double xi) {
    p.excess_noise = xi;
    return optimize_modulation_variance(p, bounds.lower, bounds.upper).skr;
  };
  if (p.transmittance <= 0.0 || best_rate(0.0) <= 0.0) return 0.0;

  double lo = 0.0;
  double hi = 1.0;
  if (best_rate(hi) >= 0.0) return hi;
  while (hi - lo > 1e-5) {
    const double mid = 0.5 * (lo + hi);
    if (best_rate(mid) >= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace fsqkd
