#pragma once

// Asymptotic key rate for Gaussian-modulated coherent-state CVQKD under
// collective attacks, with the interferometric visibility folded into the
// effective transmittance. All variances are in shot-noise units (SNU),
// all information quantities in bits per channel use.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

namespace fsqkd {

enum class Detection { homodyne, heterodyne };

/// Number of quadratures measured: 1 for homodyne, 2 for heterodyne.
constexpr int quadrature_count(Detection d) { return d == Detection::homodyne ? 1 : 2; }

const char* to_string(Detection d);
Detection detection_from_string(const std::string& s);

/// How Bob's electronic noise is treated when bounding Eve's information.
/// `trusted` removes v_el from V_B before the Holevo bound; `untrusted`
/// attributes it to the channel.
enum class NoiseTrust { trusted, untrusted };

struct SystemParams {
  double transmittance = 0.0;
  double detector_efficiency = 1.0;
  double visibility = 1.0;  // interferometric visibility amplitude sqrt(eta_vis)
  double modulation_variance = 0.0;  // V_A = 2 alpha^2
  double excess_noise = 0.0;
  double electronic_noise = 0.0;
  double reconciliation_efficiency = 1.0;
  Detection detection = Detection::homodyne;
  NoiseTrust trust = NoiseTrust::trusted;

  /// alpha^2 = V_A / 2.
  double alpha_squared() const { return modulation_variance / 2.0; }
  /// eta_vis * eta_det * T, the transmittance seen by the key-rate formulas.
  double effective_transmittance() const {
    return visibility * visibility * detector_efficiency * transmittance;
  }

  /// Builds params from a modulation amplitude alpha instead of V_A.
  static SystemParams with_amplitude(SystemParams base, double alpha);

  /// Throws std::invalid_argument naming the first out-of-range field.
  void validate() const;
};

struct TwoModeCovariance {
  double v = 1.0;    // Alice, V_A + 1
  double v_b = 1.0;  // Bob
  double z = 0.0;    // correlation
};

struct SymplecticSpectrum {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

struct SkrResult {
  double mutual_information = 0.0;
  double holevo_bound = 0.0;
  double skr = 0.0;
  std::array<double, 3> symplectic_eigenvalues{1.0, 1.0, 1.0};
  TwoModeCovariance covariance;  // the matrix used for the Holevo bound
  bool positive = false;
};

double correlation_coefficient(const SystemParams& p);
double bob_variance_model(const SystemParams& p);

/// Literal covariance: V = V_A + 1, Z from correlation_coefficient, V_B from
/// bob_variance_model unless `measured_v_b` is supplied.
TwoModeCovariance build_covariance(const SystemParams& p,
                                   std::optional<double> measured_v_b = std::nullopt);

/// Closed-form symplectic eigenvalues of [[V I, Z sz], [Z sz, V_B I]],
/// lambda1 >= lambda2.
SymplecticSpectrum symplectic_spectrum(const TwoModeCovariance& cov);

double lambda3(const TwoModeCovariance& cov, Detection d);

/// G(x) = (x+1) log2(x+1) - x log2 x, with G(0) = 0.
double g_function(double x);

double mutual_information(const SystemParams& p);
double holevo_bound(const TwoModeCovariance& cov, Detection d, SkrResult* detail = nullptr);

SkrResult compute_skr(const SystemParams& p);

struct OptimizeResult {
  double modulation_variance = 0.0;
  double skr = 0.0;
  bool positive = false;
};

/// Maximizes compute_skr over V_A in [lower, upper]: 64-point coarse scan
/// followed by golden-section refinement to 1e-4 SNU around the best cell.
/// When no scanned point is positive the best point is still returned with
/// positive = false.
OptimizeResult optimize_modulation_variance(SystemParams p, double lower, double upper);

struct ModulationBounds {
  double lower = 0.01;
  double upper = 20.0;
};

/// Largest xi in [0, 1] SNU for which the key rate, re-optimized over V_A,
/// is non-negative. Bisection to 1e-5 SNU. Returns 0 for channels that
/// carry no key even at xi = 0.
double max_tolerable_excess_noise(SystemParams p, ModulationBounds bounds = {});

}  // namespace fsqkd
