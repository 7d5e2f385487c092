#pragma once

// Shack-Hartmann / deformable-mirror closed-loop simulator.
//
// Geometry: a 6x6 lenslet array over a circular pupil, coordinates in
// sub-aperture pitch units with the origin at the pupil centre. Sub-aperture
// (row, col) spans x in [col-3, col-2], y in [row-3, row-2]. The four corner
// sub-apertures fall outside the beam and are never used, leaving 32.
// A slope is the sub-aperture-averaged wavefront gradient.
//
// Slope vectors are 64 long: x slopes of the 32 valid sub-apertures in
// row-major order, followed by their y slopes.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fsqkd::ao {

constexpr int kGridSize = 6;
constexpr int kSubapCount = kGridSize * kGridSize;
constexpr int kValidCount = 32;
constexpr int kSlopeCount = 2 * kValidCount;
constexpr double kPupilRadius = 3.0;
constexpr double kFrameRate = 2000.0;
constexpr std::size_t kCharacterizationFrames = 12'000;

/// Integrator gain giving a 135 Hz -3 dB error-rejection bandwidth at
/// 2 kHz with leak 0.99 and one frame of latency.
constexpr double kDefaultLoopGain = 0.5048583298757002;
constexpr double kDefaultLeak = 0.99;
constexpr double kDefaultSensorNoise = 1e-3;

constexpr bool is_corner(int row, int col) {
  return (row == 0 || row == kGridSize - 1) && (col == 0 || col == kGridSize - 1);
}

/// Sub-aperture index (row * 6 + col) of the k-th valid sub-aperture.
const std::array<int, kValidCount>& valid_subapertures();

struct WfsFrame {
  std::array<double, kSubapCount> slope_x{};
  std::array<double, kSubapCount> slope_y{};
  std::array<double, kSubapCount> intensity{};
  std::array<bool, kSubapCount> valid_mask = default_mask();

  static std::array<bool, kSubapCount> default_mask();

  Eigen::VectorXd slope_vector() const;
  void set_slopes(const Eigen::VectorXd& s);
};

double spot_slope(double x, double y);

/// Mean spot slope over the valid sub-apertures. Throws if the mask does not
/// have 32 entries or if any valid sub-aperture is darker than
/// `intensity_floor` times the mean valid intensity.
double frame_mean_slope(const WfsFrame& frame, double intensity_floor = 0.01);

enum class LoopMode { open, closed };
const char* to_string(LoopMode m);

struct SlopeStats {
  std::vector<double> per_frame_mean_slope;
  double slope_variance = 0.0;
  std::size_t frame_count = 0;
  LoopMode loop_mode = LoopMode::open;
};

SlopeStats slope_variance(std::span<const WfsFrame> frames, LoopMode mode);
SlopeStats slope_stats_from_means(std::vector<double> means, LoopMode mode);

// ---- optics -----------------------------------------------------------------

enum class ZernikeMode { tip, tilt, defocus, astig_0, astig_45, coma_x, coma_y };
constexpr int kModeCount = 7;

/// Noll-normalized Zernike polynomial over the pupil radius.
double zernike(ZernikeMode mode, double x, double y);

using Surface = std::function<double(double, double)>;

struct DeformableMirror {
  std::vector<Surface> influence;  // one surface per actuator, unit stroke
  double stroke_limit = 5.0;

  int actuator_count() const { return static_cast<int>(influence.size()); }

  /// Gaussian influence functions on a 7x7 grid at the sub-aperture
  /// corners (Fried registration) with the four outer corners removed: 45
  /// actuators. `coupling` is the response at the nearest neighbour.
  static DeformableMirror fried(double coupling = 0.15, double stroke_limit = 5.0);

  /// 6x6 actuators at the sub-aperture centres. The checkerboard pattern is
  /// almost invisible to the sensor in this layout.
  static DeformableMirror colocated(double coupling = 0.15, double stroke_limit = 5.0);
};

/// Sub-aperture-averaged gradient of an arbitrary surface, as a slope vector.
Eigen::VectorXd measure_surface_slopes(const Surface& surface);

/// Precomputed linear responses of the sensor (slopes) and of the wavefront
/// sample grid to Zernike modes and to DM actuators.
class OpticalModel {
 public:
  explicit OpticalModel(DeformableMirror dm);

  const DeformableMirror& dm() const { return dm_; }
  int actuator_count() const { return dm_.actuator_count(); }

  /// Noise-free sensor reading of the DM shape for a command vector.
  Eigen::VectorXd dm_slopes(const Eigen::VectorXd& command) const;
  const Eigen::MatrixXd& dm_slope_response() const { return dm_slopes_; }
  const Eigen::MatrixXd& mode_slope_response() const { return mode_slopes_; }
  const Eigen::MatrixXd& dm_phase_response() const { return dm_phase_; }
  const Eigen::MatrixXd& mode_phase_response() const { return mode_phase_; }
  /// Nominal per-sub-aperture intensity (beam profile), corners dim.
  const std::array<double, kSubapCount>& base_intensity() const { return base_intensity_; }

  /// Piston-removed RMS of (turbulence - DM) over the wavefront sample grid.
  double residual_wavefront_rms(const Eigen::VectorXd& mode_coeffs,
                                const Eigen::VectorXd& command) const;

 private:
  DeformableMirror dm_;
  Eigen::MatrixXd dm_slopes_;    // 64 x A
  Eigen::MatrixXd mode_slopes_;  // 64 x 7
  Eigen::MatrixXd dm_phase_;     // P x A
  Eigen::MatrixXd mode_phase_;   // P x 7
  std::array<double, kSubapCount> base_intensity_{};
};

// ---- turbulence ---------------------------------------------------------------

enum class TurbulenceLabel { ambient, low, medium, high };
enum class Orientation { across, along };

const char* to_string(TurbulenceLabel l);
const char* to_string(Orientation o);
TurbulenceLabel turbulence_label_from_string(const std::string& s);
Orientation orientation_from_string(const std::string& s);

struct TurbulenceSetting {
  TurbulenceLabel label = TurbulenceLabel::ambient;
  Orientation orientation = Orientation::across;
  double target_slope_variance = 0.0;
  double temporal_correlation = 0.9;  // per-frame AR(1) coefficient
  std::array<double, kModeCount> mode_amplitudes{1.0, 1.0, 0.3, 0.3, 0.3, 0.15, 0.15};
  double scintillation = 0.05;  // log-normal sigma of sub-aperture intensity

  void validate() const;
};

/// Heat-gun stand-in: AR(1) Zernike coefficients scaled so that the
/// long-run open-loop slope variance (with sensor noise) equals the target.
class TurbulenceGenerator {
 public:
  TurbulenceGenerator(const TurbulenceSetting& setting, const OpticalModel& optics,
                      std::uint64_t seed, double sensor_noise = kDefaultSensorNoise);

  /// Advances one frame; returns the noise-free turbulent frame.
  WfsFrame next();

  const Eigen::VectorXd& coefficients() const { return coeffs_; }
  /// Per-mode stationary RMS after calibration.
  const Eigen::VectorXd& mode_rms() const { return mode_rms_; }

 private:
  void calibrate(double sensor_noise);

  TurbulenceSetting setting_;
  const OpticalModel* optics_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  Eigen::VectorXd mode_rms_;
  Eigen::VectorXd coeffs_;
  bool started_ = false;
};

WfsFrame generate_turbulence_frame(TurbulenceGenerator& generator);

// ---- control ------------------------------------------------------------------

struct AoLoopState {
  Eigen::MatrixXd interaction_matrix;  // 64 x A
  Eigen::MatrixXd reconstructor;       // A x 64
  Eigen::VectorXd command;
  double integrator_gain = kDefaultLoopGain;
  double leak = kDefaultLeak;
  double frame_rate = kFrameRate;
  bool loop_enabled = true;
  bool saturated = false;
};

class UnregisteredActuatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pokes each actuator by +/- `poke` and records the averaged per-unit-stroke
/// slope response. Throws UnregisteredActuatorError when an actuator's RMS
/// response to the poke is below `noise_floor`.
Eigen::MatrixXd calibrate_interaction_matrix(const OpticalModel& optics, double poke = 0.05,
                                             double noise_floor = kDefaultSensorNoise);

struct Reconstructor {
  Eigen::MatrixXd matrix;
  int retained_modes = 0;
  Eigen::VectorXd singular_values;
};

/// SVD pseudoinverse discarding singular values below `regularization`
/// times the largest.
Reconstructor build_reconstructor(const Eigen::MatrixXd& interaction_matrix,
                                  double regularization = 1e-3);

/// Calibrates and builds a ready-to-run loop with default gain and leak.
AoLoopState make_loop(const OpticalModel& optics, double regularization = 1e-3);

/// One frame: measures `measured` (turbulence + sensor noise) minus the
/// current DM correction, then updates the command with the leaky
/// integrator. Returns the residual frame the sensor saw.
WfsFrame closed_loop_step(AoLoopState& loop, const OpticalModel& optics,
                          const WfsFrame& measured);

struct CharacterizationResult {
  SlopeStats open_loop;
  std::optional<SlopeStats> closed_loop;
  std::vector<double> open_rms;      // per-frame piston-removed wavefront RMS
  std::vector<double> residual_rms;  // same after DM correction (loop on)
  double open_wavefront_variance = 0.0;      // mean of open_rms^2
  double residual_wavefront_variance = 0.0;  // mean of residual_rms^2
  bool saturated = false;
};

using FrameSink = std::function<void(std::size_t frame, const WfsFrame& frame_data)>;

CharacterizationResult run_characterization(const TurbulenceSetting& setting,
                                            const OpticalModel& optics,
                                            std::optional<AoLoopState> loop,
                                            std::size_t frames, std::uint64_t seed,
                                            double sensor_noise = kDefaultSensorNoise,
                                            const FrameSink& sink = {});

/// Residual/open amplitude ratio for a sinusoidal disturbance on a
/// controllable mode, measured by running the loop.
double sinusoid_rejection(const OpticalModel& optics, const AoLoopState& loop,
                          double frequency_hz, std::size_t frames = 4000);

/// Frequency where sinusoid_rejection crosses 1/sqrt(2), by bisection.
double rejection_bandwidth(const OpticalModel& optics, const AoLoopState& loop);

}  // namespace fsqkd::ao
