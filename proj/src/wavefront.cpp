#include "fsqkd/wavefront.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace fsqkd::ao {

namespace {

// 6-point Gauss-Legendre rule mapped to [0, 1].
constexpr std::array<double, 6> kGaussNodes = {
    0.033765242898423986, 0.16939530676686776, 0.38069040695840156,
    0.61930959304159844,  0.83060469323313224, 0.96623475710157601};
constexpr std::array<double, 6> kGaussWeights = {
    0.085662246189585173, 0.18038078652406930, 0.23395696728634552,
    0.23395696728634552,  0.18038078652406930, 0.085662246189585173};

constexpr int kSamplesPerSide = 3;
constexpr std::uint64_t kCalibrationSeed = 0x5eed'ca11'b2a7'e000ULL;
constexpr std::uint64_t kNoiseStream = 0x9e37'79b9'7f4a'7c15ULL;
constexpr int kCalibrationDraws = 20'000;

double subap_x0(int sub) { return (sub % kGridSize) - kGridSize / 2.0; }
double subap_y0(int sub) { return (sub / kGridSize) - kGridSize / 2.0; }

double mean_slope_of_vector(const Eigen::Ref<const Eigen::VectorXd>& s) {
  double sum = 0.0;
  for (int k = 0; k < kValidCount; ++k) sum += std::hypot(s[k], s[kValidCount + k]);
  return sum / kValidCount;
}

double variance_of(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / (n - 1.0);
}

}  // namespace

const std::array<int, kValidCount>& valid_subapertures() {
  static const auto table = [] {
    std::array<int, kValidCount> t{};
    int k = 0;
    for (int r = 0; r < kGridSize; ++r) {
      for (int c = 0; c < kGridSize; ++c) {
        if (!is_corner(r, c)) t[k++] = r * kGridSize + c;
      }
    }
    return t;
  }();
  return table;
}

std::array<bool, kSubapCount> WfsFrame::default_mask() {
  std::array<bool, kSubapCount> m{};
  for (int i = 0; i < kSubapCount; ++i) m[i] = !is_corner(i / kGridSize, i % kGridSize);
  return m;
}

Eigen::VectorXd WfsFrame::slope_vector() const {
  Eigen::VectorXd s(kSlopeCount);
  const auto& valid = valid_subapertures();
  for (int k = 0; k < kValidCount; ++k) {
    s[k] = slope_x[valid[k]];
    s[kValidCount + k] = slope_y[valid[k]];
  }
  return s;
}

void WfsFrame::set_slopes(const Eigen::VectorXd& s) {
  const auto& valid = valid_subapertures();
  for (int k = 0; k < kValidCount; ++k) {
    slope_x[valid[k]] = s[k];
    slope_y[valid[k]] = s[kValidCount + k];
  }
}

double spot_slope(double x, double y) { return std::hypot(x, y); }

double frame_mean_slope(const WfsFrame& frame, double intensity_floor) {
  int count = 0;
  double intensity_sum = 0.0;
  for (int i = 0; i < kSubapCount; ++i) {
    if (frame.valid_mask[i]) {
      ++count;
      intensity_sum += frame.intensity[i];
    }
  }
  if (count != kValidCount) {
    throw std::invalid_argument(
        fmt::format("valid mask has {} entries, expected {}", count, kValidCount));
  }
  const double floor = intensity_floor * intensity_sum / count;
  double sum = 0.0;
  for (int i = 0; i < kSubapCount; ++i) {
    if (!frame.valid_mask[i]) continue;
    if (frame.intensity[i] < floor) {
      throw std::runtime_error(fmt::format(
          "sub-aperture ({}, {}) intensity {} below detectability floor {}", i / kGridSize,
          i % kGridSize, frame.intensity[i], floor));
    }
    sum += spot_slope(frame.slope_x[i], frame.slope_y[i]);
  }
  return sum / count;
}

const char* to_string(LoopMode m) { return m == LoopMode::open ? "open" : "closed"; }

SlopeStats slope_stats_from_means(std::vector<double> means, LoopMode mode) {
  if (means.size() < 2) {
    throw std::invalid_argument("slope variance needs at least two frames");
  }
  SlopeStats s;
  s.slope_variance = variance_of(means);
  s.frame_count = means.size();
  s.per_frame_mean_slope = std::move(means);
  s.loop_mode = mode;
  return s;
}

SlopeStats slope_variance(std::span<const WfsFrame> frames, LoopMode mode) {
  std::vector<double> means;
  means.reserve(frames.size());
  for (const auto& f : frames) means.push_back(frame_mean_slope(f));
  return slope_stats_from_means(std::move(means), mode);
}

// ---- optics -------------------------------------------------------------------

double zernike(ZernikeMode mode, double x, double y) {
  const double u = x / kPupilRadius;
  const double v = y / kPupilRadius;
  const double r2 = u * u + v * v;
  switch (mode) {
    case ZernikeMode::tip: return 2.0 * u;
    case ZernikeMode::tilt: return 2.0 * v;
    case ZernikeMode::defocus: return std::sqrt(3.0) * (2.0 * r2 - 1.0);
    case ZernikeMode::astig_0: return std::sqrt(6.0) * (u * u - v * v);
    case ZernikeMode::astig_45: return std::sqrt(6.0) * 2.0 * u * v;
    case ZernikeMode::coma_x: return std::sqrt(8.0) * (3.0 * r2 - 2.0) * u;
    case ZernikeMode::coma_y: return std::sqrt(8.0) * (3.0 * r2 - 2.0) * v;
  }
  return 0.0;
}

namespace {

Surface gaussian_bump(double cx, double cy, double sigma) {
  return [cx, cy, sigma](double x, double y) {
    const double dx = x - cx;
    const double dy = y - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  };
}

double sigma_for_coupling(double coupling) {
  if (!(coupling > 0.0 && coupling < 1.0)) {
    throw std::invalid_argument("inter-actuator coupling must lie in (0, 1)");
  }
  return 1.0 / std::sqrt(2.0 * std::log(1.0 / coupling));
}

}  // namespace

DeformableMirror DeformableMirror::fried(double coupling, double stroke_limit) {
  const double sigma = sigma_for_coupling(coupling);
  DeformableMirror dm;
  dm.stroke_limit = stroke_limit;
  constexpr int n = kGridSize + 1;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if ((r == 0 || r == n - 1) && (c == 0 || c == n - 1)) continue;
      dm.influence.push_back(gaussian_bump(c - kGridSize / 2.0, r - kGridSize / 2.0, sigma));
    }
  }
  return dm;
}

DeformableMirror DeformableMirror::colocated(double coupling, double stroke_limit) {
  const double sigma = sigma_for_coupling(coupling);
  DeformableMirror dm;
  dm.stroke_limit = stroke_limit;
  for (int i = 0; i < kSubapCount; ++i) {
    dm.influence.push_back(gaussian_bump(subap_x0(i) + 0.5, subap_y0(i) + 0.5, sigma));
  }
  return dm;
}

Eigen::VectorXd measure_surface_slopes(const Surface& surface) {
  Eigen::VectorXd s(kSlopeCount);
  const auto& valid = valid_subapertures();
  for (int k = 0; k < kValidCount; ++k) {
    const double x0 = subap_x0(valid[k]);
    const double y0 = subap_y0(valid[k]);
    double sx = 0.0;
    double sy = 0.0;
    for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
      const double t = kGaussNodes[q];
      sx += kGaussWeights[q] * (surface(x0 + 1.0, y0 + t) - surface(x0, y0 + t));
      sy += kGaussWeights[q] * (surface(x0 + t, y0 + 1.0) - surface(x0 + t, y0));
    }
    s[k] = sx;
    s[kValidCount + k] = sy;
  }
  return s;
}

OpticalModel::OpticalModel(DeformableMirror dm) : dm_(std::move(dm)) {
  const int a = dm_.actuator_count();
  if (a < 1) throw std::invalid_argument("deformable mirror has no actuators");

  std::vector<std::pair<double, double>> points;
  for (int sub : valid_subapertures()) {
    for (int i = 0; i < kSamplesPerSide; ++i) {
      for (int j = 0; j < kSamplesPerSide; ++j) {
        points.emplace_back(subap_x0(sub) + (j + 0.5) / kSamplesPerSide,
                            subap_y0(sub) + (i + 0.5) / kSamplesPerSide);
      }
    }
  }
  const auto p = static_cast<Eigen::Index>(points.size());

  dm_slopes_.resize(kSlopeCount, a);
  dm_phase_.resize(p, a);
  for (int j = 0; j < a; ++j) {
    dm_slopes_.col(j) = measure_surface_slopes(dm_.influence[j]);
    for (Eigen::Index i = 0; i < p; ++i) {
      dm_phase_(i, j) = dm_.influence[j](points[i].first, points[i].second);
    }
  }
  mode_slopes_.resize(kSlopeCount, kModeCount);
  mode_phase_.resize(p, kModeCount);
  for (int m = 0; m < kModeCount; ++m) {
    const auto mode = static_cast<ZernikeMode>(m);
    mode_slopes_.col(m) =
        measure_surface_slopes([mode](double x, double y) { return zernike(mode, x, y); });
    for (Eigen::Index i = 0; i < p; ++i) {
      mode_phase_(i, m) = zernike(mode, points[i].first, points[i].second);
    }
  }

  for (int i = 0; i < kSubapCount; ++i) {
    const double cx = subap_x0(i) + 0.5;
    const double cy = subap_y0(i) + 0.5;
    base_intensity_[i] = is_corner(i / kGridSize, i % kGridSize)
                             ? 0.005
                             : std::exp(-(cx * cx + cy * cy) / (2.0 * kPupilRadius * kPupilRadius));
  }
}

Eigen::VectorXd OpticalModel::dm_slopes(const Eigen::VectorXd& command) const {
  return dm_slopes_ * command;
}

double OpticalModel::residual_wavefront_rms(const Eigen::VectorXd& mode_coeffs,
                                            const Eigen::VectorXd& command) const {
  Eigen::VectorXd w = mode_phase_ * mode_coeffs;
  if (command.size() > 0) w -= dm_phase_ * command;
  const double mean = w.mean();
  return std::sqrt((w.array() - mean).square().sum() / static_cast<double>(w.size()));
}

// ---- turbulence -----------------------------------------------------------------

const char* to_string(TurbulenceLabel l) {
  switch (l) {
    case TurbulenceLabel::ambient: return "ambient";
    case TurbulenceLabel::low: return "low";
    case TurbulenceLabel::medium: return "medium";
    case TurbulenceLabel::high: return "high";
  }
  return "unknown";
}

const char* to_string(Orientation o) { return o == Orientation::across ? "across" : "along"; }

TurbulenceLabel turbulence_label_from_string(const std::string& s) {
  if (s == "ambient") return TurbulenceLabel::ambient;
  if (s == "low") return TurbulenceLabel::low;
  if (s == "medium") return TurbulenceLabel::medium;
  if (s == "high") return TurbulenceLabel::high;
  throw std::invalid_argument(fmt::format("unknown turbulence setting '{}'", s));
}

Orientation orientation_from_string(const std::string& s) {
  if (s == "across") return Orientation::across;
  if (s == "along") return Orientation::along;
  throw std::invalid_argument(fmt::format("unknown heat-gun orientation '{}'", s));
}

void TurbulenceSetting::validate() const {
  if (!(target_slope_variance >= 0.0)) {
    throw std::invalid_argument("target slope variance must be >= 0");
  }
  if (!(temporal_correlation >= 0.0 && temporal_correlation < 1.0)) {
    throw std::invalid_argument("temporal correlation must lie in [0, 1)");
  }
  for (double a : mode_amplitudes) {
    if (!(a >= 0.0)) throw std::invalid_argument("mode amplitudes must be >= 0");
  }
  if (!(scintillation >= 0.0)) throw std::invalid_argument("scintillation must be >= 0");
}

TurbulenceGenerator::TurbulenceGenerator(const TurbulenceSetting& setting,
                                         const OpticalModel& optics, std::uint64_t seed,
                                         double sensor_noise)
    : setting_(setting), optics_(&optics), rng_(seed) {
  setting_.validate();
  calibrate(sensor_noise);
  coeffs_ = Eigen::VectorXd::Zero(kModeCount);
}

void TurbulenceGenerator::calibrate(double sensor_noise) {
  Eigen::VectorXd weights(kModeCount);
  for (int m = 0; m < kModeCount; ++m) weights[m] = setting_.mode_amplitudes[m];
  mode_rms_ = Eigen::VectorXd::Zero(kModeCount);
  if (setting_.target_slope_variance == 0.0 || weights.isZero()) return;

  // Stationary draws are i.i.d., so the long-run variance is estimated
  // without simulating the AR(1) dynamics. Common random numbers keep the
  // fixed-point iteration smooth in the scale.
  std::mt19937_64 cal(kCalibrationSeed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd unit(kSlopeCount, kCalibrationDraws);
  Eigen::MatrixXd noise(kSlopeCount, kCalibrationDraws);
  Eigen::VectorXd c(kModeCount);
  for (int k = 0; k < kCalibrationDraws; ++k) {
    for (int m = 0; m < kModeCount; ++m) c[m] = weights[m] * normal(cal);
    unit.col(k) = optics_->mode_slope_response() * c;
    for (int i = 0; i < kSlopeCount; ++i) noise(i, k) = sensor_noise * normal(cal);
  }
  auto variance_at = [&](double scale, double noise_scale) {
    std::vector<double> means(kCalibrationDraws);
    for (int k = 0; k < kCalibrationDraws; ++k) {
      Eigen::VectorXd s = scale * unit.col(k) + noise_scale * noise.col(k);
      means[k] = mean_slope_of_vector(s);
    }
    return variance_of(means);
  };

  const double target = setting_.target_slope_variance;
  double scale = std::sqrt(target / variance_at(1.0, 0.0));
  for (int it = 0; it < 8; ++it) {
    const double v = variance_at(scale, 1.0);
    scale *= std::sqrt(target / v);
  }
  mode_rms_ = scale * weights;
}

WfsFrame TurbulenceGenerator::next() {
  const double rho = setting_.temporal_correlation;
  const double innovation = std::sqrt(1.0 - rho * rho);
  for (int m = 0; m < kModeCount; ++m) {
    const double n = normal_(rng_);
    coeffs_[m] = started_ ? rho * coeffs_[m] + innovation * mode_rms_[m] * n : mode_rms_[m] * n;
  }
  started_ = true;

  WfsFrame frame;
  frame.set_slopes(optics_->mode_slope_response() * coeffs_);
  const double s = setting_.scintillation;
  const auto& base = optics_->base_intensity();
  for (int i = 0; i < kSubapCount; ++i) {
    frame.intensity[i] = base[i] * std::exp(s * normal_(rng_) - 0.5 * s * s);
  }
  return frame;
}

WfsFrame generate_turbulence_frame(TurbulenceGenerator& generator) { return generator.next(); }

// ---- control --------------------------------------------------------------------

Eigen::MatrixXd calibrate_interaction_matrix(const OpticalModel& optics, double poke,
                                             double noise_floor) {
  const int a = optics.actuator_count();
  if (a < 1) throw std::invalid_argument("no actuators to calibrate");
  if (!(poke > 0.0)) throw std::invalid_argument("poke amplitude must be > 0");
  Eigen::MatrixXd im(kSlopeCount, a);
  Eigen::VectorXd cmd = Eigen::VectorXd::Zero(a);
  for (int j = 0; j < a; ++j) {
    cmd[j] = poke;
    const Eigen::VectorXd plus = optics.dm_slopes(cmd);
    cmd[j] = -poke;
    const Eigen::VectorXd minus = optics.dm_slopes(cmd);
    cmd[j] = 0.0;
    const Eigen::VectorXd response = (plus - minus) / 2.0;
    const double rms = response.norm() / std::sqrt(static_cast<double>(kSlopeCount));
    if (rms < noise_floor) {
      throw UnregisteredActuatorError(fmt::format(
          "actuator {} response RMS {} is below the sensor noise floor {}", j, rms, noise_floor));
    }
    im.col(j) = response / poke;
  }
  return im;
}

Reconstructor build_reconstructor(const Eigen::MatrixXd& interaction_matrix,
                                  double regularization) {
  if (interaction_matrix.size() == 0 || interaction_matrix.isZero(0.0)) {
    throw std::invalid_argument("interaction matrix is empty or zero");
  }
  if (!(regularization >= 0.0 && regularization < 1.0)) {
    throw std::invalid_argument(
        fmt::format("regularization {} must lie in [0, 1)", regularization));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(interaction_matrix,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = regularization * sv[0];
  Reconstructor r;
  r.singular_values = sv;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff && sv[i] > 0.0) {
      inv[i] = 1.0 / sv[i];
      ++r.retained_modes;
    }
  }
  if (r.retained_modes == 0) {
    throw std::invalid_argument("all singular values fall below the regularization cutoff");
  }
  r.matrix = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return r;
}

AoLoopState make_loop(const OpticalModel& optics, double regularization) {
  AoLoopState loop;
  loop.interaction_matrix = calibrate_interaction_matrix(optics);
  loop.reconstructor = build_reconstructor(loop.interaction_matrix, regularization).matrix;
  loop.command = Eigen::VectorXd::Zero(optics.actuator_count());
  return loop;
}

WfsFrame closed_loop_step(AoLoopState& loop, const OpticalModel& optics,
                          const WfsFrame& measured) {
  if (loop.reconstructor.rows() != optics.actuator_count() ||
      loop.command.size() != optics.actuator_count()) {
    throw std::invalid_argument("loop is not calibrated for this optical model");
  }
  WfsFrame residual = measured;
  const Eigen::VectorXd s = measured.slope_vector() - optics.dm_slopes(loop.command);
  residual.set_slopes(s);
  if (loop.loop_enabled) {
    loop.command = loop.leak * loop.command + loop.integrator_gain * (loop.reconstructor * s);
    const double limit = optics.dm().stroke_limit;
    for (Eigen::Index j = 0; j < loop.command.size(); ++j) {
      if (std::abs(loop.command[j]) > limit) {
        loop.command[j] = std::clamp(loop.command[j], -limit, limit);
        loop.saturated = true;
      }
    }
  }
  return residual;
}

CharacterizationResult run_characterization(const TurbulenceSetting& setting,
                                            const OpticalModel& optics,
                                            std::optional<AoLoopState> loop,
                                            std::size_t frames, std::uint64_t seed,
                                            double sensor_noise, const FrameSink& sink) {
  if (frames < 2) throw std::invalid_argument("characterization needs at least two frames");
  TurbulenceGenerator generator(setting, optics, seed, sensor_noise);
  std::mt19937_64 noise_rng(seed ^ kNoiseStream);
  std::normal_distribution<double> normal(0.0, sensor_noise);
  const bool closed = loop && loop->loop_enabled;
  if (loop) loop->command = Eigen::VectorXd::Zero(optics.actuator_count());

  CharacterizationResult out;
  std::vector<double> open_means;
  std::vector<double> closed_means;
  open_means.reserve(frames);
  out.open_rms.reserve(frames);
  if (closed) {
    closed_means.reserve(frames);
    out.residual_rms.reserve(frames);
  }
  const Eigen::VectorXd no_command;
  for (std::size_t f = 0; f < frames; ++f) {
    WfsFrame measured = generator.next();
    for (int i = 0; i < kSubapCount; ++i) {
      measured.slope_x[i] += normal(noise_rng);
      measured.slope_y[i] += normal(noise_rng);
    }
    open_means.push_back(frame_mean_slope(measured));
    out.open_rms.push_back(optics.residual_wavefront_rms(generator.coefficients(), no_command));
    if (closed) {
      const Eigen::VectorXd applied = loop->command;
      const WfsFrame residual = closed_loop_step(*loop, optics, measured);
      closed_means.push_back(frame_mean_slope(residual));
      out.residual_rms.push_back(optics.residual_wavefront_rms(generator.coefficients(), applied));
      if (sink) sink(f, residual);
    } else if (sink) {
      sink(f, measured);
    }
  }

  auto mean_square = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return x.empty() ? 0.0 : s / static_cast<double>(x.size());
  };
  out.open_loop = slope_stats_from_means(std::move(open_means), LoopMode::open);
  out.open_wavefront_variance = mean_square(out.open_rms);
  if (closed) {
    out.closed_loop = slope_stats_from_means(std::move(closed_means), LoopMode::closed);
    out.residual_wavefront_variance = mean_square(out.residual_rms);
    out.saturated = loop->saturated;
  } else {
    out.residual_wavefront_variance = out.open_wavefront_variance;
  }
  return out;
}

double sinusoid_rejection(const OpticalModel& optics, const AoLoopState& loop,
                          double frequency_hz, std::size_t frames) {
  // Disturbance inside the DM's range: the DM's own best fit of tip.
  const Eigen::VectorXd shape = loop.reconstructor * optics.mode_slope_response().col(0);
  const Eigen::VectorXd pattern = optics.dm_slopes(shape);
  Eigen::VectorXd command = Eigen::VectorXd::Zero(optics.actuator_count());
  double open_power = 0.0;
  double residual_power = 0.0;
  const double omega = 2.0 * M_PI * frequency_hz / loop.frame_rate;
  for (std::size_t k = 0; k < frames; ++k) {
    const Eigen::VectorXd d = std::sin(omega * static_cast<double>(k)) * pattern;
    const Eigen::VectorXd s = d - optics.dm_slopes(command);
    command = loop.leak * command + loop.integrator_gain * (loop.reconstructor * s);
    if (k >= frames / 2) {
      open_power += d.squaredNorm();
      residual_power += s.squaredNorm();
    }
  }
  return std::sqrt(residual_power / open_power);
}

double rejection_bandwidth(const OpticalModel& optics, const AoLoopState& loop) {
  const double target = 1.0 / std::sqrt(2.0);
  double lo = 1.0;
  double hi = loop.frame_rate / 2.0 - 1.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sinusoid_rejection(optics, loop, mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace fsqkd::ao
