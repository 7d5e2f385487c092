#pragma once

// Residual-wavefront to interferometric-visibility map and the phase-lock
// model.
//
// The map input is a "slope-variance equivalent" residual: the open-loop
// slope variance for uncorrected light, and the open-loop slope variance
// scaled by the closed/open wavefront variance ratio when AO is on. The
// proportionality between slope variance and wavefront variance is absorbed
// into kappa.

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsqkd {

struct VisibilityMap {
  double ambient_visibility = 1.0;  // sqrt(eta_vis) at zero residual
  double kappa = 0.0;

  void validate() const;
};

/// ambient_visibility * exp(-kappa * residual / 2).
double visibility_from_residual(const VisibilityMap& map, double residual_variance);

struct CalibrationPoint {
  double slope_variance = 0.0;
  double visibility = 0.0;
};

struct CalibrationFit {
  VisibilityMap map;
  std::vector<double> residuals;  // model - reference, one per point
  double rms = 0.0;
};

/// Least-squares fit of the map to reference points. With `anchor` set the
/// ambient visibility is held fixed and only kappa is fitted; otherwise both
/// parameters are fitted. Throws std::invalid_argument for fewer than two
/// points, non-distinct slope variances, or a constant visibility column.
CalibrationFit calibrate_map(std::span<const CalibrationPoint> points,
                             std::optional<double> anchor = std::nullopt);

enum class LockStatus { locked, lucky, unlocked };

const char* to_string(LockStatus s);

struct LockThresholds {
  double v_lock = 0.02;
  double v_min = 1e-4;
  double lucky_slope_variance = 0.025;
  double no_ao_unlock_slope_variance = 0.2;
  double lucky_lock_duration_s = 2.0;
};

LockStatus lock_status(double visibility, double slope_variance, bool ao_enabled,
                       const LockThresholds& thresholds = {});

struct VisibilityPoint {
  double slope_variance = 0.0;
  double visibility = 0.0;
  bool ao_enabled = false;
  LockStatus lock = LockStatus::locked;
  double visibility_std = 0.0;
};

/// Builds a point from a mean residual and per-block residuals; the
/// standard deviation is taken over the block visibilities.
VisibilityPoint make_visibility_point(const VisibilityMap& map, double slope_variance,
                                      double residual_variance,
                                      std::span<const double> block_residuals, bool ao_enabled,
                                      const LockThresholds& thresholds = {});

}  // namespace fsqkd
