#include "fsqkd/visibility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

namespace fsqkd {

void VisibilityMap::validate() const {
  if (!(ambient_visibility > 0.0 && ambient_visibility <= 1.0)) {
    throw std::invalid_argument(
        fmt::format("ambient visibility {} outside (0, 1]", ambient_visibility));
  }
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw std::invalid_argument(fmt::format("kappa {} must be finite and >= 0", kappa));
  }
}

double visibility_from_residual(const VisibilityMap& map, double residual_variance) {
  if (!(residual_variance >= 0.0)) {
    throw std::invalid_argument(
        fmt::format("residual variance {} must be >= 0", residual_variance));
  }
  return map.ambient_visibility * std::exp(-map.kappa * residual_variance / 2.0);
}

namespace {

struct Problem {
  std::span<const CalibrationPoint> points;
  std::optional<double> anchor;

  // Best amplitude for a given kappa: fixed when anchored, otherwise the
  // linear least-squares solution.
  double amplitude(double kappa) const {
    if (anchor) return *anchor;
    double num = 0.0;
    double den = 0.0;
    for (const auto& p : points) {
      const double e = std::exp(-kappa * p.slope_variance / 2.0);
      num += p.visibility * e;
      den += e * e;
    }
    return den > 0.0 ? num / den : 0.0;
  }

  double cost(double kappa, double v0) const {
    double c = 0.0;
    for (const auto& p : points) {
      const double r = v0 * std::exp(-kappa * p.slope_variance / 2.0) - p.visibility;
      c += r * r;
    }
    return c;
  }

  double cost(double kappa) const { return cost(kappa, amplitude(kappa)); }
};

// Gauss-Newton polish from a bracketed optimum; accepts steps only while the
// cost decreases.
void polish(const Problem& pr, double& kappa, double& v0) {
  double best = pr.cost(kappa, v0);
  for (int it = 0; it < 50; ++it) {
    double jkk = 0.0, jkv = 0.0, jvv = 0.0, gk = 0.0, gv = 0.0;
    for (const auto& p : pr.points) {
      const double e = std::exp(-kappa * p.slope_variance / 2.0);
      const double r = v0 * e - p.visibility;
      const double dk = -v0 * e * p.slope_variance / 2.0;
      const double dv = e;
      jkk += dk * dk;
      jkv += dk * dv;
      jvv += dv * dv;
      gk += dk * r;
      gv += dv * r;
    }
    double step_k = 0.0;
    double step_v = 0.0;
    if (pr.anchor) {
      if (jkk <= 0.0) break;
      step_k = -gk / jkk;
    } else {
      const double det = jkk * jvv - jkv * jkv;
      if (!(std::abs(det) > 0.0)) break;
      step_k = -(jvv * gk - jkv * gv) / det;
      step_v = -(jkk * gv - jkv * gk) / det;
    }
    const double k2 = std::max(0.0, kappa + step_k);
    const double v2 = v0 + step_v;
    const double c2 = pr.cost(k2, v2);
    if (!(c2 < best)) break;
    kappa = k2;
    v0 = v2;
    best = c2;
  }
}

}  // namespace

CalibrationFit calibrate_map(std::span<const CalibrationPoint> points,
                             std::optional<double> anchor) {
  if (points.size() < 2) {
    throw std::invalid_argument("visibility calibration needs at least two points");
  }
  double s_min = std::numeric_limits<double>::infinity();
  double s_max = -std::numeric_limits<double>::infinity();
  double v_min = s_min;
  double v_max = s_max;
  for (const auto& p : points) {
    if (!std::isfinite(p.slope_variance) || p.slope_variance < 0.0 ||
        !std::isfinite(p.visibility)) {
      throw std::invalid_argument("calibration points must be finite with slope variance >= 0");
    }
    s_min = std::min(s_min, p.slope_variance);
    s_max = std::max(s_max, p.slope_variance);
    v_min = std::min(v_min, p.visibility);
    v_max = std::max(v_max, p.visibility);
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      if (points[i].slope_variance == points[j].slope_variance) {
        throw std::invalid_argument(fmt::format(
            "calibration slope variances must be distinct ({} repeats)", points[i].slope_variance));
      }
    }
  }
  if (v_max == v_min && !anchor) {
    throw std::invalid_argument("calibration visibilities are constant");
  }
  if (anchor && !(*anchor > 0.0 && *anchor <= 1.0)) {
    throw std::invalid_argument(fmt::format("anchor visibility {} outside (0, 1]", *anchor));
  }

  const Problem pr{points, anchor};

  // Log-spaced scan up to an exponent of 200 at the largest slope variance,
  // then Brent inside the best cell.
  const double k_hi = 400.0 / s_max;
  constexpr int kScan = 240;
  std::vector<double> grid{0.0};
  for (int i = 0; i <= kScan; ++i) {
    grid.push_back(k_hi * std::pow(10.0, -12.0 * (kScan - i) / kScan));
  }
  std::size_t best = 0;
  double best_cost = pr.cost(grid[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double c = pr.cost(grid[i]);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }
  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  double kappa = grid[best];
  if (hi > lo) {
    const auto r = boost::math::tools::brent_find_minima(
        [&](double k) { return pr.cost(k); }, lo, hi, std::numeric_limits<double>::digits);
    if (r.second <= best_cost) kappa = r.first;
  }
  double v0 = pr.amplitude(kappa);
  polish(pr, kappa, v0);

  CalibrationFit fit;
  fit.map = {v0, kappa};
  double ss = 0.0;
  for (const auto& p : points) {
    const double r = v0 * std::exp(-kappa * p.slope_variance / 2.0) - p.visibility;
    fit.residuals.push_back(r);
    ss += r * r;
  }
  fit.rms = std::sqrt(ss / static_cast<double>(points.size()));
  return fit;
}

const char* to_string(LockStatus s) {
  switch (s) {
    case LockStatus::locked: return "locked";
    case LockStatus::lucky: return "lucky";
    case LockStatus::unlocked: return "unlocked";
  }
  return "?";
}

LockStatus lock_status(double visibility, double slope_variance, bool ao_enabled,
                       const LockThresholds& t) {
  if (!std::isfinite(visibility) || !std::isfinite(slope_variance)) {
    throw std::invalid_argument("lock_status inputs must be finite");
  }
  if (!ao_enabled && slope_variance > t.no_ao_unlock_slope_variance) return LockStatus::unlocked;
  if (visibility >= t.v_lock) return LockStatus::locked;
  if (visibility > t.v_min && slope_variance > t.lucky_slope_variance) return LockStatus::lucky;
  return LockStatus::unlocked;
}

VisibilityPoint make_visibility_point(const VisibilityMap& map, double slope_variance,
                                      double residual_variance,
                                      std::span<const double> block_residuals, bool ao_enabled,
                                      const LockThresholds& thresholds) {
  VisibilityPoint p;
  p.slope_variance = slope_variance;
  p.ao_enabled = ao_enabled;
  p.visibility = std::clamp(visibility_from_residual(map, residual_variance), 0.0, 1.0);
  if (block_residuals.size() >= 2) {
    double mean = 0.0;
    std::vector<double> v;
    for (double r : block_residuals) {
      v.push_back(visibility_from_residual(map, r));
      mean += v.back();
    }
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    p.visibility_std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  p.lock = lock_status(p.visibility, slope_variance, ao_enabled, thresholds);
  return p;
}

}  // namespace fsqkd
