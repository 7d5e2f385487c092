#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <numbers>

#include "fsqkd/wavefront.hpp"

using namespace fsqkd::ao;

namespace {

const OpticalModel& fried_optics() {
  static const OpticalModel optics(DeformableMirror::fried());
  return optics;
}

WfsFrame frame_from_slopes(const Eigen::VectorXd& s) {
  WfsFrame f;
  f.set_slopes(s);
  f.intensity.fill(1.0);
  return f;
}

TurbulenceSetting setting(double target, double correlation = 0.95) {
  TurbulenceSetting s;
  s.label = TurbulenceLabel::medium;
  s.target_slope_variance = target;
  s.temporal_correlation = correlation;
  return s;
}

}  // namespace

TEST_SUITE("wavefront") {
  TEST_CASE("pupil geometry") {
    CHECK(valid_subapertures().size() == 32);
    CHECK(is_corner(0, 0));
    CHECK(is_corner(5, 0));
    CHECK_FALSE(is_corner(0, 1));
    int valid = 0;
    for (bool b : WfsFrame::default_mask()) valid += b;
    CHECK(valid == 32);
    CHECK(DeformableMirror::fried().actuator_count() == 45);
    CHECK(DeformableMirror::colocated().actuator_count() == 36);
  }

  TEST_CASE("slope vector layout round trips") {
    Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(kSlopeCount, -1.0, 1.0);
    WfsFrame f;
    f.set_slopes(s);
    CHECK(f.slope_vector().isApprox(s));
    const int first = valid_subapertures()[0];
    CHECK(f.slope_x[first] == doctest::Approx(s[0]));
    CHECK(f.slope_y[first] == doctest::Approx(s[kValidCount]));
  }

  TEST_CASE("tip measures as a uniform x slope") {
    const auto s = measure_surface_slopes([](double x, double) { return 0.3 * x; });
    for (int i = 0; i < kValidCount; ++i) {
      CHECK(s[i] == doctest::Approx(0.3).epsilon(1e-9));
      CHECK(s[kValidCount + i] == doctest::Approx(0.0).epsilon(1e-9));
    }
  }

  TEST_CASE("interaction matrix matches the finite-difference response") {
    const auto& optics = fried_optics();
    const auto im = calibrate_interaction_matrix(optics, 0.05);
    REQUIRE(im.rows() == kSlopeCount);
    REQUIRE(im.cols() == 45);
    for (int j = 0; j < im.cols(); j += 7) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(45);
      c[j] = 1e-3;
      const Eigen::VectorXd fd = (optics.dm_slopes(c) - optics.dm_slopes(-c)) / 2e-3;
      CHECK((im.col(j) - fd).norm() <= 1e-9 * (1.0 + fd.norm()));
    }
  }

  TEST_CASE("unregistered actuator is reported") {
    auto dm = DeformableMirror::fried();
    dm.influence[3] = [](double, double) { return 0.0; };
    const OpticalModel optics(dm);
    CHECK_THROWS_AS(calibrate_interaction_matrix(optics), UnregisteredActuatorError);
  }

  TEST_CASE("reconstructor is a Moore-Penrose pseudoinverse") {
    const auto& optics = fried_optics();
    const auto im = calibrate_interaction_matrix(optics);
    const auto rec = build_reconstructor(im, 1e-3);
    const auto& r = rec.matrix;
    CHECK(rec.retained_modes > 0);
    CHECK(rec.retained_modes <= 45);
    CHECK((im * r * im - im).norm() <= 1e-8 * im.norm());
    CHECK((r * im * r - r).norm() <= 1e-8 * r.norm());
    const Eigen::MatrixXd ir = im * r;
    CHECK((ir - ir.transpose()).norm() <= 1e-8 * ir.norm());
    const Eigen::MatrixXd ri = r * im;
    CHECK((ri - ri.transpose()).norm() <= 1e-8 * ri.norm());
    CHECK_THROWS_AS(build_reconstructor(im, -1.0), std::invalid_argument);
  }

  TEST_CASE("pure integrator removes an in-range disturbance by (1 - g) per frame") {
    const auto& optics = fried_optics();
    auto loop = make_loop(optics);
    loop.leak = 1.0;
    const double g = loop.integrator_gain;
    const Eigen::VectorXd target = loop.reconstructor * optics.mode_slope_response().col(0);
    const Eigen::VectorXd disturbance = optics.dm_slopes(target);
    const auto measured = frame_from_slopes(disturbance);
    double prev = closed_loop_step(loop, optics, measured).slope_vector().norm();
    CHECK(prev == doctest::Approx(disturbance.norm()));
    for (int k = 0; k < 10; ++k) {
      const double now = closed_loop_step(loop, optics, measured).slope_vector().norm();
      CHECK(now / prev == doctest::Approx(1.0 - g).epsilon(1e-6));
      prev = now;
    }
  }

  TEST_CASE("single mode converges within 50 frames with the default leak") {
    const auto& optics = fried_optics();
    auto loop = make_loop(optics);
    const Eigen::VectorXd target = loop.reconstructor * optics.mode_slope_response().col(2);
    const auto measured = frame_from_slopes(optics.dm_slopes(target));
    const double initial = measured.slope_vector().norm();
    double residual = initial;
    for (int k = 0; k < 50; ++k) {
      residual = closed_loop_step(loop, optics, measured).slope_vector().norm();
    }
    const double leak_floor = (1.0 - loop.leak) / (1.0 - loop.leak + loop.integrator_gain);
    CHECK(residual / initial == doctest::Approx(leak_floor).epsilon(0.01));
    CHECK(residual / initial < 0.05);
    CHECK_FALSE(loop.saturated);
  }

  TEST_CASE("a calibrated mode offset is removed below 1% within 50 frames") {
    const auto& optics = fried_optics();
    const Eigen::MatrixXd modes = optics.mode_slope_response();
    const auto quiet = frame_from_slopes(Eigen::VectorXd::Zero(modes.rows()));
    for (Eigen::Index m = 0; m < modes.cols(); ++m) {
      auto loop = make_loop(optics);
      loop.command = loop.reconstructor * modes.col(m);
      const double initial = optics.dm_slopes(loop.command).norm();
      double residual = initial;
      int frames = 0;
      while (residual > 0.01 * initial && frames < 50) {
        residual = closed_loop_step(loop, optics, quiet).slope_vector().norm();
        ++frames;
      }
      CHECK(residual <= 0.01 * initial);
    }
  }

  TEST_CASE("open loop leaves the command untouched") {
    const auto& optics = fried_optics();
    auto loop = make_loop(optics);
    loop.loop_enabled = false;
    const auto measured = frame_from_slopes(optics.mode_slope_response().col(0));
    const auto r = closed_loop_step(loop, optics, measured);
    CHECK(loop.command.isZero());
    CHECK(r.slope_vector().isApprox(measured.slope_vector()));
  }

  TEST_CASE("stroke limit clamps and flags saturation") {
    const auto& optics = fried_optics();
    auto loop = make_loop(optics);
    const auto measured = frame_from_slopes(1e4 * optics.mode_slope_response().col(0));
    for (int k = 0; k < 20; ++k) closed_loop_step(loop, optics, measured);
    CHECK(loop.saturated);
    CHECK(loop.command.cwiseAbs().maxCoeff() <= optics.dm().stroke_limit + 1e-12);
  }

  TEST_CASE("frame statistic is rotation invariant") {
    WfsFrame f;
    f.intensity.fill(1.0);
    for (int i = 0; i < kSubapCount; ++i) {
      f.slope_x[i] = 0.01 * i;
      f.slope_y[i] = -0.02 * (i % 5);
    }
    const double base = frame_mean_slope(f);
    for (double theta : {0.3, 1.0, std::numbers::pi / 2, 2.5}) {
      WfsFrame r = f;
      for (int i = 0; i < kSubapCount; ++i) {
        r.slope_x[i] = std::cos(theta) * f.slope_x[i] - std::sin(theta) * f.slope_y[i];
        r.slope_y[i] = std::sin(theta) * f.slope_x[i] + std::cos(theta) * f.slope_y[i];
      }
      CHECK(frame_mean_slope(r) == doctest::Approx(base).epsilon(1e-12));
    }
  }

  TEST_CASE("frame statistic rejects bad masks and dark sub-apertures") {
    WfsFrame f;
    f.intensity.fill(1.0);
    auto mask = f;
    mask.valid_mask[0] = true;
    CHECK_THROWS_AS(frame_mean_slope(mask), std::invalid_argument);
    auto dark = f;
    dark.intensity[valid_subapertures()[4]] = 0.0;
    CHECK_THROWS_AS(frame_mean_slope(dark), std::runtime_error);
  }

  TEST_CASE("slope statistics") {
    const auto s = slope_stats_from_means({1.0, 2.0, 3.0}, LoopMode::closed);
    CHECK(s.slope_variance == doctest::Approx(1.0));
    CHECK(s.frame_count == 3);
    CHECK(s.loop_mode == LoopMode::closed);
  }

  TEST_CASE("turbulence generator reaches its slope-variance target") {
    const auto& optics = fried_optics();
    const auto r = run_characterization(setting(0.005), optics, std::nullopt, 12'000, 4);
    CHECK(r.open_loop.slope_variance == doctest::Approx(0.005).epsilon(0.15));
    CHECK_FALSE(r.closed_loop.has_value());
  }

  TEST_CASE("closed loop reduces the residual wavefront") {
    const auto& optics = fried_optics();
    const auto r = run_characterization(setting(0.005), optics, make_loop(optics), 6'000, 4);
    REQUIRE(r.closed_loop.has_value());
    CHECK(r.closed_loop->slope_variance < r.open_loop.slope_variance);
    CHECK(r.residual_wavefront_variance < 0.2 * r.open_wavefront_variance);
  }

  TEST_CASE("zero turbulence leaves only sensor noise") {
    const auto& optics = fried_optics();
    const auto r = run_characterization(setting(0.0), optics, make_loop(optics), 1'000, 8);
    CHECK(r.open_loop.slope_variance < 1e-6);
    CHECK(r.open_wavefront_variance < 1e-12);
    CHECK_FALSE(r.saturated);
  }

  TEST_CASE("characterization is deterministic per seed") {
    const auto& optics = fried_optics();
    const auto a = run_characterization(setting(0.003), optics, make_loop(optics), 500, 77);
    const auto b = run_characterization(setting(0.003), optics, make_loop(optics), 500, 77);
    const auto c = run_characterization(setting(0.003), optics, make_loop(optics), 500, 78);
    CHECK(a.open_loop.per_frame_mean_slope == b.open_loop.per_frame_mean_slope);
    CHECK(a.residual_rms == b.residual_rms);
    CHECK(a.open_loop.per_frame_mean_slope != c.open_loop.per_frame_mean_slope);
  }

  TEST_CASE("setting validation") {
    CHECK_THROWS_AS(setting(-1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(setting(0.01, 1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(run_characterization(setting(0.01), fried_optics(), std::nullopt, 1, 1),
                    std::invalid_argument);
    CHECK(turbulence_label_from_string("high") == TurbulenceLabel::high);
    CHECK(orientation_from_string("along") == Orientation::along);
    CHECK_THROWS_AS(turbulence_label_from_string("extreme"), std::invalid_argument);
  }

  TEST_CASE("rejection bandwidth of the default loop") {
    const auto& optics = fried_optics();
    const auto loop = make_loop(optics);
    CHECK(rejection_bandwidth(optics, loop) == doctest::Approx(135.0).epsilon(0.05));
    CHECK(sinusoid_rejection(optics, loop, 5.0) < 0.1);
    CHECK(sinusoid_rejection(optics, loop, 900.0) > 1.0);
  }
}
