#pragma once

// Scenario engine: channel fixtures, INI configuration, and the simulation
// sweeps behind the command-line front end. Every CSV it writes starts with
// a `# provenance: config=<hash> seed=<seeds>` line and a header row.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsqkd/reference.hpp"
#include "fsqkd/skr.hpp"
#include "fsqkd/trace.hpp"
#include "fsqkd/visibility.hpp"
#include "fsqkd/wavefront.hpp"

namespace fsqkd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AoConfig {
  double dm_coupling = 0.15;
  bool fried_geometry = true;
  double loop_gain = ao::kDefaultLoopGain;
  double leak = ao::kDefaultLeak;
  double regularization = 1e-3;
  double sensor_noise = ao::kDefaultSensorNoise;
};

struct ScenarioConfig {
  Channel channel = Channel::cm60;
  double transmittance = 0.4433;
  double detector_efficiency = 0.99;
  double reconciliation_efficiency = 0.9;
  double electronic_noise = 0.027;
  double modulation_variance_hom = 0.3;
  double modulation_variance_het = 2.0;
  double excess_noise = 0.001;
  double ambient_visibility = 0.6;
  bool reoptimize_modulation = false;

  // Visibility map: kappa fitted from `reference` unless given.
  Channel reference = Channel::cm60;
  ao::Orientation calibration_orientation = ao::Orientation::across;
  std::optional<double> kappa;
  LockThresholds lock;

  std::vector<ao::TurbulenceSetting> settings;
  std::vector<std::uint64_t> seeds{1};
  std::size_t frames = ao::kCharacterizationFrames;
  std::size_t visibility_blocks = 20;
  AoConfig ao;
  std::filesystem::path output_dir = "out";

  /// Bundled 60 cm / 30 m fixtures; `custom` starts from the 60 cm values.
  static ScenarioConfig fixture(Channel c);

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  double modulation_variance(Detection d) const {
    return d == Detection::homodyne ? modulation_variance_hom : modulation_variance_het;
  }
  SystemParams params(Detection d, double visibility) const;

  /// Canonical `key = value` text of every field that affects results
  /// (the output directory is excluded).
  std::string canonical_text() const;
  /// FNV-1a 64 of canonical_text().
  std::uint64_t hash() const;
  std::string seed_text() const;
};

/// Heat-gun presets for a channel (measured open-loop slope-variance targets).
std::vector<ao::TurbulenceSetting> turbulence_presets(Channel c);

/// Reads an INI file: `[scenario]`, `[run]`, `[map]`, `[ao]` and one
/// `[setting.<label>.<orientation>]` section per turbulence setting. The
/// `channel` key (or `channel_override`) selects the fixture that the file
/// then overrides. Unknown sections or keys throw ConfigError.
ScenarioConfig load_config(const std::filesystem::path& path,
                           std::optional<Channel> channel_override = std::nullopt);
ScenarioConfig parse_config(const std::string& text, const std::string& source,
                            std::optional<Channel> channel_override = std::nullopt);

std::uint64_t fnv1a64(std::string_view data);
std::string provenance_line(std::uint64_t config_hash, const std::string& seeds);

// ---- visibility map -----------------------------------------------------------

/// Map used by the sweep: fixed kappa from the config, or a fit to the
/// no-AO reference rows anchored at the configured ambient visibility.
CalibrationFit scenario_visibility_map(const ScenarioConfig& cfg);

// ---- sweep --------------------------------------------------------------------

struct SweepRow {
  ao::TurbulenceLabel setting = ao::TurbulenceLabel::ambient;
  ao::Orientation orientation = ao::Orientation::across;
  bool ao = false;
  std::uint64_t seed = 0;
  double slope_variance = 0.0;     // open-loop, the turbulence characterization
  double residual_variance = 0.0;  // slope-variance equivalent fed to the map
  double visibility = 0.0;
  double visibility_std = 0.0;
  double skr_hom = 0.0;
  double skr_het = 0.0;
  double modulation_variance_hom = 0.0;
  double modulation_variance_het = 0.0;
  LockStatus lock = LockStatus::locked;
  bool saturated = false;
  std::string error;

  bool negative() const { return !(skr_hom > 0.0) || !(skr_het > 0.0); }
};

struct SweepResult {
  std::vector<SweepRow> rows;
  CalibrationFit map;
  std::uint64_t config_hash = 0;
  std::string seeds;
  bool hard_failure = false;
};

/// Evaluates one sweep row's key rates from its visibility.
void evaluate_row_skr(const ScenarioConfig& cfg, SweepRow& row);

SweepResult run_sweep(const ScenarioConfig& cfg);

/// Writes sweep.csv, visibility_vs_slope.csv, skr_vs_slope.csv and
/// visibility_difference.csv into `dir`; returns the written paths.
std::vector<std::filesystem::path> write_sweep(const SweepResult& result,
                                               const ScenarioConfig& cfg,
                                               const std::filesystem::path& dir);

struct SettingSummary {
  ao::TurbulenceLabel setting;
  ao::Orientation orientation;
  bool ao;
  double slope_variance = 0.0;
  double visibility = 0.0;
  double visibility_std = 0.0;  // block spread within runs plus spread over seeds
  double skr_hom = 0.0;
  double skr_het = 0.0;
};

/// Seed-averaged rows in configuration order (AO row first).
std::vector<SettingSummary> summarize_sweep(const SweepResult& result);

// ---- other commands -----------------------------------------------------------

struct SkrReport {
  SystemParams params;
  SkrResult result;
};

SkrReport scenario_skr(const ScenarioConfig& cfg, Detection d, double visibility);
std::filesystem::path write_skr(const std::vector<SkrReport>& reports, const ScenarioConfig& cfg,
                                const std::filesystem::path& dir);

struct MaxXiPoint {
  double transmittance = 0.0;
  double xi_hom = 0.0;
  double xi_het = 0.0;
};

/// xi_max versus T on a log grid between t_min and t_max, evaluated at the
/// configured ambient visibility; the fixture transmittances are always
/// included as marked points.
std::vector<MaxXiPoint> max_xi_curve(const ScenarioConfig& cfg, double t_min, double t_max,
                                     std::size_t points);
std::filesystem::path write_max_xi(const std::vector<MaxXiPoint>& curve,
                                   const ScenarioConfig& cfg, const std::filesystem::path& dir);

struct TraceWindowRow {
  std::size_t window = 0;
  double v_b = 0.0;
  double xi_literal = 0.0;
  double xi_model = 0.0;
};

struct TraceReport {
  WindowedVariances windows;
  std::vector<TraceWindowRow> rows;
  double mean_v_b = 0.0;
  double mean_xi_literal = 0.0;
  double mean_xi_model = 0.0;
  std::optional<InferredVisibility> visibility;
  std::vector<std::string> warnings;
};

struct VisibilityBaseline {
  double mean_magnitude = 0.0;  // of the baseline coherent-state trace
  double visibility = 0.0;
};

/// xi estimates use the config's homodyne parameters at the ambient
/// visibility (or the inferred one when a baseline is supplied).
TraceReport analyze_traces(const ScenarioConfig& cfg, const TraceSet& ts,
                           std::size_t window_count, Detection d,
                           std::optional<VisibilityBaseline> baseline = std::nullopt);
std::filesystem::path write_trace_report(const TraceReport& r, const ScenarioConfig& cfg,
                                         const std::filesystem::path& dir);

struct AoSimOptions {
  ao::TurbulenceLabel setting = ao::TurbulenceLabel::medium;
  ao::Orientation orientation = ao::Orientation::across;
  bool loop_enabled = true;
  std::optional<std::size_t> frames;
  bool dump_frames = false;
};

struct AoSimResult {
  ao::TurbulenceSetting setting;
  std::uint64_t seed = 0;
  ao::CharacterizationResult characterization;
  std::vector<std::filesystem::path> files;
};

ao::OpticalModel make_optics(const AoConfig& cfg);
ao::AoLoopState make_scenario_loop(const ao::OpticalModel& optics, const AoConfig& cfg);
const ao::TurbulenceSetting& find_setting(const ScenarioConfig& cfg, ao::TurbulenceLabel label,
                                          ao::Orientation orientation);

/// Runs one characterization per configured seed (the first seed when
/// dumping frames) and writes ao_summary.csv (+ ao_frames.csv).
std::vector<AoSimResult> run_ao_sim(const ScenarioConfig& cfg, const AoSimOptions& opt);

}  // namespace fsqkd
