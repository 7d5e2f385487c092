#pragma once

// Shot-noise normalization of homodyne oscilloscope traces.
//
// Three traces make up one measurement: the coherent state (signal + LO),
// shot noise (LO only) and dark noise (no light). The coherent-state trace
// is cut into equal windows, each normalized against the whole-trace true
// shot noise Var(SN) - Var(DN).

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsqkd/skr.hpp"

namespace fsqkd {

enum class TraceKind : std::uint32_t { coherent_state = 1, shot_noise = 2, dark_noise = 3 };

const char* to_string(TraceKind k);
TraceKind trace_kind_from_string(const std::string& s);

struct Trace {
  std::vector<double> samples;
  double duration_s = 0.24;
  TraceKind kind = TraceKind::coherent_state;
};

struct TraceSet {
  Trace cs;
  Trace sn;
  Trace dn;

  /// Throws std::invalid_argument if lengths or durations disagree. The
  /// recorded kinds are informational; roles come from the slot a trace
  /// occupies.
  void validate() const;
  /// True when each trace's recorded kind matches its slot.
  bool roles_match() const;
};

struct WindowedVariances {
  std::vector<double> v_b_per_window;
  double v_el = 0.0;
  std::size_t window_size = 0;
  double window_duration_s = 0.0;
};

/// Var(SN) - Var(DN) <= 0: the detector shows no shot noise above its floor.
class DegenerateDetectorError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed trace file; the message names the file and line or byte offset.
class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unbiased (n - 1) sample variance.
double sample_variance(std::span<const double> x);

constexpr std::size_t kDefaultWindowCount = 20;
constexpr std::size_t kDefaultTraceSamples = 1'000'000;
constexpr double kDefaultTraceDuration = 0.24;

WindowedVariances normalize_to_snu(const TraceSet& ts,
                                   std::size_t window_count = kDefaultWindowCount);

/// xi = mu (V_B - v_el - 1) / T, as used for the measured traces.
double excess_noise_estimate(double v_b, double v_el, double transmittance, Detection d);

/// Estimator consistent with the V_B model: removes the modulated signal
/// power before referring the residual noise to the channel input,
/// (V_B - v_el - 1 - t V_A) / t with t = eta_vis eta_det T.
double excess_noise_model_consistent(double v_b, double v_el, const SystemParams& p);

/// Gaussian trace set whose population variances reproduce the targets:
/// Var(CS) = V_B g, Var(SN) = (1 + v_el) g, Var(DN) = v_el g.
TraceSet synthesize_traceset(double v_b_target, double v_el_target, std::size_t samples,
                             std::uint64_t seed, double duration_s = kDefaultTraceDuration,
                             double gain = 1e-3);

struct InferredVisibility {
  double value = 0.0;  // clamped to [0, 1]
  double raw = 0.0;
};

InferredVisibility inferred_visibility(double cs_mean_current, double cs_mean_baseline,
                                       double visibility_baseline);

/// (I_max - I_min) / (I_max + I_min).
double fringe_visibility(double i_max, double i_min);

/// Mean of |x| over a demodulated trace.
double mean_magnitude(const Trace& t);

// File formats. Text: `# key: value` header lines (kind, duration_ms,
// samples) then one sample per line. Binary: 32-byte little-endian header
// (8-byte magic, u32 kind, u32 reserved, u64 sample count, u64 duration in
// microseconds) followed by packed little-endian float64 samples.
Trace read_trace(const std::filesystem::path& path);
void write_trace_text(const Trace& t, const std::filesystem::path& path);
void write_trace_binary(const Trace& t, const std::filesystem::path& path);

inline constexpr char kTraceMagic[8] = {'F', 'S', 'Q', 'T', 'R', 'C', '0', '1'};

}  // namespace fsqkd
