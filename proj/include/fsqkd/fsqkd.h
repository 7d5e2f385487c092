/*
 * C interface to the fsqkd library.
 *
 * Conventions
 *   - Every fallible call returns an fsqkd_status; FSQKD_OK is zero.
 *   - On failure, fsqkd_last_error() returns a message for the calling
 *     thread, valid until that thread's next fsqkd call.
 *   - Objects are opaque handles created by *_create / *_load / run
 *     functions and released with the matching *_free (NULL is accepted).
 *   - Status values double as process exit codes for the command-line tool.
 */
#ifndef FSQKD_FSQKD_H
#define FSQKD_FSQKD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FSQKD_API __declspec(dllexport)
#else
#define FSQKD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fsqkd_status {
  FSQKD_OK = 0,
  FSQKD_ERROR = 1,             /* unexpected internal failure */
  FSQKD_VALIDATION_FAILED = 2, /* a validation criterion did not hold */
  FSQKD_INPUT_ERROR = 3,       /* bad argument, config, or file format */
  FSQKD_DOMAIN_ERROR = 4       /* numerical domain error */
} fsqkd_status;

typedef enum fsqkd_detection { FSQKD_HOMODYNE = 0, FSQKD_HETERODYNE = 1 } fsqkd_detection;

typedef enum fsqkd_channel {
  FSQKD_CHANNEL_CM60 = 0,
  FSQKD_CHANNEL_M30 = 1,
  FSQKD_CHANNEL_CUSTOM = 2
} fsqkd_channel;

/* Channel, detector and protocol parameters. Variances in shot-noise units. */
typedef struct fsqkd_params {
  double transmittance;
  double detector_efficiency;
  double visibility; /* amplitude sqrt(eta_vis) */
  double modulation_variance;
  double excess_noise;
  double electronic_noise;
  double reconciliation_efficiency;
  fsqkd_detection detection;
  int untrusted_electronic_noise; /* 0: v_el removed before the Holevo bound */
} fsqkd_params;

typedef struct fsqkd_skr_result {
  double v;
  double v_b;
  double z;
  double lambda1;
  double lambda2;
  double lambda3;
  double mutual_information; /* bits per channel use */
  double holevo_bound;
  double skr;
  int positive;
} fsqkd_skr_result;

typedef struct fsqkd_scenario fsqkd_scenario;
typedef struct fsqkd_traces fsqkd_traces;
typedef struct fsqkd_windows fsqkd_windows;
typedef struct fsqkd_report fsqkd_report;

FSQKD_API const char* fsqkd_version(void);
FSQKD_API const char* fsqkd_last_error(void);
FSQKD_API const char* fsqkd_status_string(fsqkd_status status);

/* ---- key rate ------------------------------------------------------------ */

FSQKD_API fsqkd_status fsqkd_compute_skr(const fsqkd_params* params, fsqkd_skr_result* out);

/* Best V_A in [lower, upper]. *positive is 0 when no scanned rate is > 0. */
FSQKD_API fsqkd_status fsqkd_optimize_modulation(const fsqkd_params* params, double lower,
                                                 double upper, double* modulation_variance,
                                                 double* skr, int* positive);

/* Largest tolerable excess noise with V_A re-optimized; params->excess_noise
 * is ignored. */
FSQKD_API fsqkd_status fsqkd_max_excess_noise(const fsqkd_params* params, double* xi_max);

/* ---- scenarios ----------------------------------------------------------- */

FSQKD_API fsqkd_status fsqkd_scenario_fixture(fsqkd_channel channel, fsqkd_scenario** out);
/* channel_override < 0 keeps the channel named in the file. */
FSQKD_API fsqkd_status fsqkd_scenario_load(const char* path, int channel_override,
                                           fsqkd_scenario** out);
FSQKD_API void fsqkd_scenario_free(fsqkd_scenario* scenario);

/* Replaces the seed list with a single seed. */
FSQKD_API fsqkd_status fsqkd_scenario_set_seed(fsqkd_scenario* scenario, uint64_t seed);
FSQKD_API fsqkd_status fsqkd_scenario_set_output_dir(fsqkd_scenario* scenario, const char* dir);
FSQKD_API fsqkd_status fsqkd_scenario_set_reoptimize(fsqkd_scenario* scenario, int enabled);
FSQKD_API fsqkd_status fsqkd_scenario_hash(const fsqkd_scenario* scenario, uint64_t* hash);
FSQKD_API fsqkd_status fsqkd_scenario_params(const fsqkd_scenario* scenario,
                                             fsqkd_detection detection, double visibility,
                                             fsqkd_params* out);

/* ---- traces -------------------------------------------------------------- */

FSQKD_API fsqkd_status fsqkd_traces_load(const char* cs_path, const char* sn_path,
                                         const char* dn_path, fsqkd_traces** out);
FSQKD_API fsqkd_status fsqkd_traces_synthesize(double v_b, double v_el, size_t samples,
                                               uint64_t seed, fsqkd_traces** out);
/* Writes cs/sn/dn files into dir (.txt, or .bin when binary != 0). */
FSQKD_API fsqkd_status fsqkd_traces_write(const fsqkd_traces* traces, const char* dir,
                                          int binary);
FSQKD_API void fsqkd_traces_free(fsqkd_traces* traces);

FSQKD_API fsqkd_status fsqkd_traces_normalize(const fsqkd_traces* traces, size_t window_count,
                                              fsqkd_windows** out);
FSQKD_API size_t fsqkd_windows_count(const fsqkd_windows* windows);
FSQKD_API fsqkd_status fsqkd_windows_v_b(const fsqkd_windows* windows, size_t index,
                                         double* v_b);
FSQKD_API fsqkd_status fsqkd_windows_v_el(const fsqkd_windows* windows, double* v_el);
FSQKD_API void fsqkd_windows_free(fsqkd_windows* windows);

/* ---- commands -------------------------------------------------------------
 * Each command writes CSV files into the scenario's output directory and
 * returns a report with human-readable text and the list of written files.
 * The report is produced even when the status is FSQKD_VALIDATION_FAILED. */

/* A negative visibility selects the scenario's ambient visibility; a
 * negative detection evaluates both schemes and reports their ratio. */
FSQKD_API fsqkd_status fsqkd_run_skr(const fsqkd_scenario* scenario, double visibility,
                                     int detection, fsqkd_report** out);
FSQKD_API fsqkd_status fsqkd_run_sweep(const fsqkd_scenario* scenario, fsqkd_report** out);
FSQKD_API fsqkd_status fsqkd_run_max_xi(const fsqkd_scenario* scenario, double t_min,
                                        double t_max, size_t points, fsqkd_report** out);
/* baseline_mean may be NULL; otherwise the inferred visibility is reported. */
FSQKD_API fsqkd_status fsqkd_run_traces(const fsqkd_scenario* scenario,
                                        const fsqkd_traces* traces, size_t window_count,
                                        fsqkd_detection detection, const double* baseline_mean,
                                        double baseline_visibility, fsqkd_report** out);
/* frames == 0 uses the scenario's frame count. */
FSQKD_API fsqkd_status fsqkd_run_ao_sim(const fsqkd_scenario* scenario, const char* setting,
                                        const char* orientation, int loop_enabled, size_t frames,
                                        int dump_frames, fsqkd_report** out);
/* reference_dir == NULL uses the bundled tables. */
FSQKD_API fsqkd_status fsqkd_run_validate(const fsqkd_scenario* scenario,
                                          const char* reference_dir, fsqkd_report** out);
FSQKD_API fsqkd_status fsqkd_ao_bandwidth(const fsqkd_scenario* scenario, double* hz);

FSQKD_API const char* fsqkd_report_text(const fsqkd_report* report);
FSQKD_API size_t fsqkd_report_file_count(const fsqkd_report* report);
FSQKD_API const char* fsqkd_report_file(const fsqkd_report* report, size_t index);
FSQKD_API void fsqkd_report_free(fsqkd_report* report);

#ifdef __cplusplus
}
#endif

#endif /* FSQKD_FSQKD_H */
