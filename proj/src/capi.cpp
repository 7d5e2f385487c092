#include "fsqkd/fsqkd.h"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsqkd/acceptance.hpp"
#include "fsqkd/scenario.hpp"

struct fsqkd_scenario {
  fsqkd::ScenarioConfig cfg;
};

struct fsqkd_traces {
  fsqkd::TraceSet set;
};

struct fsqkd_windows {
  fsqkd::WindowedVariances w;
};

struct fsqkd_report {
  std::string text;
  std::vector<std::string> files;
};

namespace {

thread_local std::string g_last_error;

fsqkd_status fail(fsqkd_status s, const std::string& message) {
  g_last_error = message;
  return s;
}

// Runs `fn` and converts exceptions into status codes.
template <typename Fn>
fsqkd_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const fsqkd::DegenerateDetectorError& e) {
    return fail(FSQKD_DOMAIN_ERROR, e.what());
  } catch (const fsqkd::TraceFormatError& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const fsqkd::ConfigError& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const fsqkd::ReferenceFormatError& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const std::out_of_range& e) {
    return fail(FSQKD_INPUT_ERROR, e.what());
  } catch (const std::domain_error& e) {
    return fail(FSQKD_DOMAIN_ERROR, e.what());
  } catch (const std::bad_alloc&) {
    return fail(FSQKD_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(FSQKD_ERROR, e.what());
  } catch (...) {
    return fail(FSQKD_ERROR, "unknown error");
  }
}

#define FSQKD_REQUIRE(cond, what) \
  if (!(cond)) return fail(FSQKD_INPUT_ERROR, what)

fsqkd::Detection to_cpp(fsqkd_detection d) {
  switch (d) {
    case FSQKD_HOMODYNE:
      return fsqkd::Detection::homodyne;
    case FSQKD_HETERODYNE:
      return fsqkd::Detection::heterodyne;
  }
  throw std::invalid_argument(fmt::format("unknown detection {}", static_cast<int>(d)));
}

fsqkd::Channel to_cpp(fsqkd_channel c) {
  switch (c) {
    case FSQKD_CHANNEL_CM60:
      return fsqkd::Channel::cm60;
    case FSQKD_CHANNEL_M30:
      return fsqkd::Channel::m30;
    case FSQKD_CHANNEL_CUSTOM:
      return fsqkd::Channel::custom;
  }
  throw std::invalid_argument(fmt::format("unknown channel {}", static_cast<int>(c)));
}

fsqkd::SystemParams to_cpp(const fsqkd_params& p) {
  fsqkd::SystemParams s;
  s.transmittance = p.transmittance;
  s.detector_efficiency = p.detector_efficiency;
  s.visibility = p.visibility;
  s.modulation_variance = p.modulation_variance;
  s.excess_noise = p.excess_noise;
  s.electronic_noise = p.electronic_noise;
  s.reconciliation_efficiency = p.reconciliation_efficiency;
  s.detection = to_cpp(p.detection);
  s.trust = p.untrusted_electronic_noise ? fsqkd::NoiseTrust::untrusted
                                         : fsqkd::NoiseTrust::trusted;
  return s;
}

fsqkd_params to_c(const fsqkd::SystemParams& s) {
  fsqkd_params p{};
  p.transmittance = s.transmittance;
  p.detector_efficiency = s.detector_efficiency;
  p.visibility = s.visibility;
  p.modulation_variance = s.modulation_variance;
  p.excess_noise = s.excess_noise;
  p.electronic_noise = s.electronic_noise;
  p.reconciliation_efficiency = s.reconciliation_efficiency;
  p.detection = s.detection == fsqkd::Detection::homodyne ? FSQKD_HOMODYNE : FSQKD_HETERODYNE;
  p.untrusted_electronic_noise = s.trust == fsqkd::NoiseTrust::untrusted;
  return p;
}

fsqkd_skr_result to_c(const fsqkd::SkrResult& r) {
  fsqkd_skr_result o{};
  o.v = r.covariance.v;
  o.v_b = r.covariance.v_b;
  o.z = r.covariance.z;
  o.lambda1 = r.symplectic_eigenvalues[0];
  o.lambda2 = r.symplectic_eigenvalues[1];
  o.lambda3 = r.symplectic_eigenvalues[2];
  o.mutual_information = r.mutual_information;
  o.holevo_bound = r.holevo_bound;
  o.skr = r.skr;
  o.positive = r.positive ? 1 : 0;
  return o;
}

void add_files(fsqkd_report& r, const std::vector<std::filesystem::path>& files) {
  for (const auto& f : files) r.files.push_back(f.string());
}

std::string config_banner(const fsqkd::ScenarioConfig& cfg) {
  return fmt::format("channel={} config={:016x} seeds={} out={}\n", fsqkd::to_string(cfg.channel),
                     cfg.hash(), cfg.seed_text(), cfg.output_dir.string());
}

}  // namespace

extern "C" {

const char* fsqkd_version(void) { return "0.1.0"; }

const char* fsqkd_last_error(void) { return g_last_error.c_str(); }

const char* fsqkd_status_string(fsqkd_status status) {
  switch (status) {
    case FSQKD_OK:
      return "ok";
    case FSQKD_ERROR:
      return "internal error";
    case FSQKD_VALIDATION_FAILED:
      return "validation failed";
    case FSQKD_INPUT_ERROR:
      return "input error";
    case FSQKD_DOMAIN_ERROR:
      return "numerical domain error";
  }
  return "unknown status";
}

// ---- key rate -----------------------------------------------------------------------

fsqkd_status fsqkd_compute_skr(const fsqkd_params* params, fsqkd_skr_result* out) {
  FSQKD_REQUIRE(params && out, "null argument");
  return guarded([&] {
    *out = to_c(fsqkd::compute_skr(to_cpp(*params)));
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_optimize_modulation(const fsqkd_params* params, double lower, double upper,
                                       double* modulation_variance, double* skr, int* positive) {
  FSQKD_REQUIRE(params && modulation_variance && skr && positive, "null argument");
  return guarded([&] {
    const auto r = fsqkd::optimize_modulation_variance(to_cpp(*params), lower, upper);
    *modulation_variance = r.modulation_variance;
    *skr = r.skr;
    *positive = r.positive ? 1 : 0;
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_max_excess_noise(const fsqkd_params* params, double* xi_max) {
  FSQKD_REQUIRE(params && xi_max, "null argument");
  return guarded([&] {
    *xi_max = fsqkd::max_tolerable_excess_noise(to_cpp(*params));
    return FSQKD_OK;
  });
}

// ---- scenarios ----------------------------------------------------------------------

fsqkd_status fsqkd_scenario_fixture(fsqkd_channel channel, fsqkd_scenario** out) {
  FSQKD_REQUIRE(out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new fsqkd_scenario{fsqkd::ScenarioConfig::fixture(to_cpp(channel))};
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_scenario_load(const char* path, int channel_override, fsqkd_scenario** out) {
  FSQKD_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::optional<fsqkd::Channel> ch;
    if (channel_override >= 0) ch = to_cpp(static_cast<fsqkd_channel>(channel_override));
    *out = new fsqkd_scenario{fsqkd::load_config(path, ch)};
    return FSQKD_OK;
  });
}

void fsqkd_scenario_free(fsqkd_scenario* scenario) { delete scenario; }

fsqkd_status fsqkd_scenario_set_seed(fsqkd_scenario* scenario, uint64_t seed) {
  FSQKD_REQUIRE(scenario, "null scenario");
  scenario->cfg.seeds = {seed};
  return FSQKD_OK;
}

fsqkd_status fsqkd_scenario_set_output_dir(fsqkd_scenario* scenario, const char* dir) {
  FSQKD_REQUIRE(scenario && dir, "null argument");
  FSQKD_REQUIRE(*dir, "output directory must not be empty");
  scenario->cfg.output_dir = dir;
  return FSQKD_OK;
}

fsqkd_status fsqkd_scenario_set_reoptimize(fsqkd_scenario* scenario, int enabled) {
  FSQKD_REQUIRE(scenario, "null scenario");
  scenario->cfg.reoptimize_modulation = enabled != 0;
  return FSQKD_OK;
}

fsqkd_status fsqkd_scenario_hash(const fsqkd_scenario* scenario, uint64_t* hash) {
  FSQKD_REQUIRE(scenario && hash, "null argument");
  return guarded([&] {
    *hash = scenario->cfg.hash();
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_scenario_params(const fsqkd_scenario* scenario, fsqkd_detection detection,
                                   double visibility, fsqkd_params* out) {
  FSQKD_REQUIRE(scenario && out, "null argument");
  return guarded([&] {
    *out = to_c(scenario->cfg.params(to_cpp(detection), visibility));
    return FSQKD_OK;
  });
}

// ---- traces -------------------------------------------------------------------------

fsqkd_status fsqkd_traces_load(const char* cs_path, const char* sn_path, const char* dn_path,
                               fsqkd_traces** out) {
  FSQKD_REQUIRE(cs_path && sn_path && dn_path && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    fsqkd::TraceSet ts{fsqkd::read_trace(cs_path), fsqkd::read_trace(sn_path),
                       fsqkd::read_trace(dn_path)};
    ts.validate();
    *out = new fsqkd_traces{std::move(ts)};
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_traces_synthesize(double v_b, double v_el, size_t samples, uint64_t seed,
                                     fsqkd_traces** out) {
  FSQKD_REQUIRE(out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new fsqkd_traces{fsqkd::synthesize_traceset(v_b, v_el, samples, seed)};
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_traces_write(const fsqkd_traces* traces, const char* dir, int binary) {
  FSQKD_REQUIRE(traces && dir, "null argument");
  return guarded([&] {
    const std::filesystem::path d(dir);
    std::filesystem::create_directories(d);
    const char* ext = binary ? ".bin" : ".txt";
    auto write = [&](const fsqkd::Trace& t, const char* stem) {
      const auto path = d / (std::string(stem) + ext);
      if (binary) {
        fsqkd::write_trace_binary(t, path);
      } else {
        fsqkd::write_trace_text(t, path);
      }
    };
    write(traces->set.cs, "cs");
    write(traces->set.sn, "sn");
    write(traces->set.dn, "dn");
    return FSQKD_OK;
  });
}

void fsqkd_traces_free(fsqkd_traces* traces) { delete traces; }

fsqkd_status fsqkd_traces_normalize(const fsqkd_traces* traces, size_t window_count,
                                    fsqkd_windows** out) {
  FSQKD_REQUIRE(traces && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new fsqkd_windows{fsqkd::normalize_to_snu(traces->set, window_count)};
    return FSQKD_OK;
  });
}

size_t fsqkd_windows_count(const fsqkd_windows* windows) {
  return windows ? windows->w.v_b_per_window.size() : 0;
}

fsqkd_status fsqkd_windows_v_b(const fsqkd_windows* windows, size_t index, double* v_b) {
  FSQKD_REQUIRE(windows && v_b, "null argument");
  FSQKD_REQUIRE(index < windows->w.v_b_per_window.size(), "window index out of range");
  *v_b = windows->w.v_b_per_window[index];
  return FSQKD_OK;
}

fsqkd_status fsqkd_windows_v_el(const fsqkd_windows* windows, double* v_el) {
  FSQKD_REQUIRE(windows && v_el, "null argument");
  *v_el = windows->w.v_el;
  return FSQKD_OK;
}

void fsqkd_windows_free(fsqkd_windows* windows) { delete windows; }

// ---- commands -----------------------------------------------------------------------

fsqkd_status fsqkd_run_skr(const fsqkd_scenario* scenario, double visibility, int detection,
                           fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    cfg.validate();
    auto rep = std::make_unique<fsqkd_report>();
    std::vector<fsqkd::Detection> schemes{fsqkd::Detection::homodyne,
                                          fsqkd::Detection::heterodyne};
    if (detection >= 0) schemes = {to_cpp(static_cast<fsqkd_detection>(detection))};
    std::vector<fsqkd::SkrReport> reports;
    for (auto d : schemes) {
      reports.push_back(
          fsqkd::scenario_skr(cfg, d, visibility < 0.0 ? cfg.ambient_visibility : visibility));
    }
    rep->text += config_banner(cfg);
    for (const auto& r : reports) {
      const auto& p = r.params;
      const auto& s = r.result;
      rep->text += fmt::format(
          "{}: T={} vis={} V_A={:.6g} xi={} v_el={}\n"
          "  Z={:.10g} V_B={:.10g} lambda1={:.10g} lambda2={:.10g} lambda3={:.10g}\n"
          "  I_AB={:.10g} S_BE={:.10g} SKR={:.10g}{}\n",
          fsqkd::to_string(p.detection), p.transmittance, p.visibility, p.modulation_variance,
          p.excess_noise, p.electronic_noise, s.covariance.z, s.covariance.v_b,
          s.symplectic_eigenvalues[0], s.symplectic_eigenvalues[1], s.symplectic_eigenvalues[2],
          s.mutual_information, s.holevo_bound, s.skr,
          s.positive ? "" : "  [non-positive: no key]");
    }
    if (reports.size() == 2) {
      const double hom = reports[0].result.skr;
      const double het = reports[1].result.skr;
      if (hom > 0.0) {
        rep->text += fmt::format("heterodyne/homodyne SKR ratio: {:.4g}\n", het / hom);
      } else {
        rep->text += "heterodyne/homodyne SKR ratio: undefined (homodyne rate not positive)\n";
      }
    }
    rep->files.push_back(fsqkd::write_skr(reports, cfg, cfg.output_dir).string());
    *out = rep.release();
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_run_sweep(const fsqkd_scenario* scenario, fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    const auto result = fsqkd::run_sweep(cfg);
    auto rep = std::make_unique<fsqkd_report>();
    rep->text += config_banner(cfg);
    rep->text += fmt::format("visibility map: V0={:.4f} kappa={:.4g} fit_rms={:.4g}\n",
                             result.map.map.ambient_visibility, result.map.map.kappa,
                             result.map.rms);
    rep->text += fmt::format("{:<8} {:<7} {:<5} {:>11} {:>9} {:>9} {:>12} {:>12}\n", "setting",
                             "orient", "ao", "slope_var", "vis", "vis_std", "skr_hom", "skr_het");
    for (const auto& s : fsqkd::summarize_sweep(result)) {
      rep->text += fmt::format("{:<8} {:<7} {:<5} {:>11.4g} {:>9.4f} {:>9.4f} {:>12.4g} {:>12.4g}\n",
                               fsqkd::ao::to_string(s.setting), fsqkd::ao::to_string(s.orientation),
                               s.ao ? "on" : "off", s.slope_variance, s.visibility,
                               s.visibility_std, s.skr_hom, s.skr_het);
    }
    std::size_t negative = 0;
    for (const auto& r : result.rows) {
      if (!r.error.empty()) rep->text += fmt::format("error: {}\n", r.error);
      if (r.negative()) ++negative;
    }
    if (negative) rep->text += fmt::format("{} rows with non-positive key rate\n", negative);
    add_files(*rep, fsqkd::write_sweep(result, cfg, cfg.output_dir));
    *out = rep.release();
    return result.hard_failure ? fail(FSQKD_DOMAIN_ERROR, "one or more sweep rows failed")
                               : FSQKD_OK;
  });
}

fsqkd_status fsqkd_run_max_xi(const fsqkd_scenario* scenario, double t_min, double t_max,
                              size_t points, fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    cfg.validate();
    const auto curve = fsqkd::max_xi_curve(cfg, t_min, t_max, points);
    auto rep = std::make_unique<fsqkd_report>();
    rep->text += config_banner(cfg);
    rep->text += fmt::format("{} transmittance points at visibility {}\n", curve.size(),
                             cfg.ambient_visibility);
    for (const auto& p : curve) {
      if (p.transmittance == cfg.transmittance) {
        rep->text += fmt::format("T={}: xi_max hom={:.5g} het={:.5g}\n", p.transmittance,
                                 p.xi_hom, p.xi_het);
      }
    }
    rep->files.push_back(fsqkd::write_max_xi(curve, cfg, cfg.output_dir).string());
    *out = rep.release();
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_run_traces(const fsqkd_scenario* scenario, const fsqkd_traces* traces,
                              size_t window_count, fsqkd_detection detection,
                              const double* baseline_mean, double baseline_visibility,
                              fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && traces && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    std::optional<fsqkd::VisibilityBaseline> baseline;
    if (baseline_mean) baseline = fsqkd::VisibilityBaseline{*baseline_mean, baseline_visibility};
    const auto r = fsqkd::analyze_traces(cfg, traces->set, window_count, to_cpp(detection),
                                         baseline);
    auto rep = std::make_unique<fsqkd_report>();
    rep->text += config_banner(cfg);
    rep->text += fmt::format(
        "windows={} window_size={} window_duration_s={:.6g}\n"
        "v_el={:.6g} mean V_B={:.6g} mean xi literal={:.6g} model={:.6g}\n",
        r.rows.size(), r.windows.window_size, r.windows.window_duration_s, r.windows.v_el,
        r.mean_v_b, r.mean_xi_literal, r.mean_xi_model);
    for (const auto& w : r.warnings) rep->text += fmt::format("warning: {}\n", w);
    if (r.visibility) {
      rep->text += fmt::format("inferred visibility={:.6g} (raw {:.6g})\n", r.visibility->value,
                               r.visibility->raw);
    }
    rep->files.push_back(fsqkd::write_trace_report(r, cfg, cfg.output_dir).string());
    *out = rep.release();
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_run_ao_sim(const fsqkd_scenario* scenario, const char* setting,
                              const char* orientation, int loop_enabled, size_t frames,
                              int dump_frames, fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && setting && orientation && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    fsqkd::AoSimOptions opt;
    opt.setting = fsqkd::ao::turbulence_label_from_string(setting);
    opt.orientation = fsqkd::ao::orientation_from_string(orientation);
    opt.loop_enabled = loop_enabled != 0;
    if (frames > 0) opt.frames = frames;
    opt.dump_frames = dump_frames != 0;
    const auto results = fsqkd::run_ao_sim(cfg, opt);
    auto rep = std::make_unique<fsqkd_report>();
    rep->text += config_banner(cfg);
    for (const auto& r : results) {
      const auto& c = r.characterization;
      rep->text += fmt::format("{}.{} seed={} open-loop slope variance={:.6g}",
                               fsqkd::ao::to_string(r.setting.label),
                               fsqkd::ao::to_string(r.setting.orientation), r.seed,
                               c.open_loop.slope_variance);
      if (c.closed_loop) {
        rep->text += fmt::format(" closed-loop={:.6g} residual/open wavefront={:.4f}",
                                 c.closed_loop->slope_variance,
                                 c.open_wavefront_variance > 0.0
                                     ? c.residual_wavefront_variance / c.open_wavefront_variance
                                     : 0.0);
      }
      if (c.saturated) rep->text += " [DM saturated]";
      rep->text += '\n';
    }
    if (!results.empty()) add_files(*rep, results.front().files);
    *out = rep.release();
    return FSQKD_OK;
  });
}

fsqkd_status fsqkd_run_validate(const fsqkd_scenario* scenario, const char* reference_dir,
                                fsqkd_report** out) {
  FSQKD_REQUIRE(scenario && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    const auto& cfg = scenario->cfg;
    fsqkd::AcceptanceOptions opt;
    if (reference_dir) opt.reference_dir = reference_dir;

    const auto cm60 = reference_dir ? fsqkd::load_reference_dir(reference_dir, fsqkd::Channel::cm60)
                                    : fsqkd::bundled_reference(fsqkd::Channel::cm60);
    const auto m30 = reference_dir ? fsqkd::load_reference_dir(reference_dir, fsqkd::Channel::m30)
                                   : fsqkd::bundled_reference(fsqkd::Channel::m30);
    auto results = fsqkd::check_reference(cm60, m30);
    const auto fixed = [&] {
      std::filesystem::create_directories(cfg.output_dir);
      opt.work_dir = cfg.output_dir / "determinism";
      return fsqkd::run_acceptance(opt);
    }();
    results.insert(results.end(), fixed.begin(), fixed.end());

    auto rep = std::make_unique<fsqkd_report>();
    bool all = true;
    const auto path = cfg.output_dir / "validate.csv";
    std::ofstream csv(path, std::ios::binary | std::ios::trunc);
    if (!csv) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    csv << fsqkd::provenance_line(cfg.hash(), fmt::format("{}", fmt::join(opt.seeds, ",")))
        << "id,status,seconds,name,detail\n";
    for (const auto& r : results) {
      all = all && r.passed;
      rep->text += fsqkd::format_result_line(r) + '\n';
      std::string detail = r.detail;
      for (auto& c : detail) {
        if (c == '"') c = '\'';
      }
      csv << fmt::format("{},{},{:.3f},\"{}\",\"{}\"\n", r.id, r.passed ? "PASS" : "FAIL",
                         r.seconds, r.name, detail);
    }
    rep->text += all ? "validation: all checks passed\n" : "validation: FAILED\n";
    rep->files.push_back(path.string());
    *out = rep.release();
    return all ? FSQKD_OK : fail(FSQKD_VALIDATION_FAILED, "one or more checks failed");
  });
}

fsqkd_status fsqkd_ao_bandwidth(const fsqkd_scenario* scenario, double* hz) {
  FSQKD_REQUIRE(scenario && hz, "null argument");
  return guarded([&] {
    const auto optics = fsqkd::make_optics(scenario->cfg.ao);
    const auto loop = fsqkd::make_scenario_loop(optics, scenario->cfg.ao);
    *hz = fsqkd::ao::rejection_bandwidth(optics, loop);
    return FSQKD_OK;
  });
}

const char* fsqkd_report_text(const fsqkd_report* report) {
  return report ? report->text.c_str() : "";
}

size_t fsqkd_report_file_count(const fsqkd_report* report) {
  return report ? report->files.size() : 0;
}

const char* fsqkd_report_file(const fsqkd_report* report, size_t index) {
  if (!report || index >= report->files.size()) return nullptr;
  return report->files[index].c_str();
}

void fsqkd_report_free(fsqkd_report* report) { delete report; }

}  // extern "C"
