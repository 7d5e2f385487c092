#include <CLI11.hpp>

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "fsqkd/fsqkd.h"

namespace {

struct ScenarioDeleter {
  void operator()(fsqkd_scenario* s) const { fsqkd_scenario_free(s); }
};
struct TracesDeleter {
  void operator()(fsqkd_traces* t) const { fsqkd_traces_free(t); }
};
struct ReportDeleter {
  void operator()(fsqkd_report* r) const { fsqkd_report_free(r); }
};
using ScenarioPtr = std::unique_ptr<fsqkd_scenario, ScenarioDeleter>;
using TracesPtr = std::unique_ptr<fsqkd_traces, TracesDeleter>;
using ReportPtr = std::unique_ptr<fsqkd_report, ReportDeleter>;

int report_error(fsqkd_status s) {
  std::fprintf(stderr, "fsqkd: %s: %s\n", fsqkd_status_string(s), fsqkd_last_error());
  return static_cast<int>(s);
}

// Prints the report (if any) and turns the status into an exit code.
int finish(fsqkd_status s, fsqkd_report* const* slot) {
  ReportPtr report(*slot);
  if (report) {
    std::fputs(fsqkd_report_text(report.get()), stdout);
    for (size_t i = 0; i < fsqkd_report_file_count(report.get()); ++i) {
      std::printf("wrote %s\n", fsqkd_report_file(report.get(), i));
    }
    std::fflush(stdout);
  }
  return s == FSQKD_OK ? 0 : report_error(s);
}

struct GlobalOptions {
  std::string config;
  std::string channel;
  std::optional<uint64_t> seed;
  std::string out;
};

fsqkd_channel parse_channel(const std::string& s) {
  if (s == "cm60") return FSQKD_CHANNEL_CM60;
  if (s == "m30") return FSQKD_CHANNEL_M30;
  return FSQKD_CHANNEL_CUSTOM;
}

fsqkd_status make_scenario(const GlobalOptions& g, ScenarioPtr& out) {
  fsqkd_scenario* raw = nullptr;
  fsqkd_status s;
  if (!g.config.empty()) {
    s = fsqkd_scenario_load(g.config.c_str(),
                            g.channel.empty() ? -1 : static_cast<int>(parse_channel(g.channel)),
                            &raw);
  } else {
    s = fsqkd_scenario_fixture(g.channel.empty() ? FSQKD_CHANNEL_CM60 : parse_channel(g.channel),
                               &raw);
  }
  out.reset(raw);
  if (s != FSQKD_OK) return s;
  if (g.seed && (s = fsqkd_scenario_set_seed(raw, *g.seed)) != FSQKD_OK) return s;
  if (!g.out.empty() && (s = fsqkd_scenario_set_output_dir(raw, g.out.c_str())) != FSQKD_OK) {
    return s;
  }
  return FSQKD_OK;
}

fsqkd_detection parse_detection(const std::string& s) {
  return s == "heterodyne" ? FSQKD_HETERODYNE : FSQKD_HOMODYNE;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Free-space CV-QKD key-rate, trace and adaptive-optics simulator"};
  app.set_version_flag("--version", std::string(fsqkd_version()));
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "INI scenario file")->check(CLI::ExistingFile);
  app.add_option("--channel", g.channel, "Channel fixture (overrides the config file)")
      ->check(CLI::IsMember({"cm60", "m30", "custom"}));
  app.add_option("--seed", g.seed, "Single RNG seed (replaces the configured list)");
  app.add_option("--out", g.out, "Output directory");

  // skr
  auto* skr = app.add_subcommand("skr", "Key rate for both detection schemes");
  std::optional<double> skr_visibility;
  bool skr_reoptimize = false;
  std::string skr_detection = "both";
  skr->add_option("--visibility", skr_visibility, "Visibility amplitude (default: ambient)");
  skr->add_option("--detection", skr_detection)
      ->check(CLI::IsMember({"homodyne", "heterodyne", "both"}))
      ->capture_default_str();
  skr->add_flag("--reoptimize", skr_reoptimize, "Optimize V_A per detection scheme");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Turbulence sweep with and without AO");

  // max-xi
  auto* max_xi = app.add_subcommand("max-xi", "Maximum tolerable excess noise versus T");
  double t_min = 1e-4, t_max = 1.0;
  size_t points = 200;
  max_xi->add_option("--t-min", t_min, "Smallest transmittance")->capture_default_str();
  max_xi->add_option("--t-max", t_max, "Largest transmittance")->capture_default_str();
  max_xi->add_option("--points", points, "Log-spaced grid points")->capture_default_str();

  // traces
  auto* traces = app.add_subcommand("traces", "Normalize measured traces to shot-noise units");
  std::string cs_path, sn_path, dn_path, detection = "homodyne";
  size_t windows = 20;
  std::optional<double> baseline_mean;
  double baseline_visibility = 0.0;
  traces->add_option("--cs", cs_path, "Coherent-state trace")->required()->check(CLI::ExistingFile);
  traces->add_option("--sn", sn_path, "Shot-noise trace")->required()->check(CLI::ExistingFile);
  traces->add_option("--dn", dn_path, "Dark-noise trace")->required()->check(CLI::ExistingFile);
  traces->add_option("--windows", windows, "Number of windows")->capture_default_str();
  traces->add_option("--detection", detection)
      ->check(CLI::IsMember({"homodyne", "heterodyne"}))
      ->capture_default_str();
  auto* bm = traces->add_option("--baseline-mean", baseline_mean,
                                "Mean |x| of a baseline coherent-state trace");
  traces->add_option("--baseline-visibility", baseline_visibility, "Visibility of that baseline")
      ->needs(bm);

  // synth-traces
  auto* synth = app.add_subcommand("synth-traces", "Write a synthetic cs/sn/dn trace set");
  double synth_vb = 1.0745556, synth_vel = 0.027;
  size_t synth_samples = 1'000'000;
  bool synth_binary = false;
  synth->add_option("--v-b", synth_vb, "Target V_B in SNU")->capture_default_str();
  synth->add_option("--v-el", synth_vel, "Target v_el in SNU")->capture_default_str();
  synth->add_option("--samples", synth_samples)->capture_default_str();
  synth->add_flag("--binary", synth_binary, "Binary format instead of text");

  // ao-sim
  auto* ao = app.add_subcommand("ao-sim", "Shack-Hartmann / DM loop characterization");
  std::string setting = "medium", orientation = "across";
  bool open_loop = false, dump_frames = false, bandwidth = false;
  size_t frames = 0;
  ao->add_option("--setting", setting)
      ->check(CLI::IsMember({"ambient", "low", "medium", "high"}))
      ->capture_default_str();
  ao->add_option("--orientation", orientation)
      ->check(CLI::IsMember({"across", "along"}))
      ->capture_default_str();
  ao->add_flag("--open-loop", open_loop, "Disable the correction loop");
  ao->add_option("--frames", frames, "Frames to simulate (default: configured)");
  ao->add_flag("--dump-frames", dump_frames, "Write per-frame WFS data");
  ao->add_flag("--bandwidth", bandwidth, "Also report the closed-loop -3 dB bandwidth");

  // validate
  auto* validate = app.add_subcommand("validate", "Run the acceptance checks");
  std::string reference_dir;
  validate->add_option("--reference-dir", reference_dir, "Directory with cm60.csv and m30.csv")
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return FSQKD_INPUT_ERROR;
  }

  ScenarioPtr scenario;
  if (auto s = make_scenario(g, scenario); s != FSQKD_OK) return report_error(s);
  fsqkd_report* report = nullptr;

  if (*skr) {
    if (skr_reoptimize) fsqkd_scenario_set_reoptimize(scenario.get(), 1);
    const int d = skr_detection == "both" ? -1 : static_cast<int>(parse_detection(skr_detection));
    return finish(fsqkd_run_skr(scenario.get(), skr_visibility.value_or(-1.0), d, &report),
                  &report);
  }
  if (*sweep) return finish(fsqkd_run_sweep(scenario.get(), &report), &report);
  if (*max_xi) {
    return finish(fsqkd_run_max_xi(scenario.get(), t_min, t_max, points, &report), &report);
  }
  if (*traces) {
    fsqkd_traces* raw = nullptr;
    auto s = fsqkd_traces_load(cs_path.c_str(), sn_path.c_str(), dn_path.c_str(), &raw);
    TracesPtr ts(raw);
    if (s != FSQKD_OK) return report_error(s);
    s = fsqkd_run_traces(scenario.get(), ts.get(), windows, parse_detection(detection),
                         baseline_mean ? &*baseline_mean : nullptr, baseline_visibility, &report);
    return finish(s, &report);
  }
  if (*synth) {
    fsqkd_traces* raw = nullptr;
    uint64_t seed = g.seed.value_or(1);
    auto s = fsqkd_traces_synthesize(synth_vb, synth_vel, synth_samples, seed, &raw);
    TracesPtr ts(raw);
    if (s != FSQKD_OK) return report_error(s);
    const std::string dir = g.out.empty() ? "out" : g.out;
    if ((s = fsqkd_traces_write(ts.get(), dir.c_str(), synth_binary ? 1 : 0)) != FSQKD_OK) {
      return report_error(s);
    }
    std::printf("wrote %s/{cs,sn,dn}%s\n", dir.c_str(), synth_binary ? ".bin" : ".txt");
    return 0;
  }
  if (*ao) {
    auto s = fsqkd_run_ao_sim(scenario.get(), setting.c_str(), orientation.c_str(), !open_loop,
                              frames, dump_frames, &report);
    const int code = finish(s, &report);
    if (code != 0 || !bandwidth) return code;
    double hz = 0.0;
    if ((s = fsqkd_ao_bandwidth(scenario.get(), &hz)) != FSQKD_OK) return report_error(s);
    std::printf("closed-loop -3 dB bandwidth: %.2f Hz\n", hz);
    return 0;
  }
  if (*validate) {
    return finish(fsqkd_run_validate(scenario.get(),
                                     reference_dir.empty() ? nullptr : reference_dir.c_str(),
                                     &report),
                  &report);
  }
  return FSQKD_INPUT_ERROR;
}
