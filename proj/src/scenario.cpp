#include "fsqkd/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

namespace fsqkd {

using ao::Orientation;
using ao::TurbulenceLabel;
using ao::TurbulenceSetting;

// ---- fixtures -------------------------------------------------------------------

namespace {

TurbulenceSetting preset(TurbulenceLabel label, Orientation o, double target, double rho,
                         double scint) {
  TurbulenceSetting s;
  s.label = label;
  s.orientation = o;
  s.target_slope_variance = target;
  s.temporal_correlation = rho;
  s.scintillation = scint;
  return s;
}

constexpr double kAlongCorrelationOffset = 0.01;

}  // namespace

std::vector<TurbulenceSetting> turbulence_presets(Channel c) {
  using L = TurbulenceLabel;
  constexpr auto across = Orientation::across;
  constexpr auto along = Orientation::along;
  if (c == Channel::m30) {
    const double d = kAlongCorrelationOffset;
    return {
        preset(L::ambient, across, 0.00035, 0.90, 0.02),
        preset(L::low, across, 0.0003, 0.95, 0.05),
        preset(L::medium, across, 0.0032, 0.98, 0.08),
        preset(L::high, across, 0.0164, 0.98, 0.12),
        preset(L::low, along, 0.0017, 0.95 - d, 0.05),
        preset(L::medium, along, 0.0342, 0.98 - d, 0.08),
        preset(L::high, along, 0.0526, 0.98 - d, 0.12),
    };
  }
  return {
      preset(L::ambient, across, 6.5e-6, 0.90, 0.02),
      preset(L::low, across, 6.5e-4, 0.95, 0.05),
      preset(L::medium, across, 0.0065, 0.98, 0.08),
      preset(L::high, across, 0.018, 0.98, 0.12),
  };
}

ScenarioConfig ScenarioConfig::fixture(Channel c) {
  ScenarioConfig cfg;
  cfg.channel = c;
  cfg.settings = turbulence_presets(c);
  if (c == Channel::m30) {
    cfg.transmittance = 0.0644;
    cfg.ambient_visibility = 0.55;
    cfg.reference = Channel::m30;
  }
  return cfg;
}

void ScenarioConfig::validate() const {
  auto unit = [](const char* name, double x, bool open_low = false) {
    const bool ok = open_low ? (x > 0.0 && x <= 1.0) : (x >= 0.0 && x <= 1.0);
    if (!ok) {
      throw ConfigError(fmt::format("{} = {} outside {}0, 1]", name, x, open_low ? "(" : "["));
    }
  };
  auto nonneg = [](const char* name, double x) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ConfigError(fmt::format("{} = {} must be finite and >= 0", name, x));
    }
  };
  unit("transmittance", transmittance);
  unit("detector_efficiency", detector_efficiency);
  unit("reconciliation_efficiency", reconciliation_efficiency);
  unit("ambient_visibility", ambient_visibility, true);
  nonneg("electronic_noise", electronic_noise);
  nonneg("modulation_variance_hom", modulation_variance_hom);
  nonneg("modulation_variance_het", modulation_variance_het);
  nonneg("excess_noise", excess_noise);
  if (reference == Channel::custom) throw ConfigError("map reference must be cm60 or m30");
  if (kappa) nonneg("kappa", *kappa);
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (frames < 2) throw ConfigError("frames must be >= 2");
  if (visibility_blocks < 2 || visibility_blocks > frames / 2) {
    throw ConfigError(fmt::format("visibility_blocks = {} must lie in [2, frames / 2]",
                                  visibility_blocks));
  }
  if (!(ao.dm_coupling > 0.0 && ao.dm_coupling < 1.0)) {
    throw ConfigError("ao dm_coupling must lie in (0, 1)");
  }
  if (!(ao.loop_gain > 0.0 && ao.loop_gain < 2.0)) throw ConfigError("ao loop_gain must lie in (0, 2)");
  if (!(ao.leak > 0.0 && ao.leak <= 1.0)) throw ConfigError("ao leak must lie in (0, 1]");
  if (!(ao.regularization > 0.0 && ao.regularization < 1.0)) {
    throw ConfigError("ao regularization must lie in (0, 1)");
  }
  nonneg("ao sensor_noise", ao.sensor_noise);
  if (settings.empty()) throw ConfigError("no turbulence settings configured");
  std::set<std::pair<int, int>> seen;
  for (const auto& s : settings) {
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("setting {}.{}: {}", ao::to_string(s.label),
                                    ao::to_string(s.orientation), e.what()));
    }
    if (!seen.insert({static_cast<int>(s.label), static_cast<int>(s.orientation)}).second) {
      throw ConfigError(fmt::format("setting {}.{} configured twice", ao::to_string(s.label),
                                    ao::to_string(s.orientation)));
    }
  }
}

SystemParams ScenarioConfig::params(Detection d, double visibility) const {
  SystemParams p;
  p.transmittance = transmittance;
  p.detector_efficiency = detector_efficiency;
  p.visibility = visibility;
  p.modulation_variance = modulation_variance(d);
  p.excess_noise = excess_noise;
  p.electronic_noise = electronic_noise;
  p.reconciliation_efficiency = reconciliation_efficiency;
  p.detection = d;
  return p;
}

std::string ScenarioConfig::seed_text() const {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(seeds[i]);
  }
  return s;
}

std::string ScenarioConfig::canonical_text() const {
  std::string out;
  auto kv = [&](std::string_view k, const auto& v) { out += fmt::format("{} = {}\n", k, v); };
  kv("channel", to_string(channel));
  kv("transmittance", transmittance);
  kv("detector_efficiency", detector_efficiency);
  kv("reconciliation_efficiency", reconciliation_efficiency);
  kv("electronic_noise", electronic_noise);
  kv("modulation_variance_hom", modulation_variance_hom);
  kv("modulation_variance_het", modulation_variance_het);
  kv("excess_noise", excess_noise);
  kv("ambient_visibility", ambient_visibility);
  kv("reoptimize_modulation", reoptimize_modulation);
  kv("reference", to_string(reference));
  kv("calibration_orientation", ao::to_string(calibration_orientation));
  kv("kappa", kappa ? fmt::format("{}", *kappa) : std::string("auto"));
  kv("v_lock", lock.v_lock);
  kv("v_min", lock.v_min);
  kv("lucky_slope_variance", lock.lucky_slope_variance);
  kv("no_ao_unlock_slope_variance", lock.no_ao_unlock_slope_variance);
  kv("seeds", seed_text());
  kv("frames", frames);
  kv("visibility_blocks", visibility_blocks);
  kv("dm_coupling", ao.dm_coupling);
  kv("geometry", ao.fried_geometry ? "fried" : "colocated");
  kv("loop_gain", ao.loop_gain);
  kv("leak", ao.leak);
  kv("regularization", ao.regularization);
  kv("sensor_noise", ao.sensor_noise);
  for (const auto& s : settings) {
    out += fmt::format("[setting.{}.{}]\n", ao::to_string(s.label), ao::to_string(s.orientation));
    kv("target_slope_variance", s.target_slope_variance);
    kv("temporal_correlation", s.temporal_correlation);
    kv("scintillation", s.scintillation);
    kv("mode_amplitudes", fmt::format("{}", fmt::join(s.mode_amplitudes, ",")));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ScenarioConfig::hash() const { return fnv1a64(canonical_text()); }

std::string provenance_line(std::uint64_t config_hash, const std::string& seeds) {
  return fmt::format("# provenance: config={:016x} seed={}\n", config_hash, seeds);
}

// ---- INI parsing ------------------------------------------------------------------

namespace {

namespace pt = boost::property_tree;

struct IniReader {
  std::string source;

  double number(const std::string& section, const std::string& key, const std::string& v) const {
    double x = 0.0;
    const char* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || ptr != end || !std::isfinite(x)) {
      throw ConfigError(
          fmt::format("{}: [{}] {} = '{}' is not a finite number", source, section, key, v));
    }
    return x;
  }

  std::uint64_t integer(const std::string& section, const std::string& key,
                        const std::string& v) const {
    std::uint64_t x = 0;
    const char* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, x);
    if (ec != std::errc() || ptr != end) {
      throw ConfigError(
          fmt::format("{}: [{}] {} = '{}' is not a non-negative integer", source, section, key, v));
    }
    return x;
  }

  bool boolean(const std::string& section, const std::string& key, const std::string& v) const {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(fmt::format("{}: [{}] {} = '{}' is not a boolean", source, section, key, v));
  }

  std::vector<std::string> list(const std::string& v) const {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(" \t");
      const auto e = item.find_last_not_of(" \t");
      out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
    }
    return out;
  }

  [[noreturn]] void unknown_key(const std::string& section, const std::string& key) const {
    throw ConfigError(fmt::format("{}: unknown key '{}' in [{}]", source, key, section));
  }
};

template <typename Fn>
void with_context(const std::string& source, const std::string& section, const std::string& key,
                  Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("{}: [{}] {}: {}", source, section, key, e.what()));
  }
}

}  // namespace

ScenarioConfig parse_config(const std::string& text, const std::string& source,
                            std::optional<Channel> channel_override) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.line(), e.message()));
  }
  const IniReader rd{source};

  for (const auto& [name, node] : tree) {
    if (node.empty() && !node.data().empty()) {
      throw ConfigError(fmt::format("{}: key '{}' must be inside a [section]", source, name));
    }
  }

  Channel channel = Channel::cm60;
  if (auto sc = tree.get_child_optional("scenario")) {
    if (auto c = sc->get_optional<std::string>("channel")) {
      with_context(source, "scenario", "channel", [&] { channel = channel_from_string(*c); });
    }
  }
  if (channel_override) channel = *channel_override;
  ScenarioConfig cfg = ScenarioConfig::fixture(channel);

  std::vector<TurbulenceSetting> file_settings;
  bool reference_set = false;

  for (const auto& [section, node] : tree) {
    const std::string sec = section;
    if (sec == "scenario") {
      for (const auto& [key, v] : node) {
        const std::string val = v.data();
        if (key == "channel") continue;
        double* target = nullptr;
        if (key == "transmittance") target = &cfg.transmittance;
        else if (key == "detector_efficiency") target = &cfg.detector_efficiency;
        else if (key == "reconciliation_efficiency") target = &cfg.reconciliation_efficiency;
        else if (key == "electronic_noise") target = &cfg.electronic_noise;
        else if (key == "modulation_variance_hom") target = &cfg.modulation_variance_hom;
        else if (key == "modulation_variance_het") target = &cfg.modulation_variance_het;
        else if (key == "excess_noise") target = &cfg.excess_noise;
        else if (key == "ambient_visibility") target = &cfg.ambient_visibility;
        if (target) {
          *target = rd.number(sec, key, val);
        } else if (key == "reoptimize_modulation") {
          cfg.reoptimize_modulation = rd.boolean(sec, key, val);
        } else {
          rd.unknown_key(sec, key);
        }
      }
    } else if (sec == "run") {
      for (const auto& [key, v] : node) {
        const std::string val = v.data();
        if (key == "seeds") {
          cfg.seeds.clear();
          for (const auto& s : rd.list(val)) cfg.seeds.push_back(rd.integer(sec, key, s));
        } else if (key == "frames") {
          cfg.frames = rd.integer(sec, key, val);
        } else if (key == "visibility_blocks") {
          cfg.visibility_blocks = rd.integer(sec, key, val);
        } else if (key == "output_dir") {
          cfg.output_dir = val;
        } else {
          rd.unknown_key(sec, key);
        }
      }
    } else if (sec == "map") {
      for (const auto& [key, v] : node) {
        const std::string val = v.data();
        if (key == "reference") {
          with_context(source, sec, key, [&] { cfg.reference = channel_from_string(val); });
          reference_set = true;
        } else if (key == "orientation") {
          with_context(source, sec, key,
                       [&] { cfg.calibration_orientation = ao::orientation_from_string(val); });
        } else if (key == "kappa") {
          cfg.kappa = val == "auto" ? std::nullopt : std::optional(rd.number(sec, key, val));
        } else if (key == "v_lock") {
          cfg.lock.v_lock = rd.number(sec, key, val);
        } else if (key == "v_min") {
          cfg.lock.v_min = rd.number(sec, key, val);
        } else if (key == "lucky_slope_variance") {
          cfg.lock.lucky_slope_variance = rd.number(sec, key, val);
        } else if (key == "no_ao_unlock_slope_variance") {
          cfg.lock.no_ao_unlock_slope_variance = rd.number(sec, key, val);
        } else {
          rd.unknown_key(sec, key);
        }
      }
    } else if (sec == "ao") {
      for (const auto& [key, v] : node) {
        const std::string val = v.data();
        if (key == "dm_coupling") cfg.ao.dm_coupling = rd.number(sec, key, val);
        else if (key == "loop_gain") cfg.ao.loop_gain = rd.number(sec, key, val);
        else if (key == "leak") cfg.ao.leak = rd.number(sec, key, val);
        else if (key == "regularization") cfg.ao.regularization = rd.number(sec, key, val);
        else if (key == "sensor_noise") cfg.ao.sensor_noise = rd.number(sec, key, val);
        else if (key == "geometry") {
          if (val != "fried" && val != "colocated") {
            throw ConfigError(fmt::format("{}: [ao] geometry = '{}' (fried, colocated)", source, val));
          }
          cfg.ao.fried_geometry = val == "fried";
        } else {
          rd.unknown_key(sec, key);
        }
      }
    } else if (sec.rfind("setting.", 0) == 0) {
      const auto rest = sec.substr(8);
      const auto dot = rest.find('.');
      if (dot == std::string::npos) {
        throw ConfigError(
            fmt::format("{}: section [{}] must be [setting.<label>.<orientation>]", source, sec));
      }
      TurbulenceSetting s;
      with_context(source, sec, "name", [&] {
        s.label = ao::turbulence_label_from_string(rest.substr(0, dot));
        s.orientation = ao::orientation_from_string(rest.substr(dot + 1));
      });
      // Start from the channel preset of the same name when one exists.
      for (const auto& p : turbulence_presets(channel)) {
        if (p.label == s.label && p.orientation == s.orientation) s = p;
      }
      bool target_given = false;
      for (const auto& [key, v] : node) {
        const std::string val = v.data();
        if (key == "target_slope_variance") {
          s.target_slope_variance = rd.number(sec, key, val);
          target_given = true;
        } else if (key == "temporal_correlation") {
          s.temporal_correlation = rd.number(sec, key, val);
        } else if (key == "scintillation") {
          s.scintillation = rd.number(sec, key, val);
        } else if (key == "mode_amplitudes") {
          const auto items = rd.list(val);
          if (items.size() != ao::kModeCount) {
            throw ConfigError(fmt::format("{}: [{}] mode_amplitudes needs {} values, got {}",
                                          source, sec, ao::kModeCount, items.size()));
          }
          for (std::size_t i = 0; i < items.size(); ++i) {
            s.mode_amplitudes[i] = rd.number(sec, key, items[i]);
          }
        } else {
          rd.unknown_key(sec, key);
        }
      }
      bool preset_exists = false;
      for (const auto& p : turbulence_presets(channel)) {
        preset_exists |= p.label == s.label && p.orientation == s.orientation;
      }
      if (!target_given && !preset_exists) {
        throw ConfigError(fmt::format("{}: [{}] needs target_slope_variance", source, sec));
      }
      file_settings.push_back(s);
    } else {
      throw ConfigError(fmt::format("{}: unknown section [{}]", source, sec));
    }
  }
  if (!file_settings.empty()) cfg.settings = std::move(file_settings);
  if (!reference_set && channel != Channel::custom) cfg.reference = channel;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.what()));
  }
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path,
                           std::optional<Channel> channel_override) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), channel_override);
}

// ---- visibility map -----------------------------------------------------------

CalibrationFit scenario_visibility_map(const ScenarioConfig& cfg) {
  const auto table = bundled_reference(cfg.reference);
  const auto pts = table.calibration_points(cfg.calibration_orientation);
  if (cfg.kappa) {
    CalibrationFit fit;
    fit.map = {cfg.ambient_visibility, *cfg.kappa};
    double ss = 0.0;
    for (const auto& p : pts) {
      const double r = visibility_from_residual(fit.map, p.slope_variance) - p.visibility;
      fit.residuals.push_back(r);
      ss += r * r;
    }
    fit.rms = pts.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(pts.size()));
    return fit;
  }
  return calibrate_map(pts, cfg.ambient_visibility);
}

// ---- sweep --------------------------------------------------------------------

ao::OpticalModel make_optics(const AoConfig& cfg) {
  return ao::OpticalModel(cfg.fried_geometry ? ao::DeformableMirror::fried(cfg.dm_coupling)
                                             : ao::DeformableMirror::colocated(cfg.dm_coupling));
}

ao::AoLoopState make_scenario_loop(const ao::OpticalModel& optics, const AoConfig& cfg) {
  auto loop = ao::make_loop(optics, cfg.regularization);
  loop.integrator_gain = cfg.loop_gain;
  loop.leak = cfg.leak;
  return loop;
}

const TurbulenceSetting& find_setting(const ScenarioConfig& cfg, TurbulenceLabel label,
                                      Orientation orientation) {
  for (const auto& s : cfg.settings) {
    if (s.label == label && s.orientation == orientation) return s;
  }
  throw ConfigError(fmt::format("setting {}.{} is not configured for channel {}",
                                ao::to_string(label), ao::to_string(orientation),
                                to_string(cfg.channel)));
}

void evaluate_row_skr(const ScenarioConfig& cfg, SweepRow& row) {
  for (Detection d : {Detection::homodyne, Detection::heterodyne}) {
    SystemParams p = cfg.params(d, row.visibility);
    if (cfg.reoptimize_modulation) {
      const ModulationBounds b;
      p.modulation_variance = optimize_modulation_variance(p, b.lower, b.upper).modulation_variance;
    }
    const double skr = compute_skr(p).skr;
    if (d == Detection::homodyne) {
      row.skr_hom = skr;
      row.modulation_variance_hom = p.modulation_variance;
    } else {
      row.skr_het = skr;
      row.modulation_variance_het = p.modulation_variance;
    }
  }
}

namespace {

struct BlockStats {
  std::vector<double> open;      // per-block open-loop slope variance
  std::vector<double> residual;  // per-block AO slope-variance equivalent
};

BlockStats block_stats(const ao::CharacterizationResult& r, std::size_t blocks) {
  BlockStats b;
  const auto& means = r.open_loop.per_frame_mean_slope;
  const std::size_t size = means.size() / blocks;
  for (std::size_t k = 0; k < blocks; ++k) {
    const std::size_t lo = k * size;
    const std::size_t hi = lo + size;
    double m = 0.0;
    for (std::size_t i = lo; i < hi; ++i) m += means[i];
    m /= static_cast<double>(size);
    double ss = 0.0;
    for (std::size_t i = lo; i < hi; ++i) ss += (means[i] - m) * (means[i] - m);
    const double sv = ss / static_cast<double>(size - 1);
    b.open.push_back(sv);
    if (!r.residual_rms.empty()) {
      double o = 0.0;
      double c = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        o += r.open_rms[i] * r.open_rms[i];
        c += r.residual_rms[i] * r.residual_rms[i];
      }
      b.residual.push_back(o > 0.0 ? sv * c / o : 0.0);
    }
  }
  return b;
}

}  // namespace

SweepResult run_sweep(const ScenarioConfig& cfg) {
  cfg.validate();
  SweepResult out;
  out.config_hash = cfg.hash();
  out.seeds = cfg.seed_text();
  out.map = scenario_visibility_map(cfg);
  const auto optics = make_optics(cfg.ao);
  const auto loop = make_scenario_loop(optics, cfg.ao);

  for (const auto& setting : cfg.settings) {
    for (std::uint64_t seed : cfg.seeds) {
      SweepRow ao_row;
      ao_row.setting = setting.label;
      ao_row.orientation = setting.orientation;
      ao_row.seed = seed;
      ao_row.ao = true;
      SweepRow open_row = ao_row;
      open_row.ao = false;
      try {
        const auto r =
            ao::run_characterization(setting, optics, loop, cfg.frames, seed, cfg.ao.sensor_noise);
        const auto blocks = block_stats(r, cfg.visibility_blocks);
        const double sv = r.open_loop.slope_variance;
        const double ratio = r.open_wavefront_variance > 0.0
                                 ? r.residual_wavefront_variance / r.open_wavefront_variance
                                 : 0.0;
        for (SweepRow* row : {&ao_row, &open_row}) {
          row->slope_variance = sv;
          row->residual_variance = row->ao ? sv * ratio : sv;
          const auto pt = make_visibility_point(out.map.map, sv, row->residual_variance,
                                                row->ao ? blocks.residual : blocks.open, row->ao,
                                                cfg.lock);
          row->visibility = pt.visibility;
          row->visibility_std = pt.visibility_std;
          row->lock = pt.lock;
          row->saturated = row->ao && r.saturated;
          evaluate_row_skr(cfg, *row);
        }
      } catch (const std::exception& e) {
        for (SweepRow* row : {&ao_row, &open_row}) row->error = e.what();
        out.hard_failure = true;
      }
      out.rows.push_back(ao_row);
      out.rows.push_back(open_row);
    }
  }
  return out;
}

std::vector<SettingSummary> summarize_sweep(const SweepResult& result) {
  std::vector<SettingSummary> out;
  std::vector<int> counts;
  std::vector<double> sq;
  std::vector<double> block_var;
  for (const auto& row : result.rows) {
    if (!row.error.empty()) continue;
    std::size_t k = 0;
    for (; k < out.size(); ++k) {
      if (out[k].setting == row.setting && out[k].orientation == row.orientation &&
          out[k].ao == row.ao) {
        break;
      }
    }
    if (k == out.size()) {
      out.push_back({row.setting, row.orientation, row.ao});
      counts.push_back(0);
      sq.push_back(0.0);
      block_var.push_back(0.0);
    }
    auto& s = out[k];
    s.slope_variance += row.slope_variance;
    s.visibility += row.visibility;
    s.skr_hom += row.skr_hom;
    s.skr_het += row.skr_het;
    sq[k] += row.visibility * row.visibility;
    block_var[k] += row.visibility_std * row.visibility_std;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double n = counts[k];
    auto& s = out[k];
    s.slope_variance /= n;
    s.visibility /= n;
    s.skr_hom /= n;
    s.skr_het /= n;
    const double between =
        n > 1 ? std::max(0.0, (sq[k] - n * s.visibility * s.visibility) / (n - 1.0)) : 0.0;
    s.visibility_std = std::sqrt(block_var[k] / n + between);
  }
  return out;
}

namespace {

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, std::uint64_t hash, const std::string& seeds,
          std::string_view header)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out_ << provenance_line(hash, seeds) << header << '\n';
  }

  template <typename... Args>
  void row(fmt::format_string<Args...> f, Args&&... args) {
    out_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::string optional_number(std::optional<double> v) {
  return v ? fmt::format("{}", *v) : std::string("NA");
}

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + '"';
}

}  // namespace

std::vector<std::filesystem::path> write_sweep(const SweepResult& result,
                                               const ScenarioConfig& cfg,
                                               const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  const auto h = result.config_hash;
  const auto& seeds = result.seeds;
  {
    CsvFile f(dir / "sweep.csv", h, seeds,
              "setting,orientation,ao,slope_variance,residual_variance,visibility,"
              "visibility_std,skr_hom,skr_het,lock_status,seed,negative,saturated,error");
    for (const auto& r : result.rows) {
      if (r.error.empty()) {
        f.row("{},{},{},{},{},{},{},{},{},{},{},{},{},", ao::to_string(r.setting),
              ao::to_string(r.orientation), r.ao ? 1 : 0, r.slope_variance, r.residual_variance,
              r.visibility, r.visibility_std, r.skr_hom, r.skr_het, to_string(r.lock), r.seed,
              r.negative() ? 1 : 0, r.saturated ? 1 : 0);
      } else {
        f.row("{},{},{},NA,NA,NA,NA,NA,NA,NA,{},NA,NA,{}", ao::to_string(r.setting),
              ao::to_string(r.orientation), r.ao ? 1 : 0, r.seed, csv_text(r.error));
      }
    }
    files.push_back(f.path());
  }
  const auto summary = summarize_sweep(result);
  std::optional<ReferenceTable> ref;
  if (cfg.channel != Channel::custom) ref = bundled_reference(cfg.channel);
  auto ref_row = [&](const SettingSummary& s) -> const ReferenceRow* {
    return ref ? ref->find(s.setting, s.orientation, s.ao) : nullptr;
  };
  {
    CsvFile f(dir / "visibility_vs_slope.csv", h, seeds,
              "setting,orientation,ao,slope_variance,visibility,visibility_std,"
              "reference_slope_variance,reference_visibility");
    for (const auto& s : summary) {
      const auto* rr = ref_row(s);
      f.row("{},{},{},{},{},{},{},{}", ao::to_string(s.setting), ao::to_string(s.orientation),
            s.ao ? 1 : 0, s.slope_variance, s.visibility, s.visibility_std,
            rr ? fmt::format("{}", rr->slope_variance) : std::string("NA"),
            rr ? optional_number(rr->visibility) : std::string("NA"));
    }
    files.push_back(f.path());
  }
  {
    CsvFile f(dir / "skr_vs_slope.csv", h, seeds,
              "setting,orientation,ao,slope_variance,skr_hom,skr_het,negative_hom,negative_het");
    for (const auto& s : summary) {
      f.row("{},{},{},{},{},{},{},{}", ao::to_string(s.setting), ao::to_string(s.orientation),
            s.ao ? 1 : 0, s.slope_variance, s.skr_hom, s.skr_het, s.skr_hom > 0.0 ? 0 : 1,
            s.skr_het > 0.0 ? 0 : 1);
    }
    files.push_back(f.path());
  }
  {
    CsvFile f(dir / "visibility_difference.csv", h, seeds,
              "setting,orientation,visibility_ao,visibility_no_ao,difference,reference_difference");
    for (const auto& a : summary) {
      if (!a.ao) continue;
      for (const auto& b : summary) {
        if (b.ao || b.setting != a.setting || b.orientation != a.orientation) continue;
        std::string ref_diff = "NA";
        if (ref) {
          const auto* ra = ref->find(a.setting, a.orientation, true);
          const auto* rb = ref->find(a.setting, a.orientation, false);
          if (ra && rb && ra->visibility && rb->visibility) {
            ref_diff = fmt::format("{}", *ra->visibility - *rb->visibility);
          }
        }
        f.row("{},{},{},{},{},{}", ao::to_string(a.setting), ao::to_string(a.orientation),
              a.visibility, b.visibility, a.visibility - b.visibility, ref_diff);
      }
    }
    files.push_back(f.path());
  }
  {
    CsvFile f(dir / "visibility_map.csv", h, seeds,
              "reference,orientation,ambient_visibility,kappa,fit_rms,points");
    f.row("{},{},{},{},{},{}", to_string(cfg.reference), ao::to_string(cfg.calibration_orientation),
          result.map.map.ambient_visibility, result.map.map.kappa, result.map.rms,
          result.map.residuals.size());
    files.push_back(f.path());
  }
  return files;
}

// ---- single-point key rate ----------------------------------------------------------

SkrReport scenario_skr(const ScenarioConfig& cfg, Detection d, double visibility) {
  SkrReport r;
  r.params = cfg.params(d, visibility);
  if (cfg.reoptimize_modulation) {
    const ModulationBounds b;
    r.params.modulation_variance =
        optimize_modulation_variance(r.params, b.lower, b.upper).modulation_variance;
  }
  r.result = compute_skr(r.params);
  return r;
}

std::filesystem::path write_skr(const std::vector<SkrReport>& reports, const ScenarioConfig& cfg,
                                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  CsvFile f(dir / "skr.csv", cfg.hash(), cfg.seed_text(),
            "detection,transmittance,visibility,modulation_variance,excess_noise,"
            "electronic_noise,v,v_b,z,lambda1,lambda2,lambda3,mutual_information,"
            "holevo_bound,skr,positive");
  for (const auto& r : reports) {
    const auto& p = r.params;
    const auto& s = r.result;
    f.row("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", to_string(p.detection),
          p.transmittance, p.visibility, p.modulation_variance, p.excess_noise,
          p.electronic_noise, s.covariance.v, s.covariance.v_b, s.covariance.z,
          s.symplectic_eigenvalues[0], s.symplectic_eigenvalues[1], s.symplectic_eigenvalues[2],
          s.mutual_information, s.holevo_bound, s.skr, s.positive ? 1 : 0);
  }
  return f.path();
}

// ---- max tolerable excess noise --------------------------------------------------------

std::vector<MaxXiPoint> max_xi_curve(const ScenarioConfig& cfg, double t_min, double t_max,
                                     std::size_t points) {
  if (!(t_min > 0.0 && t_max <= 1.0 && t_min < t_max)) {
    throw std::invalid_argument(
        fmt::format("transmittance range [{}, {}] must satisfy 0 < t_min < t_max <= 1", t_min,
                    t_max));
  }
  if (points < 2) throw std::invalid_argument("max-xi curve needs at least two points");
  std::vector<double> ts{0.0};
  for (std::size_t i = 0; i < points; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(points - 1);
    ts.push_back(t_min * std::pow(t_max / t_min, f));
  }
  for (Channel c : {Channel::cm60, Channel::m30}) {
    ts.push_back(ScenarioConfig::fixture(c).transmittance);
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<MaxXiPoint> out;
  for (double t : ts) {
    MaxXiPoint pt{t};
    for (Detection d : {Detection::homodyne, Detection::heterodyne}) {
      SystemParams p = cfg.params(d, cfg.ambient_visibility);
      p.transmittance = t;
      p.excess_noise = 0.0;
      (d == Detection::homodyne ? pt.xi_hom : pt.xi_het) = max_tolerable_excess_noise(p);
    }
    out.push_back(pt);
  }
  return out;
}

std::filesystem::path write_max_xi(const std::vector<MaxXiPoint>& curve,
                                   const ScenarioConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  CsvFile f(dir / "max_xi.csv", cfg.hash(), cfg.seed_text(),
            "transmittance,xi_max_hom,xi_max_het,marker");
  const double t60 = ScenarioConfig::fixture(Channel::cm60).transmittance;
  const double t30 = ScenarioConfig::fixture(Channel::m30).transmittance;
  for (const auto& p : curve) {
    const char* marker = p.transmittance == t60 ? "cm60" : p.transmittance == t30 ? "m30" : "";
    f.row("{},{},{},{}", p.transmittance, p.xi_hom, p.xi_het, marker);
  }
  return f.path();
}

// ---- traces -------------------------------------------------------------------------

TraceReport analyze_traces(const ScenarioConfig& cfg, const TraceSet& ts, std::size_t window_count,
                           Detection d, std::optional<VisibilityBaseline> baseline) {
  TraceReport r;
  r.windows = normalize_to_snu(ts, window_count);
  if (!ts.roles_match()) {
    r.warnings.push_back(fmt::format("recorded trace kinds are {}/{}/{}, expected "
                                     "coherent_state/shot_noise/dark_noise",
                                     to_string(ts.cs.kind), to_string(ts.sn.kind),
                                     to_string(ts.dn.kind)));
  }
  double visibility = cfg.ambient_visibility;
  if (baseline) {
    r.visibility = inferred_visibility(mean_magnitude(ts.cs), baseline->mean_magnitude,
                                       baseline->visibility);
    visibility = r.visibility->value;
  }
  const SystemParams p = cfg.params(d, visibility);
  const auto& vb = r.windows.v_b_per_window;
  for (std::size_t w = 0; w < vb.size(); ++w) {
    TraceWindowRow row{w, vb[w]};
    row.xi_literal = excess_noise_estimate(vb[w], r.windows.v_el, cfg.transmittance, d);
    row.xi_model = excess_noise_model_consistent(vb[w], r.windows.v_el, p);
    r.mean_v_b += row.v_b;
    r.mean_xi_literal += row.xi_literal;
    r.mean_xi_model += row.xi_model;
    r.rows.push_back(row);
  }
  const double n = static_cast<double>(vb.size());
  r.mean_v_b /= n;
  r.mean_xi_literal /= n;
  r.mean_xi_model /= n;
  return r;
}

std::filesystem::path write_trace_report(const TraceReport& r, const ScenarioConfig& cfg,
                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    CsvFile f(dir / "trace_summary.csv", cfg.hash(), cfg.seed_text(),
              "windows,window_size,window_duration_s,mean_v_b_snu,v_el_snu,xi_literal,xi_model,"
              "inferred_visibility,inferred_visibility_raw");
    f.row("{},{},{},{},{},{},{},{},{}", r.rows.size(), r.windows.window_size,
          r.windows.window_duration_s, r.mean_v_b, r.windows.v_el, r.mean_xi_literal,
          r.mean_xi_model,
          r.visibility ? fmt::format("{}", r.visibility->value) : std::string("NA"),
          r.visibility ? fmt::format("{}", r.visibility->raw) : std::string("NA"));
  }
  CsvFile f(dir / "trace_windows.csv", cfg.hash(), cfg.seed_text(),
            "window_index,v_b_snu,v_el_snu,xi_literal_snu,xi_model_snu");
  for (const auto& row : r.rows) {
    f.row("{},{},{},{},{}", row.window, row.v_b, r.windows.v_el, row.xi_literal, row.xi_model);
  }
  return f.path();
}

// ---- AO characterization ------------------------------------------------------------

std::vector<AoSimResult> run_ao_sim(const ScenarioConfig& cfg, const AoSimOptions& opt) {
  cfg.validate();
  const auto& setting = find_setting(cfg, opt.setting, opt.orientation);
  const std::size_t frames = opt.frames.value_or(cfg.frames);
  const auto optics = make_optics(cfg.ao);
  std::optional<ao::AoLoopState> loop;
  if (opt.loop_enabled) loop = make_scenario_loop(optics, cfg.ao);

  std::filesystem::create_directories(cfg.output_dir);
  std::optional<CsvFile> dump;
  if (opt.dump_frames) {
    dump.emplace(cfg.output_dir / "ao_frames.csv", cfg.hash(), std::to_string(cfg.seeds.front()),
                 "frame,subap_row,subap_col,slope_x,slope_y,intensity,valid");
  }
  CsvFile summary(cfg.output_dir / "ao_summary.csv", cfg.hash(), cfg.seed_text(),
                  "setting,orientation,loop,slope_variance,residual_rms,frames,seed");

  std::vector<AoSimResult> out;
  for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
    const std::uint64_t seed = cfg.seeds[k];
    ao::FrameSink sink;
    if (dump && k == 0) {
      sink = [&](std::size_t f, const ao::WfsFrame& fr) {
        for (int i = 0; i < ao::kSubapCount; ++i) {
          dump->row("{},{},{},{},{},{},{}", f, i / ao::kGridSize, i % ao::kGridSize,
                    fr.slope_x[i], fr.slope_y[i], fr.intensity[i], fr.valid_mask[i] ? 1 : 0);
        }
      };
    }
    AoSimResult res;
    res.setting = setting;
    res.seed = seed;
    res.characterization =
        ao::run_characterization(setting, optics, loop, frames, seed, cfg.ao.sensor_noise, sink);
    const auto& c = res.characterization;
    summary.row("{},{},open,{},{},{},{}", ao::to_string(setting.label),
                ao::to_string(setting.orientation), c.open_loop.slope_variance,
                std::sqrt(c.open_wavefront_variance), frames, seed);
    if (c.closed_loop) {
      summary.row("{},{},closed,{},{},{},{}", ao::to_string(setting.label),
                  ao::to_string(setting.orientation), c.closed_loop->slope_variance,
                  std::sqrt(c.residual_wavefront_variance), frames, seed);
    }
    out.push_back(std::move(res));
  }
  if (!out.empty()) {
    out.front().files.push_back(summary.path());
    if (dump) out.front().files.push_back(dump->path());
  }
  return out;
}

}  // namespace fsqkd
