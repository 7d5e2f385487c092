#include "fsqkd/trace.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>

#include <fmt/format.h>

namespace fsqkd {

const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::coherent_state: return "coherent_state";
    case TraceKind::shot_noise: return "shot_noise";
    case TraceKind::dark_noise: return "dark_noise";
  }
  return "unknown";
}

TraceKind trace_kind_from_string(const std::string& s) {
  if (s == "coherent_state" || s == "cs") return TraceKind::coherent_state;
  if (s == "shot_noise" || s == "sn") return TraceKind::shot_noise;
  if (s == "dark_noise" || s == "dn") return TraceKind::dark_noise;
  throw std::invalid_argument(fmt::format("unknown trace kind '{}'", s));
}

bool TraceSet::roles_match() const {
  return cs.kind == TraceKind::coherent_state && sn.kind == TraceKind::shot_noise &&
         dn.kind == TraceKind::dark_noise;
}

void TraceSet::validate() const {
  if (cs.samples.size() != sn.samples.size() || cs.samples.size() != dn.samples.size()) {
    throw std::invalid_argument(fmt::format("trace lengths differ: cs={} sn={} dn={}",
                                            cs.samples.size(), sn.samples.size(),
                                            dn.samples.size()));
  }
  if (cs.duration_s != sn.duration_s || cs.duration_s != dn.duration_s) {
    throw std::invalid_argument("trace durations differ");
  }
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) {
    throw std::invalid_argument("variance needs at least two samples");
  }
  // Two-pass: mean first, then centered sum of squares.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

WindowedVariances normalize_to_snu(const TraceSet& ts, std::size_t window_count) {
  ts.validate();
  const std::size_t n = ts.cs.samples.size();
  if (window_count == 0 || n % window_count != 0) {
    throw std::invalid_argument(
        fmt::format("window count {} does not divide {} samples", window_count, n));
  }
  const double var_sn = sample_variance(ts.sn.samples);
  const double var_dn = sample_variance(ts.dn.samples);
  const double shot = var_sn - var_dn;
  if (!(shot > 0.0)) {
    throw DegenerateDetectorError(fmt::format(
        "shot-noise variance {} does not exceed dark-noise variance {}", var_sn, var_dn));
  }

  WindowedVariances out;
  out.window_size = n / window_count;
  out.window_duration_s = ts.cs.duration_s / static_cast<double>(window_count);
  out.v_el = var_dn / shot;
  out.v_b_per_window.reserve(window_count);
  const std::span<const double> cs(ts.cs.samples);
  for (std::size_t w = 0; w < window_count; ++w) {
    out.v_b_per_window.push_back(sample_variance(cs.subspan(w * out.window_size,
                                                            out.window_size)) / shot);
  }
  return out;
}

double excess_noise_estimate(double v_b, double v_el, double transmittance, Detection d) {
  if (!(transmittance > 0.0)) {
    throw std::domain_error("excess noise estimate requires T > 0");
  }
  return quadrature_count(d) * (v_b - v_el - 1.0) / transmittance;
}

double excess_noise_model_consistent(double v_b, double v_el, const SystemParams& p) {
  const double t = p.effective_transmittance();
  if (!(t > 0.0)) {
    throw std::domain_error("model-consistent excess noise requires eta_vis eta_det T > 0");
  }
  return (v_b - v_el - 1.0 - t * p.modulation_variance) / t;
}

TraceSet synthesize_traceset(double v_b_target, double v_el_target, std::size_t samples,
                             std::uint64_t seed, double duration_s, double gain) {
  if (!(v_b_target >= 0.0) || !(v_el_target >= 0.0) || !(gain > 0.0)) {
    throw std::invalid_argument("synthesis targets must be non-negative and gain positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](TraceKind kind, double variance) {
    Trace t;
    t.kind = kind;
    t.duration_s = duration_s;
    t.samples.resize(samples);
    const double sd = std::sqrt(variance * gain);
    if (sd == 0.0) {
      std::fill(t.samples.begin(), t.samples.end(), 0.0);
    } else {
      for (double& s : t.samples) s = sd * normal(rng);
    }
    return t;
  };
  TraceSet ts;
  ts.cs = draw(TraceKind::coherent_state, v_b_target);
  ts.sn = draw(TraceKind::shot_noise, 1.0 + v_el_target);
  ts.dn = draw(TraceKind::dark_noise, v_el_target);
  return ts;
}

InferredVisibility inferred_visibility(double cs_mean_current, double cs_mean_baseline,
                                       double visibility_baseline) {
  if (cs_mean_baseline == 0.0) {
    throw std::invalid_argument("baseline coherent-state mean is zero");
  }
  if (!(cs_mean_baseline > 0.0) || !(visibility_baseline > 0.0 && visibility_baseline <= 1.0)) {
    throw std::invalid_argument("baseline mean must be > 0 and baseline visibility in (0, 1]");
  }
  InferredVisibility v;
  v.raw = cs_mean_current / cs_mean_baseline * visibility_baseline;
  v.value = std::clamp(v.raw, 0.0, 1.0);
  return v;
}

double fringe_visibility(double i_max, double i_min) {
  if (i_max + i_min == 0.0) {
    throw std::invalid_argument("fringe extrema sum to zero");
  }
  if (i_min > i_max || i_min < 0.0) {
    throw std::invalid_argument(
        fmt::format("fringe extrema must satisfy I_max >= I_min >= 0, got ({}, {})", i_max,
                    i_min));
  }
  return (i_max - i_min) / (i_max + i_min);
}

double mean_magnitude(const Trace& t) {
  if (t.samples.empty()) throw std::invalid_argument("empty trace");
  double s = 0.0;
  for (double v : t.samples) s += std::abs(v);
  return s / static_cast<double>(t.samples.size());
}

// ---- file io --------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Trace read_binary(const std::filesystem::path& path, const std::string& bytes) {
  if (bytes.size() < 32) {
    throw TraceFormatError(fmt::format("{}: offset {}: truncated 32-byte header", path.string(),
                                       bytes.size()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto kind_code = get_le<std::uint32_t>(p + 8);
  const auto count = get_le<std::uint64_t>(p + 16);
  const auto duration_us = get_le<std::uint64_t>(p + 24);
  if (kind_code < 1 || kind_code > 3) {
    throw TraceFormatError(fmt::format("{}: offset 8: unknown kind code {}", path.string(),
                                       kind_code));
  }
  const std::uint64_t expected = 32 + count * 8;
  if (bytes.size() != expected) {
    throw TraceFormatError(fmt::format("{}: offset {}: expected {} bytes for {} samples",
                                       path.string(), bytes.size(), expected, count));
  }
  Trace t;
  t.kind = static_cast<TraceKind>(kind_code);
  t.duration_s = static_cast<double>(duration_us) * 1e-6;
  t.samples.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.samples[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 32 + 8 * i));
  }
  return t;
}

Trace read_text(const std::filesystem::path& path, const std::string& text) {
  Trace t;
  bool have_kind = false;
  bool have_duration = false;
  std::optional<std::size_t> declared;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view raw(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = trim(std::string_view(line).substr(1, colon - 1));
      const std::string value = trim(std::string_view(line).substr(colon + 1));
      try {
        if (key == "kind") {
          t.kind = trace_kind_from_string(value);
          have_kind = true;
        } else if (key == "duration_ms") {
          t.duration_s = std::stod(value) * 1e-3;
          have_duration = true;
        } else if (key == "samples") {
          declared = std::stoull(value);
        }
      } catch (const std::exception& e) {
        throw TraceFormatError(fmt::format("{}: line {}: bad header '{}': {}", path.string(),
                                           line_no, line, e.what()));
      }
      continue;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw TraceFormatError(
          fmt::format("{}: line {}: not a sample value: '{}'", path.string(), line_no, line));
    }
    t.samples.push_back(v);
  }
  if (!have_kind || !have_duration) {
    throw TraceFormatError(fmt::format("{}: line 1: missing '# kind:' or '# duration_ms:' header",
                                       path.string()));
  }
  if (declared && *declared != t.samples.size()) {
    throw TraceFormatError(fmt::format("{}: line {}: header declares {} samples, found {}",
                                       path.string(), line_no, *declared, t.samples.size()));
  }
  return t;
}

}  // namespace

Trace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw TraceFormatError(fmt::format("{}: cannot open", path.string()));
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kTraceMagic, 8) == 0) {
    return read_binary(path, bytes);
  }
  return read_text(path, bytes);
}

void write_trace_text(const Trace& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("{}: cannot write", path.string()));
  std::string buf = fmt::format("# kind: {}\n# duration_ms: {}\n# samples: {}\n", to_string(t.kind),
                                t.duration_s * 1e3, t.samples.size());
  for (double v : t.samples) {
    fmt::format_to(std::back_inserter(buf), "{}\n", v);
  }
  out << buf;
}

void write_trace_binary(const Trace& t, const std::filesystem::path& path) {
  std::string buf(kTraceMagic, 8);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(t.kind));
  put_le<std::uint32_t>(buf, 0);
  put_le<std::uint64_t>(buf, t.samples.size());
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(std::llround(t.duration_s * 1e6)));
  buf.reserve(buf.size() + 8 * t.samples.size());
  for (double v : t.samples) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("{}: cannot write", path.string()));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace fsqkd
