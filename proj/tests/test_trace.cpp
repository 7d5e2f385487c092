#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

#include <unistd.h>

#include "fsqkd/trace.hpp"

using namespace fsqkd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("fsqkd-test-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

bool message_contains(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

}  // namespace

TEST_SUITE("trace") {
  TEST_CASE("sample variance is the unbiased estimator") {
    const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    CHECK(sample_variance(x) == doctest::Approx(5.0 / 3.0));
    const std::vector<double> one{3.0};
    CHECK_THROWS_AS(sample_variance(one), std::invalid_argument);
  }

  TEST_CASE("synthetic traces normalize back to their targets") {
    const auto ts = synthesize_traceset(1.05, 0.027, 1'000'000, 11);
    const auto w = normalize_to_snu(ts, 20);
    REQUIRE(w.v_b_per_window.size() == 20);
    CHECK(w.window_size == 50'000);
    CHECK(w.window_duration_s == doctest::Approx(0.012));
    CHECK(w.v_el == doctest::Approx(0.027).epsilon(0.05));
    for (double v : w.v_b_per_window) CHECK(v == doctest::Approx(1.05).epsilon(0.05));
    const double mean =
        std::accumulate(w.v_b_per_window.begin(), w.v_b_per_window.end(), 0.0) / 20.0;
    CHECK(mean == doctest::Approx(1.05).epsilon(0.005));
  }

  TEST_CASE("normalization is invariant under detector gain") {
    auto ts = synthesize_traceset(1.2, 0.03, 100'000, 5);
    const auto a = normalize_to_snu(ts, 10);
    for (auto* t : {&ts.cs, &ts.sn, &ts.dn}) {
      for (double& v : t->samples) v *= 37.5;
    }
    const auto b = normalize_to_snu(ts, 10);
    CHECK(a.v_el == doctest::Approx(b.v_el).epsilon(1e-12));
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(a.v_b_per_window[i] == doctest::Approx(b.v_b_per_window[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("degenerate detector and inconsistent sets") {
    auto ts = synthesize_traceset(1.05, 0.027, 10'000, 2);
    auto flat = ts;
    flat.sn = flat.dn;
    flat.sn.kind = TraceKind::shot_noise;
    CHECK_THROWS_AS(normalize_to_snu(flat, 10), DegenerateDetectorError);
    CHECK_THROWS_AS(normalize_to_snu(ts, 3), std::invalid_argument);
    CHECK_THROWS_AS(normalize_to_snu(ts, 0), std::invalid_argument);

    auto short_set = ts;
    short_set.dn.samples.pop_back();
    CHECK_THROWS_AS(short_set.validate(), std::invalid_argument);
    auto wrong_kind = ts;
    wrong_kind.sn.kind = TraceKind::dark_noise;
    CHECK_NOTHROW(wrong_kind.validate());
    CHECK_FALSE(wrong_kind.roles_match());
    CHECK(ts.roles_match());

    auto same_file = ts;
    same_file.sn = same_file.dn;
    CHECK_THROWS_AS(normalize_to_snu(same_file, 10), DegenerateDetectorError);
    auto wrong_duration = ts;
    wrong_duration.dn.duration_s = 0.5;
    CHECK_THROWS_AS(wrong_duration.validate(), std::invalid_argument);
  }

  TEST_CASE("text and binary files round trip") {
    TempDir dir("io");
    const auto ts = synthesize_traceset(1.05, 0.027, 2'000, 9);
    write_trace_text(ts.cs, dir.path / "cs.txt");
    write_trace_binary(ts.sn, dir.path / "sn.bin");
    const auto a = read_trace(dir.path / "cs.txt");
    const auto b = read_trace(dir.path / "sn.bin");
    CHECK(a.kind == TraceKind::coherent_state);
    CHECK(b.kind == TraceKind::shot_noise);
    CHECK(a.duration_s == doctest::Approx(ts.cs.duration_s));
    CHECK(b.duration_s == doctest::Approx(ts.sn.duration_s));
    CHECK(a.samples == ts.cs.samples);
    CHECK(b.samples == ts.sn.samples);
  }

  TEST_CASE("malformed files name the file and location") {
    TempDir dir("bad");
    const auto missing_header = dir.path / "missing.txt";
    write_file(missing_header, "0.1\n0.2\n");
    try {
      read_trace(missing_header);
      FAIL("expected TraceFormatError");
    } catch (const TraceFormatError& e) {
      CHECK(message_contains(e, "missing.txt"));
    }

    const auto bad_value = dir.path / "value.txt";
    write_file(bad_value, "# kind: shot_noise\n# duration_ms: 240\n0.1\nabc\n");
    try {
      read_trace(bad_value);
      FAIL("expected TraceFormatError");
    } catch (const TraceFormatError& e) {
      CHECK(message_contains(e, "value.txt"));
      CHECK(message_contains(e, "line 4"));
    }

    const auto count = dir.path / "count.txt";
    write_file(count, "# kind: dark_noise\n# duration_ms: 240\n# samples: 3\n0.1\n0.2\n");
    CHECK_THROWS_AS(read_trace(count), TraceFormatError);

    const auto kind = dir.path / "kind.txt";
    write_file(kind, "# kind: sunlight\n# duration_ms: 240\n0.1\n");
    CHECK_THROWS_AS(read_trace(kind), TraceFormatError);

    const auto ts = synthesize_traceset(1.05, 0.027, 100, 1);
    const auto bin = dir.path / "trunc.bin";
    write_trace_binary(ts.cs, bin);
    fs::resize_file(bin, fs::file_size(bin) - 4);
    try {
      read_trace(bin);
      FAIL("expected TraceFormatError");
    } catch (const TraceFormatError& e) {
      CHECK(message_contains(e, "trunc.bin"));
      CHECK(message_contains(e, "offset"));
    }

    const auto header = dir.path / "header.bin";
    write_file(header, std::string(kTraceMagic, 8) + "abc");
    CHECK_THROWS_AS(read_trace(header), TraceFormatError);

    CHECK_THROWS_AS(read_trace(dir.path / "absent.txt"), TraceFormatError);
  }

  TEST_CASE("full-size 20-window measurement") {
    const auto ts = synthesize_traceset(1.0745556, 0.027, kDefaultTraceSamples, 123);
    CHECK(ts.cs.duration_s == doctest::Approx(0.24));
    const auto w = normalize_to_snu(ts);
    CHECK(w.v_b_per_window.size() == kDefaultWindowCount);
    CHECK(w.window_size == 50'000);
    for (double v : w.v_b_per_window) {
      CHECK(std::abs(v / 1.0745556 - 1.0) < 0.05);
    }
  }

  TEST_CASE("visibility helpers") {
    CHECK(fringe_visibility(3.0, 1.0) == doctest::Approx(0.5));
    const auto v = inferred_visibility(0.4, 0.8, 0.6);
    CHECK(v.value == doctest::Approx(0.3));
    const auto clamp = inferred_visibility(2.0, 0.8, 0.6);
    CHECK(clamp.value == 1.0);
    CHECK(clamp.raw == doctest::Approx(1.5));
    CHECK_THROWS_AS(inferred_visibility(0.4, 0.0, 0.6), std::invalid_argument);
    Trace t;
    t.samples = {-1.0, 2.0, -3.0};
    CHECK(mean_magnitude(t) == doctest::Approx(2.0));
  }

  TEST_CASE("uniform variances give exact SNU values") {
    TraceSet ts;
    ts.cs.kind = TraceKind::coherent_state;
    ts.sn.kind = TraceKind::shot_noise;
    ts.dn.kind = TraceKind::dark_noise;
    const double a = std::sqrt(2.0), b = std::sqrt(1.5), c = std::sqrt(0.5);
    for (int i = 0; i < 400; ++i) {
      const double sign = i % 2 ? 1.0 : -1.0;
      ts.cs.samples.push_back(sign * a);
      ts.sn.samples.push_back(sign * b);
      ts.dn.samples.push_back(sign * c);
    }
    const auto w = normalize_to_snu(ts, 4);
    // Zero-mean +-a samples: unbiased variance is n a^2 / (n - 1).
    const double k = (100.0 / 99.0) / (400.0 / 399.0);
    CHECK(w.v_el == doctest::Approx(0.5).epsilon(1e-12));
    for (double v : w.v_b_per_window) CHECK(v == doctest::Approx(2.0 * k).epsilon(1e-12));

    auto vacuum = ts;
    vacuum.cs.samples = ts.sn.samples;
    for (double& x : vacuum.dn.samples) x = 0.0;
    const auto wv = normalize_to_snu(vacuum, 4);
    CHECK(wv.v_el == 0.0);
    for (double v : wv.v_b_per_window) CHECK(v == doctest::Approx(k).epsilon(1e-12));
  }

  TEST_CASE("window variances conserve the whole-trace variance") {
    const auto ts = synthesize_traceset(1.3, 0.05, 400'000, 21);
    const auto w = normalize_to_snu(ts, 20);
    const double shot = sample_variance(ts.sn.samples) - sample_variance(ts.dn.samples);
    const double whole = sample_variance(ts.cs.samples) / shot;
    const double mean =
        std::accumulate(w.v_b_per_window.begin(), w.v_b_per_window.end(), 0.0) / 20.0;
    CHECK(mean == doctest::Approx(whole).epsilon(0.02));
  }

  TEST_CASE("synthesis is deterministic per seed") {
    const auto a = synthesize_traceset(1.0, 0.0, 5'000, 42);
    const auto b = synthesize_traceset(1.0, 0.0, 5'000, 42);
    const auto c = synthesize_traceset(1.0, 0.0, 5'000, 43);
    CHECK(a.cs.samples == b.cs.samples);
    CHECK(a.dn.samples == b.dn.samples);
    CHECK(a.cs.samples != c.cs.samples);
    CHECK(sample_variance(a.dn.samples) == 0.0);
  }

  TEST_CASE("literal excess-noise estimator on the model variance") {
    SystemParams p;
    p.transmittance = 0.3;
    p.modulation_variance = 0.8;
    p.excess_noise = 0.02;
    p.electronic_noise = 0.01;
    for (auto d : {Detection::homodyne, Detection::heterodyne}) {
      p.detection = d;
      const double mu = quadrature_count(d);
      const double xi = excess_noise_estimate(bob_variance_model(p), p.electronic_noise,
                                              p.transmittance, d);
      CHECK(xi == doctest::Approx(mu * (p.transmittance *
                                        (p.modulation_variance + p.excess_noise)) /
                                  p.transmittance)
                      .epsilon(1e-12));
    }
    CHECK(excess_noise_estimate(1.027, 0.027, 0.4, Detection::homodyne) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(excess_noise_estimate(1.05, 0.027, 0.0, Detection::homodyne),
                    std::domain_error);
  }

  TEST_CASE("fringe visibility") {
    CHECK(fringe_visibility(1.0, 0.0) == 1.0);
    CHECK(fringe_visibility(2.0, 2.0) == 0.0);
    for (double c : {0.01, 1.0, 250.0}) {
      CHECK(fringe_visibility(3.0 * c, c) == doctest::Approx(0.5).epsilon(1e-14));
    }
    CHECK_THROWS_AS(fringe_visibility(1.0, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(fringe_visibility(0.0, 0.0), std::invalid_argument);
    CHECK(inferred_visibility(0.0, 0.8, 0.6).value == 0.0);
    CHECK(inferred_visibility(0.8, 0.8, 0.6).value == doctest::Approx(0.6));
  }

  TEST_CASE("trace kind names") {
    for (auto k : {TraceKind::coherent_state, TraceKind::shot_noise, TraceKind::dark_noise}) {
      CHECK(trace_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(trace_kind_from_string("laser"), std::invalid_argument);
  }
}
