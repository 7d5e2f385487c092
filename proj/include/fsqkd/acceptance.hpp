#pragma once

// The numbered acceptance suite (criteria 1-10) plus consistency checks of
// a reference dataset. Shared by the `validate` command and the acceptance
// test binary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsqkd/reference.hpp"
#include "fsqkd/skr.hpp"

namespace fsqkd {

struct CriterionResult {
  std::string id;  // "1".."10" or "D1".. for dataset checks
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Directory holding cm60.csv / m30.csv; bundled tables when empty.
  std::optional<std::filesystem::path> reference_dir;
  /// Scratch space for the determinism check; a temp directory when empty.
  std::optional<std::filesystem::path> work_dir;
  std::size_t trace_trials = 1000;
  std::uint64_t trace_seed = 7000;
};

/// Closed-form symplectic eigenvalues by brute force: moduli of the
/// eigenvalues of Omega * Gamma for the 4x4 covariance matrix.
SymplecticSpectrum brute_force_symplectic(const TwoModeCovariance& cov);

/// Checks on the raw reference columns: recomputed differences, AO >= no-AO
/// ordering, where the difference peaks, and slope-variance ordering.
std::vector<CriterionResult> check_reference(const ReferenceTable& cm60,
                                             const ReferenceTable& m30);

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt = {});

std::string format_result_line(const CriterionResult& r);

}  // namespace fsqkd
