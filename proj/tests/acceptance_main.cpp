#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <set>
#include <string>

#include "fsqkd/acceptance.hpp"

// Prints one PASS/FAIL line per acceptance criterion. The exit status is
// non-zero when the suite could not run to completion; with --strict it is
// also non-zero when any criterion fails.
int main(int argc, char** argv) {
  CLI::App app{"fsqkd acceptance suite"};
  bool strict = false;
  bool dataset = false;
  std::string reference_dir, work_dir;
  app.add_flag("--strict", strict, "Exit non-zero if any criterion fails");
  app.add_flag("--dataset-checks", dataset, "Also print the reference-table checks");
  app.add_option("--reference-dir", reference_dir, "Directory with cm60.csv and m30.csv");
  app.add_option("--work-dir", work_dir, "Scratch directory for the determinism check");
  CLI11_PARSE(app, argc, argv);

  fsqkd::AcceptanceOptions opt;
  if (!reference_dir.empty()) opt.reference_dir = reference_dir;
  if (!work_dir.empty()) opt.work_dir = work_dir;

  try {
    if (dataset) {
      const auto cm60 = opt.reference_dir
                            ? fsqkd::load_reference_dir(*opt.reference_dir, fsqkd::Channel::cm60)
                            : fsqkd::bundled_reference(fsqkd::Channel::cm60);
      const auto m30 = opt.reference_dir
                           ? fsqkd::load_reference_dir(*opt.reference_dir, fsqkd::Channel::m30)
                           : fsqkd::bundled_reference(fsqkd::Channel::m30);
      for (const auto& r : fsqkd::check_reference(cm60, m30)) {
        fmt::print("{}\n", fsqkd::format_result_line(r));
      }
    }
    const auto results = fsqkd::run_acceptance(opt);
    std::set<std::string> seen;
    int failed = 0;
    for (const auto& r : results) {
      fmt::print("{}\n", fsqkd::format_result_line(r));
      seen.insert(r.id);
      failed += r.passed ? 0 : 1;
    }
    for (int id = 1; id <= 10; ++id) {
      if (!seen.count(std::to_string(id))) {
        fmt::print(stderr, "criterion {} produced no result\n", id);
        return 3;
      }
    }
    fmt::print("acceptance: {}/{} criteria passed\n", results.size() - failed, results.size());
    std::fflush(stdout);
    return strict && failed > 0 ? 1 : 0;
  } catch (const std::exception& e) {
    fmt::print(stderr, "acceptance suite aborted: {}\n", e.what());
    return 3;
  }
}
