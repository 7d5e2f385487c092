#pragma once

// Reference turbulence measurements: per-setting mean slope variance
// and mean visibility with and without AO. A copy of the bundled tables is
// compiled into the library; the same files ship under data/.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsqkd/visibility.hpp"
#include "fsqkd/wavefront.hpp"

namespace fsqkd {

enum class Channel { cm60, m30, custom };

const char* to_string(Channel c);
Channel channel_from_string(const std::string& s);

struct ReferenceRow {
  ao::TurbulenceLabel setting = ao::TurbulenceLabel::ambient;
  ao::Orientation orientation = ao::Orientation::across;
  bool ao = false;
  double slope_variance = 0.0;
  std::optional<double> visibility;
  std::optional<double> visibility_std;
};

struct ReferenceTable {
  std::string source;  // file name or "bundled:<channel>"
  std::vector<ReferenceRow> rows;

  const ReferenceRow* find(ao::TurbulenceLabel setting, ao::Orientation orientation,
                           bool ao) const;
  /// No-AO rows with a visibility, for the given orientation.
  std::vector<CalibrationPoint> calibration_points(ao::Orientation orientation) const;
};

class ReferenceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses `setting, orientation, ao, slope_variance, visibility,
/// visibility_std` CSV text; `NA` marks a missing value. Errors name the
/// source and line.
ReferenceTable parse_reference(std::string_view text, const std::string& source);
ReferenceTable load_reference(const std::filesystem::path& path);

std::string_view bundled_reference_text(Channel c);
ReferenceTable bundled_reference(Channel c);

/// Loads `<dir>/cm60.csv` or `<dir>/m30.csv`.
ReferenceTable load_reference_dir(const std::filesystem::path& dir, Channel c);

}  // namespace fsqkd
