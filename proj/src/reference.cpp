#include "fsqkd/reference.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace fsqkd {

namespace detail {
extern const std::string_view kBundledCm60;
extern const std::string_view kBundledM30;
}  // namespace detail

const char* to_string(Channel c) {
  switch (c) {
    case Channel::cm60: return "cm60";
    case Channel::m30: return "m30";
    case Channel::custom: return "custom";
  }
  return "?";
}

Channel channel_from_string(const std::string& s) {
  if (s == "cm60") return Channel::cm60;
  if (s == "m30") return Channel::m30;
  if (s == "custom") return Channel::custom;
  throw std::invalid_argument(fmt::format("unknown channel '{}' (cm60, m30, custom)", s));
}

const ReferenceRow* ReferenceTable::find(ao::TurbulenceLabel setting, ao::Orientation orientation,
                                         bool with_ao) const {
  for (const auto& r : rows) {
    if (r.setting == setting && r.orientation == orientation && r.ao == with_ao) return &r;
  }
  // Ambient is shared by both orientations.
  if (setting == ao::TurbulenceLabel::ambient) {
    for (const auto& r : rows) {
      if (r.setting == setting && r.ao == with_ao) return &r;
    }
  }
  return nullptr;
}

std::vector<CalibrationPoint> ReferenceTable::calibration_points(
    ao::Orientation orientation) const {
  std::vector<CalibrationPoint> pts;
  for (const auto& r : rows) {
    if (r.ao || !r.visibility) continue;
    if (r.orientation != orientation && r.setting != ao::TurbulenceLabel::ambient) continue;
    pts.push_back({r.slope_variance, *r.visibility});
  }
  return pts;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view field) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw std::invalid_argument(fmt::format("'{}' is not a number", field));
  }
  return v;
}

std::optional<double> parse_optional(std::string_view field) {
  if (field == "NA" || field.empty()) return std::nullopt;
  return parse_double(field);
}

constexpr const char* kHeader[] = {"setting",        "orientation", "ao",
                                   "slope_variance", "visibility",  "visibility_std"};

}  // namespace

ReferenceTable parse_reference(std::string_view text, const std::string& source) {
  ReferenceTable table;
  table.source = source;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = trim(text.substr(pos, nl == std::string_view::npos ? nl : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line);
    auto fail = [&](const std::string& what) {
      return ReferenceFormatError(fmt::format("{}:{}: {}", source, line_no, what));
    };
    if (fields.size() != std::size(kHeader)) {
      throw fail(fmt::format("expected {} columns, found {}", std::size(kHeader), fields.size()));
    }
    if (!header_seen) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] != kHeader[i]) {
          throw fail(fmt::format("header column {} is '{}', expected '{}'", i + 1, fields[i],
                                 kHeader[i]));
        }
      }
      header_seen = true;
      continue;
    }
    try {
      ReferenceRow row;
      row.setting = ao::turbulence_label_from_string(std::string(fields[0]));
      row.orientation = ao::orientation_from_string(std::string(fields[1]));
      if (fields[2] != "0" && fields[2] != "1") {
        throw std::invalid_argument(fmt::format("ao flag '{}' must be 0 or 1", fields[2]));
      }
      row.ao = fields[2] == "1";
      row.slope_variance = parse_double(fields[3]);
      row.visibility = parse_optional(fields[4]);
      row.visibility_std = parse_optional(fields[5]);
      if (row.slope_variance < 0.0) throw std::invalid_argument("negative slope variance");
      table.rows.push_back(row);
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
  }
  if (!header_seen) throw ReferenceFormatError(fmt::format("{}: missing header row", source));
  if (table.rows.empty()) throw ReferenceFormatError(fmt::format("{}: no data rows", source));
  return table;
}

ReferenceTable load_reference(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReferenceFormatError(fmt::format("cannot open reference dataset {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_reference(ss.str(), path.string());
}

std::string_view bundled_reference_text(Channel c) {
  switch (c) {
    case Channel::cm60: return detail::kBundledCm60;
    case Channel::m30: return detail::kBundledM30;
    case Channel::custom: break;
  }
  throw std::invalid_argument("the custom channel has no bundled reference data");
}

ReferenceTable bundled_reference(Channel c) {
  return parse_reference(bundled_reference_text(c), fmt::format("bundled:{}", to_string(c)));
}

ReferenceTable load_reference_dir(const std::filesystem::path& dir, Channel c) {
  if (c == Channel::custom) {
    throw std::invalid_argument("the custom channel has no reference table file");
  }
  return load_reference(dir / fmt::format("{}.csv", to_string(c)));
}

}  // namespace fsqkd
