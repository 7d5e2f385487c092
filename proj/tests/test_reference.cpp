#include <doctest.h>

#include <stdexcept>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fsqkd/reference.hpp"

using namespace fsqkd;
using ao::Orientation;
using ao::TurbulenceLabel;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("reference") {
  TEST_CASE("bundled tables equal the shipped data files") {
    const std::filesystem::path data = FSQKD_DATA_DIR;
    CHECK(read_file(data / "cm60.csv") == bundled_reference_text(Channel::cm60));
    CHECK(read_file(data / "m30.csv") == bundled_reference_text(Channel::m30));
    const auto loaded = load_reference_dir(data, Channel::m30);
    CHECK(loaded.rows.size() == bundled_reference(Channel::m30).rows.size());
  }

  TEST_CASE("60 cm table contents") {
    const auto t = bundled_reference(Channel::cm60);
    CHECK(t.rows.size() == 8);
    const auto* med = t.find(TurbulenceLabel::medium, Orientation::across, false);
    REQUIRE(med);
    CHECK(med->slope_variance == doctest::Approx(0.0065));
    CHECK(*med->visibility == doctest::Approx(0.15));
    const auto* med_ao = t.find(TurbulenceLabel::medium, Orientation::across, true);
    REQUIRE(med_ao);
    CHECK(*med_ao->visibility - *med->visibility == doctest::Approx(0.30));
    CHECK(t.calibration_points(Orientation::across).size() == 4);
  }

  TEST_CASE("30 m table handles missing values and orientations") {
    const auto t = bundled_reference(Channel::m30);
    const auto* high_along = t.find(TurbulenceLabel::high, Orientation::along, false);
    REQUIRE(high_along);
    CHECK_FALSE(high_along->visibility.has_value());
    CHECK(t.find(TurbulenceLabel::ambient, Orientation::along, false) != nullptr);
    for (const auto& p : t.calibration_points(Orientation::along)) CHECK(p.visibility > 0.0);
  }

  TEST_CASE("parse errors name source and line") {
    const std::string header = "setting,orientation,ao,slope_variance,visibility,visibility_std\n";
    auto expect_error = [](const std::string& text, const std::string& needle) {
      try {
        parse_reference(text, "table.csv");
        FAIL("expected ReferenceFormatError");
      } catch (const ReferenceFormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(needle) != std::string::npos);
      }
    };
    expect_error("setting,ao\n", "table.csv:1");
    expect_error(header + "low,across,1,0.1,0.5\n", "table.csv:2");
    expect_error(header + "low,across,1,0.1,0.5,0.1\nsevere,across,0,0.1,0.3,0.1\n",
                 "table.csv:3");
    expect_error(header + "low,across,2,0.1,0.5,0.1\n", "table.csv:2");
    expect_error(header + "low,across,1,abc,0.5,0.1\n", "table.csv:2");
    const auto ok = parse_reference(header + "low,along,0,0.1,NA,NA\n", "x");
    CHECK(ok.rows.size() == 1);
    CHECK_FALSE(ok.rows[0].visibility_std.has_value());
  }

  TEST_CASE("channel names") {
    CHECK(channel_from_string("cm60") == Channel::cm60);
    CHECK(channel_from_string("m30") == Channel::m30);
    CHECK_THROWS_AS(channel_from_string("km1"), std::invalid_argument);
    CHECK_THROWS_AS(load_reference("/nonexistent/cm60.csv"), ReferenceFormatError);
  }
}
