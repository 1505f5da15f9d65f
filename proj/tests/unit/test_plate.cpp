#include <doctest.h>

#include <set>

#include "platerec/plate.hpp"

using namespace platerec;

TEST_CASE("letter lists") {
  CHECK(PlateFormat::s_list.size() == 13);
  CHECK(PlateFormat::c_list.size() == 24);
  for (char c : PlateFormat::s_list) CHECK(PlateFormat::c_list.find(c) != std::string_view::npos);
  for (std::string_view list : {PlateFormat::s_list, PlateFormat::c_list}) {
    CHECK(list.find('I') == std::string_view::npos);
    CHECK(list.find('O') == std::string_view::npos);
  }
}

TEST_CASE("validate_plate") {
  CHECK(validate_plate("WLV3092"));
  CHECK(validate_plate("A1"));
  CHECK(validate_plate("WWW9999W"));
  CHECK(validate_plate("B12C"));
  CHECK_FALSE(validate_plate("ILV3092"));
  CHECK_FALSE(validate_plate("A0123"));
  CHECK_FALSE(validate_plate("A0"));
  CHECK_FALSE(validate_plate("A10000"));
  CHECK_FALSE(validate_plate(""));
  CHECK_FALSE(validate_plate("A"));
  CHECK_FALSE(validate_plate("1A"));
  CHECK_FALSE(validate_plate("EAB1"));  // E is not a leading letter
  CHECK_FALSE(validate_plate("AOB1"));
  CHECK_FALSE(validate_plate("ABCD1"));  // at most two middle letters
  CHECK_FALSE(validate_plate("A1BC"));   // at most one trailing letter
  CHECK_FALSE(validate_plate("a12"));
}

TEST_CASE("padding") {
  CHECK(pad_label("WLV3092") == "000WLV3092");
  CHECK(pad_label("0123456789") == "0123456789");
  CHECK_THROWS_AS(pad_label("ABCDEFGHIJK"), LabelError);
  CHECK(strip_padding("000WLV3092") == "WLV3092");
  CHECK(strip_padding("0000000000").empty());
  CHECK_THROWS_AS(strip_padding("00WLV"), LabelError);
  // the eight-character maximum keeps two leading zeros
  CHECK(pad_label("WWW9999W") == "00WWW9999W");
}

TEST_CASE("encoding") {
  const LabelIndices expected{0, 0, 0, 32, 21, 31, 3, 0, 9, 2};
  CHECK(encode_label("000WLV3092") == expected);
  CHECK(decode_indices(expected) == "000WLV3092");
  CHECK(encode_label("0000000000") == LabelIndices{});
  CHECK(class_index('0') == 0);
  CHECK(class_index('9') == 9);
  CHECK(class_index('A') == 10);
  CHECK(class_index('Z') == 35);
  CHECK(class_index('a') == -1);
  CHECK(class_char(32) == 'W');
  CHECK_THROWS(class_char(36));
  CHECK_THROWS_AS(encode_label("000WLV30-2"), LabelError);
  CHECK_THROWS_AS(encode_label("WLV3092"), LabelError);
}

TEST_CASE("PlateLabel::from_raw") {
  const PlateLabel label = PlateLabel::from_raw("WLV3092");
  CHECK(label.padded == "000WLV3092");
  CHECK(label.indices == encode_label("000WLV3092"));
  CHECK_THROWS_AS(PlateLabel::from_raw("ILV3092"), LabelError);
}

TEST_CASE("sampling covers the grammar and nothing else") {
  std::mt19937_64 rng(2024);
  std::size_t shortest = 100, longest = 0;
  std::set<char> seen;
  for (int i = 0; i < 10000; ++i) {
    const std::string s = sample_plate(rng);
    REQUIRE(validate_plate(s));
    CHECK(strip_padding(pad_label(s)) == s);
    CHECK(decode_indices(encode_label(pad_label(s))) == pad_label(s));
    shortest = std::min(shortest, s.size());
    longest = std::max(longest, s.size());
    seen.insert(s.begin(), s.end());
  }
  CHECK(shortest == 2);
  CHECK(longest == 8);
  CHECK(seen.count('I') == 0);
  CHECK(seen.count('O') == 0);

  std::mt19937_64 a(7), b(7);
  CHECK(sample_plate(a) == sample_plate(b));
}
