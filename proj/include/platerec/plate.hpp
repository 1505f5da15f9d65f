#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace platerec {

/// Fixed label length after zero-padding.
inline constexpr std::size_t kSeqLen = 10;
/// Classes per position: digits 0–9 then letters A–Z.
inline constexpr std::size_t kNumClasses = 36;
inline constexpr std::string_view kAlphabet = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

/// Malaysian plate grammar S[C][C]N[C].
struct PlateFormat {
  /// Letters allowed in the leading position.
  static constexpr std::string_view s_list = "ABCDJKMNPRTWZ";
  /// Letters allowed in the optional positions (A–Z without I and O).
  static constexpr std::string_view c_list = "ABCDEFGHJKLMNPQRSTUVWXYZ";
  static constexpr int n_min = 1;
  static constexpr int n_max = 9999;
  static constexpr std::size_t min_length = 2;
  static constexpr std::size_t max_length = 8;
};

using LabelIndices = std::array<int, kSeqLen>;

class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PlateLabel {
  std::string raw;
  std::string padded;
  LabelIndices indices{};

  /// Validates `raw` against the grammar and derives the padded and index forms.
  static PlateLabel from_raw(const std::string& raw);
};

/// Draws a plate from the grammar. Each optional letter is present with
/// probability 1/2; the numeric part picks a digit count in 1..4 uniformly
/// and then a value uniformly among numbers with that many digits.
std::string sample_plate(std::mt19937_64& rng);

bool validate_plate(std::string_view s);

/// Prepends '0' up to kSeqLen characters. Throws LabelError when longer.
std::string pad_label(std::string_view s);
/// Removes the maximal run of leading '0'. Requires exactly kSeqLen chars.
std::string strip_padding(std::string_view padded);

/// Class index of one character, or -1 outside the alphabet.
int class_index(char c) noexcept;
char class_char(int index);

LabelIndices encode_label(std::string_view padded);
std::string decode_indices(const LabelIndices& indices);

}  // namespace platerec
