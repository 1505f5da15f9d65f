#include "platerec/plate.hpp"

namespace platerec {

namespace {

bool in_list(std::string_view list, char c) { return list.find(c) != std::string_view::npos; }

char pick(std::string_view list, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
  return list[d(rng)];
}

}  // namespace

std::string sample_plate(std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::string s;
  s += pick(PlateFormat::s_list, rng);
  for (int i = 0; i < 2; ++i) {
    if (coin(rng)) s += pick(PlateFormat::c_list, rng);
  }
  static constexpr int lows[] = {1, 10, 100, 1000};
  static constexpr int highs[] = {9, 99, 999, 9999};
  std::uniform_int_distribution<int> digits(0, 3);
  const int d = digits(rng);
  std::uniform_int_distribution<int> number(lows[d], highs[d]);
  s += std::to_string(number(rng));
  if (coin(rng)) s += pick(PlateFormat::c_list, rng);
  return s;
}

bool validate_plate(std::string_view s) {
  std::size_t i = 0;
  if (s.empty() || !in_list(PlateFormat::s_list, s[0])) return false;
  ++i;
  for (int k = 0; k < 2 && i < s.size() && in_list(PlateFormat::c_list, s[i]); ++k) ++i;
  const std::size_t digits_begin = i;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  const std::size_t n_digits = i - digits_begin;
  if (n_digits < 1 || n_digits > 4 || s[digits_begin] == '0') return false;
  if (i < s.size() && in_list(PlateFormat::c_list, s[i])) ++i;
  return i == s.size();
}

std::string pad_label(std::string_view s) {
  if (s.size() > kSeqLen) {
    throw LabelError("label '" + std::string(s) + "' longer than " + std::to_string(kSeqLen));
  }
  return std::string(kSeqLen - s.size(), '0') + std::string(s);
}

std::string strip_padding(std::string_view padded) {
  if (padded.size() != kSeqLen) {
    throw LabelError("padded label '" + std::string(padded) + "' is not " +
                     std::to_string(kSeqLen) + " characters");
  }
  const std::size_t first = padded.find_first_not_of('0');
  return first == std::string_view::npos ? std::string() : std::string(padded.substr(first));
}

int class_index(char c) noexcept {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'Z') return 10 + (c - 'A');
  return -1;
}

char class_char(int index) {
  if (index < 0 || index >= static_cast<int>(kNumClasses)) {
    throw LabelError("class index " + std::to_string(index) + " outside alphabet");
  }
  return kAlphabet[static_cast<std::size_t>(index)];
}

LabelIndices encode_label(std::string_view padded) {
  if (padded.size() != kSeqLen) {
    throw LabelError("padded label '" + std::string(padded) + "' is not " +
                     std::to_string(kSeqLen) + " characters");
  }
  LabelIndices out{};
  for (std::size_t i = 0; i < kSeqLen; ++i) {
    out[i] = class_index(padded[i]);
    if (out[i] < 0) {
      throw LabelError("character '" + std::string(1, padded[i]) + "' at position " +
                       std::to_string(i) + " is outside the alphabet");
    }
  }
  return out;
}

std::string decode_indices(const LabelIndices& indices) {
  std::string out;
  out.reserve(kSeqLen);
  for (int ix : indices) out += class_char(ix);
  return out;
}

PlateLabel PlateLabel::from_raw(const std::string& raw) {
  if (!validate_plate(raw)) throw LabelError("invalid plate label '" + raw + "'");
  PlateLabel label;
  label.raw = raw;
  label.padded = pad_label(raw);
  label.indices = encode_label(label.padded);
  return label;
}

}  // namespace platerec
