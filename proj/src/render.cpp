#include "platerec/render.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace platerec {

namespace {

using Glyph = std::array<const char*, kGlyphRows>;

// Index order follows kAlphabet.
constexpr std::array<Glyph, kNumClasses> kAtlas = {{
    {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "},  // 0
    {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},  // 1
    {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"},  // 2
    {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "},  // 3
    {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "},  // 4
    {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "},  // 5
    {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "},  // 6
    {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "},  // 7
    {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "},  // 8
    {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "},  // 9
    {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},  // A
    {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "},  // B
    {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "},  // C
    {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "},  // D
    {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"},  // E
    {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "},  // F
    {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"},  // G
    {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"},  // H
    {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "},  // I
    {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "},  // J
    {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"},  // K
    {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"},  // L
    {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"},  // M
    {"#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"},  // N
    {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},  // O
    {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "},  // P
    {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"},  // Q
    {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"},  // R
    {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "},  // S
    {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "},  // T
    {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "},  // U
    {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "},  // V
    {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "},  // W
    {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"},  // X
    {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "},  // Y
    {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"},  // Z
}};

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

const std::array<const char*, kGlyphRows>& glyph_bitmap(char c) {
  const int ix = class_index(c);
  if (ix < 0) throw LabelError("no glyph for character '" + std::string(1, c) + "'");
  return kAtlas[static_cast<std::size_t>(ix)];
}

PlateLayout layout_plate(const std::string& s, std::uint64_t seed, const Canvas& canvas) {
  if (!validate_plate(s)) throw LabelError("cannot render invalid plate '" + s + "'");
  std::mt19937_64 rng(seed);
  PlateLayout layout;
  layout.foreground = std::uniform_real_distribution<double>(0.75, 1.0)(rng);
  layout.background = std::uniform_real_distribution<double>(0.0, 0.25)(rng);
  layout.noise_sigma = std::uniform_real_distribution<double>(0.0, 0.08)(rng);

  const std::size_t sx = std::max<std::size_t>(1, canvas.width / 60);
  const std::size_t sy = std::max<std::size_t>(1, canvas.height / 15);
  const std::size_t gw = kGlyphCols * sx;
  const std::size_t gh = kGlyphRows * sy;

  // Spacing jitter: 1..2·sx pixels, plus sx at letter/digit group boundaries.
  std::uniform_int_distribution<std::size_t> gap_dist(1, 2 * sx);
  std::vector<std::size_t> gaps(s.size(), 0);
  std::size_t total = gw * s.size();
  for (std::size_t i = 1; i < s.size(); ++i) {
    gaps[i] = gap_dist(rng) + (is_digit(s[i]) != is_digit(s[i - 1]) ? sx : 0);
    total += gaps[i];
  }
  if (total + 2 * kMinMargin > canvas.width || gh + 2 * kMinMargin > canvas.height) {
    throw std::invalid_argument("canvas " + std::to_string(canvas.height) + "x" +
                                std::to_string(canvas.width) + " too small for plate '" + s + "'");
  }
  const std::size_t slack_x = canvas.width - total - 2 * kMinMargin;
  const std::size_t slack_y = canvas.height - gh - 2 * kMinMargin;
  const auto jitter = [&](std::size_t slack, std::size_t reach) {
    const auto half = static_cast<std::ptrdiff_t>(slack / 2);
    const auto r = static_cast<std::ptrdiff_t>(std::min(reach, slack / 2));
    const auto j = std::uniform_int_distribution<std::ptrdiff_t>(-r, r)(rng);
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
        half + j, 0, static_cast<std::ptrdiff_t>(slack)));
  };
  std::size_t x = kMinMargin + jitter(slack_x, 2 * sx);
  const std::size_t y = kMinMargin + jitter(slack_y, sy);
  for (std::size_t i = 0; i < s.size(); ++i) {
    x += gaps[i];
    layout.glyphs.push_back({x, y, x + gw, y + gh});
    x += gw;
  }
  return layout;
}

PlateImage render_plate(const std::string& s, std::uint64_t seed, const Canvas& canvas) {
  const PlateLayout layout = layout_plate(s, seed, canvas);
  // Noise draws come from a stream separate from the layout draws.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Tensor<double> pixels({1, canvas.height, canvas.width}, layout.background);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Box& box = layout.glyphs[i];
    const auto& glyph = glyph_bitmap(s[i]);
    const std::size_t sx = (box.x1 - box.x0) / kGlyphCols;
    const std::size_t sy = (box.y1 - box.y0) / kGlyphRows;
    for (std::size_t gy = 0; gy < kGlyphRows; ++gy) {
      for (std::size_t gx = 0; gx < kGlyphCols; ++gx) {
        if (glyph[gy][gx] != '#') continue;
        for (std::size_t py = 0; py < sy; ++py) {
          for (std::size_t px = 0; px < sx; ++px) {
            pixels.at(0, box.y0 + gy * sy + py, box.x0 + gx * sx + px) = layout.foreground;
          }
        }
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double& v : pixels.data()) {
    v = std::clamp(v + layout.noise_sigma * noise(rng), 0.0, 1.0);
  }
  return PlateImage{std::move(pixels), PlateLabel::from_raw(s), seed};
}

}  // namespace platerec
