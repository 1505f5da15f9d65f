#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "platerec/plate.hpp"
#include "platerec/tensor.hpp"

namespace platerec {

/// Image size in pixels (height × width).
struct Canvas {
  std::size_t height = 60;
  std::size_t width = 120;

  bool operator==(const Canvas&) const = default;
};

/// Grayscale plate image (1×H×W, values in [0,1]) with its label.
struct PlateImage {
  Tensor<double> pixels;
  PlateLabel label;
  std::uint64_t seed = 0;
};

/// Pixel rectangle [x0, x1) × [y0, y1).
struct Box {
  std::size_t x0, y0, x1, y1;
};

/// Glyph placement chosen for a rendering.
struct PlateLayout {
  std::vector<Box> glyphs;
  double foreground = 1.0;
  double background = 0.0;
  double noise_sigma = 0.0;
};

inline constexpr std::size_t kGlyphCols = 5;
inline constexpr std::size_t kGlyphRows = 7;
inline constexpr std::size_t kMinMargin = 2;

/// 5×7 block bitmap for one alphabet character; '#' marks ink.
const std::array<const char*, kGlyphRows>& glyph_bitmap(char c);

/// Places the glyphs of `s` on the canvas. Deterministic in `seed`; render_plate
/// uses the same draws, so the boxes describe the rendered image exactly.
PlateLayout layout_plate(const std::string& s, std::uint64_t seed, const Canvas& canvas);

/// Light glyphs on a dark background with jittered spacing and additive
/// Gaussian noise, clamped to [0,1]. Requires validate_plate(s).
PlateImage render_plate(const std::string& s, std::uint64_t seed, const Canvas& canvas = {});

}  // namespace platerec
