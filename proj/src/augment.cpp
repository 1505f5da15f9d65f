#include "platerec/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "platerec/config.hpp"

namespace platerec {

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig cfg;
  cfg.p_scale = cfg.p_translate = cfg.p_rotate = cfg.p_blur = cfg.p_sharpen = 0.0;
  return cfg;
}

AugmentConfig AugmentConfig::parse(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text, "augment config");
  kv.require_known({"p_scale", "scale_min", "scale_max", "p_translate", "translate_frac",
                    "p_rotate", "rotate_deg", "p_blur", "blur_radius_min", "blur_radius_max",
                    "p_sharpen", "sharpen_min", "sharpen_max"});
  AugmentConfig cfg;
  cfg.p_scale = kv.get_double("p_scale", cfg.p_scale);
  cfg.scale_min = kv.get_double("scale_min", cfg.scale_min);
  cfg.scale_max = kv.get_double("scale_max", cfg.scale_max);
  cfg.p_translate = kv.get_double("p_translate", cfg.p_translate);
  cfg.translate_frac = kv.get_double("translate_frac", cfg.translate_frac);
  cfg.p_rotate = kv.get_double("p_rotate", cfg.p_rotate);
  cfg.rotate_deg = kv.get_double("rotate_deg", cfg.rotate_deg);
  cfg.p_blur = kv.get_double("p_blur", cfg.p_blur);
  cfg.blur_radius_min = static_cast<int>(kv.get_int("blur_radius_min", cfg.blur_radius_min));
  cfg.blur_radius_max = static_cast<int>(kv.get_int("blur_radius_max", cfg.blur_radius_max));
  cfg.p_sharpen = kv.get_double("p_sharpen", cfg.p_sharpen);
  cfg.sharpen_min = kv.get_double("sharpen_min", cfg.sharpen_min);
  cfg.sharpen_max = kv.get_double("sharpen_max", cfg.sharpen_max);

  for (double p : {cfg.p_scale, cfg.p_translate, cfg.p_rotate, cfg.p_blur, cfg.p_sharpen}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("augment config: probability outside [0,1]");
  }
  if (cfg.scale_min <= 0 || cfg.scale_min > cfg.scale_max) {
    throw ConfigError("augment config: need 0 < scale_min <= scale_max");
  }
  if (cfg.blur_radius_min < 0 || cfg.blur_radius_min > cfg.blur_radius_max) {
    throw ConfigError("augment config: need 0 <= blur_radius_min <= blur_radius_max");
  }
  if (cfg.sharpen_min > cfg.sharpen_max) {
    throw ConfigError("augment config: need sharpen_min <= sharpen_max");
  }
  return cfg;
}

AugmentConfig AugmentConfig::load(const std::filesystem::path& path) {
  const KeyValues raw = KeyValues::load(path);
  std::ostringstream text;
  for (const auto& [k, v] : raw.values()) text << k << '=' << v << '\n';
  return parse(text.str());
}

std::string AugmentConfig::to_text() const {
  std::ostringstream out;
  out << "p_scale=" << p_scale << "\nscale_min=" << scale_min << "\nscale_max=" << scale_max
      << "\np_translate=" << p_translate << "\ntranslate_frac=" << translate_frac
      << "\np_rotate=" << p_rotate << "\nrotate_deg=" << rotate_deg << "\np_blur=" << p_blur
      << "\nblur_radius_min=" << blur_radius_min << "\nblur_radius_max=" << blur_radius_max
      << "\np_sharpen=" << p_sharpen << "\nsharpen_min=" << sharpen_min
      << "\nsharpen_max=" << sharpen_max << '\n';
  return out.str();
}

namespace {

void require_image(const Tensor<double>& image, const char* who) {
  if (image.rank() != 3) {
    throw ShapeError(std::string(who) + ": expected C×H×W image, got " +
                     shape_to_string(image.shape()));
  }
}

}  // namespace

double border_mean(const Tensor<double>& image) {
  require_image(image, "border_mean");
  const std::size_t h = image.dim(1), w = image.dim(2);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) {
          sum += image.at(c, y, x);
          ++count;
        }
      }
    }
  }
  return sum / static_cast<double>(count);
}

Tensor<double> affine_warp(const Tensor<double>& image, double scale, double degrees, double dx,
                           double dy, double fill) {
  require_image(image, "affine_warp");
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double cx = (static_cast<double>(w) - 1) / 2;
  const double cy = (static_cast<double>(h) - 1) / 2;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  Tensor<double> out(image.shape());

  const auto sample = [&](std::size_t c, long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return fill;
    return image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // inverse map: undo the shift, the rotation, then the scale
      const double ux = static_cast<double>(x) - dx - cx;
      const double uy = static_cast<double>(y) - dy - cy;
      const double sx = (cos_t * ux + sin_t * uy) / scale + cx;
      const double sy = (-sin_t * ux + cos_t * uy) / scale + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t c = 0; c < channels; ++c) {
        double v = (1 - ay) * (1 - ax) * sample(c, y0, x0);
        if (ax != 0) v += (1 - ay) * ax * sample(c, y0, x0 + 1);
        if (ay != 0) v += ay * (1 - ax) * sample(c, y0 + 1, x0);
        if (ax != 0 && ay != 0) v += ay * ax * sample(c, y0 + 1, x0 + 1);
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

Tensor<double> translate(const Tensor<double>& image, double dx, double dy, double fill) {
  return affine_warp(image, 1.0, 0.0, dx, dy, fill);
}

Tensor<double> box_blur(const Tensor<double>& image, int radius) {
  require_image(image, "box_blur");
  if (radius <= 0) return image;
  const auto h = static_cast<long>(image.dim(1)), w = static_cast<long>(image.dim(2));
  const double area = static_cast<double>((2 * radius + 1) * (2 * radius + 1));
  Tensor<double> out(image.shape());
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double sum = 0;
        for (long oy = -radius; oy <= radius; ++oy) {
          const auto yy = static_cast<std::size_t>(std::clamp(y + oy, 0L, h - 1));
          for (long ox = -radius; ox <= radius; ++ox) {
            const auto xx = static_cast<std::size_t>(std::clamp(x + ox, 0L, w - 1));
            sum += image.at(c, yy, xx);
          }
        }
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = sum / area;
      }
    }
  }
  return out;
}

Tensor<double> unsharp_mask(const Tensor<double>& image, double amount) {
  const Tensor<double> blurred = box_blur(image, 1);
  Tensor<double> out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = std::clamp(image[i] + amount * (image[i] - blurred[i]), 0.0, 1.0);
  }
  return out;
}

PlateImage augment(const PlateImage& image, std::mt19937_64& rng, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto happens = [&](double p) { return p > 0.0 && unit(rng) < p; };
  const auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  PlateImage out = image;
  const double h = static_cast<double>(image.pixels.dim(1));
  const double w = static_cast<double>(image.pixels.dim(2));
  double scale = 1.0, degrees = 0.0, dx = 0.0, dy = 0.0;
  bool warp = false;
  if (happens(cfg.p_scale)) {
    scale = uniform(cfg.scale_min, cfg.scale_max);
    warp = true;
  }
  if (happens(cfg.p_translate)) {
    dx = uniform(-cfg.translate_frac, cfg.translate_frac) * w;
    dy = uniform(-cfg.translate_frac, cfg.translate_frac) * h;
    warp = true;
  }
  if (happens(cfg.p_rotate)) {
    degrees = uniform(-cfg.rotate_deg, cfg.rotate_deg);
    warp = true;
  }
  if (warp) {
    out.pixels = affine_warp(out.pixels, scale, degrees, dx, dy, border_mean(out.pixels));
  }
  if (happens(cfg.p_blur)) {
    const int radius =
        std::uniform_int_distribution<int>(cfg.blur_radius_min, cfg.blur_radius_max)(rng);
    out.pixels = box_blur(out.pixels, radius);
  }
  if (happens(cfg.p_sharpen)) {
    out.pixels = unsharp_mask(out.pixels, uniform(cfg.sharpen_min, cfg.sharpen_max));
  }
  for (double& v : out.pixels.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace platerec
