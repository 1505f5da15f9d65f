#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "platerec/render.hpp"
#include "platerec/tensor.hpp"

namespace platerec {

/// Per-transform probabilities and ranges. Keys in the key=value file match
/// the member names; every key is optional.
struct AugmentConfig {
  double p_scale = 0.5;
  double scale_min = 0.85;
  double scale_max = 1.15;
  double p_translate = 0.5;
  double translate_frac = 0.10;  // of each dimension, either direction
  double p_rotate = 0.5;
  double rotate_deg = 7.0;  // either direction
  double p_blur = 0.25;
  int blur_radius_min = 1;
  int blur_radius_max = 2;
  double p_sharpen = 0.25;
  double sharpen_min = 0.5;
  double sharpen_max = 1.5;

  /// Every probability zero: augment() becomes the identity.
  static AugmentConfig disabled();
  static AugmentConfig parse(const std::string& text);
  static AugmentConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Scale by `scale`, rotate by `degrees` about the image centre, then shift
/// by (dx, dy) pixels; bilinear sampling, `fill` outside the source. An
/// integral shift with scale 1 and no rotation moves pixels exactly.
Tensor<double> affine_warp(const Tensor<double>& image, double scale, double degrees, double dx,
                           double dy, double fill);

Tensor<double> translate(const Tensor<double>& image, double dx, double dy, double fill);

/// Mean over a (2r+1)² window, edges clamped.
Tensor<double> box_blur(const Tensor<double>& image, int radius);

/// x + amount·(x − box_blur(x, 1)), clamped to [0,1].
Tensor<double> unsharp_mask(const Tensor<double>& image, double amount);

/// Mean of the outermost pixel ring, used as the fill for exposed regions.
double border_mean(const Tensor<double>& image);

/// Applies each transform with its own probability, geometric ones first
/// (one combined warp), then blur, then sharpen. The label is copied as is.
PlateImage augment(const PlateImage& image, std::mt19937_64& rng, const AugmentConfig& cfg);

}  // namespace platerec
