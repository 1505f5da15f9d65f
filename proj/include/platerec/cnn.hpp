#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "platerec/layers.hpp"
#include "platerec/render.hpp"

namespace platerec {

/// One VGG block: `convs` 3×3 convolutions (each followed by batchnorm and
/// ReLU) at `channels` width, then 2×2 max pooling.
struct CnnStage {
  std::size_t convs = 2;
  std::size_t channels = 16;

  bool operator==(const CnnStage&) const = default;
};

struct CnnConfig {
  Canvas input{60, 120};
  std::vector<CnnStage> stages{{2, 16}, {2, 32}, {2, 64}, {2, 64}};
  /// Hidden dense widths between the last pool and the output layer.
  std::vector<std::size_t> head_widths{256};
  std::size_t out_dim = 360;

  /// 8 conv layers on a 60×120 canvas.
  static CnnConfig desk_scale();
  /// VGG-16 layout (13 conv + 3 dense) on a 120×240 canvas.
  static CnnConfig vgg16_scale();

  bool operator==(const CnnConfig&) const = default;
};

/// Output shape of one layer for a single sample, as planned from the config.
struct LayerPlan {
  std::string kind;
  Shape output;
};

/// Chains the per-layer shapes for one C×H×W sample. Throws ShapeError if
/// pooling exhausts a spatial dimension. Pooling floors odd extents: a
/// "crop" step drops the trailing row or column first.
std::vector<LayerPlan> plan_cnn(const CnnConfig& cfg);

template <typename T>
class CnnNet {
 public:
  CnnNet(const CnnConfig& cfg, std::uint64_t seed);

  /// N×1×H×W → N×out_dim. Train mode needs N ≥ 2 for batchnorm.
  Tensor<T> forward(const Tensor<T>& batch);
  /// Accumulates gradients into every layer; returns nothing since the input
  /// image needs no gradient.
  void backward(const Tensor<T>& grad_out);

  void set_mode(Mode mode);
  Mode mode() const noexcept { return mode_; }
  const CnnConfig& config() const noexcept { return cfg_; }

  std::vector<LayerParams<T>*> params();
  NamedTensors<T> state();
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

 private:
  CnnConfig cfg_;
  Mode mode_ = Mode::train;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace platerec
