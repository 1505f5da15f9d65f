#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "platerec/tensor.hpp"

namespace platerec {

enum class Mode { train, infer };

/// Trainable parameter record. `bias` (and `grad_bias`) stay empty for
/// layers that have no bias term.
template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> grad_weights;
  Tensor<T> grad_bias;

  LayerParams() = default;
  LayerParams(Shape weight_shape, Shape bias_shape);

  bool has_bias() const noexcept { return !bias.empty(); }
  void zero_grads();
  /// Zero-mean Gaussian weights with standard deviation sqrt(2 / fan_in);
  /// bias is reset to zero.
  void init_he(std::mt19937_64& rng, std::size_t fan_in);
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>*>>;

/// Interface shared by every layer the convnet stacks. forward() caches what
/// backward() needs; backward() accumulates parameter gradients and returns
/// the gradient with respect to the forward input.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& input) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual Shape output_shape(const Shape& input_shape) const = 0;
  virtual std::string kind() const = 0;
  virtual std::vector<LayerParams<T>*> params() { return {}; }
  /// Every persistent tensor (parameters and running statistics), by name.
  virtual NamedTensors<T> state() { return {}; }
  virtual void set_mode(Mode) {}
};

/// 2-D convolution over N×C×H×W (or a single C×H×W sample).
/// Weights are laid out as [out_channels, in_channels, k, k].
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride = 1, std::size_t pad = 0);

  /// (in + 2·pad − kernel) / stride + 1; throws ShapeError when the kernel
  /// does not fit or the division is not exact.
  static std::size_t output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad, const char* axis);

  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& input_shape) const override;
  std::string kind() const override { return "conv2d"; }
  std::vector<LayerParams<T>*> params() override { return {&params_}; }
  NamedTensors<T> state() override;

  LayerParams<T>& layer_params() noexcept { return params_; }
  void init(std::mt19937_64& rng);
  /// The first layer of a network has no use for its input gradient.
  void set_propagate_input_grad(bool on) noexcept { propagate_input_grad_ = on; }

 private:
  std::size_t in_channels_, out_channels_, kernel_, stride_, pad_;
  bool propagate_input_grad_ = true;
  // Stride-1 path: each kernel tap is a GEMM against a shifted view of the
  // zero-padded input, so no im2col buffer is built.
  bool use_shifted() const noexcept { return stride_ == 1 && in_channels_ >= 4; }
  void forward_shifted(const Tensor<T>& input, std::size_t n, std::size_t h, std::size_t w,
                       Tensor<T>& out);
  void backward_shifted(const Tensor<T>& grad_out, std::size_t n, std::size_t h, std::size_t w,
                        Tensor<T>& grad_in);

  LayerParams<T> params_;
  Tensor<T> input_;
  bool input_was_rank3_ = false;
};

/// 2×2 max pooling with stride 2. Spatial extents must be even. On ties the
/// gradient goes to the first maximal element in row-major order.
template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& input_shape) const override;
  std::string kind() const override { return "maxpool2"; }

 private:
  Shape input_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// Per-channel batch normalization over every axis except axis 1
/// (N×C×H×W or N×C).
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm(std::size_t channels);

  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& input_shape) const override { return input_shape; }
  std::string kind() const override { return "batchnorm"; }
  std::vector<LayerParams<T>*> params() override { return {&params_}; }
  NamedTensors<T> state() override;
  void set_mode(Mode mode) override { mode_ = mode; }

  Mode mode() const noexcept { return mode_; }
  /// weights hold gamma, bias holds beta.
  LayerParams<T>& layer_params() noexcept { return params_; }
  Tensor<T>& running_mean() noexcept { return running_mean_; }
  Tensor<T>& running_var() noexcept { return running_var_; }

 private:
  std::size_t channels_;
  Mode mode_ = Mode::train;
  LayerParams<T> params_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  // forward cache
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
  Mode cached_mode_ = Mode::train;
};

/// Fully connected layer: out = W·x + b, weights [out, in]. Accepts a
/// vector, or a batch whose trailing axes flatten to `in`.
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in_features, std::size_t out_features);

  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& input_shape) const override;
  std::string kind() const override { return "dense"; }
  std::vector<LayerParams<T>*> params() override { return {&params_}; }
  NamedTensors<T> state() override;

  LayerParams<T>& layer_params() noexcept { return params_; }
  void init(std::mt19937_64& rng);
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

 private:
  std::size_t in_, out_;
  LayerParams<T> params_;
  Tensor<T> input_;
};

enum class ActivationKind { sigmoid, relu, tanh };

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
class Activation final : public Layer<T> {
 public:
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  Tensor<T> forward(const Tensor<T>& input) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& input_shape) const override { return input_shape; }
  std::string kind() const override;

 private:
  ActivationKind kind_;
  Tensor<T> cache_;  // forward output
};

/// Numerically stable softmax (max-subtracted).
template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs);

template <typename T>
struct SoftmaxXent {
  std::vector<T> probs;
  T loss;
};

/// Softmax followed by cross-entropy against class `target`.
template <typename T>
SoftmaxXent<T> softmax_xent(std::span<const T> logits, std::size_t target);

/// Writes loss into the return value and probabilities into `probs`.
template <typename T>
T softmax_xent(std::span<const T> logits, std::size_t target, std::span<T> probs);

/// grad_logits = probs − onehot(target).
template <typename T>
void softmax_xent_backward(std::span<const T> probs, std::size_t target, std::span<T> grad_logits);

/// w ← w − lr·grad for every parameter tensor. Gradients are left untouched.
template <typename T>
void sgd_step(std::span<LayerParams<T>* const> params, T lr);

}  // namespace platerec
