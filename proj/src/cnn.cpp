#include "platerec/cnn.hpp"

#include <random>

namespace platerec {

namespace {

// Drops the trailing row/column of odd spatial extents so 2×2 pooling
// floors like a stride-2 window would.
template <typename T>
class CropToEven final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& input) override {
    in_shape_ = input.shape();
    const Shape out_shape = output_shape(in_shape_);
    Tensor<T> out(out_shape);
    const std::size_t planes = input.size() / (in_shape_[2] * in_shape_[3]);
    const std::size_t h = out_shape[2], w = out_shape[3];
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < h; ++y) {
        const T* src = input.ptr() + (p * in_shape_[2] + y) * in_shape_[3];
        std::copy(src, src + w, out.ptr() + (p * h + y) * w);
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_in(in_shape_);
    const std::size_t h = grad_out.dim(2), w = grad_out.dim(3);
    const std::size_t planes = grad_out.size() / (h * w);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < h; ++y) {
        const T* src = grad_out.ptr() + (p * h + y) * w;
        std::copy(src, src + w, grad_in.ptr() + (p * in_shape_[2] + y) * in_shape_[3]);
      }
    }
    return grad_in;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) throw ShapeError("crop: expected NCHW input");
    return {in[0], in[1], in[2] & ~std::size_t{1}, in[3] & ~std::size_t{1}};
  }

  std::string kind() const override { return "crop"; }

 private:
  Shape in_shape_;
};

}  // namespace

CnnConfig CnnConfig::desk_scale() { return CnnConfig{}; }

CnnConfig CnnConfig::vgg16_scale() {
  CnnConfig cfg;
  cfg.input = {120, 240};
  cfg.stages = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
  cfg.head_widths = {4096, 4096};
  cfg.out_dim = 360;
  return cfg;
}

std::vector<LayerPlan> plan_cnn(const CnnConfig& cfg) {
  if (cfg.input.height == 0 || cfg.input.width == 0) throw ShapeError("cnn: empty input canvas");
  if (cfg.out_dim == 0) throw ShapeError("cnn: out_dim must be positive");
  std::vector<LayerPlan> plan;
  std::size_t c = 1, h = cfg.input.height, w = cfg.input.width;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const CnnStage& stage = cfg.stages[s];
    if (stage.convs == 0 || stage.channels == 0) {
      throw ShapeError("cnn: stage " + std::to_string(s) + " has no convolutions or channels");
    }
    for (std::size_t k = 0; k < stage.convs; ++k) {
      c = stage.channels;
      plan.push_back({"conv2d", {c, h, w}});
      plan.push_back({"batchnorm", {c, h, w}});
      plan.push_back({"relu", {c, h, w}});
    }
    if (h < 2) throw ShapeError("cnn: pooling exhausts height at stage " + std::to_string(s));
    if (w < 2) throw ShapeError("cnn: pooling exhausts width at stage " + std::to_string(s));
    if (h % 2 || w % 2) {
      h &= ~std::size_t{1};
      w &= ~std::size_t{1};
      plan.push_back({"crop", {c, h, w}});
    }
    h /= 2;
    w /= 2;
    plan.push_back({"maxpool2", {c, h, w}});
  }
  for (std::size_t width : cfg.head_widths) {
    plan.push_back({"dense", {width}});
    plan.push_back({"relu", {width}});
  }
  plan.push_back({"dense", {cfg.out_dim}});
  return plan;
}

template <typename T>
CnnNet<T>::CnnNet(const CnnConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const std::vector<LayerPlan> plan = plan_cnn(cfg);
  std::mt19937_64 rng(seed);
  Shape current{1, cfg.input.height, cfg.input.width};
  for (const LayerPlan& step : plan) {
    if (step.kind == "conv2d") {
      auto conv = std::make_unique<Conv2d<T>>(current[0], step.output[0], 3, 1, 1);
      conv->init(rng);
      if (layers_.empty()) conv->set_propagate_input_grad(false);
      layers_.push_back(std::move(conv));
    } else if (step.kind == "batchnorm") {
      layers_.push_back(std::make_unique<BatchNorm<T>>(step.output[0]));
    } else if (step.kind == "relu") {
      layers_.push_back(std::make_unique<Activation<T>>(ActivationKind::relu));
    } else if (step.kind == "crop") {
      layers_.push_back(std::make_unique<CropToEven<T>>());
    } else if (step.kind == "maxpool2") {
      layers_.push_back(std::make_unique<MaxPool2<T>>());
    } else if (step.kind == "dense") {
      auto dense = std::make_unique<Dense<T>>(shape_volume(current), step.output[0]);
      dense->init(rng);
      layers_.push_back(std::move(dense));
    }
    current = step.output;
  }
  set_mode(Mode::train);
}

template <typename T>
Tensor<T> CnnNet<T>::forward(const Tensor<T>& batch) {
  if (batch.rank() != 4 || batch.dim(1) != 1 || batch.dim(2) != cfg_.input.height ||
      batch.dim(3) != cfg_.input.width) {
    throw ShapeError("cnn: expected N×1×" + std::to_string(cfg_.input.height) + "×" +
                     std::to_string(cfg_.input.width) + " batch, got " +
                     shape_to_string(batch.shape()));
  }
  if (mode_ == Mode::train && batch.dim(0) < 2) {
    throw ShapeError("cnn: train mode needs a batch of at least 2 samples (batchnorm), got " +
                     std::to_string(batch.dim(0)));
  }
  Tensor<T> x = layers_.front()->forward(batch);
  for (std::size_t i = 1; i < layers_.size(); ++i) x = layers_[i]->forward(x);
  return x;
}

template <typename T>
void CnnNet<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
}

template <typename T>
void CnnNet<T>::set_mode(Mode mode) {
  mode_ = mode;
  for (auto& layer : layers_) layer->set_mode(mode);
}

template <typename T>
std::vector<LayerParams<T>*> CnnNet<T>::params() {
  std::vector<LayerParams<T>*> out;
  for (auto& layer : layers_) {
    for (LayerParams<T>* p : layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
NamedTensors<T> CnnNet<T>::state() {
  NamedTensors<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [name, tensor] : layers_[i]->state()) {
      out.emplace_back("cnn." + std::to_string(i) + "." + layers_[i]->kind() + "." + name, tensor);
    }
  }
  return out;
}

template class CnnNet<float>;
template class CnnNet<double>;

}  // namespace platerec
