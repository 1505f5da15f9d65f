#include "platerec/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace platerec {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::string dim_name(const char* axis) { return std::string(axis); }

struct Geometry {
  std::size_t n, c, h, w;
};

// Interprets CHW as a batch of one.
template <typename T>
Geometry batch_geometry(const Tensor<T>& t, const char* who) {
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  throw ShapeError(std::string(who) + ": expected rank 3 (CHW) or 4 (NCHW) input, got " +
                   shape_to_string(t.shape()));
}

// Output columns [lo, hi) read inside the image for kernel offset `kx`.
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_columns(std::size_t w, std::size_t kx, std::size_t stride, std::size_t pad,
                         std::size_t ow) {
  // ix = ox·stride + kx − pad must land in [0, w)
  std::size_t lo = 0;
  if (kx < pad) lo = (pad - kx + stride - 1) / stride;
  std::size_t hi = 0;
  if (w + pad > kx) hi = std::min(ow, (w + pad - kx - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

// Output rows [oy0, oy1) only; `cols` is patch × ((oy1 − oy0)·ow).
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oy0, std::size_t oy1,
            std::size_t ow, T* cols) {
  const std::size_t plane = (oy1 - oy0) * ow;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols + ((c * k + ky) * k + kx) * plane - oy0 * ow;
        const ValidRange r = valid_columns(w, kx, stride, pad, ow);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          T* row = dst + oy * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || r.lo == r.hi) {
            std::fill(row, row + ow, T(0));
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w + r.lo * stride + kx - pad;
          std::fill(row, row + r.lo, T(0));
          if (stride == 1) {
            std::copy(src, src + (r.hi - r.lo), row + r.lo);
          } else {
            for (std::size_t ox = r.lo; ox < r.hi; ++ox) row[ox] = src[(ox - r.lo) * stride];
          }
          std::fill(row + r.hi, row + ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t h, std::size_t w,
                std::size_t k, std::size_t stride, std::size_t pad, std::size_t oy0,
                std::size_t oy1, std::size_t ow, T* x) {
  const std::size_t plane = (oy1 - oy0) * ow;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = cols + ((c * k + ky) * k + kx) * plane - oy0 * ow;
        const ValidRange r = valid_columns(w, kx, stride, pad, ow);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || r.lo == r.hi) continue;
          T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w + r.lo * stride + kx - pad;
          const T* row = src + oy * ow;
          for (std::size_t ox = r.lo; ox < r.hi; ++ox) dst[(ox - r.lo) * stride] += row[ox];
        }
      }
    }
  }
}

// Rows per band so that one band of im2col columns stays cache-resident.
std::size_t band_rows(std::size_t patch, std::size_t oh, std::size_t ow) {
  constexpr std::size_t kBandElements = 64 * 1024;
  return std::clamp<std::size_t>(kBandElements / std::max<std::size_t>(1, patch * ow), 1, oh);
}

template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// One sample's plane of one channel as an Eigen array.
template <typename T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> channel_row(T* base, std::size_t off,
                                                            std::size_t len) {
  return {base + off, static_cast<Eigen::Index>(len)};
}
template <typename T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> channel_row(const T* base, std::size_t off,
                                                                  std::size_t len) {
  return {base + off, static_cast<Eigen::Index>(len)};
}

}  // namespace

// ---------------------------------------------------------------- LayerParams

template <typename T>
LayerParams<T>::LayerParams(Shape weight_shape, Shape bias_shape)
    : weights(weight_shape), grad_weights(weight_shape) {
  if (!bias_shape.empty()) {
    bias = Tensor<T>(bias_shape);
    grad_bias = Tensor<T>(bias_shape);
  }
}

template <typename T>
void LayerParams<T>::zero_grads() {
  grad_weights.fill(T(0));
  grad_bias.fill(T(0));
}

template <typename T>
void LayerParams<T>::init_he(std::mt19937_64& rng, std::size_t fan_in) {
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (T& v : weights.data()) v = static_cast<T>(gauss(rng));
  bias.fill(T(0));
}

// --------------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t pad)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      params_({out_channels, in_channels, kernel, kernel}, {out_channels}) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
}

template <typename T>
std::size_t Conv2d<T>::output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                     std::size_t pad, const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (kernel > padded) {
    throw ShapeError("conv2d: kernel extent " + std::to_string(kernel) +
                     " exceeds padded input " + dim_name(axis) + " " + std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError("conv2d: output " + dim_name(axis) + " is not integral (" +
                     std::to_string(padded - kernel) + " not divisible by stride " +
                     std::to_string(stride) + ")");
  }
  return (padded - kernel) / stride + 1;
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  if (in.size() != 3 && in.size() != 4) {
    throw ShapeError("conv2d: expected rank 3 or 4 input, got " + shape_to_string(in));
  }
  const std::size_t off = in.size() - 3;
  if (in[off] != in_channels_) {
    throw ShapeError("conv2d: input channels " + std::to_string(in[off]) + " != expected " +
                     std::to_string(in_channels_));
  }
  const std::size_t oh = output_extent(in[off + 1], kernel_, stride_, pad_, "height");
  const std::size_t ow = output_extent(in[off + 2], kernel_, stride_, pad_, "width");
  if (off) return {in[0], out_channels_, oh, ow};
  return {out_channels_, oh, ow};
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng) {
  params_.init_he(rng, in_channels_ * kernel_ * kernel_);
}

template <typename T>
NamedTensors<T> Conv2d<T>::state() {
  return {{"weight", &params_.weights}, {"bias", &params_.bias}};
}


template <typename T>
void Conv2d<T>::forward_shifted(const Tensor<T>& input, std::size_t n, std::size_t h,
                                std::size_t w, Tensor<T>& out) {
  const std::size_t k = kernel_, hp = h + 2 * pad_, wp = w + 2 * pad_;
  const std::size_t oh = hp - k + 1, ow = wp - k + 1;
  const std::size_t grid = oh * wp;        // output positions on the padded row pitch
  const std::size_t len = hp * wp + k - 1;  // room for the last tap's overhang
  const auto ci = static_cast<Eigen::Index>(in_channels_);
  const auto co = static_cast<Eigen::Index>(out_channels_);

  std::vector<RowMat<T>> taps(k * k, RowMat<T>(co, ci));
  for (std::size_t o = 0; o < out_channels_; ++o)
    for (std::size_t i = 0; i < in_channels_; ++i)
      for (std::size_t t = 0; t < k * k; ++t)
        taps[t](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) =
            params_.weights[(o * in_channels_ + i) * k * k + t];

  RowMat<T> padded = RowMat<T>::Zero(ci, static_cast<Eigen::Index>(len));
  RowMat<T> result(co, static_cast<Eigen::Index>(grid));
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = input.ptr() + s * in_channels_ * h * w;
    for (std::size_t c = 0; c < in_channels_; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy(x + (c * h + y) * w, x + (c * h + y + 1) * w,
                  padded.data() + c * len + (y + pad_) * wp + pad_);
    for (std::size_t t = 0; t < k * k; ++t) {
      const auto off = static_cast<Eigen::Index>((t / k) * wp + t % k);
      const auto view = padded.middleCols(off, static_cast<Eigen::Index>(grid));
      if (t == 0) {
        result.noalias() = taps[t] * view;
      } else {
        result.noalias() += taps[t] * view;
      }
    }
    T* y = out.ptr() + s * out_channels_ * oh * ow;
    for (std::size_t o = 0; o < out_channels_; ++o) {
      const T b = params_.bias[o];
      for (std::size_t r = 0; r < oh; ++r) {
        const T* src = result.data() + o * grid + r * wp;
        T* dst = y + (o * oh + r) * ow;
        for (std::size_t c = 0; c < ow; ++c) dst[c] = src[c] + b;
      }
    }
  }
}

template <typename T>
void Conv2d<T>::backward_shifted(const Tensor<T>& grad_out, std::size_t n, std::size_t h,
                                 std::size_t w, Tensor<T>& grad_in) {
  const std::size_t k = kernel_, hp = h + 2 * pad_, wp = w + 2 * pad_;
  const std::size_t oh = hp - k + 1, ow = wp - k + 1;
  const std::size_t grid = oh * wp;
  const std::size_t len = hp * wp + k - 1;
  const auto ci = static_cast<Eigen::Index>(in_channels_);
  const auto co = static_cast<Eigen::Index>(out_channels_);

  std::vector<RowMat<T>> taps(k * k, RowMat<T>(co, ci));
  std::vector<RowMat<T>> tap_grads(k * k, RowMat<T>::Zero(co, ci));
  for (std::size_t o = 0; o < out_channels_; ++o)
    for (std::size_t i = 0; i < in_channels_; ++i)
      for (std::size_t t = 0; t < k * k; ++t)
        taps[t](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) =
            params_.weights[(o * in_channels_ + i) * k * k + t];

  RowMat<T> padded = RowMat<T>::Zero(ci, static_cast<Eigen::Index>(len));
  RowMat<T> grad_padded(ci, static_cast<Eigen::Index>(len));
  // junk columns (beyond ow on each padded row) must carry zero gradient
  RowMat<T> dy = RowMat<T>::Zero(co, static_cast<Eigen::Index>(grid));
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = input_.ptr() + s * in_channels_ * h * w;
    for (std::size_t c = 0; c < in_channels_; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy(x + (c * h + y) * w, x + (c * h + y + 1) * w,
                  padded.data() + c * len + (y + pad_) * wp + pad_);
    const T* g = grad_out.ptr() + s * out_channels_ * oh * ow;
    for (std::size_t o = 0; o < out_channels_; ++o) {
      T bias_sum = 0;
      for (std::size_t r = 0; r < oh; ++r) {
        const T* src = g + (o * oh + r) * ow;
        std::copy(src, src + ow, dy.data() + o * grid + r * wp);
        for (std::size_t c = 0; c < ow; ++c) bias_sum += src[c];
      }
      params_.grad_bias[o] += bias_sum;
    }
    if (propagate_input_grad_) grad_padded.setZero();
    for (std::size_t t = 0; t < k * k; ++t) {
      const auto off = static_cast<Eigen::Index>((t / k) * wp + t % k);
      tap_grads[t].noalias() +=
          dy * padded.middleCols(off, static_cast<Eigen::Index>(grid)).transpose();
      if (propagate_input_grad_) {
        grad_padded.middleCols(off, static_cast<Eigen::Index>(grid)).noalias() +=
            taps[t].transpose() * dy;
      }
    }
    if (propagate_input_grad_) {
      T* gx = grad_in.ptr() + s * in_channels_ * h * w;
      for (std::size_t c = 0; c < in_channels_; ++c)
        for (std::size_t y = 0; y < h; ++y) {
          const T* src = grad_padded.data() + c * len + (y + pad_) * wp + pad_;
          std::copy(src, src + w, gx + (c * h + y) * w);
        }
    }
  }
  for (std::size_t o = 0; o < out_channels_; ++o)
    for (std::size_t i = 0; i < in_channels_; ++i)
      for (std::size_t t = 0; t < k * k; ++t)
        params_.grad_weights[(o * in_channels_ + i) * k * k + t] +=
            tap_grads[t](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input) {
  const Shape out_shape = output_shape(input.shape());
  const Geometry g = batch_geometry(input, "conv2d");
  const std::size_t oh = out_shape[out_shape.size() - 2];
  const std::size_t ow = out_shape[out_shape.size() - 1];
  const std::size_t patch = in_channels_ * kernel_ * kernel_;
  const std::size_t plane = oh * ow;

  input_ = input;
  input_was_rank3_ = input.rank() == 3;
  Tensor<T> out(out_shape);
  if (use_shifted()) {
    forward_shifted(input, g.n, g.h, g.w, out);
    return out;
  }
  const std::size_t band = band_rows(patch, oh, ow);
  AlignedVector<T> cols(patch * band * ow);
  ConstMatMap<T> w(params_.weights.ptr(), static_cast<Eigen::Index>(out_channels_),
                   static_cast<Eigen::Index>(patch));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(
      params_.bias.ptr(), static_cast<Eigen::Index>(out_channels_));
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy0 = 0; oy0 < oh; oy0 += band) {
      const std::size_t oy1 = std::min(oh, oy0 + band);
      const auto width = static_cast<Eigen::Index>((oy1 - oy0) * ow);
      im2col(input.ptr() + n * g.c * g.h * g.w, g.c, g.h, g.w, kernel_, stride_, pad_, oy0, oy1,
             ow, cols.data());
      ConstMatMap<T> c(cols.data(), static_cast<Eigen::Index>(patch), width);
      StridedMap<T> o(out.ptr() + n * out_channels_ * plane + oy0 * ow,
                      static_cast<Eigen::Index>(out_channels_), width,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
      o.noalias() = w * c;
      o.colwise() += b;
    }
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  if (input_.empty()) throw std::logic_error("conv2d: backward called before forward");
  const Shape expected = output_shape(input_.shape());
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " != forward output " + shape_to_string(expected));
  }
  const Geometry g = batch_geometry(input_, "conv2d");
  const std::size_t oh = expected[expected.size() - 2];
  const std::size_t ow = expected[expected.size() - 1];
  const std::size_t patch = in_channels_ * kernel_ * kernel_;
  const std::size_t plane = oh * ow;

  Tensor<T> grad_in;
  if (propagate_input_grad_) grad_in = Tensor<T>(input_.shape());
  if (use_shifted()) {
    backward_shifted(grad_out, g.n, g.h, g.w, grad_in);
    return grad_in;
  }
  const std::size_t band = band_rows(patch, oh, ow);
  AlignedVector<T> cols(patch * band * ow);
  AlignedVector<T> grad_cols(propagate_input_grad_ ? patch * band * ow : 0);
  ConstMatMap<T> w(params_.weights.ptr(), static_cast<Eigen::Index>(out_channels_),
                   static_cast<Eigen::Index>(patch));
  MatMap<T> gw(params_.grad_weights.ptr(), static_cast<Eigen::Index>(out_channels_),
               static_cast<Eigen::Index>(patch));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(params_.grad_bias.ptr(),
                                                     static_cast<Eigen::Index>(out_channels_));
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy0 = 0; oy0 < oh; oy0 += band) {
      const std::size_t oy1 = std::min(oh, oy0 + band);
      const auto width = static_cast<Eigen::Index>((oy1 - oy0) * ow);
      im2col(input_.ptr() + n * g.c * g.h * g.w, g.c, g.h, g.w, kernel_, stride_, pad_, oy0,
             oy1, ow, cols.data());
      ConstMatMap<T> c(cols.data(), static_cast<Eigen::Index>(patch), width);
      ConstStridedMap<T> go(grad_out.ptr() + n * out_channels_ * plane + oy0 * ow,
                            static_cast<Eigen::Index>(out_channels_), width,
                            Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
      gw.noalias() += go * c.transpose();
      gb += go.rowwise().sum();
      if (propagate_input_grad_) {
        MatMap<T> gc(grad_cols.data(), static_cast<Eigen::Index>(patch), width);
        gc.noalias() = w.transpose() * go;
        col2im_add(grad_cols.data(), g.c, g.h, g.w, kernel_, stride_, pad_, oy0, oy1, ow,
                   grad_in.ptr() + n * g.c * g.h * g.w);
      }
    }
  }
  return grad_in;
}

// ------------------------------------------------------------------- MaxPool2

template <typename T>
Shape MaxPool2<T>::output_shape(const Shape& in) const {
  if (in.size() != 3 && in.size() != 4) {
    throw ShapeError("maxpool2: expected rank 3 or 4 input, got " + shape_to_string(in));
  }
  const std::size_t off = in.size() - 3;
  if (in[off + 1] % 2) {
    throw ShapeError("maxpool2: input height " + std::to_string(in[off + 1]) + " is odd");
  }
  if (in[off + 2] % 2) {
    throw ShapeError("maxpool2: input width " + std::to_string(in[off + 2]) + " is odd");
  }
  Shape out = in;
  out[off + 1] /= 2;
  out[off + 2] /= 2;
  return out;
}

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& input) {
  Tensor<T> out(output_shape(input.shape()));
  const Geometry g = batch_geometry(input, "maxpool2");
  const std::size_t oh = g.h / 2, ow = g.w / 2;
  input_shape_ = input.shape();
  argmax_.assign(out.size(), 0);
  const T* x = input.ptr();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < g.n * g.c; ++plane) {
    const std::size_t base = plane * g.h * g.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + (2 * oy) * g.w + 2 * ox;
        const std::size_t candidates[3] = {best + 1, best + g.w, best + g.w + 1};
        for (std::size_t idx : candidates) {
          if (x[idx] > x[best]) best = idx;
        }
        out[o] = x[best];
        argmax_[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& grad_out) {
  if (input_shape_.empty()) throw std::logic_error("maxpool2: backward called before forward");
  if (grad_out.size() != argmax_.size()) {
    throw ShapeError("maxpool2: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match forward output");
  }
  Tensor<T> grad_in(input_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) grad_in[argmax_[o]] += grad_out[o];
  return grad_in;
}

// ------------------------------------------------------------------ BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels)
    : channels_(channels),
      params_({channels}, {channels}),
      running_mean_({channels}, T(0)),
      running_var_({channels}, T(1)) {
  params_.weights.fill(T(1));
}

template <typename T>
NamedTensors<T> BatchNorm<T>::state() {
  return {{"gamma", &params_.weights},
          {"beta", &params_.bias},
          {"running_mean", &running_mean_},
          {"running_var", &running_var_}};
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& input) {
  if (input.rank() < 2 || input.dim(1) != channels_) {
    throw ShapeError("batchnorm: expected N×" + std::to_string(channels_) + "×... input, got " +
                     shape_to_string(input.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t spatial = input.size() / (n * channels_);
  const std::size_t count = n * spatial;
  if (mode_ == Mode::train && n < 2) {
    throw ShapeError("batchnorm: train mode needs a batch of at least 2 samples, got " +
                     std::to_string(n));
  }

  if (normalized_.shape() != input.shape()) normalized_ = Tensor<T>(input.shape());
  inv_std_.assign(channels_, T(0));
  cached_mode_ = mode_;
  Tensor<T> out(input.shape());
  const T eps = static_cast<T>(kEpsilon);
  const T momentum = static_cast<T>(kMomentum);
  auto row = [&](auto* base, std::size_t s, std::size_t c) {
    return channel_row(base, (s * channels_ + c) * spatial, spatial);
  };

  for (std::size_t c = 0; c < channels_; ++c) {
    T mean, var;
    if (mode_ == Mode::train) {
      // one pass; float partial sums per plane, double across planes
      double sum = 0, sum_sq = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const auto x = row(input.ptr(), s, c);
        sum += static_cast<double>(x.sum());
        sum_sq += static_cast<double>(x.square().sum());
      }
      const double m = sum / static_cast<double>(count);
      const double v = std::max(0.0, sum_sq / static_cast<double>(count) - m * m);
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      running_mean_[c] = (T(1) - momentum) * running_mean_[c] + momentum * mean;
      running_var_[c] =
          (T(1) - momentum) * running_var_[c] + momentum * static_cast<T>(unbiased);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv_std = T(1) / std::sqrt(var + eps);
    inv_std_[c] = inv_std;
    const T gamma = params_.weights[c];
    const T beta = params_.bias[c];
    for (std::size_t s = 0; s < n; ++s) {
      auto xh = row(normalized_.ptr(), s, c);
      xh = (row(input.ptr(), s, c) - mean) * inv_std;
      row(out.ptr(), s, c) = gamma * xh + beta;
    }
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  if (normalized_.empty()) throw std::logic_error("batchnorm: backward called before forward");
  if (grad_out.shape() != normalized_.shape()) {
    throw ShapeError("batchnorm: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " != forward output " + shape_to_string(normalized_.shape()));
  }
  const std::size_t n = normalized_.dim(0);
  const std::size_t spatial = normalized_.size() / (n * channels_);
  const T count = static_cast<T>(n * spatial);
  Tensor<T> grad_in(normalized_.shape());
  auto row = [&](auto* base, std::size_t s, std::size_t c) {
    return channel_row(base, (s * channels_ + c) * spatial, spatial);
  };

  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const auto dy = row(grad_out.ptr(), s, c);
      sum_dy += static_cast<double>(dy.sum());
      sum_dy_xh += static_cast<double>((dy * row(normalized_.ptr(), s, c)).sum());
    }
    params_.grad_weights[c] += static_cast<T>(sum_dy_xh);
    params_.grad_bias[c] += static_cast<T>(sum_dy);
    const T scale = params_.weights[c] * inv_std_[c];
    const T mean_dy = static_cast<T>(sum_dy) / count;
    const T mean_dy_xh = static_cast<T>(sum_dy_xh) / count;
    for (std::size_t s = 0; s < n; ++s) {
      if (cached_mode_ == Mode::train) {
        row(grad_in.ptr(), s, c) =
            scale * (row(grad_out.ptr(), s, c) - mean_dy - row(normalized_.ptr(), s, c) * mean_dy_xh);
      } else {
        row(grad_in.ptr(), s, c) = scale * row(grad_out.ptr(), s, c);
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------- Dense

template <typename T>
Dense<T>::Dense(std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features), params_({out_features, in_features}, {out_features}) {}

template <typename T>
Shape Dense<T>::output_shape(const Shape& in) const {
  if (in.empty()) throw ShapeError("dense: empty input shape");
  if (in.size() == 1) {
    if (in[0] != in_) {
      throw ShapeError("dense: input length " + std::to_string(in[0]) + " != weight inner dim " +
                       std::to_string(in_));
    }
    return {out_};
  }
  const std::size_t inner = shape_volume(in) / in[0];
  if (inner != in_) {
    throw ShapeError("dense: flattened input features " + std::to_string(inner) +
                     " != weight inner dim " + std::to_string(in_));
  }
  return {in[0], out_};
}

template <typename T>
void Dense<T>::init(std::mt19937_64& rng) {
  params_.init_he(rng, in_);
}

template <typename T>
NamedTensors<T> Dense<T>::state() {
  return {{"weight", &params_.weights}, {"bias", &params_.bias}};
}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& input) {
  Tensor<T> out(output_shape(input.shape()));
  input_ = input;
  const auto rows = static_cast<Eigen::Index>(input.rank() == 1 ? 1 : input.dim(0));
  ConstMatMap<T> x(input.ptr(), rows, static_cast<Eigen::Index>(in_));
  ConstMatMap<T> w(params_.weights.ptr(), static_cast<Eigen::Index>(out_),
                   static_cast<Eigen::Index>(in_));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(params_.bias.ptr(),
                                                          static_cast<Eigen::Index>(out_));
  MatMap<T> y(out.ptr(), rows, static_cast<Eigen::Index>(out_));
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return out;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& grad_out) {
  if (input_.empty()) throw std::logic_error("dense: backward called before forward");
  if (grad_out.shape() != output_shape(input_.shape())) {
    throw ShapeError("dense: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match forward output");
  }
  const auto rows = static_cast<Eigen::Index>(input_.rank() == 1 ? 1 : input_.dim(0));
  ConstMatMap<T> x(input_.ptr(), rows, static_cast<Eigen::Index>(in_));
  ConstMatMap<T> g(grad_out.ptr(), rows, static_cast<Eigen::Index>(out_));
  ConstMatMap<T> w(params_.weights.ptr(), static_cast<Eigen::Index>(out_),
                   static_cast<Eigen::Index>(in_));
  MatMap<T> gw(params_.grad_weights.ptr(), static_cast<Eigen::Index>(out_),
               static_cast<Eigen::Index>(in_));
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(params_.grad_bias.ptr(),
                                                     static_cast<Eigen::Index>(out_));
  gw.noalias() += g.transpose() * x;
  gb += g.colwise().sum();
  Tensor<T> grad_in(input_.shape());
  MatMap<T> gx(grad_in.ptr(), rows, static_cast<Eigen::Index>(in_));
  gx.noalias() = g * w;
  return grad_in;
}

// ----------------------------------------------------------------- Activation

template <typename T>
std::string Activation<T>::kind() const {
  switch (kind_) {
    case ActivationKind::sigmoid: return "sigmoid";
    case ActivationKind::relu: return "relu";
    case ActivationKind::tanh: return "tanh";
  }
  return "activation";
}

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  const auto x = channel_row(input.ptr(), 0, input.size());
  auto y = channel_row(out.ptr(), 0, out.size());
  switch (kind_) {
    case ActivationKind::sigmoid:
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
      break;
    case ActivationKind::relu:
      y = x.max(T(0));
      break;
    case ActivationKind::tanh:
      y = x.tanh();
      break;
  }
  cache_ = out;
  return out;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != cache_.shape()) {
    throw ShapeError("activation: grad_out shape " + shape_to_string(grad_out.shape()) +
                     " does not match forward output");
  }
  Tensor<T> grad_in(grad_out.shape());
  const auto dy = channel_row(grad_out.ptr(), 0, grad_out.size());
  const auto y = channel_row(cache_.ptr(), 0, cache_.size());
  auto dx = channel_row(grad_in.ptr(), 0, grad_in.size());
  switch (kind_) {
    case ActivationKind::sigmoid:
      dx = dy * y * (T(1) - y);
      break;
    case ActivationKind::relu:
      // the output is positive exactly where the input was
      dx = (y > T(0)).select(dy, T(0));
      break;
    case ActivationKind::tanh:
      dx = dy * (T(1) - y.square());
      break;
  }
  return grad_in;
}

// -------------------------------------------------------------------- softmax

template <typename T>
void softmax(std::span<const T> logits, std::span<T> probs) {
  if (logits.size() != probs.size() || logits.empty()) {
    throw ShapeError("softmax: logits length " + std::to_string(logits.size()) +
                     " != probs length " + std::to_string(probs.size()));
  }
  const T peak = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - peak);
    total += probs[i];
  }
  for (T& p : probs) p /= total;
}

template <typename T>
T softmax_xent(std::span<const T> logits, std::size_t target, std::span<T> probs) {
  if (target >= logits.size()) {
    throw std::out_of_range("softmax_xent: target " + std::to_string(target) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  }
  softmax(logits, probs);
  // log-sum-exp form keeps the loss exact when probs[target] underflows
  const T peak = *std::max_element(logits.begin(), logits.end());
  T total = 0;
  for (T v : logits) total += std::exp(v - peak);
  return std::log(total) - (logits[target] - peak);
}

template <typename T>
SoftmaxXent<T> softmax_xent(std::span<const T> logits, std::size_t target) {
  SoftmaxXent<T> result{std::vector<T>(logits.size()), T(0)};
  result.loss = softmax_xent(logits, target, std::span<T>(result.probs));
  return result;
}

template <typename T>
void softmax_xent_backward(std::span<const T> probs, std::size_t target,
                           std::span<T> grad_logits) {
  if (target >= probs.size()) {
    throw std::out_of_range("softmax_xent: target " + std::to_string(target) +
                            " outside [0, " + std::to_string(probs.size()) + ")");
  }
  for (std::size_t i = 0; i < probs.size(); ++i) grad_logits[i] = probs[i];
  grad_logits[target] -= T(1);
}

template <typename T>
void sgd_step(std::span<LayerParams<T>* const> params, T lr) {
  for (LayerParams<T>* p : params) {
    for (std::size_t i = 0; i < p->weights.size(); ++i) p->weights[i] -= lr * p->grad_weights[i];
    for (std::size_t i = 0; i < p->bias.size(); ++i) p->bias[i] -= lr * p->grad_bias[i];
  }
}

#define PLATEREC_INSTANTIATE(T)                                                              \
  template struct LayerParams<T>;                                                            \
  template class Conv2d<T>;                                                                  \
  template class MaxPool2<T>;                                                                \
  template class BatchNorm<T>;                                                               \
  template class Dense<T>;                                                                   \
  template class Activation<T>;                                                              \
  template void softmax<T>(std::span<const T>, std::span<T>);                                \
  template T softmax_xent<T>(std::span<const T>, std::size_t, std::span<T>);                 \
  template SoftmaxXent<T> softmax_xent<T>(std::span<const T>, std::size_t);                  \
  template void softmax_xent_backward<T>(std::span<const T>, std::size_t, std::span<T>);     \
  template void sgd_step<T>(std::span<LayerParams<T>* const>, T);

PLATEREC_INSTANTIATE(float)
PLATEREC_INSTANTIATE(double)

#undef PLATEREC_INSTANTIATE

}  // namespace platerec
