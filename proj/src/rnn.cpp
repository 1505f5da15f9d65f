#include "platerec/rnn.hpp"

#include <algorithm>

namespace platerec {

template <typename T>
RnnParams<T>::RnnParams(const RnnDims& dims)
    : hidden_to_hidden({dims.hidden, dims.hidden}, {dims.hidden}),
      input_to_hidden({dims.hidden, dims.input}, {}),
      hidden_to_output({dims.classes, dims.hidden}, {dims.classes}) {}

template <typename T>
void RnnParams<T>::init(std::mt19937_64& rng) {
  hidden_to_hidden.init_he(rng, hidden_to_hidden.weights.dim(1));
  input_to_hidden.init_he(rng, input_to_hidden.weights.dim(1));
  hidden_to_output.init_he(rng, hidden_to_output.weights.dim(1));
}

template <typename T>
EmbeddingTable<T>::EmbeddingTable(const RnnDims& dims) : rows({dims.classes, dims.input}, {}) {}

template <typename T>
void EmbeddingTable<T>::init(std::mt19937_64& rng) {
  // Unit variance: a 0.1 table was swamped by the CNN features and barely moved early training.
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (T& v : rows.weights.data()) v = static_cast<T>(gauss(rng));
}

template <typename T>
std::span<const T> EmbeddingTable<T>::embed(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= size()) {
    throw std::out_of_range("embedding index " + std::to_string(index) + " outside [0, " +
                            std::to_string(size()) + ")");
  }
  return {rows.weights.ptr() + static_cast<std::size_t>(index) * width(), width()};
}

template <typename T>
void EmbeddingTable<T>::accumulate_grad(int index, std::span<const T> grad) {
  if (index < 0 || static_cast<std::size_t>(index) >= size()) {
    throw std::out_of_range("embedding index " + std::to_string(index) + " outside [0, " +
                            std::to_string(size()) + ")");
  }
  T* row = rows.grad_weights.ptr() + static_cast<std::size_t>(index) * width();
  for (std::size_t i = 0; i < width(); ++i) row[i] += grad[i];
}

template <typename T>
StepOutput<T> rnn_step(std::span<const T> r_prev, std::span<const T> feat,
                       std::span<const T> w_prev, const RnnParams<T>& params) {
  const std::size_t h = params.hidden_to_hidden.weights.dim(0);
  const std::size_t d = params.input_to_hidden.weights.dim(1);
  const std::size_t c = params.hidden_to_output.weights.dim(0);
  if (r_prev.size() != h) throw ShapeError("rnn_step: r_prev length != hidden size");
  if (feat.size() != d) throw ShapeError("rnn_step: feature length != input size");
  if (w_prev.size() != d) throw ShapeError("rnn_step: embedding length != input size");

  const T* w_rh = params.hidden_to_hidden.weights.ptr();
  const T* b_r = params.hidden_to_hidden.bias.ptr();
  const T* w_rx = params.input_to_hidden.weights.ptr();
  const T* w_out = params.hidden_to_output.weights.ptr();
  const T* b_out = params.hidden_to_output.bias.ptr();

  StepOutput<T> out{std::vector<T>(h), std::vector<T>(c)};
  for (std::size_t i = 0; i < h; ++i) {
    T z = b_r[i];
    for (std::size_t j = 0; j < h; ++j) z += w_rh[i * h + j] * r_prev[j];
    for (std::size_t j = 0; j < d; ++j) z += w_rx[i * d + j] * (feat[j] + w_prev[j]);
    out.hidden[i] = sigmoid(z);
  }
  for (std::size_t k = 0; k < c; ++k) {
    T o = b_out[k];
    for (std::size_t i = 0; i < h; ++i) o += w_out[k * h + i] * out.hidden[i];
    out.logits[k] = o;
  }
  return out;
}

template <typename T>
StepGrads<T> rnn_step_backward(std::span<const T> r_prev, std::span<const T> input,
                               std::span<const T> r_t, std::span<const T> grad_logits,
                               std::span<const T> grad_hidden, RnnParams<T>& params) {
  const std::size_t h = params.hidden_to_hidden.weights.dim(0);
  const std::size_t d = params.input_to_hidden.weights.dim(1);
  const std::size_t c = params.hidden_to_output.weights.dim(0);
  if (grad_logits.size() != c || grad_hidden.size() != h || r_t.size() != h ||
      r_prev.size() != h || input.size() != d) {
    throw ShapeError("rnn_step_backward: cached vectors do not match parameter shapes");
  }
  const T* w_rh = params.hidden_to_hidden.weights.ptr();
  const T* w_rx = params.input_to_hidden.weights.ptr();
  const T* w_out = params.hidden_to_output.weights.ptr();
  T* g_rh = params.hidden_to_hidden.grad_weights.ptr();
  T* g_br = params.hidden_to_hidden.grad_bias.ptr();
  T* g_rx = params.input_to_hidden.grad_weights.ptr();
  T* g_out = params.hidden_to_output.grad_weights.ptr();
  T* g_bout = params.hidden_to_output.grad_bias.ptr();

  std::vector<T> dz(h);
  for (std::size_t i = 0; i < h; ++i) {
    T dr = grad_hidden[i];
    for (std::size_t k = 0; k < c; ++k) dr += grad_logits[k] * w_out[k * h + i];
    dz[i] = dr * r_t[i] * (T(1) - r_t[i]);
  }
  for (std::size_t k = 0; k < c; ++k) {
    g_bout[k] += grad_logits[k];
    for (std::size_t i = 0; i < h; ++i) g_out[k * h + i] += grad_logits[k] * r_t[i];
  }

  StepGrads<T> grads{std::vector<T>(h, T(0)), std::vector<T>(d, T(0))};
  for (std::size_t i = 0; i < h; ++i) {
    const T g = dz[i];
    g_br[i] += g;
    for (std::size_t j = 0; j < h; ++j) {
      g_rh[i * h + j] += g * r_prev[j];
      grads.r_prev[j] += g * w_rh[i * h + j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      g_rx[i * d + j] += g * input[j];
      grads.input[j] += g * w_rx[i * d + j];
    }
  }
  return grads;
}

template <typename T>
Sequencer<T>::Sequencer(const RnnDims& dims, std::uint64_t seed)
    : dims_(dims), params_(dims), embedding_(dims) {
  std::mt19937_64 rng(seed);
  params_.init(rng);
  embedding_.init(rng);
}

template <typename T>
Tensor<T> Sequencer<T>::unroll(const Tensor<T>& feats, UnrollMode mode,
                               std::span<const int> targets) {
  if (feats.rank() != 2 || feats.dim(1) != dims_.input) {
    throw ShapeError("sequencer: expected N×" + std::to_string(dims_.input) + " features, got " +
                     shape_to_string(feats.shape()));
  }
  const std::size_t n = feats.dim(0), k_steps = dims_.steps, h = dims_.hidden,
                    d = dims_.input, c = dims_.classes;
  if (mode == UnrollMode::teacher) {
    if (targets.size() != n * k_steps) {
      throw std::invalid_argument("sequencer: teacher mode needs " + std::to_string(n * k_steps) +
                                  " targets, got " + std::to_string(targets.size()));
    }
    for (int t : targets) {
      if (t < 0 || static_cast<std::size_t>(t) >= c) {
        throw std::out_of_range("sequencer: target class " + std::to_string(t) + " out of range");
      }
    }
  }

  batch_ = n;
  hidden_ = Tensor<T>({n, k_steps + 1, h});
  inputs_ = Tensor<T>({n, k_steps, d});
  logits_ = Tensor<T>({n, k_steps, c});
  fed_.assign(n * k_steps, kStartToken);
  predicted_.assign(n * k_steps, 0);
  Tensor<T> probs({n, k_steps, c});

  for (std::size_t s = 0; s < n; ++s) {
    std::span<const T> feat(feats.ptr() + s * d, d);
    int prev = kStartToken;
    for (std::size_t t = 0; t < k_steps; ++t) {
      fed_[s * k_steps + t] = prev;
      std::span<const T> w_prev = embedding_.embed(prev);
      T* x = inputs_.ptr() + (s * k_steps + t) * d;
      for (std::size_t j = 0; j < d; ++j) x[j] = feat[j] + w_prev[j];
      std::span<const T> r_prev(hidden_.ptr() + (s * (k_steps + 1) + t) * h, h);
      const StepOutput<T> step = rnn_step(r_prev, feat, w_prev, params_);
      std::copy(step.hidden.begin(), step.hidden.end(),
                hidden_.ptr() + (s * (k_steps + 1) + t + 1) * h);
      T* lg = logits_.ptr() + (s * k_steps + t) * c;
      std::copy(step.logits.begin(), step.logits.end(), lg);
      softmax<T>(std::span<const T>(lg, c), std::span<T>(probs.ptr() + (s * k_steps + t) * c, c));
      const int best = static_cast<int>(std::max_element(lg, lg + c) - lg);
      predicted_[s * k_steps + t] = best;
      prev = mode == UnrollMode::teacher ? targets[s * k_steps + t] : best;
    }
  }
  return probs;
}

template <typename T>
Tensor<T> Sequencer<T>::backward(const Tensor<T>& grad_logits) {
  if (hidden_.empty()) throw std::logic_error("sequencer: backward called before unroll");
  const std::size_t n = batch_, k_steps = dims_.steps, h = dims_.hidden, d = dims_.input,
                    c = dims_.classes;
  if (grad_logits.shape() != Shape{n, k_steps, c}) {
    throw ShapeError("sequencer: grad_logits shape " + shape_to_string(grad_logits.shape()) +
                     " does not match the cached unroll");
  }
  Tensor<T> grad_feats({n, d});
  std::vector<T> carry(h);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(carry.begin(), carry.end(), T(0));
    T* gf = grad_feats.ptr() + s * d;
    for (std::size_t t = k_steps; t-- > 0;) {
      std::span<const T> r_prev(hidden_.ptr() + (s * (k_steps + 1) + t) * h, h);
      std::span<const T> r_t(hidden_.ptr() + (s * (k_steps + 1) + t + 1) * h, h);
      std::span<const T> x(inputs_.ptr() + (s * k_steps + t) * d, d);
      std::span<const T> gl(grad_logits.ptr() + (s * k_steps + t) * c, c);
      StepGrads<T> g = rnn_step_backward<T>(r_prev, x, r_t, gl, carry, params_);
      for (std::size_t j = 0; j < d; ++j) gf[j] += g.input[j];
      embedding_.accumulate_grad(fed_[s * k_steps + t], g.input);
      carry = std::move(g.r_prev);
    }
  }
  return grad_feats;
}

template <typename T>
std::vector<LayerParams<T>*> Sequencer<T>::all_params() {
  auto out = params_.all();
  out.push_back(&embedding_.rows);
  return out;
}

template <typename T>
NamedTensors<T> Sequencer<T>::state() {
  return {{"rnn.W_rh", &params_.hidden_to_hidden.weights},
          {"rnn.b_r", &params_.hidden_to_hidden.bias},
          {"rnn.W_rx", &params_.input_to_hidden.weights},
          {"rnn.W_out", &params_.hidden_to_output.weights},
          {"rnn.b_out", &params_.hidden_to_output.bias},
          {"rnn.embedding", &embedding_.rows.weights}};
}

#define PLATEREC_INSTANTIATE(T)                                                               \
  template struct RnnParams<T>;                                                               \
  template struct EmbeddingTable<T>;                                                          \
  template class Sequencer<T>;                                                                \
  template StepOutput<T> rnn_step<T>(std::span<const T>, std::span<const T>,                  \
                                     std::span<const T>, const RnnParams<T>&);                \
  template StepGrads<T> rnn_step_backward<T>(std::span<const T>, std::span<const T>,          \
                                             std::span<const T>, std::span<const T>,          \
                                             std::span<const T>, RnnParams<T>&);

PLATEREC_INSTANTIATE(float)
PLATEREC_INSTANTIATE(double)

#undef PLATEREC_INSTANTIATE

}  // namespace platerec
