#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "platerec/layers.hpp"

namespace platerec {

struct RnnDims {
  std::size_t hidden = 36;
  std::size_t input = 360;    // CNN output width, also the embedding width
  std::size_t classes = 36;
  std::size_t steps = 10;

  bool operator==(const RnnDims&) const = default;
};

/// Class fed as the "previous label" at the first step.
inline constexpr int kStartToken = 0;

/// Recurrence weights. input_to_hidden has no bias; b_r lives on
/// hidden_to_hidden.
template <typename T>
struct RnnParams {
  LayerParams<T> hidden_to_hidden;  // W_rh [H×H], b_r [H]
  LayerParams<T> input_to_hidden;   // W_rx [H×D]
  LayerParams<T> hidden_to_output;  // W_out [C×H], b_out [C]

  RnnParams() = default;
  explicit RnnParams(const RnnDims& dims);
  void init(std::mt19937_64& rng);
  std::vector<LayerParams<T>*> all() {
    return {&hidden_to_hidden, &input_to_hidden, &hidden_to_output};
  }
};

/// Learned label embeddings, one row of width `input` per class.
template <typename T>
struct EmbeddingTable {
  LayerParams<T> rows;  // [C×D], no bias

  EmbeddingTable() = default;
  explicit EmbeddingTable(const RnnDims& dims);
  void init(std::mt19937_64& rng);
  std::span<const T> embed(int index) const;
  void accumulate_grad(int index, std::span<const T> grad);
  std::size_t size() const { return rows.weights.dim(0); }
  std::size_t width() const { return rows.weights.dim(1); }
};

template <typename T>
struct StepOutput {
  std::vector<T> hidden;  // r(t)
  std::vector<T> logits;  // o(t)
};

/// r_t = sigmoid(W_rh·r_prev + W_rx·(feat + w_prev) + b_r);
/// logits_t = W_out·r_t + b_out.
template <typename T>
StepOutput<T> rnn_step(std::span<const T> r_prev, std::span<const T> feat,
                       std::span<const T> w_prev, const RnnParams<T>& params);

template <typename T>
struct StepGrads {
  std::vector<T> r_prev;  // d loss / d r(t−1)
  std::vector<T> input;   // d loss / d (feat + w_prev); equal for both addends
};

/// Backward through one step. `grad_hidden` is the gradient reaching r_t from
/// later steps (zeros at the last step). Accumulates into `params` grads.
template <typename T>
StepGrads<T> rnn_step_backward(std::span<const T> r_prev, std::span<const T> input,
                               std::span<const T> r_t, std::span<const T> grad_logits,
                               std::span<const T> grad_hidden, RnnParams<T>& params);

enum class UnrollMode { teacher, greedy };

/// Unrolled sequencer with its BPTT cache. Works on a batch of feature rows;
/// samples never interact.
template <typename T>
class Sequencer {
 public:
  Sequencer() = default;
  Sequencer(const RnnDims& dims, std::uint64_t seed);

  /// feats: N×D. Teacher mode needs `targets` of N·steps class indices
  /// (row-major); greedy mode feeds back each step's argmax (ties → lowest).
  /// Returns N×steps×classes softmax rows.
  Tensor<T> unroll(const Tensor<T>& feats, UnrollMode mode, std::span<const int> targets = {});

  /// Logits of the last unroll (N×steps×classes).
  const Tensor<T>& logits() const noexcept { return logits_; }
  /// Argmax class per step of the last unroll (N·steps).
  const std::vector<int>& predicted() const noexcept { return predicted_; }

  /// BPTT from per-step logit gradients (N×steps×classes). Accumulates into
  /// params and embeddings; returns d loss / d feats summed over steps (N×D).
  Tensor<T> backward(const Tensor<T>& grad_logits);

  const RnnDims& dims() const noexcept { return dims_; }
  RnnParams<T>& params() noexcept { return params_; }
  const RnnParams<T>& params() const noexcept { return params_; }
  EmbeddingTable<T>& embedding() noexcept { return embedding_; }
  const EmbeddingTable<T>& embedding() const noexcept { return embedding_; }
  std::vector<LayerParams<T>*> all_params();
  NamedTensors<T> state();

 private:
  RnnDims dims_;
  RnnParams<T> params_;
  EmbeddingTable<T> embedding_;
  // cache of the last unroll
  std::size_t batch_ = 0;
  Tensor<T> hidden_;   // N×(steps+1)×H, slot 0 is r0 = 0
  Tensor<T> inputs_;   // N×steps×D, feat + w_prev
  std::vector<int> fed_;  // N·steps previous-label indices
  Tensor<T> logits_;
  std::vector<int> predicted_;
};

}  // namespace platerec
