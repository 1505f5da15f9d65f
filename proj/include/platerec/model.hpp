#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "platerec/augment.hpp"
#include "platerec/cnn.hpp"
#include "platerec/metrics.hpp"
#include "platerec/render.hpp"
#include "platerec/rnn.hpp"

namespace platerec {

/// cnn_only reads the CNN output directly as `steps` blocks of `classes`
/// logits; cnn_rnn feeds it through the sequencer.
enum class Variant { cnn_only, cnn_rnn };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);

struct ModelConfig {
  CnnConfig cnn;
  RnnDims rnn;
  Variant variant = Variant::cnn_rnn;

  /// Desk-scale CNN wired to the default 36-unit sequencer.
  static ModelConfig defaults(Variant variant);
  /// Throws std::invalid_argument when the pieces do not fit together.
  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LossResult {
  Tensor<T> probs;  // N×steps×classes
  T loss;           // mean over the batch of the per-sample summed cross-entropy
};

template <typename T>
struct Prediction {
  std::string raw;     // padding stripped
  std::string padded;  // full decoded sequence
  bool valid = false;  // raw satisfies the plate grammar
  Tensor<T> probs;     // steps×classes
};

template <typename T>
class Recognizer {
 public:
  Recognizer(const ModelConfig& cfg, std::uint64_t seed);

  /// Teacher-forced loss for a batch. `targets` holds N·steps class indices.
  LossResult<T> forward_loss(const Tensor<T>& images, std::span<const int> targets);
  /// Gradients of the last forward_loss, accumulated into every parameter.
  void backward();

  /// Greedy decoding. Requires infer mode.
  std::vector<Prediction<T>> predict(const Tensor<T>& images);
  Prediction<T> predict(const PlateImage& image);

  void set_mode(Mode mode);
  Mode mode() const noexcept { return cnn_.mode(); }
  void zero_grads();
  std::vector<LayerParams<T>*> params();
  /// Every persistent tensor by name (parameters and batchnorm statistics).
  NamedTensors<T> state();

  const ModelConfig& config() const noexcept { return cfg_; }
  CnnNet<T>& cnn() noexcept { return cnn_; }
  Sequencer<T>& sequencer() noexcept { return rnn_; }

 private:
  Tensor<T> sequence_probs(const Tensor<T>& images, UnrollMode mode, std::span<const int> targets,
                           std::vector<int>* predicted);

  ModelConfig cfg_;
  CnnNet<T> cnn_;
  Sequencer<T> rnn_;
  Tensor<T> logits_;  // cnn_only cache
  Tensor<T> probs_;
  std::vector<int> targets_;
};

/// Stacks images into an N×1×H×W batch in the order of `indices` (all images
/// when empty).
template <typename T>
Tensor<T> make_batch(std::span<const PlateImage> images, std::span<const std::size_t> indices = {});

/// Flattened padded-label indices in the order of `indices` (all when empty).
std::vector<int> make_targets(std::span<const PlateImage> images,
                              std::span<const std::size_t> indices = {});

/// base_lr / (10·epoch), epochs counted from 1.
double lr_at(int epoch, double base_lr = 0.1);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 8;
  double base_lr = 0.1;
  std::uint64_t seed = 1;
  bool augment = false;
  AugmentConfig augment_cfg;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_perfect_pct = 0;
  double val_avg_edit = 0;
  double val_avg_ratio = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Plain SGD with lr_at(epoch). Each epoch reshuffles under the seed;
/// augmentation draws come from (seed, epoch, sample index). Batches of one
/// sample are skipped since batchnorm needs two. When a validation set is
/// given, the parameters of the best epoch (highest percentage perfect,
/// then highest ratio, later epochs winning ties) are restored at the end.
/// Leaves the model in infer mode.
template <typename T>
TrainResult train(Recognizer<T>& model, std::span<const PlateImage> train_set,
                  std::span<const PlateImage> val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Predicts every image (infer mode) and scores the stripped strings.
template <typename T>
EvalReport evaluate(Recognizer<T>& model, std::span<const PlateImage> images,
                    std::size_t batch_size = 64);

/// TSV: epoch, lr, train_loss, val_perfect_pct, val_avg_edit, val_avg_ratio.
/// lr is printed with 17 significant digits so it round-trips exactly.
void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_train_log(const std::filesystem::path& path);

// ------------------------------------------------------------- checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { f32, f64 };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = 0;
  Precision precision = Precision::f64;
  ModelConfig config;
};

/// Layout (little-endian): "SQPL", u32 version, u8 precision, u32 config length,
/// config text, u32 tensor count, then per tensor: u32 name length, name,
/// u8 dtype, u32 rank, u64 dims, raw payload; trailing CRC-32 of all prior bytes.
template <typename T>
void save_checkpoint(Recognizer<T>& model, const std::filesystem::path& path);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Restores a model bit-exactly. Rejects bad magic, version, checksum,
/// truncation, precision or (if given) variant mismatches.
template <typename T>
Recognizer<T> load_checkpoint(const std::filesystem::path& path,
                              std::optional<Variant> expected_variant = std::nullopt);

}  // namespace platerec
