#include "platerec/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "platerec/config.hpp"
#include "platerec/dataset.hpp"

namespace platerec {

std::string to_string(Variant variant) {
  return variant == Variant::cnn_only ? "cnn_only" : "cnn_rnn";
}

Variant parse_variant(const std::string& text) {
  if (text == "cnn_only") return Variant::cnn_only;
  if (text == "cnn_rnn") return Variant::cnn_rnn;
  throw std::invalid_argument("unknown variant '" + text + "' (expected cnn_only or cnn_rnn)");
}

ModelConfig ModelConfig::defaults(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.rnn.input = cfg.cnn.out_dim;
  return cfg;
}

void ModelConfig::validate() const {
  plan_cnn(cnn);
  if (rnn.steps == 0 || rnn.classes == 0 || rnn.hidden == 0) {
    throw std::invalid_argument("model: steps, classes and hidden must be positive");
  }
  if (variant == Variant::cnn_only && cnn.out_dim != rnn.steps * rnn.classes) {
    throw std::invalid_argument("model: cnn_only needs out_dim == steps·classes (" +
                                std::to_string(cnn.out_dim) + " != " +
                                std::to_string(rnn.steps * rnn.classes) + ")");
  }
  if (variant == Variant::cnn_rnn && cnn.out_dim != rnn.input) {
    throw std::invalid_argument("model: sequencer input " + std::to_string(rnn.input) +
                                " != CNN output " + std::to_string(cnn.out_dim));
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "variant=" << to_string(variant) << '\n'
      << "height=" << cnn.input.height << '\n'
      << "width=" << cnn.input.width << '\n'
      << "stages=";
  for (std::size_t i = 0; i < cnn.stages.size(); ++i) {
    out << (i ? "," : "") << cnn.stages[i].convs << 'x' << cnn.stages[i].channels;
  }
  out << "\nhead=";
  for (std::size_t i = 0; i < cnn.head_widths.size(); ++i) {
    out << (i ? "," : "") << cnn.head_widths[i];
  }
  out << "\nout_dim=" << cnn.out_dim << '\n'
      << "hidden=" << rnn.hidden << '\n'
      << "input=" << rnn.input << '\n'
      << "classes=" << rnn.classes << '\n'
      << "steps=" << rnn.steps << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text, "model config");
  kv.require_known({"variant", "height", "width", "stages", "head", "out_dim", "hidden", "input",
                    "classes", "steps"});
  const auto need = [&](const char* key) {
    if (!kv.contains(key)) throw ConfigError(std::string("model config: missing '") + key + "'");
    return static_cast<std::size_t>(kv.get_int(key, 0));
  };
  ModelConfig cfg;
  cfg.variant = parse_variant(kv.get_string("variant", ""));
  cfg.cnn.input = {need("height"), need("width")};
  cfg.cnn.stages.clear();
  std::istringstream stages(kv.get_string("stages", ""));
  std::string item;
  while (std::getline(stages, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("model config: bad stage '" + item + "'");
    cfg.cnn.stages.push_back({std::stoul(item.substr(0, x)), std::stoul(item.substr(x + 1))});
  }
  cfg.cnn.head_widths.clear();
  std::istringstream head(kv.get_string("head", ""));
  while (std::getline(head, item, ',')) cfg.cnn.head_widths.push_back(std::stoul(item));
  cfg.cnn.out_dim = need("out_dim");
  cfg.rnn = {need("hidden"), need("input"), need("classes"), need("steps")};
  return cfg;
}

// --------------------------------------------------------------- Recognizer

template <typename T>
Recognizer<T>::Recognizer(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)), cnn_(cfg.cnn, child_seed(seed, 1)) {
  if (cfg.variant == Variant::cnn_rnn) rnn_ = Sequencer<T>(cfg.rnn, child_seed(seed, 2));
}

template <typename T>
Tensor<T> Recognizer<T>::sequence_probs(const Tensor<T>& images, UnrollMode mode,
                                        std::span<const int> targets,
                                        std::vector<int>* predicted) {
  const Tensor<T> feats = cnn_.forward(images);
  require_finite(feats, "CNN output");
  const std::size_t n = feats.dim(0), k = cfg_.rnn.steps, c = cfg_.rnn.classes;
  if (cfg_.variant == Variant::cnn_rnn) {
    Tensor<T> probs = rnn_.unroll(feats, mode, targets);
    if (predicted) *predicted = rnn_.predicted();
    return probs;
  }
  logits_ = feats.reshaped({n, k, c});
  Tensor<T> probs({n, k, c});
  if (predicted) predicted->assign(n * k, 0);
  for (std::size_t row = 0; row < n * k; ++row) {
    const T* lg = logits_.ptr() + row * c;
    softmax<T>(std::span<const T>(lg, c), std::span<T>(probs.ptr() + row * c, c));
    if (predicted) (*predicted)[row] = static_cast<int>(std::max_element(lg, lg + c) - lg);
  }
  return probs;
}

template <typename T>
LossResult<T> Recognizer<T>::forward_loss(const Tensor<T>& images, std::span<const int> targets) {
  const std::size_t n = images.rank() == 4 ? images.dim(0) : 0;
  const std::size_t k = cfg_.rnn.steps, c = cfg_.rnn.classes;
  if (targets.size() != n * k) {
    throw std::invalid_argument("forward_loss: " + std::to_string(n) + " images need " +
                                std::to_string(n * k) + " targets, got " +
                                std::to_string(targets.size()));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw std::out_of_range("forward_loss: target class " + std::to_string(t) + " out of range");
    }
  }
  probs_ = sequence_probs(images, UnrollMode::teacher, targets, nullptr);
  targets_.assign(targets.begin(), targets.end());
  double total = 0;
  for (std::size_t row = 0; row < n * k; ++row) {
    const T p = probs_[row * c + static_cast<std::size_t>(targets_[row])];
    // recompute from logits when p underflows so the loss stays finite
    if (p > std::numeric_limits<T>::min()) {
      total -= std::log(static_cast<double>(p));
    } else {
      const T* lg = cfg_.variant == Variant::cnn_rnn ? rnn_.logits().ptr() : logits_.ptr();
      total += softmax_xent<T>(std::span<const T>(lg + row * c, c),
                               static_cast<std::size_t>(targets_[row]))
                   .loss;
    }
  }
  const T loss = static_cast<T>(total / static_cast<double>(n));
  if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
  return {probs_, loss};
}

template <typename T>
void Recognizer<T>::backward() {
  if (probs_.empty()) throw std::logic_error("recognizer: backward called before forward_loss");
  const std::size_t n = probs_.dim(0), k = cfg_.rnn.steps, c = cfg_.rnn.classes;
  Tensor<T> grad_logits(probs_.shape());
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t row = 0; row < n * k; ++row) {
    std::span<T> g(grad_logits.ptr() + row * c, c);
    softmax_xent_backward<T>(std::span<const T>(probs_.ptr() + row * c, c),
                             static_cast<std::size_t>(targets_[row]), g);
    for (T& v : g) v *= inv_n;
  }
  if (cfg_.variant == Variant::cnn_rnn) {
    const Tensor<T> grad_feats = rnn_.backward(grad_logits);
    cnn_.backward(grad_feats);
  } else {
    cnn_.backward(grad_logits.reshaped({n, k * c}));
  }
}

template <typename T>
std::vector<Prediction<T>> Recognizer<T>::predict(const Tensor<T>& images) {
  if (mode() != Mode::infer) throw std::logic_error("predict: model must be in infer mode");
  if (cfg_.rnn.steps != kSeqLen || cfg_.rnn.classes != kNumClasses) {
    throw std::logic_error("predict: decoding needs the plate alphabet shape (10×36)");
  }
  std::vector<int> predicted;
  const Tensor<T> probs = sequence_probs(images, UnrollMode::greedy, {}, &predicted);
  const std::size_t n = probs.dim(0), k = kSeqLen, c = kNumClasses;
  std::vector<Prediction<T>> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    LabelIndices ix{};
    std::copy_n(predicted.begin() + static_cast<std::ptrdiff_t>(s * k), k, ix.begin());
    out[s].padded = decode_indices(ix);
    out[s].raw = strip_padding(out[s].padded);
    out[s].valid = validate_plate(out[s].raw);
    out[s].probs = Tensor<T>({k, c}, std::vector<T>(probs.ptr() + s * k * c,
                                                     probs.ptr() + (s + 1) * k * c));
  }
  return out;
}

template <typename T>
Prediction<T> Recognizer<T>::predict(const PlateImage& image) {
  const std::span<const PlateImage> one(&image, 1);
  return predict(make_batch<T>(one)).front();
}

template <typename T>
void Recognizer<T>::set_mode(Mode mode) {
  cnn_.set_mode(mode);
}

template <typename T>
void Recognizer<T>::zero_grads() {
  for (LayerParams<T>* p : params()) p->zero_grads();
}

template <typename T>
std::vector<LayerParams<T>*> Recognizer<T>::params() {
  std::vector<LayerParams<T>*> out = cnn_.params();
  if (cfg_.variant == Variant::cnn_rnn) {
    for (LayerParams<T>* p : rnn_.all_params()) out.push_back(p);
  }
  return out;
}

template <typename T>
NamedTensors<T> Recognizer<T>::state() {
  NamedTensors<T> out = cnn_.state();
  if (cfg_.variant == Variant::cnn_rnn) {
    for (auto& entry : rnn_.state()) out.push_back(entry);
  }
  return out;
}

// ------------------------------------------------------------------ batching

template <typename T>
Tensor<T> make_batch(std::span<const PlateImage> images, std::span<const std::size_t> indices) {
  const std::size_t n = indices.empty() ? images.size() : indices.size();
  if (n == 0) throw std::invalid_argument("make_batch: no images");
  const Shape& first = images[indices.empty() ? 0 : indices[0]].pixels.shape();
  if (first.size() != 3 || first[0] != 1) {
    throw ShapeError("make_batch: expected 1×H×W images, got " + shape_to_string(first));
  }
  Tensor<T> batch({n, 1, first[1], first[2]});
  const std::size_t plane = first[1] * first[2];
  for (std::size_t i = 0; i < n; ++i) {
    const PlateImage& img = images[indices.empty() ? i : indices[i]];
    if (img.pixels.shape() != first) {
      throw ShapeError("make_batch: image " + std::to_string(i) + " has shape " +
                       shape_to_string(img.pixels.shape()) + ", expected " +
                       shape_to_string(first));
    }
    std::transform(img.pixels.ptr(), img.pixels.ptr() + plane, batch.ptr() + i * plane,
                   [](double v) { return static_cast<T>(v); });
  }
  return batch;
}

std::vector<int> make_targets(std::span<const PlateImage> images,
                              std::span<const std::size_t> indices) {
  const std::size_t n = indices.empty() ? images.size() : indices.size();
  std::vector<int> out;
  out.reserve(n * kSeqLen);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ix = images[indices.empty() ? i : indices[i]].label.indices;
    out.insert(out.end(), ix.begin(), ix.end());
  }
  return out;
}

// ------------------------------------------------------------------ training

double lr_at(int epoch, double base_lr) {
  if (epoch < 1) throw std::invalid_argument("lr_at: epoch must be >= 1, got " + std::to_string(epoch));
  return base_lr / (10.0 * static_cast<double>(epoch));
}

template <typename T>
EvalReport evaluate(Recognizer<T>& model, std::span<const PlateImage> images,
                    std::size_t batch_size) {
  if (images.empty()) throw std::invalid_argument("evaluate: empty image set");
  const Mode saved = model.mode();
  model.set_mode(Mode::infer);
  std::vector<std::string> predicted, targets;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    for (const auto& p : model.predict(make_batch<T>(images.subspan(start, end - start)))) {
      predicted.push_back(p.raw);
    }
  }
  for (const PlateImage& img : images) targets.push_back(img.label.raw);
  model.set_mode(saved);
  return evaluate_strings(predicted, targets);
}

template <typename T>
TrainResult train(Recognizer<T>& model, std::span<const PlateImage> train_set,
                  std::span<const PlateImage> val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (train_set.size() < 2) throw std::invalid_argument("train: need at least 2 training samples");

  TrainResult result;
  std::vector<std::vector<T>> best_state;
  double best_pct = -1, best_ratio = -1;
  const auto params = model.params();
  std::vector<std::size_t> order(train_set.size());
  std::vector<PlateImage> augmented;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.base_lr);
    const std::uint64_t epoch_seed = child_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    model.set_mode(Mode::train);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor<T> batch;
      if (cfg.augment) {
        augmented.clear();
        for (std::size_t i : idx) {
          std::mt19937_64 rng(child_seed(epoch_seed, i));
          augmented.push_back(augment(train_set[i], rng, cfg.augment_cfg));
        }
        batch = make_batch<T>(augmented);
      } else {
        batch = make_batch<T>(train_set, idx);
      }
      const std::vector<int> targets = make_targets(train_set, idx);
      model.zero_grads();
      const LossResult<T> res = model.forward_loss(batch, targets);
      model.backward();
      sgd_step<T>(params, static_cast<T>(lr));
      loss_sum += static_cast<double>(res.loss) * static_cast<double>(idx.size());
      seen += idx.size();
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (!val_set.empty()) {
      const EvalReport rep = evaluate(model, val_set);
      row.val_perfect_pct = rep.percentage_perfect;
      row.val_avg_edit = rep.avg_edit_distance;
      row.val_avg_ratio = rep.avg_ratio;
      if (rep.percentage_perfect > best_pct ||
          (rep.percentage_perfect == best_pct && rep.avg_ratio >= best_ratio)) {
        best_pct = rep.percentage_perfect;
        best_ratio = rep.avg_ratio;
        result.best_epoch = epoch;
        best_state.clear();
        for (auto& [name, tensor] : model.state()) {
          best_state.emplace_back(tensor->data().begin(), tensor->data().end());
        }
      }
    } else {
      result.best_epoch = epoch;
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }

  if (!best_state.empty()) {
    auto state = model.state();
    for (std::size_t i = 0; i < state.size(); ++i) {
      std::copy(best_state[i].begin(), best_state[i].end(), state[i].second->data().begin());
    }
  }
  model.set_mode(Mode::infer);
  return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out << "epoch\tlr\ttrain_loss\tval_perfect_pct\tval_avg_edit\tval_avg_ratio\n";
  for (const EpochLog& row : log) {
    out << row.epoch << '\t' << std::setprecision(17) << row.lr << '\t' << std::setprecision(9)
        << row.train_loss << '\t' << row.val_perfect_pct << '\t' << row.val_avg_edit << '\t'
        << row.val_avg_ratio << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<EpochLog> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training log " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochLog> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    EpochLog row;
    std::string lr;
    fields >> row.epoch >> lr >> row.train_loss >> row.val_perfect_pct >> row.val_avg_edit >>
        row.val_avg_ratio;
    if (!fields) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    row.lr = std::stod(lr);
    log.push_back(row);
  }
  return log;
}

#define PLATEREC_INSTANTIATE(T)                                                                \
  template class Recognizer<T>;                                                                \
  template Tensor<T> make_batch<T>(std::span<const PlateImage>, std::span<const std::size_t>); \
  template EvalReport evaluate<T>(Recognizer<T>&, std::span<const PlateImage>, std::size_t);   \
  template TrainResult train<T>(Recognizer<T>&, std::span<const PlateImage>,                   \
                                std::span<const PlateImage>, const TrainConfig&,               \
                                const std::function<void(const EpochLog&)>&);

PLATEREC_INSTANTIATE(float)
PLATEREC_INSTANTIATE(double)

#undef PLATEREC_INSTANTIATE

}  // namespace platerec
