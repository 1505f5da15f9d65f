#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "platerec/dataset.hpp"
#include "platerec/gradcheck.hpp"
#include "platerec/model.hpp"

using namespace platerec;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(Variant variant) {
  ModelConfig cfg = ModelConfig::defaults(variant);
  cfg.cnn.input = {12, 24};
  cfg.cnn.stages = {{1, 4}, {1, 4}};
  cfg.cnn.head_widths = {16};
  return cfg;
}

std::vector<PlateImage> noise_images(std::size_t n, const Canvas& canvas, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PlateImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    PlateImage img;
    img.pixels = Tensor<double>({1, canvas.height, canvas.width});
    for (double& v : img.pixels.data()) v = u(rng);
    img.label = PlateLabel::from_raw(sample_plate(rng));
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ convnet

TEST_CASE("desk-scale plan ends in 360 outputs") {
  const auto plan = plan_cnn(CnnConfig::desk_scale());
  CHECK(plan.back().output == Shape{360});
  std::size_t convs = 0;
  for (const auto& layer : plan) convs += layer.kind == "conv2d";
  CHECK(convs == 8);
  // every conv is followed by batchnorm then relu
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan[i].kind != "conv2d") continue;
    CHECK(plan[i + 1].kind == "batchnorm");
    CHECK(plan[i + 2].kind == "relu");
  }
}

TEST_CASE("VGG-16 scale layout shape-checks by hand") {
  const CnnConfig cfg = CnnConfig::vgg16_scale();
  CHECK(cfg.input == Canvas{120, 240});
  const auto plan = plan_cnn(cfg);
  std::size_t convs = 0, dense = 0;
  for (const auto& layer : plan) {
    convs += layer.kind == "conv2d";
    dense += layer.kind == "dense";
  }
  CHECK(convs == 13);
  CHECK(dense == 3);
  // 120×240 halves five times: 60×120, 30×60, 15×30, 7×15 (floored), 3×7
  Shape last_pool;
  for (const auto& layer : plan)
    if (layer.kind == "maxpool2") last_pool = layer.output;
  CHECK(last_pool == Shape{512, 3, 7});
  CHECK(plan.back().output == Shape{360});
}

TEST_CASE("pooling that exhausts the input is rejected") {
  CnnConfig cfg;
  cfg.input = {8, 8};
  cfg.stages = {{1, 2}, {1, 2}, {1, 2}, {1, 2}};
  CHECK_THROWS_AS(plan_cnn(cfg), ShapeError);
  CHECK_THROWS_AS(CnnNet<double>(cfg, 1), ShapeError);
}

TEST_CASE("cnn forward contracts") {
  CnnNet<double> a(small_config(Variant::cnn_only).cnn, 3);
  CnnNet<double> b(small_config(Variant::cnn_only).cnn, 3);
  const auto imgs = noise_images(2, {12, 24}, 1);
  const Tensor<double> batch = make_batch<double>(imgs);
  CHECK(a.forward(batch) == b.forward(batch));
  CHECK(a.forward(batch).shape() == Shape{2, 360});

  a.set_mode(Mode::infer);
  const std::vector<std::size_t> twice{0, 0};
  const Tensor<double> dup = a.forward(make_batch<double>(imgs, twice));
  for (std::size_t j = 0; j < 360; ++j) CHECK(dup[j] == dup[360 + j]);
  CHECK(a.forward(make_batch<double>(imgs, twice)) == dup);

  a.set_mode(Mode::train);
  const std::vector<std::size_t> one{0};
  CHECK_THROWS_AS(a.forward(make_batch<double>(imgs, one)), ShapeError);
  CHECK_THROWS_AS(a.forward(Tensor<double>({2, 1, 10, 24})), ShapeError);
}

TEST_CASE("tiny cnn gradient check") {
  CnnConfig cfg;
  cfg.input = {12, 12};
  cfg.stages = {{1, 4}};
  cfg.head_widths = {};
  cfg.out_dim = 5;
  for (int seed = 0; seed < 3; ++seed) {
    CnnNet<double> net(cfg, static_cast<std::uint64_t>(seed));
    const Tensor<double> x = make_batch<double>(noise_images(2, {12, 12}, 50 + seed));
    Tensor<double> probe({2, 5});
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> g;
    for (double& v : probe.data()) v = g(rng);
    auto loss = [&](const Tensor<double>&) {
      const Tensor<double> y = net.forward(x);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
      return s;
    };
    for (auto* p : net.params()) p->zero_grads();
    net.forward(x);
    net.backward(probe);
    for (auto* p : net.params()) {
      const Tensor<double> gw = p->grad_weights;
      CHECK(max_relative_error(gw, finite_diff_grad<double>(loss, p->weights, 1e-5), 1e-5) < 1e-4);
    }
  }
}

// ---------------------------------------------------------------- sequencer

TEST_CASE("rnn step with zero weights") {
  const RnnDims dims{4, 6, 5, 3};
  RnnParams<double> p(dims);
  p.hidden_to_hidden.bias = Tensor<double>({4}, std::vector<double>{0, 1, -1, 2});
  p.hidden_to_output.bias = Tensor<double>({5}, std::vector<double>{1, 2, 3, 4, 5});
  const std::vector<double> r(4, 0.7), f(6, 3.0), w(6, -2.0);
  const auto out = rnn_step<double>(r, f, w, p);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.hidden[i] == sigmoid(p.hidden_to_hidden.bias[i]));
  for (std::size_t i = 0; i < 5; ++i) CHECK(out.logits[i] == p.hidden_to_output.bias[i]);
}

TEST_CASE("sequencer contracts") {
  const RnnDims dims{6, 8, 36, 10};
  Sequencer<double> seq(dims, 4);
  Tensor<double> feats({3, 8});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (double& v : feats.data()) v = g(rng);

  const Tensor<double> probs = seq.unroll(feats, UnrollMode::greedy);
  CHECK(probs.shape() == Shape{3, 10, 36});
  for (std::size_t row = 0; row < 30; ++row) {
    double s = 0;
    for (std::size_t c = 0; c < 36; ++c) s += probs[row * 36 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  const std::vector<int> greedy = seq.predicted();

  // teacher forcing on the greedy path reproduces the greedy distributions
  const Tensor<double> teacher = seq.unroll(feats, UnrollMode::teacher, greedy);
  CHECK(teacher == probs);

  for (const auto& [name, t] : seq.state()) {
    (void)name;
    for (std::size_t i = 0; i < t->size(); ++i) CHECK(std::isfinite((*t)[i]));
  }
  CHECK_THROWS(seq.unroll(feats, UnrollMode::teacher));
  CHECK_THROWS(seq.embedding().embed(36));

  Sequencer<double> fresh(dims, 4);
  CHECK_THROWS(fresh.backward(Tensor<double>({3, 10, 36})));
  CHECK(fresh.embedding().rows.weights == Sequencer<double>(dims, 4).embedding().rows.weights);
}

TEST_CASE("hidden state stays inside the unit interval") {
  const RnnDims dims{6, 8, 36, 10};
  Sequencer<double> seq(dims, 9);
  Tensor<double> feats({2, 8}, 50.0);
  feats[3] = -80.0;
  seq.unroll(feats, UnrollMode::greedy);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto out = rnn_step<double>(std::vector<double>(6, 0.5), feats.data().subspan(0, 8),
                                      seq.embedding().embed(0), seq.params());
    CHECK((out.hidden[i] >= 0.0 && out.hidden[i] <= 1.0));
  }
}

TEST_CASE("teacher-mode gradients reach only the fed embedding rows") {
  const RnnDims dims{5, 12, 36, 10};
  Sequencer<double> seq(dims, 1);
  Tensor<double> feats({1, 12}, 0.2);
  std::vector<int> targets{0, 0, 0, 12, 13, 1, 2, 0, 9, 35};
  seq.unroll(feats, UnrollMode::teacher, targets);
  for (auto* p : seq.all_params()) p->zero_grads();
  seq.backward(Tensor<double>({1, 10, 36}, 0.01));
  std::set<int> fed{kStartToken};
  for (std::size_t t = 0; t + 1 < targets.size(); ++t) fed.insert(targets[t]);
  const auto& grad = seq.embedding().rows.grad_weights;
  for (int row = 0; row < 36; ++row) {
    double mag = 0;
    for (std::size_t j = 0; j < 12; ++j) mag += std::abs(grad[static_cast<std::size_t>(row) * 12 + j]);
    if (fed.count(row)) {
      CHECK(mag > 0.0);
    } else {
      CHECK(mag == 0.0);
    }
  }

  for (auto* p : seq.all_params()) p->zero_grads();
  const Tensor<double> gf = seq.backward(Tensor<double>({1, 10, 36}, 0.0));
  for (double v : gf.data()) CHECK(v == 0.0);
  for (auto* p : seq.all_params())
    for (double v : p->grad_weights.data()) CHECK(v == 0.0);
}

TEST_CASE("bptt on a down-sized clone") {
  // hidden 5, input 12, six classes, three steps
  const RnnDims dims{5, 12, 6, 3};
  for (int seed = 0; seed < 20; ++seed) {
    Sequencer<double> seq(dims, static_cast<std::uint64_t>(seed));
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> g;
    Tensor<double> feats({2, 12});
    for (double& v : feats.data()) v = g(rng);
    std::vector<int> targets(6);
    std::uniform_int_distribution<int> cls(0, 5);
    for (int& t : targets) t = cls(rng);

    auto loss = [&](const Tensor<double>&) {
      const Tensor<double> p = seq.unroll(feats, UnrollMode::teacher, targets);
      double s = 0;
      for (std::size_t i = 0; i < 6; ++i) s -= std::log(p[i * 6 + static_cast<std::size_t>(targets[i])]);
      return s;
    };
    for (auto* p : seq.all_params()) p->zero_grads();
    Tensor<double> grad = seq.unroll(feats, UnrollMode::teacher, targets);
    for (std::size_t i = 0; i < 6; ++i) grad[i * 6 + static_cast<std::size_t>(targets[i])] -= 1.0;
    const Tensor<double> gf = seq.backward(grad);
    CHECK(max_relative_error(gf, finite_diff_grad<double>(loss, feats, 1e-5), 1e-5) < 1e-4);
    for (auto* p : seq.all_params()) {
      const Tensor<double> gw = p->grad_weights;
      CHECK(max_relative_error(gw, finite_diff_grad<double>(loss, p->weights, 1e-5), 1e-5) < 1e-4);
    }
  }
}

// -------------------------------------------------------------------- model

TEST_CASE("model config validation and text form") {
  ModelConfig cfg = ModelConfig::defaults(Variant::cnn_rnn);
  CHECK_NOTHROW(cfg.validate());
  CHECK(ModelConfig::from_text(cfg.to_text()) == cfg);
  cfg.cnn.out_dim = 100;
  CHECK_THROWS(cfg.validate());
  CHECK(parse_variant("cnn_only") == Variant::cnn_only);
  CHECK_THROWS(parse_variant("rnn"));
}

TEST_CASE("untrained loss is near ten uniform cross-entropies") {
  const auto imgs = noise_images(4, {60, 120}, 3);
  const auto targets = make_targets(imgs);
  Recognizer<double> rnn(ModelConfig::defaults(Variant::cnn_rnn), 11);
  const double loss = rnn.forward_loss(make_batch<double>(imgs), targets).loss;
  CHECK(loss == doctest::Approx(10 * std::log(36.0)).epsilon(0.15));

  // He init on the linear 360-unit output gives cnn_only logits with std near 1.7, so its
  // softmax is not near uniform; the loss can only sit above the uniform value.
  Recognizer<double> plain(ModelConfig::defaults(Variant::cnn_only), 11);
  const double plain_loss = plain.forward_loss(make_batch<double>(imgs), targets).loss;
  CHECK(std::isfinite(plain_loss));
  CHECK(plain_loss > 10 * std::log(36.0));
}

TEST_CASE("loss rejects mismatched targets") {
  Recognizer<double> model(small_config(Variant::cnn_rnn), 1);
  const auto imgs = noise_images(2, {12, 24}, 3);
  std::vector<int> targets(15, 0);
  CHECK_THROWS(model.forward_loss(make_batch<double>(imgs), targets));
}

TEST_CASE("duplicating a sample leaves the mean loss unchanged in infer mode") {
  Recognizer<double> model(small_config(Variant::cnn_rnn), 5);
  model.set_mode(Mode::infer);
  const auto imgs = noise_images(1, {12, 24}, 8);
  const std::vector<std::size_t> one{0}, two{0, 0};
  const double a = model.forward_loss(make_batch<double>(imgs, one), make_targets(imgs, one)).loss;
  const double b = model.forward_loss(make_batch<double>(imgs, two), make_targets(imgs, two)).loss;
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_at(1) == 0.01);
  CHECK(lr_at(2) == 0.005);
  for (int e = 1; e < 100; ++e) CHECK(lr_at(e + 1) < lr_at(e));
  CHECK_THROWS(lr_at(0));
}

TEST_CASE("prediction strips padding and flags validity") {
  Recognizer<double> model(small_config(Variant::cnn_only), 2);
  model.set_mode(Mode::infer);
  const auto imgs = noise_images(3, {12, 24}, 4);
  const auto preds = model.predict(make_batch<double>(imgs));
  REQUIRE(preds.size() == 3);
  for (const auto& p : preds) {
    CHECK(p.padded.size() == kSeqLen);
    CHECK(p.raw == strip_padding(p.padded));
    CHECK(p.valid == validate_plate(p.raw));
    CHECK(p.probs.shape() == Shape{kSeqLen, kNumClasses});
  }
  CHECK(model.predict(imgs[0]).padded == preds[0].padded);
  model.set_mode(Mode::train);
  CHECK_THROWS(model.predict(make_batch<double>(imgs)));
}

TEST_CASE("all-zero prediction is an empty invalid plate") {
  Recognizer<double> model(small_config(Variant::cnn_only), 2);
  model.set_mode(Mode::infer);
  // a huge bias on class '0' in every block forces the padding character
  auto params = model.params();
  auto& head = *params.back();
  head.weights.fill(0.0);
  head.bias.fill(0.0);
  for (std::size_t k = 0; k < kSeqLen; ++k) head.bias[k * kNumClasses] = 10.0;
  const auto p = model.predict(noise_images(1, {12, 24}, 1)[0]);
  CHECK(p.padded == "0000000000");
  CHECK(p.raw.empty());
  CHECK_FALSE(p.valid);
}

TEST_CASE("training is deterministic and the loss falls") {
  const auto imgs = noise_images(8, {12, 24}, 21);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 4;
  tc.base_lr = 1.0;
  auto run = [&]() {
    Recognizer<double> model(small_config(Variant::cnn_rnn), 3);
    return train<double>(model, imgs, std::span<const PlateImage>(imgs).subspan(0, 2), tc).log;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].train_loss == b[i].train_loss);
    CHECK(a[i].lr == lr_at(static_cast<int>(i) + 1, 1.0));
  }
  CHECK(a[4].train_loss < a[0].train_loss);
}

TEST_CASE("augmentation never changes the targets") {
  const auto imgs = noise_images(4, {12, 24}, 2);
  const auto before = make_targets(imgs);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  tc.augment = true;
  Recognizer<double> model(small_config(Variant::cnn_only), 1);
  train<double>(model, imgs, {}, tc);
  CHECK(make_targets(imgs) == before);
  CHECK(model.mode() == Mode::infer);
}

TEST_CASE("checkpoint round trip and rejection") {
  const fs::path dir = fs::temp_directory_path() / "platerec_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto imgs = noise_images(6, {12, 24}, 5);

  Recognizer<double> model(small_config(Variant::cnn_rnn), 13);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  train<double>(model, imgs, {}, tc);
  save_checkpoint(model, dir / "m.ckpt");

  Recognizer<double> back = load_checkpoint<double>(dir / "m.ckpt");
  CHECK(back.config() == model.config());
  const auto s1 = model.state(), s2 = back.state();
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(*s1[i].second == *s2[i].second);
  const auto p1 = model.predict(make_batch<double>(imgs));
  const auto p2 = back.predict(make_batch<double>(imgs));
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].probs == p2[i].probs);

  CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt", Variant::cnn_only), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "m.ckpt"), CheckpointError);
  CHECK(read_checkpoint_info(dir / "m.ckpt").precision == Precision::f64);

  std::string bytes;
  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  std::string flipped = bytes;
  flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x10);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(write("flip.ckpt", flipped)),
                       doctest::Contains("checksum"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint<double>(write("short.ckpt", bytes.substr(0, bytes.size() - 9))),
                  CheckpointError);
  std::string version = bytes;
  version[4] = 9;
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(write("ver.ckpt", version)),
                       doctest::Contains("version"), CheckpointError);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(write("magic.ckpt", "XXXX" + bytes.substr(4))),
                       doctest::Contains("magic"), CheckpointError);
  CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir / "absent.ckpt"), doctest::Contains("absent.ckpt"),
                       CheckpointError);
}

TEST_CASE("training log round trip keeps lr exact") {
  const fs::path path = fs::temp_directory_path() / "platerec_test_log.tsv";
  std::vector<EpochLog> log;
  for (int e = 1; e <= 30; ++e) log.push_back({e, lr_at(e), 30.0 / e, 1.5 * e, 0.1, 0.5});
  write_train_log(path, log);
  const auto back = read_train_log(path);
  REQUIRE(back.size() == 30);
  for (int e = 1; e <= 30; ++e) CHECK(back[static_cast<std::size_t>(e - 1)].lr == 0.1 / (10.0 * e));
}
