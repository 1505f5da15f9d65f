#include "platerec/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <set>

#include "platerec/config.hpp"
#include "platerec/dataset.hpp"
#include "platerec/model.hpp"

namespace platerec {

namespace fs = std::filesystem;

namespace {

#ifdef PLATEREC_DEFAULT_FLOAT32
constexpr const char* kDefaultPrecision = "f32";
#else
constexpr const char* kDefaultPrecision = "f64";
#endif

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Settings for `train`: config file first, command-line flags on top.
struct RunConfig {
  fs::path data;
  fs::path out;
  fs::path log;
  fs::path augment_config;
  Variant variant = Variant::cnn_rnn;
  std::string precision = kDefaultPrecision;
  TrainConfig train;
  bool quiet = false;

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k = {"data",     "out",        "log",        "variant",
                                            "augment",  "augment_config", "epochs", "batch_size",
                                            "base_lr",  "seed",       "precision",  "quiet"};
    return k;
  }

  static RunConfig from(const KeyValues& kv) {
    kv.require_known(keys());
    RunConfig cfg;
    cfg.data = kv.get_string("data", "");
    cfg.out = kv.get_string("out", "");
    cfg.log = kv.get_string("log", "");
    cfg.augment_config = kv.get_string("augment_config", "");
    cfg.variant = parse_variant(kv.get_string("variant", "cnn_rnn"));
    cfg.precision = kv.get_string("precision", kDefaultPrecision);
    if (cfg.precision != "f32" && cfg.precision != "f64") {
      throw ConfigError("precision must be f32 or f64, got '" + cfg.precision + "'");
    }
    cfg.train.epochs = static_cast<int>(kv.get_int("epochs", cfg.train.epochs));
    cfg.train.batch_size = static_cast<std::size_t>(
        kv.get_int("batch_size", static_cast<long long>(cfg.train.batch_size)));
    cfg.train.base_lr = kv.get_double("base_lr", cfg.train.base_lr);
    cfg.train.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    cfg.train.augment = kv.get_bool("augment", false);
    cfg.quiet = kv.get_bool("quiet", false);
    if (cfg.data.empty()) throw ConfigError("train: missing data directory (--data)");
    if (cfg.out.empty()) throw ConfigError("train: missing checkpoint path (--out)");
    if (cfg.train.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (cfg.train.batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    cfg.data = fs::absolute(cfg.data);
    cfg.out = fs::absolute(cfg.out);
    cfg.log = cfg.log.empty() ? fs::path(cfg.out.string() + ".log.tsv") : fs::absolute(cfg.log);
    if (!cfg.augment_config.empty()) cfg.augment_config = fs::absolute(cfg.augment_config);
    return cfg;
  }
};

template <typename T>
int do_train(const RunConfig& cfg, std::ostream& out) {
  TrainConfig tc = cfg.train;
  if (!cfg.augment_config.empty()) tc.augment_cfg = AugmentConfig::load(cfg.augment_config);
  const Dataset data = load_dataset(cfg.data);
  const std::vector<PlateImage> train_set = data.subset(Split::train);
  const std::vector<PlateImage> val_set = data.subset(Split::val);
  if (train_set.empty()) throw DatasetError(cfg.data.string() + ": no training images");

  ModelConfig mc = ModelConfig::defaults(cfg.variant);
  mc.cnn.input = {train_set.front().pixels.dim(1), train_set.front().pixels.dim(2)};
  Recognizer<T> model(mc, child_seed(tc.seed, 0));
  const TrainResult result = train<T>(model, train_set, val_set, tc, [&](const EpochLog& row) {
    if (cfg.quiet) return;
    out << "epoch " << row.epoch << "  lr " << row.lr << "  loss " << std::fixed
        << std::setprecision(4) << row.train_loss << "  val_perfect " << std::setprecision(2)
        << row.val_perfect_pct << "%  val_edit " << std::setprecision(3) << row.val_avg_edit
        << "  val_ratio " << row.val_avg_ratio << std::defaultfloat << '\n'
        << std::flush;
  });
  save_checkpoint(model, cfg.out);
  write_train_log(cfg.log, result.log);
  out << "checkpoint " << cfg.out.string() << " (best epoch " << result.best_epoch << ")\n";
  out << "log " << cfg.log.string() << '\n';
  return kExitOk;
}

template <typename T>
int do_eval(const fs::path& data_dir, const fs::path& ckpt, const fs::path& out_dir,
            const std::string& split, std::ostream& out) {
  Recognizer<T> model = load_checkpoint<T>(ckpt);
  const Dataset data = load_dataset(data_dir);
  std::vector<PlateImage> images;
  if (split == "all") {
    images = data.images;
  } else {
    images = data.subset(split == "train" ? Split::train : Split::val);
  }
  if (images.empty()) throw DatasetError(data_dir.string() + ": split '" + split + "' is empty");
  const Canvas canvas = model.config().cnn.input;
  if (images.front().pixels.dim(1) != canvas.height || images.front().pixels.dim(2) != canvas.width) {
    throw DatasetError("dataset images are " + std::to_string(images.front().pixels.dim(1)) + "x" +
                       std::to_string(images.front().pixels.dim(2)) + " but the checkpoint expects " +
                       std::to_string(canvas.height) + "x" + std::to_string(canvas.width));
  }
  const EvalReport report = evaluate(model, images);
  emit_report(report, out_dir);
  out << std::fixed << std::setprecision(2) << "percentage_perfect " << report.percentage_perfect
      << "%\n"
      << std::setprecision(4) << "avg_edit_distance " << report.avg_edit_distance << '\n'
      << "avg_ratio " << report.avg_ratio << '\n';
  if (report.char_accuracy) {
    out << std::setprecision(2) << "char_accuracy " << *report.char_accuracy << "%\n";
  }
  out << "excluded " << report.excluded_count << " of " << report.samples << '\n';
  return kExitOk;
}

template <typename T>
int do_predict(const fs::path& ckpt, const fs::path& image_path, bool show_dist,
               std::ostream& out) {
  Recognizer<T> model = load_checkpoint<T>(ckpt);
  PlateImage image;
  image.pixels = read_pgm(image_path);
  const Canvas canvas = model.config().cnn.input;
  if (image.pixels.dim(1) != canvas.height || image.pixels.dim(2) != canvas.width) {
    throw DatasetError(image_path.string() + " is " + std::to_string(image.pixels.dim(1)) + "x" +
                       std::to_string(image.pixels.dim(2)) + " (HxW); resize it to " +
                       std::to_string(canvas.height) + "x" + std::to_string(canvas.width) +
                       " to match the checkpoint");
  }
  const Prediction<T> p = model.predict(image);
  out << p.raw << '\t' << (p.valid ? "valid" : "invalid") << '\n';
  if (show_dist) {
    out << std::fixed << std::setprecision(9);
    for (std::size_t k = 0; k < kSeqLen; ++k) {
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        out << (c ? "\t" : "") << static_cast<double>(p.probs[k * kNumClasses + c]);
      }
      out << '\n';
    }
    out << std::defaultfloat;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Segmentation-free license plate recognizer", "platerec"};
  app.require_subcommand(1);

  std::string gen_out;
  std::size_t gen_count = 2713, gen_val = 409, gen_height = 60, gen_width = 120;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("generate", "Render a synthetic plate corpus");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Total images")->capture_default_str();
  gen->add_option("--val", gen_val, "Validation images")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Master seed")->capture_default_str();
  gen->add_option("--height", gen_height, "Canvas height")->capture_default_str();
  gen->add_option("--width", gen_width, "Canvas width")->capture_default_str();

  std::string train_config;
  std::map<std::string, std::string> train_flags;
  auto* tr = app.add_subcommand("train", "Train a recognizer");
  tr->add_option("--config", train_config, "key=value config file");
  const std::vector<std::pair<std::string, std::string>> train_options = {
      {"--data", "data"},           {"--out", "out"},
      {"--log", "log"},             {"--variant", "variant"},
      {"--augment", "augment"},     {"--augment-config", "augment_config"},
      {"--epochs", "epochs"},       {"--batch-size", "batch_size"},
      {"--base-lr", "base_lr"},     {"--seed", "seed"},
      {"--precision", "precision"}};
  for (const auto& [flag, key] : train_options) {
    tr->add_option(flag, train_flags[key], "overrides config key '" + key + "'");
  }
  bool train_quiet = false;
  tr->add_flag("--quiet", train_quiet, "Suppress per-epoch progress");

  std::string eval_data, eval_ckpt, eval_out, eval_split = "val";
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--out", eval_out, "Report directory")->required();
  ev->add_option("--split", eval_split, "val, train or all")
      ->check(CLI::IsMember({"val", "train", "all"}))
      ->capture_default_str();

  std::string pred_ckpt, pred_image;
  bool show_dist = false;
  auto* pr = app.add_subcommand("predict", "Read one plate image");
  pr->add_option("--ckpt", pred_ckpt, "Checkpoint file")->required();
  pr->add_option("--image", pred_image, "P5 PGM image")->required();
  pr->add_flag("--show-dist", show_dist, "Print the 10×36 distribution as TSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "platerec: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const fs::path dir = fs::absolute(gen_out);
      const Manifest m = generate_dataset(gen_count, gen_val, dir, gen_seed, {gen_height, gen_width});
      out << "wrote " << m.rows.size() << " images to " << dir.string() << '\n'
          << "train " << m.count(Split::train) << '\n'
          << "val " << m.count(Split::val) << '\n';
      return kExitOk;
    }
    if (tr->parsed()) {
      KeyValues kv = train_config.empty() ? KeyValues{} : KeyValues::load(train_config);
      for (const auto& [flag, key] : train_options) {
        if (tr->get_option(flag)->count() > 0) kv.set(key, train_flags[key]);
      }
      if (train_quiet) kv.set("quiet", "on");
      const RunConfig cfg = RunConfig::from(kv);
      return cfg.precision == "f32" ? do_train<float>(cfg, out) : do_train<double>(cfg, out);
    }
    if (ev->parsed()) {
      const fs::path ckpt = fs::absolute(eval_ckpt);
      const CheckpointInfo info = read_checkpoint_info(ckpt);
      const fs::path data = fs::absolute(eval_data), dir = fs::absolute(eval_out);
      return info.precision == Precision::f32 ? do_eval<float>(data, ckpt, dir, eval_split, out)
                                              : do_eval<double>(data, ckpt, dir, eval_split, out);
    }
    if (pr->parsed()) {
      const fs::path ckpt = fs::absolute(pred_ckpt);
      const CheckpointInfo info = read_checkpoint_info(ckpt);
      const fs::path image = fs::absolute(pred_image);
      return info.precision == Precision::f32 ? do_predict<float>(ckpt, image, show_dist, out)
                                              : do_predict<double>(ckpt, image, show_dist, out);
    }
  } catch (const ConfigError& e) {
    err << "platerec: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "platerec: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "platerec: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "platerec: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace platerec
