#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "detective/checkpoint.hpp"
#include "detective/data.hpp"
#include "detective/eval.hpp"
#include "detective/selfcheck.hpp"
#include "detective/train.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace detective;

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kMissingFile = 3,
  kIncompatibleCheckpoint = 4,
  kBadData = 5,
  kDiverged = 6,
};

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  fs::path output;

  SceneConfig scene;
  std::size_t train_count = 2000;
  std::size_t val_count = 500;
  std::size_t test_count = 0;

  fs::path dataset;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double lr = 1e-4;
  std::size_t extra_preds = 0;
  std::size_t hidden_channels = 64;
  bool no_attention = false;
  bool no_positional = false;
  bool no_background = false;
  std::size_t max_train = 0;
  std::string train_split = "train";
  std::string split = "val";

  fs::path checkpoint;
  fs::path dense_checkpoint;
  std::string map_mode = "all-point";
  double iou_threshold = 0.5;
  std::size_t iters_cap = 16;
  std::optional<double> nms_threshold;
  std::size_t dense_steps = 9;

  fs::path image;

  std::size_t probes = 200;
  std::size_t sweep = 1000;
};

void log(const std::string& message) { std::cerr << "detective: " << message << '\n'; }

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw MissingFile(what + " not found: " + path.string());
}

void write_config_echo(const fs::path& dir, const std::string& command, json values) {
  fs::create_directories(dir);
  values["command"] = command;
  std::ofstream(dir / "config.json") << values.dump(2) << '\n';
}

ApMode ap_mode(const Options& o) {
  return o.map_mode == "11-point" ? ApMode::eleven_point : ApMode::all_point;
}

EvalOptions eval_options(const Options& o) {
  return EvalOptions{o.iou_threshold, ap_mode(o), o.iters_cap, o.jobs};
}

json scene_json(const SceneConfig& s) {
  return {{"image_size", s.image_size},   {"classes", s.classes},
          {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},       {"max_size", s.max_size},
          {"max_overlap", s.max_overlap}, {"max_coverage", s.max_coverage},
          {"noise", s.noise},             {"max_retries", s.max_retries},
          {"seed", s.seed}};
}

Dataset load_dataset(const fs::path& dir) {
  require_file(dir / "manifest.json", "dataset manifest");
  return read_dataset(dir);
}

LoadedCheckpoint load_model(const fs::path& path) {
  require_file(path, "checkpoint");
  return load_checkpoint(path);
}

void require_compatible(const ModelConfig& config, const std::vector<std::string>& classes,
                        const std::vector<AnnotatedImage>& scenes, const fs::path& checkpoint) {
  if (config.num_classes != classes.size()) {
    throw CheckpointError(checkpoint.string() + ": model has " +
                          std::to_string(config.num_classes) + " classes, dataset has " +
                          std::to_string(classes.size()));
  }
  const Shape expected{config.encoder.image_height, config.encoder.image_width,
                       config.encoder.in_channels};
  for (const AnnotatedImage& s : scenes) {
    if (s.image.shape() != expected) {
      throw CheckpointError(checkpoint.string() + ": model expects images " +
                            shape_string(expected) + ", dataset has " +
                            shape_string(s.image.shape()));
    }
  }
}

std::vector<std::string> class_names(const LoadedCheckpoint& ck) {
  if (ck.metadata.contains("classes")) return ck.metadata.at("classes").get<std::vector<std::string>>();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < ck.model.config().num_classes; ++c) {
    names.push_back("class" + std::to_string(c));
  }
  return names;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream os;
  os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// ---------------------------------------------------------------------------

int gen_data(Options o) {
  o.scene.seed = o.seed;
  o.scene.validate();
  const std::size_t total = o.train_count + o.val_count + o.test_count;
  Dataset data{o.scene.classes, generate_scenes(o.scene, total), {}};
  std::size_t next = 0;
  auto take = [&](const std::string& name, std::size_t count) {
    if (count == 0) return;
    auto& idx = data.splits[name];
    for (std::size_t i = 0; i < count; ++i) idx.push_back(next++);
  };
  take("train", o.train_count);
  take("val", o.val_count);
  take("test", o.test_count);
  write_dataset(o.output, data);
  write_config_echo(o.output, "gen-data",
                    {{"scene", scene_json(o.scene)},
                     {"train", o.train_count},
                     {"val", o.val_count},
                     {"test", o.test_count}});
  log("wrote " + std::to_string(total) + " scenes to " + o.output.string());
  return kOk;
}

int train(const Options& o) {
  const Dataset data = load_dataset(o.dataset);
  std::vector<AnnotatedImage> scenes = data.split(o.train_split);
  if (o.max_train > 0 && scenes.size() > o.max_train) scenes.resize(o.max_train);
  if (scenes.empty()) throw DataError("split '" + o.train_split + "' is empty");
  const std::vector<AnnotatedImage> val =
      data.splits.count(o.split) ? data.split(o.split) : std::vector<AnnotatedImage>{};

  ModelConfig mc;
  mc.encoder.image_height = scenes[0].image.dim(0);
  mc.encoder.image_width = scenes[0].image.dim(1);
  mc.hidden_channels = o.hidden_channels;
  mc.num_classes = data.classes.size();
  mc.attention = !o.no_attention;
  mc.positional = !o.no_positional;
  mc.background_class = !o.no_background;
  Detective model(mc, o.seed);

  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.loss.extra_predictions = o.extra_preds;
  tc.adam.lr = o.lr;
  tc.seed = o.seed;
  tc.jobs = o.jobs;

  write_config_echo(o.output, "train",
                    {{"dataset", o.dataset.string()},
                     {"train_split", o.train_split},
                     {"val_split", o.split},
                     {"train_images", scenes.size()},
                     {"val_images", val.size()},
                     {"model", mc},
                     {"epochs", tc.epochs},
                     {"batch_size", tc.batch_size},
                     {"extra_predictions", tc.loss.extra_predictions},
                     {"adam", {{"lr", tc.adam.lr},
                               {"beta1", tc.adam.beta1},
                               {"beta2", tc.adam.beta2},
                               {"epsilon", tc.adam.epsilon}}},
                     {"loss_weights", {{"cls", tc.loss.weights.cls}, {"loc", tc.loss.weights.loc}}},
                     {"match_weights", {{"cls", tc.loss.match.cls}, {"loc", tc.loss.match.loc}}},
                     {"val_eval", {{"iters_cap", o.iters_cap},
                                   {"iou_threshold", o.iou_threshold},
                                   {"map_mode", o.map_mode}}},
                     {"seed", o.seed},
                     {"jobs", o.jobs}});

  std::ofstream epochs_csv(o.output / "epochs.csv");
  epochs_csv << "epoch,mean_loss,mean_cls,mean_loc,foreground,background,ignored,val_map\n";
  std::ofstream loss_csv(o.output / "loss_log.csv");
  loss_csv << "step,epoch,loss\n";
  std::ofstream timing(o.output / "train.log");
  timing << timestamp() << " start: " << scenes.size() << " training images\n";

  Trainer trainer(model, tc);
  std::optional<double> best;
  std::size_t logged = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const EpochSummary s = trainer.run_epoch(scenes, epoch);
    const auto& losses = trainer.loss_trajectory();
    for (; logged < losses.size(); ++logged) {
      loss_csv << logged + 1 << ',' << epoch + 1 << ',' << json(losses[logged]).dump() << '\n';
    }
    std::optional<double> val_map;
    if (!val.empty()) val_map = evaluate_map(model, val, eval_options(o)).map.map;
    epochs_csv << epoch + 1 << ',' << json(s.mean_loss).dump() << ',' << json(s.mean_cls).dump()
               << ',' << json(s.mean_loc).dump() << ',' << s.foreground << ',' << s.background
               << ',' << s.ignored << ',' << (val_map ? json(*val_map).dump() : "") << '\n';
    epochs_csv.flush();
    loss_csv.flush();

    const json meta{{"classes", data.classes},
                    {"epoch", epoch + 1},
                    {"val_map", val_map ? json(*val_map) : json(nullptr)},
                    {"seed", o.seed},
                    {"extra_predictions", o.extra_preds}};
    save_checkpoint(o.output / "last.ckpt", model, meta);
    const double score = val_map.value_or(0.0);
    if (!best || score > *best || val.empty()) {
      best = score;
      save_checkpoint(o.output / "best.ckpt", model, meta);
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string line = "epoch " + std::to_string(epoch + 1) + "/" +
                             std::to_string(tc.epochs) + "  loss " + fixed(s.mean_loss) +
                             "  cls " + fixed(s.mean_cls) + "  loc " + fixed(s.mean_loc) +
                             "  val mAP " + format_optional(val_map) + "  " + fixed(elapsed, 1) +
                             "s";
    log(line);
    timing << timestamp() << ' ' << line << '\n';
    timing.flush();
  }
  log("checkpoints written to " + o.output.string());
  return kOk;
}

int eval(const Options& o) {
  LoadedCheckpoint ck = load_model(o.checkpoint);
  const Dataset data = load_dataset(o.dataset);
  const std::vector<AnnotatedImage> scenes = data.split(o.split);
  require_compatible(ck.model.config(), data.classes, scenes, o.checkpoint);
  const auto names = class_names(ck);
  const bool dense = o.nms_threshold.has_value() || !o.dense_checkpoint.empty();
  const double nms_threshold = o.nms_threshold.value_or(0.5);
  write_config_echo(o.output, "eval",
                    {{"checkpoint", o.checkpoint.string()},
                     {"dense_checkpoint", o.dense_checkpoint.string()},
                     {"dataset", o.dataset.string()},
                     {"split", o.split},
                     {"map_mode", o.map_mode},
                     {"iou_threshold", o.iou_threshold},
                     {"iters_cap", o.iters_cap},
                     {"dense", dense},
                     {"nms_threshold", dense ? json(nms_threshold) : json(nullptr)},
                     {"dense_steps", o.dense_steps},
                     {"jobs", o.jobs}});

  const EvalReport sparse = evaluate_map(ck.model, scenes, eval_options(o));
  write_report(o.output, "sparse", sparse, names);
  log("sparse mAP " + fixed(sparse.map.map) + " over " + std::to_string(scenes.size()) +
      " images, count r " + format_optional(sparse.count_correlation) + ", EoS rate " +
      fixed(sparse.eos_termination_rate));
  if (!dense) return kOk;

  std::optional<LoadedCheckpoint> other;
  if (!o.dense_checkpoint.empty()) {
    other = load_model(o.dense_checkpoint);
    require_compatible(other->model.config(), data.classes, scenes, o.dense_checkpoint);
  }
  const Detective& dense_model = other ? other->model : ck.model;
  const EvalReport d = evaluate_dense(dense_model, scenes, o.dense_steps, nms_threshold, eval_options(o));
  write_report(o.output, "dense", d, names);
  const json comparison{{"sparse_map", sparse.map.map},
                        {"dense_map", d.map.map},
                        {"dense_minus_sparse", d.map.map - sparse.map.map},
                        {"nms_threshold", nms_threshold},
                        {"dense_steps", o.dense_steps},
                        {"images", scenes.size()}};
  std::ofstream(o.output / "comparison.json") << comparison.dump(2) << '\n';
  std::ofstream(o.output / "comparison.txt")
      << "sparse mAP  " << fixed(sparse.map.map) << "\ndense mAP   " << fixed(d.map.map)
      << "  (" << o.dense_steps << " steps, NMS " << fixed(nms_threshold, 2) << ")\n";
  log("dense mAP " + fixed(d.map.map) + " (sparse " + fixed(sparse.map.map) + ")");
  return kOk;
}

int infer(const Options& o) {
  LoadedCheckpoint ck = load_model(o.checkpoint);
  require_file(o.image, "image");
  const Tensor image = read_ppm(o.image);
  const ModelConfig& mc = ck.model.config();
  const Shape expected{mc.encoder.image_height, mc.encoder.image_width, mc.encoder.in_channels};
  if (image.shape() != expected) {
    throw CheckpointError(o.checkpoint.string() + ": model expects images " +
                          shape_string(expected) + ", got " + shape_string(image.shape()));
  }
  write_config_echo(o.output, "infer",
                    {{"checkpoint", o.checkpoint.string()},
                     {"image", o.image.string()},
                     {"iters_cap", o.iters_cap}});
  const InferenceResult r = ck.model.infer(image, o.iters_cap);
  for (std::size_t t = 0; t < r.sequence.size(); ++t) {
    std::ostringstream name;
    name << "attention_" << std::setw(2) << std::setfill('0') << t + 1 << ".pgm";
    write_pgm_normalized(o.output / name.str(), r.sequence[t].attention);
  }
  const auto names = class_names(ck);
  std::cout << r.detections.size() << " detections\n";
  for (const Detection& d : r.detections) {
    std::cout << names.at(static_cast<std::size_t>(d.cls)) << ' ' << fixed(d.score, 6) << ' '
              << fixed(d.box.x_min, 6) << ' ' << fixed(d.box.y_min, 6) << ' ' << fixed(d.box.x_max, 6)
              << ' ' << fixed(d.box.y_max, 6) << '\n';
  }
  log(std::to_string(r.sequence.size()) + " decoder steps, " +
      (r.stopped_by_eos ? "stopped by EoS" : "hit the iteration cap"));
  return kOk;
}

int analyze(const Options& o) {
  LoadedCheckpoint ck = load_model(o.checkpoint);
  const Dataset data = load_dataset(o.dataset);
  const std::vector<AnnotatedImage> scenes = data.split(o.split);
  require_compatible(ck.model.config(), data.classes, scenes, o.checkpoint);
  write_config_echo(o.output, "analyze",
                    {{"checkpoint", o.checkpoint.string()},
                     {"dataset", o.dataset.string()},
                     {"split", o.split},
                     {"iou_threshold", o.iou_threshold},
                     {"iters_cap", o.iters_cap},
                     {"jobs", o.jobs}});
  const EvalReport r = evaluate_map(ck.model, scenes, eval_options(o));
  write_report(o.output, "analysis", r, class_names(ck));
  log("analysis of " + std::to_string(scenes.size()) + " images written to " + o.output.string());
  return kOk;
}

int run_selfcheck(const Options& o) {
  write_config_echo(o.output, "selfcheck",
                    {{"probes", o.probes}, {"sweep_per_size", o.sweep}, {"seed", o.seed}});
  constexpr double kTolerance = 1e-4;
  bool ok = true;

  double op_worst = 0.0;
  json ops = json::array();
  for (const auto& c : selfcheck::operator_gradients(o.seed)) {
    op_worst = std::max(op_worst, c.max_error);
    ops.push_back({{"name", c.name}, {"max_error", c.max_error}});
  }
  ok = ok && op_worst <= kTolerance;
  log("operator gradient checks: max relative error " + json(op_worst).dump());

  const auto grad = selfcheck::end_to_end_gradients(o.probes, o.seed);
  ok = ok && grad.max_error <= kTolerance;
  log("end-to-end gradient check: max relative error " + json(grad.max_error).dump() + " over " +
      std::to_string(grad.probes) + " parameters");

  const auto sweep = selfcheck::hungarian_sweep(o.sweep, o.seed);
  ok = ok && sweep.mismatches == 0;
  log("hungarian oracle sweep: " + std::to_string(sweep.cases) + " cases, " +
      std::to_string(sweep.mismatches) + " mismatches");

  std::size_t exact = 0;
  json fixtures = json::array();
  for (const auto& f : selfcheck::run_map_fixtures()) {
    exact += f.exact;
    fixtures.push_back({{"name", f.name},
                        {"all_point", f.all_point},
                        {"eleven_point", f.eleven_point},
                        {"exact", f.exact}});
  }
  const std::size_t total_fixtures = fixtures.size();
  ok = ok && exact == total_fixtures;
  log("mAP fixtures: " + std::to_string(exact) + "/" + std::to_string(total_fixtures) +
      " reproduced");

  const json summary{{"operator_checks", ops},
                     {"end_to_end", {{"probes", grad.probes}, {"max_error", grad.max_error}}},
                     {"hungarian", {{"cases", sweep.cases}, {"mismatches", sweep.mismatches}}},
                     {"map_fixtures", fixtures},
                     {"passed", ok}};
  std::ofstream(o.output / "selfcheck.json") << summary.dump(2) << '\n';
  log(ok ? "selfcheck passed" : "selfcheck FAILED");
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Sparse recurrent object detector: data, training, evaluation and inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "detective 1.0");

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    cmd->add_option("--jobs", o.jobs, "Parallel per-image workers")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  };
  auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--split", o.split, "Dataset split to evaluate")->capture_default_str();
    cmd->add_option("--iters-cap", o.iters_cap, "Maximum decoder iterations per image")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--iou-threshold", o.iou_threshold, "IoU needed for a true positive")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--map-mode", o.map_mode, "AP interpolation")
        ->capture_default_str()
        ->check(CLI::IsMember({"all-point", "11-point"}));
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen->add_option("--output", o.output, "Dataset directory")->required();
  gen->add_option("--train", o.train_count, "Training scenes")->capture_default_str();
  gen->add_option("--val", o.val_count, "Validation scenes")->capture_default_str();
  gen->add_option("--test", o.test_count, "Test scenes")->capture_default_str();
  gen->add_option("--image-size", o.scene.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--classes", o.scene.classes, "Shape classes")->capture_default_str();
  gen->add_option("--min-objects", o.scene.min_objects)->capture_default_str();
  gen->add_option("--max-objects", o.scene.max_objects)->capture_default_str();
  gen->add_option("--min-size", o.scene.min_size, "Smallest object side / image side")
      ->capture_default_str();
  gen->add_option("--max-size", o.scene.max_size, "Largest object side / image side")
      ->capture_default_str();
  gen->add_option("--max-overlap", o.scene.max_overlap, "Pairwise IoU cap")->capture_default_str();
  gen->add_option("--noise", o.scene.noise, "Background noise amplitude")->capture_default_str();
  add_common(gen);

  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--dataset", o.dataset, "Dataset directory")->required();
  tr->add_option("--output", o.output, "Run directory for checkpoints and logs")->required();
  tr->add_option("--epochs", o.epochs)->capture_default_str();
  tr->add_option("--batch-size", o.batch_size, "Images per optimizer step")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  tr->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--extra-preds", o.extra_preds, "Extra decoder steps k during training")
      ->capture_default_str();
  tr->add_option("--hidden-channels", o.hidden_channels, "Decoder channels d")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  tr->add_flag("--no-attention", o.no_attention, "Average-pool instead of attention");
  tr->add_flag("--no-positional", o.no_positional, "Drop the coordinate channels");
  tr->add_flag("--no-background-class", o.no_background, "Drop the background class");
  tr->add_option("--max-train", o.max_train, "Use only the first N training images (0 = all)")
      ->capture_default_str();
  tr->add_option("--train-split", o.train_split)->capture_default_str();
  tr->add_option("--val-split", o.split, "Split used to select the best checkpoint")
      ->capture_default_str();
  tr->add_option("--iters-cap", o.iters_cap, "Maximum decoder iterations during validation")
      ->capture_default_str();
  add_common(tr);

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint (mAP and analyses)");
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--dataset", o.dataset)->required();
  ev->add_option("--output", o.output, "Report directory")->required();
  ev->add_option("--nms-threshold", o.nms_threshold, "Also run fixed-length decoding with NMS")
      ->check(CLI::Range(0.0, 1.0));
  ev->add_option("--dense-checkpoint", o.dense_checkpoint,
                 "Model for the fixed-length run (default: --checkpoint)");
  ev->add_option("--dense-steps", o.dense_steps, "Decoder steps in the fixed-length run")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_eval_flags(ev);
  add_common(ev);

  CLI::App* inf = app.add_subcommand("infer", "Detect objects in one P6 image");
  inf->add_option("--checkpoint", o.checkpoint)->required();
  inf->add_option("--image", o.image, "Binary PPM image")->required();
  inf->add_option("--output", o.output, "Directory for attention maps")->required();
  inf->add_option("--iters-cap", o.iters_cap)->capture_default_str()->check(CLI::PositiveNumber);

  CLI::App* an = app.add_subcommand("analyze", "Per-iteration categories, precision and counts");
  an->add_option("--checkpoint", o.checkpoint)->required();
  an->add_option("--dataset", o.dataset)->required();
  an->add_option("--output", o.output, "Report directory")->required();
  add_eval_flags(an);
  add_common(an);

  CLI::App* sc = app.add_subcommand("selfcheck", "Gradient checks, matching oracle and mAP fixtures");
  sc->add_option("--output", o.output, "Directory for selfcheck.json")->required();
  sc->add_option("--probes", o.probes, "Sampled parameters in the end-to-end check")
      ->capture_default_str();
  sc->add_option("--sweep", o.sweep, "Random matrices per size in the matching sweep")
      ->capture_default_str();
  sc->add_option("--seed", o.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(o);
    if (tr->parsed()) return train(o);
    if (ev->parsed()) return eval(o);
    if (inf->parsed()) return infer(o);
    if (an->parsed()) return analyze(o);
    if (sc->parsed()) return run_selfcheck(o);
  } catch (const MissingFile& e) {
    log("error: " + std::string(e.what()));
    return kMissingFile;
  } catch (const CheckpointError& e) {
    log("error: " + std::string(e.what()));
    return kIncompatibleCheckpoint;
  } catch (const DataError& e) {
    log("error: " + std::string(e.what()));
    return kBadData;
  } catch (const NonFiniteGradient& e) {
    log("error: training diverged: " + std::string(e.what()));
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    log("error: " + std::string(e.what()));
    return kUsage;
  } catch (const std::exception& e) {
    log("error: " + std::string(e.what()));
    return kCheckFailed;
  }
  return kUsage;
}
