#include "cli.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>

#include "vln/data/fetch.hpp"
#include "vln/data/sequence_io.hpp"
#include "vln/train/trainer.hpp"

namespace vln::cli {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
};

json base_manifest(const std::string& command, const std::vector<std::string>& args) {
  return json{{"command", command},
              {"argv", args},
              {"version", VLN_VERSION},
              {"git_revision", VLN_GIT_REVISION}};
}

void write_manifest(const fs::path& path, const json& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
}

// defaults < config file < --set < explicit flags
pt::ptree config_tree(const Common& common) {
  pt::ptree tree;
  if (!common.config_file.empty()) {
    try {
      pt::read_ini(common.config_file, tree);
    } catch (const pt::ini_parser_error& e) {
      throw model::ConfigError(e.what());
    }
  }
  train::apply_overrides(tree, common.overrides);
  return tree;
}

template <typename V>
void put_if(pt::ptree& tree, const CLI::Option* option, const char* key, const V& value) {
  if (option->count() > 0) tree.put(key, value);
}

data::MovingMnist load_data(const train::RunConfig& cfg) {
  if (!fs::exists(fs::path(cfg.data.dir) / data::kTrainImagesFile)) {
    throw data::DataError("no MNIST files in '" + cfg.data.dir + "'; run fetch-data first");
  }
  return data::MovingMnist::from_directory(
      cfg.data.dir, cfg.data.seed,
      {cfg.data.train_size, cfg.data.validation_size, std::max<std::size_t>(cfg.data.test_size, 1)});
}

struct Selector {
  data::SplitKind split;
  std::size_t first = 0, last = 0;
};

// "test:0..3", "validation:7"; bounds inclusive
Selector parse_selector(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("selector '" + text + "' is not split:first[..last]");
  Selector s;
  try {
    s.split = data::parse_split(text.substr(0, colon));
  } catch (const std::exception&) {
    throw UsageError("selector '" + text + "' names an unknown split");
  }
  const std::string range = text.substr(colon + 1);
  const auto dots = range.find("..");
  auto number = [&](const std::string& part) {
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || end != part.data() + part.size()) {
      throw UsageError("selector '" + text + "' has a bad index '" + part + "'");
    }
    return v;
  };
  s.first = number(range.substr(0, dots));
  s.last = dots == std::string::npos ? s.first : number(range.substr(dots + 2));
  if (s.last < s.first) throw UsageError("selector '" + text + "' is an empty range");
  return s;
}

struct LoadedModel {
  train::RunConfig config;
  std::unique_ptr<model::VideoLadderNet<float>> net;
  fs::path checkpoint;
  int epoch = 0;
};

fs::path default_checkpoint(const fs::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) throw UsageError("'" + run_dir.string() + "' has no checkpoints directory");
  std::optional<fs::path> best, newest;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".ckpt") continue;
    if (name.ends_with("-best.ckpt")) best = entry.path();
    else if (!newest || name > newest->filename().string()) newest = entry.path();
  }
  if (best) return *best;
  if (newest) return *newest;
  throw UsageError("'" + run_dir.string() + "' holds no checkpoint");
}

LoadedModel load_model(const std::string& run_dir, const std::string& checkpoint, const Common& common) {
  if (run_dir.empty() && checkpoint.empty()) throw UsageError("need --run or --checkpoint");
  LoadedModel m;
  const fs::path dir = !run_dir.empty() ? fs::path(run_dir) : fs::path(checkpoint).parent_path().parent_path();
  pt::ptree tree;
  if (fs::exists(dir / "config.ini")) pt::read_ini((dir / "config.ini").string(), tree);
  const auto extra = config_tree(common);
  for (const auto& [section, body] : extra) {
    for (const auto& [key, value] : body) tree.put(section + "." + key, value.data());
  }
  m.config = train::RunConfig::from_ptree(tree);
  m.checkpoint = !checkpoint.empty() ? fs::path(checkpoint) : default_checkpoint(dir);
  m.net = std::make_unique<model::VideoLadderNet<float>>(m.config.model);
  const auto ckpt = train::load_model_checkpoint(m.checkpoint, *m.net);
  if (const auto* e = ckpt.find("trainer.epoch")) m.epoch = int(e->values.at(0));
  return m;
}

// ---- subcommands

int fetch_data(const std::vector<std::string>& args, std::ostream& out, const std::string& dir,
               const std::string& source_dir, const std::string& url, bool synthetic, std::uint64_t seed) {
  data::FetchOptions options;
  options.data_dir = dir;
  if (!source_dir.empty()) options.source_dir = source_dir;
  if (!url.empty()) options.base_url = url;
  options.synthetic = synthetic;
  options.synthetic_seed = seed;
  const auto report = data::fetch_mnist(options);
  out << (report.already_present ? "already present: " : "fetched from " + report.source + ": ");
  for (const auto& f : report.files) out << f << ' ';
  out << '\n';
  if (report.already_present) return kOk;
  auto manifest = base_manifest("fetch-data", args);
  manifest["data_dir"] = dir;
  manifest["source"] = report.source;
  manifest["synthetic_seed"] = seed;
  manifest["files"] = report.files;
  write_manifest(fs::path(dir) / "fetch_manifest.json", manifest);
  return kOk;
}

int generate(const std::vector<std::string>& args, std::ostream& out, const Common& common,
             const std::string& split_name, std::uint64_t epoch, std::size_t first, std::size_t count,
             const std::string& out_path, const std::string& png_dir) {
  auto cfg = train::RunConfig::from_ptree(config_tree(common));
  const auto split = data::parse_split(split_name);
  cfg.data.train_size = std::max(cfg.data.train_size, first + count);
  cfg.data.validation_size = std::max(cfg.data.validation_size, first + count);
  cfg.data.test_size = std::max(cfg.data.test_size, first + count);
  const auto mm = load_data(cfg);
  const auto stream = mm.stream(split, epoch);
  std::vector<data::VideoSequence> sequences;
  for (std::size_t i = first; i < first + count; ++i) sequences.push_back(stream.at(i));
  {
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    std::ofstream file(out_path, std::ios::binary);
    file << data::encode_sequence_dump(sequences);
    if (!file) throw std::runtime_error("cannot write " + out_path);
  }
  if (!png_dir.empty()) {
    fs::create_directories(png_dir);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      data::write_png((fs::path(png_dir) / (split_name + "-" + std::to_string(first + i) + ".png")).string(),
                      data::sequence_grid(sequences[i]));
    }
  }
  out << "wrote " << count << " " << split_name << " sequences to " << out_path << '\n';
  auto manifest = base_manifest("generate", args);
  manifest["config"] = cfg.to_text();
  manifest["split"] = split_name;
  manifest["epoch"] = epoch;
  manifest["first"] = first;
  manifest["count"] = count;
  write_manifest(out_path + ".manifest.json", manifest);
  return kOk;
}

int train_cmd(const std::vector<std::string>& args, std::ostream& out, const train::RunConfig& cfg,
              const fs::path& runs_dir, std::string run_id, bool resume, bool force) {
  if (run_id.empty()) run_id = model::variant_name(cfg.model.variant);
  const auto run_dir = runs_dir / run_id;
  if (fs::exists(run_dir) && !resume) {
    if (!force) throw UsageError("run '" + run_id + "' already exists in " + runs_dir.string() +
                                 "; pass --force to replace it or --resume to continue it");
    fs::remove_all(run_dir);
  }
  if (resume && fs::exists(run_dir / "config.ini")) {
    const auto previous = train::RunConfig::load((run_dir / "config.ini").string());
    if (previous.model.hash() != cfg.model.hash()) {
      throw UsageError("run '" + run_id + "' was trained with a different model configuration");
    }
  }
  const auto mm = load_data(cfg);
  train::Trainer trainer(cfg, mm, run_dir, run_id);
  const int done = resume ? trainer.resume() : 0;
  if (done > 0) out << "resumed " << run_id << " after epoch " << done << '\n';

  auto manifest = base_manifest("train", args);
  manifest["run_id"] = run_id;
  manifest["config"] = cfg.to_text();
  manifest["learning_rate"] = cfg.learning_rate();
  manifest["seeds"] = {{"data", cfg.data.seed}, {"init", cfg.train.init_seed}};
  manifest["resumed_from_epoch"] = done;
  write_manifest(run_dir / "manifest.json", manifest);

  out << "training " << model::variant_name(cfg.model.variant) << " (" << trainer.net().parameter_count()
      << " parameters, lr " << cfg.learning_rate() << ") in " << run_dir.string() << '\n';
  trainer.run(&out);
  if (trainer.best_epoch()) out << "best validation epoch " << *trainer.best_epoch() << '\n';
  return kOk;
}

int eval_cmd(const std::vector<std::string>& args, std::ostream& out, const Common& common,
             const std::string& run_dir, const std::string& checkpoint, const std::string& baseline,
             std::optional<std::size_t> test_size, int batch_size, std::string out_path) {
  train::RunConfig cfg;
  LoadedModel loaded;
  train::WindowPredictor predictor;
  if (!baseline.empty()) {
    cfg = train::RunConfig::from_ptree(config_tree(common));
    if (baseline == "copy") predictor = train::copy_last_predictor();
    else if (baseline == "constant") predictor = train::constant_predictor(0.5f);
    else throw UsageError("unknown baseline '" + baseline + "' (copy or constant)");
    if (out_path.empty()) out_path = "baseline-" + baseline + ".csv";
  } else {
    loaded = load_model(run_dir, checkpoint, common);
    cfg = loaded.config;
    predictor = train::model_predictor(*loaded.net);
    if (out_path.empty()) out_path = (loaded.checkpoint.parent_path().parent_path() / "eval-test.csv").string();
  }
  if (test_size) cfg.data.test_size = *test_size;
  if (cfg.data.test_size == 0) throw UsageError("--test-size must be positive");
  const auto mm = load_data(cfg);
  const auto summary = train::evaluate_stream(predictor, mm.stream(data::SplitKind::kTest, 0),
                                              cfg.data.test_size, batch_size);
  train::MetricsLog log;
  log.add(loaded.epoch, "test", summary);
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  log.save(out_path);
  for (int k = 0; k < train::kEvalHorizon; ++k) {
    out << "t=" << data::kPastFrames + 1 + k << ' ' << summary.per_timestep[std::size_t(k)] << '\n';
  }
  out << "mean " << summary.mean << " over " << summary.sequences << " test sequences -> " << out_path << '\n';

  auto manifest = base_manifest("eval", args);
  manifest["config"] = cfg.to_text();
  manifest["predictor"] = baseline.empty() ? "model" : baseline;
  manifest["checkpoint"] = loaded.checkpoint.string();
  manifest["test_size"] = cfg.data.test_size;
  manifest["seeds"] = {{"data", cfg.data.seed}};
  write_manifest(out_path + ".manifest.json", manifest);
  return kOk;
}

int predict_cmd(const std::vector<std::string>& args, std::ostream& out, const Common& common,
                const std::string& run_dir, const std::string& checkpoint, const std::string& selector,
                const std::string& out_dir) {
  const auto sel = parse_selector(selector);
  auto loaded = load_model(run_dir, checkpoint, common);
  auto cfg = loaded.config;
  const std::size_t need = sel.last + 1;
  cfg.data.train_size = std::max(cfg.data.train_size, need);
  cfg.data.validation_size = std::max(cfg.data.validation_size, need);
  cfg.data.test_size = std::max(cfg.data.test_size, need);
  const auto mm = load_data(cfg);
  const auto stream = mm.stream(sel.split, 0);
  std::vector<data::VideoSequence> batch;
  for (std::size_t i = sel.first; i <= sel.last; ++i) batch.push_back(stream.at(i));

  const auto predictor = train::model_predictor(*loaded.net);
  train::Window window(batch);
  std::vector<std::vector<std::vector<float>>> predictions(batch.size());
  for (int k = 0; k < train::kEvalHorizon; ++k) {
    auto frames = predictor(window);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto begin = frames.begin() + std::ptrdiff_t(i * data::kFramePixels);
      predictions[i].emplace_back(begin, begin + data::kFramePixels);
    }
    window.push(std::move(frames));
  }
  fs::create_directories(out_dir);
  const std::string split = data::split_name(sel.split);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto path = fs::path(out_dir) / (split + "-" + std::to_string(sel.first + i) + ".png");
    data::write_png(path.string(), data::sequence_grid(batch[i], predictions[i]));
    out << path.string() << '\n';
  }
  auto manifest = base_manifest("predict", args);
  manifest["config"] = cfg.to_text();
  manifest["checkpoint"] = loaded.checkpoint.string();
  manifest["selector"] = selector;
  write_manifest(fs::path(out_dir) / "manifest.json", manifest);
  return kOk;
}

int describe_cmd(const std::vector<std::string>& args, std::ostream& out, const model::ModelConfig& cfg,
                 const std::string& out_path) {
  model::VideoLadderNet<float> net(cfg);
  const auto text = net.describe();
  out << text;
  if (!out_path.empty()) {
    std::ofstream(out_path) << text;
    auto manifest = base_manifest("describe", args);
    manifest["model"] = cfg.to_text();
    write_manifest(out_path + ".manifest.json", manifest);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const train::RunConfig defaults;
  CLI::App app("Video ladder networks on Moving MNIST", "vln");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_file, "INI file with [model], [train] and [data] sections")
        ->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a config entry, section.key=value (repeatable)");
  };

  // fetch-data
  auto* fetch = app.add_subcommand("fetch-data", "Obtain and verify the four MNIST IDX files");
  std::string data_dir = defaults.data.dir, source_dir, url;
  bool synthetic = false;
  std::uint64_t synthetic_seed = data::FetchOptions{}.synthetic_seed;
  fetch->add_option("--data-dir", data_dir, "Destination directory");
  fetch->add_option("--source-dir", source_dir, "Directory holding the .gz archives or raw IDX files");
  fetch->add_option("--url", url, "Mirror base URL for the .gz archives");
  fetch->add_flag("--synthetic", synthetic, "Write procedurally drawn digits instead of MNIST");
  fetch->add_option("--synthetic-seed", synthetic_seed, "Seed for --synthetic");

  // generate
  auto* gen = app.add_subcommand("generate", "Dump Moving MNIST sequences");
  add_common(gen);
  std::string gen_split = "test", gen_out = "sequences.bin", gen_png;
  std::uint64_t gen_epoch = 0;
  std::size_t gen_first = 0, gen_count = 16;
  gen->add_option("--split", gen_split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  gen->add_option("--epoch", gen_epoch, "Epoch key (ignored for test)");
  gen->add_option("--first", gen_first, "First sequence index");
  gen->add_option("--count", gen_count, "Number of sequences")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Sequence dump file");
  gen->add_option("--png-dir", gen_png, "Also write one 20-frame strip per sequence here");
  std::string gen_data_dir = defaults.data.dir;
  auto* gen_data_opt = gen->add_option("--data-dir", gen_data_dir, "MNIST directory");

  // train
  auto* train_app = app.add_subcommand("train", "Train a model");
  add_common(train_app);
  std::string variant = model::variant_name(defaults.model.variant), run_id, runs_dir = "runs";
  int epochs = defaults.train.epochs, batch = defaults.train.batch_size, horizon = defaults.train.horizon;
  std::size_t train_size = defaults.data.train_size, validation_size = defaults.data.validation_size;
  double lr = defaults.train.learning_rate;
  std::uint64_t seed = defaults.data.seed, init_seed = defaults.train.init_seed;
  std::string train_data_dir = defaults.data.dir;
  bool resume = false, force = false;
  auto* o_variant = train_app->add_option("--variant", variant, "vln, vln-resnet, vln-bl or vln-bl-ff");
  auto* o_epochs = train_app->add_option("--epochs", epochs, "Epoch budget");
  auto* o_train = train_app->add_option("--train-size", train_size, "Training sequences per epoch");
  auto* o_val = train_app->add_option("--validation-size", validation_size, "Validation sequences per epoch");
  auto* o_batch = train_app->add_option("--batch-size", batch, "Sequences per optimizer step");
  auto* o_horizon = train_app->add_option("--horizon", horizon, "Future frames in the training loss");
  auto* o_lr = train_app->add_option("--lr", lr, "RMSprop learning rate; 0 means 1e-4 (5e-4 for vln-resnet)");
  auto* o_seed = train_app->add_option("--seed", seed, "Data seed");
  auto* o_init = train_app->add_option("--init-seed", init_seed, "Weight initialization seed");
  auto* o_data = train_app->add_option("--data-dir", train_data_dir, "MNIST directory");
  train_app->add_option("--runs-dir", runs_dir, "Parent directory of run directories");
  train_app->add_option("--run-id", run_id, "Run directory name (default: the variant)");
  train_app->add_flag("--resume", resume, "Continue from the newest checkpoint of the run");
  train_app->add_flag("--force", force, "Replace an existing run directory");

  // eval
  auto* eval_app = app.add_subcommand("eval", "Per-timestep test losses");
  add_common(eval_app);
  std::string eval_run, eval_ckpt, baseline, eval_out, eval_data_dir = defaults.data.dir;
  std::size_t test_size = defaults.data.test_size;
  int eval_batch = defaults.train.batch_size;
  eval_app->add_option("--run", eval_run, "Run directory (uses its best checkpoint)");
  eval_app->add_option("--checkpoint", eval_ckpt, "Explicit checkpoint file");
  eval_app->add_option("--baseline", baseline, "Built-in predictor instead of a model: copy or constant");
  auto* o_test = eval_app->add_option("--test-size", test_size, "Test sequences");
  eval_app->add_option("--batch-size", eval_batch, "Sequences per forward pass")->check(CLI::PositiveNumber);
  eval_app->add_option("--out", eval_out, "CSV path (default: <run>/eval-test.csv or baseline-<name>.csv)");
  auto* o_eval_data = eval_app->add_option("--data-dir", eval_data_dir, "MNIST directory");

  // predict
  auto* pred_app = app.add_subcommand("predict", "Ground truth and predicted frames as PNG grids");
  add_common(pred_app);
  std::string pred_run, pred_ckpt, selector = "test:0..3", pred_out = "predictions", pred_data_dir = defaults.data.dir;
  pred_app->add_option("--run", pred_run, "Run directory (uses its best checkpoint)");
  pred_app->add_option("--checkpoint", pred_ckpt, "Explicit checkpoint file");
  pred_app->add_option("--select", selector, "Sequences, split:first..last inclusive");
  pred_app->add_option("--out-dir", pred_out, "Output directory");
  auto* o_pred_data = pred_app->add_option("--data-dir", pred_data_dir, "MNIST directory");

  // describe
  auto* desc_app = app.add_subcommand("describe", "List parameters and their counts");
  add_common(desc_app);
  std::string desc_variant = variant, desc_out;
  auto* o_desc_variant = desc_app->add_option("--variant", desc_variant, "vln, vln-resnet, vln-bl or vln-bl-ff");
  desc_app->add_option("--out", desc_out, "Also write the listing (and a manifest) here");

  std::vector<std::string> argv_copy = args;
  std::vector<char*> argv;
  for (auto& a : argv_copy) argv.push_back(a.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (fetch->parsed()) return fetch_data(args, out, data_dir, source_dir, url, synthetic, synthetic_seed);
    if (gen->parsed()) {
      if (gen_data_opt->count() > 0) common.overrides.push_back("data.dir=" + gen_data_dir);
      return generate(args, out, common, gen_split, gen_epoch, gen_first, gen_count, gen_out, gen_png);
    }
    if (train_app->parsed()) {
      auto tree = config_tree(common);
      put_if(tree, o_variant, "model.variant", variant);
      put_if(tree, o_epochs, "train.epochs", epochs);
      put_if(tree, o_train, "data.train_size", train_size);
      put_if(tree, o_val, "data.validation_size", validation_size);
      put_if(tree, o_batch, "train.batch_size", batch);
      put_if(tree, o_horizon, "train.horizon", horizon);
      put_if(tree, o_lr, "train.learning_rate", lr);
      put_if(tree, o_seed, "data.seed", seed);
      put_if(tree, o_init, "train.init_seed", init_seed);
      put_if(tree, o_data, "data.dir", train_data_dir);
      return train_cmd(args, out, train::RunConfig::from_ptree(tree), runs_dir, run_id, resume, force);
    }
    if (eval_app->parsed()) {
      if (o_eval_data->count() > 0) common.overrides.push_back("data.dir=" + eval_data_dir);
      return eval_cmd(args, out, common, eval_run, eval_ckpt, baseline,
                      o_test->count() > 0 ? std::optional<std::size_t>(test_size) : std::nullopt, eval_batch,
                      eval_out);
    }
    if (pred_app->parsed()) {
      if (o_pred_data->count() > 0) common.overrides.push_back("data.dir=" + pred_data_dir);
      return predict_cmd(args, out, common, pred_run, pred_ckpt, selector, pred_out);
    }
    if (desc_app->parsed()) {
      auto tree = config_tree(common);
      put_if(tree, o_desc_variant, "model.variant", desc_variant);
      return describe_cmd(args, out, model::ModelConfig::from_ptree(tree), desc_out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const model::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const data::DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const train::NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    if (e.last_good_checkpoint()) err << "last good checkpoint: " << e.last_good_checkpoint()->string() << '\n';
    else err << "no checkpoint was written before the failure\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace vln::cli
