#include "vln/train/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <fstream>
#include <set>
#include <sstream>

namespace vln::train {

namespace pt = boost::property_tree;
using model::ConfigError;

double default_learning_rate(model::Variant variant) {
  return variant == model::Variant::kVlnResnet ? 5e-4 : 1e-4;
}

double RunConfig::learning_rate() const {
  return train.learning_rate > 0 ? train.learning_rate : default_learning_rate(model.variant);
}

void RunConfig::validate() const {
  model.validate();
  if (model.input_size != 64) throw ConfigError("model.input_size must be 64 for Moving MNIST frames");
  if (!(train.learning_rate >= 0)) throw ConfigError("train.learning_rate must be non-negative");
  if (!(train.rho > 0 && train.rho < 1)) throw ConfigError("train.rho must lie in (0, 1)");
  if (!(train.epsilon >= 0)) throw ConfigError("train.epsilon must be non-negative");
  if (train.horizon < 1 || train.horizon > kEvalHorizon) throw ConfigError("train.horizon must lie in [1, 10]");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (train.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (train.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be positive");
  if (data.train_size == 0) throw ConfigError("data.train_size must be positive");
}

namespace {

std::string number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

const std::set<std::string> kTrainKeys = {"learning_rate", "rho", "epsilon", "horizon", "batch_size",
                                          "epochs", "init_seed", "checkpoint_every", "resample_each_epoch"};
const std::set<std::string> kDataKeys = {"dir", "seed", "train_size", "validation_size", "test_size"};
const std::set<std::string> kModelKeys = {"variant", "encoder", "input_size", "channels", "dilations",
                                          "recurrent", "feedforward", "lstm_channels", "leaky_slope",
                                          "bn_momentum", "bn_epsilon", "forget_bias"};

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const std::set<std::string>* keys = section == "model" ? &kModelKeys
                                        : section == "train" ? &kTrainKeys
                                        : section == "data"  ? &kDataKeys
                                                             : nullptr;
    if (!keys) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : body) {
      if (!keys->count(key)) throw ConfigError("unknown config key " + section + "." + key);
    }
  }
}

// ptree's get(path, fallback) swallows conversion errors
template <typename V>
void read(const pt::ptree& tree, const char* path, V& value) {
  if (auto text = tree.get_optional<std::string>(path)) {
    const auto parsed = pt::ptree(*text).get_value_optional<V>();
    if (!parsed) throw ConfigError(std::string(path) + ": '" + *text + "' is not a valid value");
    value = *parsed;
  }
}

}  // namespace

pt::ptree RunConfig::to_ptree() const {
  pt::ptree tree = model.to_ptree();
  tree.put("train.learning_rate", number(train.learning_rate));
  tree.put("train.rho", number(train.rho));
  tree.put("train.epsilon", number(train.epsilon));
  tree.put("train.horizon", train.horizon);
  tree.put("train.batch_size", train.batch_size);
  tree.put("train.epochs", train.epochs);
  tree.put("train.init_seed", train.init_seed);
  tree.put("train.checkpoint_every", train.checkpoint_every);
  tree.put("train.resample_each_epoch", int(train.resample_each_epoch));
  tree.put("data.dir", data.dir);
  tree.put("data.seed", data.seed);
  tree.put("data.train_size", data.train_size);
  tree.put("data.validation_size", data.validation_size);
  tree.put("data.test_size", data.test_size);
  return tree;
}

RunConfig RunConfig::from_ptree(const pt::ptree& tree) {
  check_keys(tree);
  RunConfig cfg;
  cfg.model = model::ModelConfig::from_ptree(tree);
  auto& t = cfg.train;
  read(tree, "train.learning_rate", t.learning_rate);
  read(tree, "train.rho", t.rho);
  read(tree, "train.epsilon", t.epsilon);
  read(tree, "train.horizon", t.horizon);
  read(tree, "train.batch_size", t.batch_size);
  read(tree, "train.epochs", t.epochs);
  read(tree, "train.init_seed", t.init_seed);
  read(tree, "train.checkpoint_every", t.checkpoint_every);
  int resample = t.resample_each_epoch;
  read(tree, "train.resample_each_epoch", resample);
  t.resample_each_epoch = resample != 0;
  auto& d = cfg.data;
  read(tree, "data.dir", d.dir);
  read(tree, "data.seed", d.seed);
  read(tree, "data.train_size", d.train_size);
  read(tree, "data.validation_size", d.validation_size);
  read(tree, "data.test_size", d.test_size);
  cfg.validate();
  return cfg;
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  pt::write_ini(out, to_ptree());
  return out.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_ptree(tree);
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_text(text.str());
}

void apply_overrides(pt::ptree& tree, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    const auto dot = item.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq) {
      throw ConfigError("override '" + item + "' is not of the form section.key=value");
    }
    tree.put(pt::ptree::path_type(item.substr(0, eq), '.'), item.substr(eq + 1));
  }
}

}  // namespace vln::train
