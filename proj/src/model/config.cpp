#include "vln/model/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <sstream>

#include "vln/common/rng.hpp"

namespace vln::model {

namespace pt = boost::property_tree;

const char* variant_name(Variant variant) {
  switch (variant) {
    case Variant::kVln: return "vln";
    case Variant::kVlnResnet: return "vln-resnet";
    case Variant::kVlnBl: return "vln-bl";
    case Variant::kVlnBlFf: return "vln-bl-ff";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::kVln, Variant::kVlnResnet, Variant::kVlnBl, Variant::kVlnBlFf}) {
    if (name == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + name + "' (expected vln, vln-resnet, vln-bl or vln-bl-ff)");
}

namespace {

ModelConfig build(Variant variant, int input_size, const std::vector<std::vector<int>>& widths,
                  const std::vector<std::vector<int>>& dilations, int top_lstm) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.input_size = input_size;
  cfg.encoder = variant == Variant::kVlnResnet ? EncoderKind::kResidual : EncoderKind::kPlain;
  const bool baseline = variant == Variant::kVlnBl || variant == Variant::kVlnBlFf;
  const int n = static_cast<int>(widths.size());
  for (int l = 0; l < n; ++l) {
    LevelConfig level;
    level.channels = widths[l];
    level.dilations = dilations[l];
    const bool top = l == n - 1;
    level.recurrent = !baseline || top;
    level.feedforward = variant != Variant::kVlnBl;
    level.lstm_channels = !level.recurrent ? 0 : (baseline ? top_lstm : level.width());
    cfg.levels.push_back(level);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

ModelConfig ModelConfig::preset(Variant variant) {
  if (variant == Variant::kVlnResnet) {
    return build(variant, 64, {{28, 28}, {58, 58}, {90, 90}}, {{1, 2}, {2, 4}, {4, 8}}, 0);
  }
  return build(variant, 64, {{32}, {64}, {96}}, {{1}, {2}, {4}}, 128);
}

ModelConfig ModelConfig::reduced(Variant variant) {
  if (variant == Variant::kVlnResnet) return build(variant, 16, {{3, 4}, {5, 6}}, {{1, 2}, {2, 2}}, 0);
  return build(variant, 16, {{4}, {6}}, {{1}, {2}}, 8);
}

int ModelConfig::recurrent_count() const {
  int n = 0;
  for (const auto& l : levels) n += l.recurrent;
  return n;
}

void ModelConfig::validate() const {
  if (levels.empty()) throw ConfigError("model needs at least one level");
  if (input_size <= 0 || input_size % (1 << num_levels()) != 0) {
    throw ConfigError("input_size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(num_levels()));
  }
  const std::size_t per_level = encoder == EncoderKind::kPlain ? 1 : 2;
  for (int l = 0; l < num_levels(); ++l) {
    const auto& level = levels[l];
    const std::string where = "level " + std::to_string(l + 1) + ": ";
    if (level.channels.size() != per_level || level.dilations.size() != per_level) {
      throw ConfigError(where + "expected " + std::to_string(per_level) + " channel and dilation entries");
    }
    for (int c : level.channels) {
      if (c <= 0) throw ConfigError(where + "channel counts must be positive");
    }
    for (int d : level.dilations) {
      if (d <= 0) throw ConfigError(where + "dilations must be positive");
    }
    if (level.recurrent != (level.lstm_channels > 0)) {
      throw ConfigError(where + "lstm_channels must be positive exactly when the level is recurrent");
    }
  }
  if (!levels.back().recurrent) throw ConfigError("the top level needs a recurrent lateral");
  if (!(leaky_slope >= 0)) throw ConfigError("leaky_slope must be non-negative");
  if (!(bn_momentum >= 0 && bn_momentum < 1)) throw ConfigError("bn_momentum must lie in [0, 1)");
  if (!(bn_epsilon > 0)) throw ConfigError("bn_epsilon must be positive");
}

namespace {

template <typename F>
std::string join(const std::vector<LevelConfig>& levels, F field) {
  std::string out;
  for (const auto& l : levels) {
    for (int v : field(l)) out += (out.empty() ? "" : " ") + std::to_string(v);
  }
  return out;
}

std::vector<int> split_ints(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  std::vector<int> out;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ConfigError("model." + key + ": '" + token + "' is not an integer");
    }
  }
  return out;
}

// get(key, fallback) would swallow conversion errors
template <typename V>
void read_value(const pt::ptree& section, const char* key, V& value) {
  if (auto text = section.get_optional<std::string>(key)) {
    const auto parsed = pt::ptree(*text).get_value_optional<V>();
    if (!parsed) throw ConfigError(std::string("model.") + key + ": '" + *text + "' is not a valid value");
    value = *parsed;
  }
}

std::string number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

pt::ptree ModelConfig::to_ptree() const {
  pt::ptree tree;
  tree.put("model.variant", variant_name(variant));
  tree.put("model.encoder", encoder == EncoderKind::kPlain ? "plain" : "residual");
  tree.put("model.input_size", input_size);
  tree.put("model.channels", join(levels, [](const LevelConfig& l) { return l.channels; }));
  tree.put("model.dilations", join(levels, [](const LevelConfig& l) { return l.dilations; }));
  tree.put("model.recurrent", join(levels, [](const LevelConfig& l) { return std::vector<int>{l.recurrent}; }));
  tree.put("model.feedforward", join(levels, [](const LevelConfig& l) { return std::vector<int>{l.feedforward}; }));
  tree.put("model.lstm_channels", join(levels, [](const LevelConfig& l) { return std::vector<int>{l.lstm_channels}; }));
  tree.put("model.leaky_slope", number(leaky_slope));
  tree.put("model.bn_momentum", number(bn_momentum));
  tree.put("model.bn_epsilon", number(bn_epsilon));
  tree.put("model.forget_bias", number(forget_bias));
  return tree;
}

ModelConfig ModelConfig::from_ptree(const pt::ptree& tree) {
  const auto variant = parse_variant(tree.get<std::string>("model.variant", "vln"));
  ModelConfig cfg = preset(variant);
  const auto& m = tree.get_child_optional("model");
  if (!m) return cfg;
  if (auto e = m->get_optional<std::string>("encoder")) {
    if (*e != "plain" && *e != "residual") throw ConfigError("model.encoder must be plain or residual");
    cfg.encoder = *e == "plain" ? EncoderKind::kPlain : EncoderKind::kResidual;
  }
  read_value(*m, "input_size", cfg.input_size);
  read_value(*m, "leaky_slope", cfg.leaky_slope);
  read_value(*m, "bn_momentum", cfg.bn_momentum);
  read_value(*m, "bn_epsilon", cfg.bn_epsilon);
  read_value(*m, "forget_bias", cfg.forget_bias);
  auto list = [&](const char* key, std::vector<int> fallback) {
    auto v = m->get_optional<std::string>(key);
    return v ? split_ints(key, *v) : fallback;
  };
  auto current = [&](auto field) {
    std::vector<int> out;
    for (const auto& l : cfg.levels) {
      for (int v : field(l)) out.push_back(v);
    }
    return out;
  };
  const auto channels = list("channels", current([](const LevelConfig& l) { return l.channels; }));
  const auto dilations = list("dilations", current([](const LevelConfig& l) { return l.dilations; }));
  const auto recurrent = list("recurrent", current([](const LevelConfig& l) { return std::vector<int>{l.recurrent}; }));
  const auto feedforward = list("feedforward", current([](const LevelConfig& l) { return std::vector<int>{l.feedforward}; }));
  const auto lstm = list("lstm_channels", current([](const LevelConfig& l) { return std::vector<int>{l.lstm_channels}; }));

  const std::size_t n = recurrent.size();
  const std::size_t per_level = cfg.encoder == EncoderKind::kPlain ? 1 : 2;
  if (n == 0 || feedforward.size() != n || lstm.size() != n || channels.size() != n * per_level ||
      dilations.size() != n * per_level) {
    throw ConfigError("model lists disagree on the number of levels");
  }
  cfg.levels.assign(n, {});
  for (std::size_t l = 0; l < n; ++l) {
    auto& level = cfg.levels[l];
    level.channels.assign(channels.begin() + l * per_level, channels.begin() + (l + 1) * per_level);
    level.dilations.assign(dilations.begin() + l * per_level, dilations.begin() + (l + 1) * per_level);
    level.recurrent = recurrent[l] != 0;
    level.feedforward = feedforward[l] != 0;
    level.lstm_channels = lstm[l];
  }
  cfg.validate();
  return cfg;
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  pt::write_ini(out, to_ptree());
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::istringstream in(text);
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_ptree(tree);
}

std::uint64_t ModelConfig::hash() const {
  const auto text = to_text();
  return fnv1a64(text.data(), text.size());
}

}  // namespace vln::model
