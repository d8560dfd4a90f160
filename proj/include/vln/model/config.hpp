#pragma once

// Declarative architecture description.
//
// File form (INI, section [model]); list values are space separated:
//
//   [model]
//   variant = vln
//   encoder = plain          ; plain: one conv per level, residual: two convs + strided conv
//   input_size = 64
//   channels = 32 64 96      ; residual: two per level, e.g. 28 28 58 58 90 90
//   dilations = 1 2 4        ; same arity as channels
//   recurrent = 1 1 1        ; conv-LSTM lateral per level
//   feedforward = 1 1 1      ; direct encoder lateral per level
//   lstm_channels = 32 64 96 ; 0 where recurrent = 0
//   leaky_slope = 0.01
//   bn_momentum = 0.99
//   bn_epsilon = 1e-05
//   forget_bias = 1

#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vln::model {

enum class Variant { kVln, kVlnResnet, kVlnBl, kVlnBlFf };
enum class EncoderKind { kPlain, kResidual };

const char* variant_name(Variant variant);
Variant parse_variant(const std::string& name);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LevelConfig {
  std::vector<int> channels;   // conv widths inside the level; the last is the level width
  std::vector<int> dilations;
  bool recurrent = true;
  bool feedforward = true;
  int lstm_channels = 0;

  int width() const { return channels.back(); }
};

struct ModelConfig {
  Variant variant = Variant::kVln;
  EncoderKind encoder = EncoderKind::kPlain;
  int input_size = 64;
  std::vector<LevelConfig> levels;
  double leaky_slope = 0.01;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
  double forget_bias = 1.0;

  static ModelConfig preset(Variant variant);
  // 16x16 input, two levels of 4 and 6 channels; same connectivity as the preset.
  static ModelConfig reduced(Variant variant);

  int num_levels() const { return static_cast<int>(levels.size()); }
  // Spatial size of level l (1-based) features.
  int level_size(int level) const { return input_size >> level; }
  int recurrent_count() const;

  void validate() const;

  boost::property_tree::ptree to_ptree() const;
  static ModelConfig from_ptree(const boost::property_tree::ptree& tree);
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // FNV-1a of the canonical text form.
  std::uint64_t hash() const;
};

}  // namespace vln::model
