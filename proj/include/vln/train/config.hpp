#pragma once

// Run configuration: [model], [train] and [data] sections of one INI file.
//
//   [train]
//   learning_rate = 0.0001   ; 0 selects the variant default
//   rho = 0.9
//   epsilon = 1e-08
//   horizon = 5              ; future frames in the training loss
//   batch_size = 16
//   epochs = 5
//   init_seed = 1
//   checkpoint_every = 1
//   resample_each_epoch = 1  ; 0 replays the epoch-0 training sequences
//
//   [data]
//   dir = data
//   seed = 7
//   train_size = 10000
//   validation_size = 200
//   test_size = 1000

#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <string>
#include <vector>

#include "vln/model/config.hpp"

namespace vln::train {

inline constexpr int kEvalHorizon = 10;

double default_learning_rate(model::Variant variant);

struct TrainConfig {
  double learning_rate = 0;  // 0: default_learning_rate(variant)
  double rho = 0.9;
  double epsilon = 1e-8;
  int horizon = 5;
  int batch_size = 16;
  int epochs = 5;
  std::uint64_t init_seed = 1;
  int checkpoint_every = 1;
  bool resample_each_epoch = true;
};

struct DataConfig {
  std::string dir = "data";
  std::uint64_t seed = 7;
  std::size_t train_size = 10000;
  std::size_t validation_size = 200;
  std::size_t test_size = 1000;
};

struct RunConfig {
  model::ModelConfig model = model::ModelConfig::preset(model::Variant::kVln);
  TrainConfig train;
  DataConfig data;

  double learning_rate() const;
  void validate() const;

  boost::property_tree::ptree to_ptree() const;
  static RunConfig from_ptree(const boost::property_tree::ptree& tree);
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::string& path);
};

// Applies "section.key=value" overrides to a tree before it is parsed.
void apply_overrides(boost::property_tree::ptree& tree, const std::vector<std::string>& overrides);

}  // namespace vln::train
