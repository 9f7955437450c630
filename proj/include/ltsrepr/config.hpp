#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltsrepr/balancing.hpp"
#include "ltsrepr/data.hpp"
#include "ltsrepr/netcore.hpp"
#include "ltsrepr/retrain.hpp"
#include "ltsrepr/swag.hpp"

namespace ltsrepr {

struct ModelConfig {
  std::vector<int> hidden = {64, 64};
  int repr_dim = 32;
  Activation activation = Activation::kRelu;
};

struct TrainConfig {
  OptimConfig optim{0.1, 0.9, 2e-3, true};
  int epochs = 60;
  int batch_size = 32;
  double mixup_alpha = 0.0;  // 0 disables mixup
};

struct SwaConfig {
  bool enabled = true;
  double start_fraction = 0.75;
  double swa_lr = 0.1;
  int capture_every_epochs = 1;
};

struct RetrainConfig {
  RetrainMethod method = RetrainMethod::kCrt;
  double epochs_frac = 0.10;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  bool srepr_init_swa = true;  // false: fresh random classifier for SRepr
};

struct BalanceConfig {
  BalanceKind kind = BalanceKind::kCbs;
  double rho = 1.0;
};

struct EvalConfig {
  int ece_bins = 15;
  int ensemble_m = 0;
  std::uint64_t analysis_seed = 0;
  int analysis_m = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
};

// Sections: [data] [model] [optim] [swa] [retrain] [srepr] [balance] [eval]
// [run], each holding `key = value` lines. '#' starts a comment.
struct ExperimentConfig {
  DatasetConfig data;
  std::string dataset_cache;
  ModelConfig model;
  TrainConfig train;
  SwaConfig swa;
  RetrainConfig retrain;
  SreprConfig srepr;
  BalanceConfig balance;
  EvalConfig eval;
  RunConfig run;

  void validate() const;

  ModelShape model_shape() const;
  SwaSchedule swa_schedule(std::size_t steps_per_epoch) const;
  int retrain_epochs() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

// `key` is "section.key"; the value uses the file syntax. Unknown keys and
// malformed values throw kInvalidArgument.
void set_config_value(ExperimentConfig& config, const std::string& key,
                      const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& key);
std::vector<std::string> config_keys();

// FNV-1a of the serialized config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace ltsrepr
