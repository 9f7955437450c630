#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ltsrepr/checkpoint.hpp"
#include "ltsrepr/config.hpp"
#include "ltsrepr/data.hpp"
#include "ltsrepr/metrics.hpp"

namespace ltsrepr {

// Named text outputs of a command (file name -> content).
using Artifacts = std::map<std::string, std::string>;

// Generates the dataset (or reads config.dataset_cache when it exists, and
// writes it when it does not), rounds features to float and standardizes
// with training statistics.
DatasetPair prepare_data(const ExperimentConfig& config);

struct PretrainTrace {
  std::vector<double> epoch_losses;
};

// Stage 1. With SWA enabled the returned parameters are Theta_SWA and the
// checkpoint carries the frozen posterior.
Checkpoint run_pretrain(const ExperimentConfig& config, const DatasetPair& data,
                        PretrainTrace* trace = nullptr);

// Stage 2 on a copy of `input`; theta and the posterior are carried over
// unchanged.
Checkpoint run_retrain(const ExperimentConfig& config, const Checkpoint& input,
                       const DatasetPair& data);

// Logit transform recorded in the checkpoint (DisAlign), or empty.
LogitTransform checkpoint_transform(const Checkpoint& ckpt);

// Point prediction (theta, phi) with the checkpoint's logit transform.
Matrix predict_probs(const Checkpoint& ckpt, const Matrix& x);

// Point prediction when ensemble_m == 0, else the M-member posterior
// ensemble drawn with `seed`.
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const LongTailDataset& test,
                                  int ensemble_m, int ece_bins, std::uint64_t seed);

Artifacts eval_artifacts(const MetricsReport& report, const std::string& prefix);

struct AnalysisResult {
  std::vector<double> nll;
  std::vector<double> dispersion_repr;
  std::vector<double> dispersion_prob;
  QuartileAnalysis quartiles_repr;
  QuartileAnalysis quartiles_prob;
  ClassDiagnostics diagnostics;
};

// Per-instance NLL of the point prediction against the dispersion of M
// stochastic representations drawn from the posterior with `seed`.
AnalysisResult analyze_checkpoint(const Checkpoint& ckpt, const LongTailDataset& test,
                                  int num_samples, int ece_bins, std::uint64_t seed);

Artifacts analysis_artifacts(const AnalysisResult& result, const LongTailDataset& test);

// Methods in table order.
const std::vector<std::string>& sweep_methods();

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::map<std::string, MetricsReport> reports;  // keyed by method
};

struct SweepResult {
  std::vector<SeedOutcome> seeds;
  bool all_ok() const;
};

// Full pipeline for one run seed: SGD and SWA pretraining, then every
// re-training method, evaluated on the test split.
SeedOutcome run_seed(const ExperimentConfig& config, const DatasetPair& data,
                     std::uint64_t seed);

// Thread count: min(seeds, hardware), capped by LTSREPR_THREADS when set.
int sweep_threads(std::size_t num_seeds);

SweepResult run_sweep(const ExperimentConfig& config);

// Mean and std per method over the completed seeds.
std::string sweep_table_csv(const SweepResult& result);
std::string sweep_seeds_csv(const SweepResult& result);
Artifacts sweep_artifacts(const SweepResult& result);

// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(const std::vector<double>& values);

}  // namespace ltsrepr
