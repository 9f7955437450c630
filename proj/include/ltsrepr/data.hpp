#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ltsrepr/common.hpp"

namespace ltsrepr {

enum class Split { kMany, kMedium, kFew };

const char* split_name(Split s);

struct DatasetConfig {
  int num_classes = 10;
  int input_dim = 20;
  int max_count = 500;
  double imbalance_factor = 0.01;
  double class_separation = 4.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  int test_per_class = 100;

  void validate() const;
};

// A labelled sample set. Immutable once built; `splits` carries the
// Many/Medium/Few tag of each class as determined by the *training* counts,
// so a balanced test set shares its tags with the training set it pairs with.
struct LongTailDataset {
  Matrix features;            // N x D
  std::vector<int> labels;    // N, in [0, K)
  std::vector<int> class_counts;
  std::vector<double> frequencies;
  std::vector<Split> splits;

  std::size_t size() const { return labels.size(); }
  int num_classes() const { return static_cast<int>(class_counts.size()); }
  int input_dim() const { return static_cast<int>(features.cols()); }

  // Builds counts/frequencies from labels. Splits come from the counts.
  static LongTailDataset from_samples(Matrix features, std::vector<int> labels,
                                      int num_classes);
};

struct DatasetPair {
  LongTailDataset train;
  LongTailDataset test;
};

// n_k = max(1, round_half_up(n_max * gamma^(k / (K - 1)))).
std::vector<int> longtail_counts(int num_classes, int max_count,
                                 double imbalance_factor);

std::vector<Split> assign_splits(const std::vector<int>& class_counts);
Split split_for_count(int count);

DatasetPair make_longtail_dataset(const DatasetConfig& config);

// Per-feature standardization with statistics of `pair.train`, applied to
// both halves.
void standardize(DatasetPair& pair);

struct Batch {
  Matrix x;                 // B x D
  std::vector<int> labels;  // B
  Matrix targets;           // B x K soft targets; empty unless mixed
};

class Sampler {
 public:
  enum class Mode { kInstanceBalanced, kClassBalanced };

  Sampler(const LongTailDataset& dataset, Mode mode, Rng rng);

  std::size_t draw_index();
  Batch next_batch(int batch_size);

  // ceil(N / batch_size)
  std::size_t batches_per_epoch(int batch_size) const;

 private:
  const LongTailDataset* dataset_;
  Mode mode_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> by_class_;
};

Batch instance_balanced_batch(const LongTailDataset& dataset, int batch_size,
                              Rng& rng);
Batch class_balanced_batch(const LongTailDataset& dataset, int batch_size,
                           Rng& rng);

// Mixup with one lambda ~ Beta(alpha, alpha) for the whole batch.
Batch mixup_batch(const Batch& batch, int num_classes, double alpha, Rng& rng);
// Same, with lambda and pairing permutation given explicitly.
Batch mixup_batch_with(const Batch& batch, int num_classes, double lambda,
                       const std::vector<std::size_t>& permutation);

// "LTDATA01" binary record. Several records may follow each other in one
// stream; the dataset cache stores train then test.
void write_dataset(std::ostream& out, const LongTailDataset& dataset);
LongTailDataset read_dataset(std::istream& in);

void save_dataset_pair(const std::string& path, const DatasetPair& pair);
DatasetPair load_dataset_pair(const std::string& path);

}  // namespace ltsrepr
