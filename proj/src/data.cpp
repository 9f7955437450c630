#include "ltsrepr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/QR>

#include "binio.hpp"

namespace ltsrepr {
namespace {

constexpr std::string_view kDatasetMagic = "LTDATA01";

// Class means at pairwise distance >= separation. With K <= D the means are
// scaled orthonormal directions (all distances exactly equal); otherwise random
// points on a sphere are accepted only if they keep the distance bound.
Matrix make_class_means(int num_classes, int dim, double separation, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(num_classes, dim);
  if (num_classes <= dim) {
    Eigen::MatrixXd g(dim, num_classes);
    for (int j = 0; j < num_classes; ++j)
      for (int i = 0; i < dim; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q =
        qr.householderQ() * Eigen::MatrixXd::Identity(dim, num_classes);
    const double scale = separation / std::sqrt(2.0);
    for (int k = 0; k < num_classes; ++k) means.row(k) = q.col(k).transpose() * scale;
    return means;
  }
  double radius = separation;
  int placed = 0;
  int attempts = 0;
  while (placed < num_classes) {
    RowVector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
    v *= radius / v.norm();
    bool ok = true;
    for (int j = 0; j < placed && ok; ++j)
      ok = (means.row(j) - v).norm() >= separation;
    if (ok) {
      means.row(placed++) = v;
      attempts = 0;
    } else if (++attempts > 1000) {
      radius *= 1.1;
      attempts = 0;
    }
  }
  return means;
}

void fill_class_rows(Matrix& x, std::vector<int>& labels, std::size_t& row,
                     const RowVector& mean, int label, int count,
                     double noise_std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < count; ++i, ++row) {
    for (Eigen::Index d = 0; d < x.cols(); ++d)
      x(static_cast<Eigen::Index>(row), d) = mean(d) + noise_std * normal(rng);
    labels[row] = label;
  }
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kMany: return "many";
    case Split::kMedium: return "medium";
    case Split::kFew: return "few";
  }
  return "?";
}

void DatasetConfig::validate() const {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "num_classes must be >= 2");
  require(input_dim >= 1, ErrorCode::kInvalidArgument, "input_dim must be >= 1");
  require(max_count >= 1, ErrorCode::kInvalidArgument, "max_count must be >= 1");
  require(imbalance_factor > 0.0 && imbalance_factor <= 1.0,
          ErrorCode::kInvalidArgument, "imbalance_factor must be in (0, 1]");
  require(class_separation > 0.0, ErrorCode::kInvalidArgument,
          "class_separation must be positive");
  require(noise_std >= 0.0, ErrorCode::kInvalidArgument, "noise_std must be >= 0");
  require(test_per_class >= 1, ErrorCode::kInvalidArgument,
          "test_per_class must be >= 1");
}

LongTailDataset LongTailDataset::from_samples(Matrix features,
                                              std::vector<int> labels,
                                              int num_classes) {
  require(features.rows() == static_cast<Eigen::Index>(labels.size()),
          ErrorCode::kInvalidArgument, "feature rows and label count differ");
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "need at least two classes");
  LongTailDataset ds;
  ds.class_counts.assign(num_classes, 0);
  for (int y : labels) {
    require(y >= 0 && y < num_classes, ErrorCode::kInvalidArgument,
            "label out of range");
    ++ds.class_counts[y];
  }
  const double n = static_cast<double>(labels.size());
  ds.frequencies.resize(num_classes);
  for (int k = 0; k < num_classes; ++k) ds.frequencies[k] = ds.class_counts[k] / n;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.splits = assign_splits(ds.class_counts);
  return ds;
}

std::vector<int> longtail_counts(int num_classes, int max_count,
                                 double imbalance_factor) {
  require(num_classes >= 2, ErrorCode::kInvalidArgument, "num_classes must be >= 2");
  require(imbalance_factor > 0.0 && imbalance_factor <= 1.0,
          ErrorCode::kInvalidArgument, "imbalance_factor must be in (0, 1]");
  std::vector<int> counts(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const double expo = static_cast<double>(k) / (num_classes - 1);
    const double raw = max_count * std::pow(imbalance_factor, expo);
    counts[k] = std::max(1, static_cast<int>(std::floor(raw + 0.5)));
  }
  return counts;
}

Split split_for_count(int count) {
  if (count > 100) return Split::kMany;
  if (count >= 20) return Split::kMedium;
  return Split::kFew;
}

std::vector<Split> assign_splits(const std::vector<int>& class_counts) {
  std::vector<Split> out;
  out.reserve(class_counts.size());
  for (int c : class_counts) out.push_back(split_for_count(c));
  return out;
}

DatasetPair make_longtail_dataset(const DatasetConfig& config) {
  config.validate();
  const int K = config.num_classes;
  const int D = config.input_dim;
  Rng mean_rng = make_rng(config.seed, stream::kClassMeans);
  const Matrix means = make_class_means(K, D, config.class_separation, mean_rng);

  const std::vector<int> counts =
      longtail_counts(K, config.max_count, config.imbalance_factor);
  const std::size_t n_train =
      static_cast<std::size_t>(std::accumulate(counts.begin(), counts.end(), 0));

  Matrix x_train(static_cast<Eigen::Index>(n_train), D);
  std::vector<int> y_train(n_train);
  Rng train_rng = make_rng(config.seed, stream::kTrainNoise);
  std::size_t row = 0;
  for (int k = 0; k < K; ++k)
    fill_class_rows(x_train, y_train, row, means.row(k), k, counts[k],
                    config.noise_std, train_rng);

  const std::size_t n_test = static_cast<std::size_t>(K) * config.test_per_class;
  Matrix x_test(static_cast<Eigen::Index>(n_test), D);
  std::vector<int> y_test(n_test);
  Rng test_rng = make_rng(config.seed, stream::kTestNoise);
  row = 0;
  for (int k = 0; k < K; ++k)
    fill_class_rows(x_test, y_test, row, means.row(k), k, config.test_per_class,
                    config.noise_std, test_rng);

  DatasetPair pair;
  pair.train = LongTailDataset::from_samples(std::move(x_train), std::move(y_train), K);
  pair.test = LongTailDataset::from_samples(std::move(x_test), std::move(y_test), K);
  pair.test.splits = pair.train.splits;
  return pair;
}

void standardize(DatasetPair& pair) {
  Matrix& tr = pair.train.features;
  require(tr.rows() > 0, ErrorCode::kInvalidArgument, "empty training set");
  const RowVector mean = tr.colwise().mean();
  RowVector stddev = ((tr.rowwise() - mean).array().square().colwise().sum() /
                      static_cast<double>(tr.rows()))
                         .sqrt();
  for (Eigen::Index d = 0; d < stddev.size(); ++d)
    if (stddev(d) <= 0.0) stddev(d) = 1.0;
  auto apply = [&](Matrix& m) {
    m = ((m.rowwise() - mean).array().rowwise() / stddev.array()).matrix();
  };
  apply(tr);
  apply(pair.test.features);
}

namespace {

std::vector<std::vector<std::size_t>> group_by_class(const LongTailDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  for (std::size_t k = 0; k < by_class.size(); ++k)
    require(!by_class[k].empty(), ErrorCode::kInvalidArgument,
            "class " + std::to_string(k) + " has no examples");
  return by_class;
}

std::size_t draw_instance(const LongTailDataset& ds, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  return pick(rng);
}

// P(i) = 1 / (K * n_{y_i})
std::size_t draw_class_balanced(const std::vector<std::vector<std::size_t>>& by_class,
                                Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick_class(0, by_class.size() - 1);
  const auto& members = by_class[pick_class(rng)];
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  return members[pick(rng)];
}

template <class Draw>
Batch gather_batch(const LongTailDataset& ds, int batch_size, Draw&& draw) {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  Batch b;
  b.x.resize(batch_size, ds.input_dim());
  b.labels.resize(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t idx = draw();
    b.x.row(i) = ds.features.row(static_cast<Eigen::Index>(idx));
    b.labels[i] = ds.labels[idx];
  }
  return b;
}

}  // namespace

Sampler::Sampler(const LongTailDataset& dataset, Mode mode, Rng rng)
    : dataset_(&dataset), mode_(mode), rng_(std::move(rng)) {
  require(dataset.size() > 0, ErrorCode::kInvalidArgument, "empty dataset");
  if (mode_ == Mode::kClassBalanced) by_class_ = group_by_class(dataset);
}

std::size_t Sampler::draw_index() {
  if (mode_ == Mode::kInstanceBalanced) return draw_instance(*dataset_, rng_);
  return draw_class_balanced(by_class_, rng_);
}

Batch Sampler::next_batch(int batch_size) {
  return gather_batch(*dataset_, batch_size, [this] { return draw_index(); });
}

std::size_t Sampler::batches_per_epoch(int batch_size) const {
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  return (dataset_->size() + bs - 1) / bs;
}

Batch instance_balanced_batch(const LongTailDataset& dataset, int batch_size,
                              Rng& rng) {
  require(dataset.size() > 0, ErrorCode::kInvalidArgument, "empty dataset");
  return gather_batch(dataset, batch_size,
                      [&] { return draw_instance(dataset, rng); });
}

Batch class_balanced_batch(const LongTailDataset& dataset, int batch_size,
                           Rng& rng) {
  require(dataset.size() > 0, ErrorCode::kInvalidArgument, "empty dataset");
  const auto by_class = group_by_class(dataset);
  return gather_batch(dataset, batch_size,
                      [&] { return draw_class_balanced(by_class, rng); });
}

Batch mixup_batch_with(const Batch& batch, int num_classes, double lambda,
                       const std::vector<std::size_t>& permutation) {
  const auto n = static_cast<std::size_t>(batch.x.rows());
  require(n >= 2, ErrorCode::kInvalidArgument, "mixup needs at least two examples");
  require(permutation.size() == n, ErrorCode::kInvalidArgument,
          "permutation size mismatch");
  Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(n), num_classes);
  for (std::size_t i = 0; i < n; ++i)
    onehot(static_cast<Eigen::Index>(i), batch.labels[i]) = 1.0;
  Batch out;
  out.x.resize(batch.x.rows(), batch.x.cols());
  out.targets.resize(static_cast<Eigen::Index>(n), num_classes);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto p = static_cast<Eigen::Index>(permutation[i]);
    out.x.row(r) = lambda * batch.x.row(r) + (1.0 - lambda) * batch.x.row(p);
    out.targets.row(r) = lambda * onehot.row(r) + (1.0 - lambda) * onehot.row(p);
    out.labels[i] = lambda >= 0.5 ? batch.labels[i] : batch.labels[permutation[i]];
  }
  return out;
}

Batch mixup_batch(const Batch& batch, int num_classes, double alpha, Rng& rng) {
  require(alpha > 0.0, ErrorCode::kInvalidArgument, "mixup alpha must be positive");
  std::gamma_distribution<double> ga(alpha, 1.0);
  const double a = ga(rng);
  const double b = ga(rng);
  const double lambda = (a + b) > 0.0 ? a / (a + b) : 0.5;
  std::vector<std::size_t> perm(static_cast<std::size_t>(batch.x.rows()));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return mixup_batch_with(batch, num_classes, lambda, perm);
}

void write_dataset(std::ostream& out, const LongTailDataset& dataset) {
  binio::write_magic(out, kDatasetMagic);
  binio::write_u32(out, static_cast<std::uint32_t>(dataset.size()));
  binio::write_u32(out, static_cast<std::uint32_t>(dataset.num_classes()));
  binio::write_u32(out, static_cast<std::uint32_t>(dataset.input_dim()));
  for (Eigen::Index i = 0; i < dataset.features.rows(); ++i)
    for (Eigen::Index d = 0; d < dataset.features.cols(); ++d)
      binio::write_f32(out, static_cast<float>(dataset.features(i, d)));
  for (int y : dataset.labels) binio::write_u32(out, static_cast<std::uint32_t>(y));
}

LongTailDataset read_dataset(std::istream& in) {
  binio::expect_magic(in, kDatasetMagic);
  const std::uint32_t n = binio::read_u32(in);
  const std::uint32_t k = binio::read_u32(in);
  const std::uint32_t d = binio::read_u32(in);
  require(k >= 2 && d >= 1, ErrorCode::kFormat, "bad dataset header");
  Matrix x(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) x(i, j) = binio::read_f32(in);
  std::vector<int> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t y = binio::read_u32(in);
    require(y < k, ErrorCode::kFormat, "label out of range in dataset file");
    labels[i] = static_cast<int>(y);
  }
  return LongTailDataset::from_samples(std::move(x), std::move(labels),
                                       static_cast<int>(k));
}

void save_dataset_pair(const std::string& path, const DatasetPair& pair) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  write_dataset(out, pair.train);
  write_dataset(out, pair.test);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

DatasetPair load_dataset_pair(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  DatasetPair pair;
  pair.train = read_dataset(in);
  pair.test = read_dataset(in);
  require(pair.train.num_classes() == pair.test.num_classes() &&
              pair.train.input_dim() == pair.test.input_dim(),
          ErrorCode::kFormat, "train/test shapes differ in " + path);
  pair.test.splits = pair.train.splits;
  return pair;
}

}  // namespace ltsrepr
