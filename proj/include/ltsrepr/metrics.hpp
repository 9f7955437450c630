#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltsrepr/common.hpp"
#include "ltsrepr/data.hpp"
#include "ltsrepr/netcore.hpp"
#include "ltsrepr/swag.hpp"

namespace ltsrepr {

// Row-wise argmax; ties go to the lowest class index.
int argmax_lowest(const RowVector& row);

struct SplitAccuracy {
  double all = 0.0;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
};

// `class_splits[k]` is the split tag of class k. A split with no examples is
// reported as absent.
SplitAccuracy accuracy(const Matrix& probs, const std::vector<int>& labels,
                       const std::vector<Split>& class_splits);

// Mean of -log p_y, p_y floored at 1e-30. In nats.
double nll(const Matrix& probs, const std::vector<int>& labels);
std::vector<double> nll_per_instance(const Matrix& probs, const std::vector<int>& labels);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct EceResult {
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
};

inline constexpr int kDefaultEceBins = 15;

// Bins ((n-1)/N, n/N] on max confidence; confidence 0 goes to the first bin.
EceResult ece(const Matrix& probs, const std::vector<int>& labels,
              int n_bins = kDefaultEceBins);

double entropy(const Vector& p);

// Mean cosine distance of each representation to the centroid. A zero-norm
// vector contributes 1.
double dispersion_repr(const std::vector<Vector>& reps);

// Generalized JSD with uniform weights: H(mean) - mean(H), nats.
double dispersion_prob(const std::vector<Vector>& probs);

struct Pcc {
  double value = 0.0;
  bool defined = false;
};

Pcc pearson(const std::vector<double>& a, const std::vector<double>& b);

struct BoxStats {
  std::size_t count = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

BoxStats box_stats(std::vector<double> values);

struct QuartileAnalysis {
  std::array<BoxStats, 4> nll;         // per NLL group Q1..Q4
  std::array<BoxStats, 4> dispersion;  // dispersion within each group
  std::vector<int> group;              // group index of every instance
  Pcc pcc;
};

QuartileAnalysis quartile_analysis(const std::vector<double>& nll_values,
                                   const std::vector<double>& dispersion_values);

// Optional hook applied to each member's logits before the softmax (used for
// DisAlign calibration).
using LogitTransform = std::function<Matrix(const Matrix&)>;

// (1/M) sum_m softmax(phi(F_{theta_m}(x))), theta_m ~ posterior.
Matrix ensemble_predict(const Matrix& x, const SwagPosterior& posterior,
                        const Classifier& phi, Activation act, int num_members,
                        Rng& rng, const LogitTransform& transform = {});

struct ClassDiagnostics {
  std::vector<double> weight_norms;
  std::vector<double> marginal;
  std::vector<CalibrationBin> reliability;
};

ClassDiagnostics per_class_diagnostics(const Classifier& phi, const Matrix& probs,
                                       const std::vector<int>& labels,
                                       int n_bins = kDefaultEceBins);

struct MetricsReport {
  SplitAccuracy acc;
  double nll = 0.0;
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
  std::size_t num_examples = 0;
  int ensemble_m = 0;  // 0: point prediction
};

MetricsReport evaluate_probs(const Matrix& probs, const std::vector<int>& labels,
                             const std::vector<Split>& class_splits,
                             int n_bins = kDefaultEceBins);

nlohmann::json bins_to_json(const std::vector<CalibrationBin>& bins);
nlohmann::json to_json(const MetricsReport& report);
std::string to_csv(const MetricsReport& report);
std::string bins_to_csv(const std::vector<CalibrationBin>& bins);

}  // namespace ltsrepr
