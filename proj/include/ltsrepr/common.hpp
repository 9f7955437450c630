#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace ltsrepr {

// Row-major so that a row is one example / one output unit.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using Rng = std::mt19937_64;

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo = 2,
  kFormat = 3,
  kPrecondition = 4,
  kNumeric = 5,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

// splitmix64 finalizer; used to derive independent RNG streams from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix_seed(seed, stream));
}

// Stream tags for make_rng. Kept stable: changing one changes every result.
namespace stream {
inline constexpr std::uint64_t kClassMeans = 1;
inline constexpr std::uint64_t kTrainNoise = 2;
inline constexpr std::uint64_t kTestNoise = 3;
inline constexpr std::uint64_t kInit = 10;
inline constexpr std::uint64_t kBatches = 11;
inline constexpr std::uint64_t kMixup = 12;
inline constexpr std::uint64_t kRetrainInit = 20;
inline constexpr std::uint64_t kRetrainBatches = 21;
inline constexpr std::uint64_t kStochastic = 22;
inline constexpr std::uint64_t kEnsemble = 30;
inline constexpr std::uint64_t kAnalysis = 31;
}  // namespace stream

}  // namespace ltsrepr
