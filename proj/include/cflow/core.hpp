/*
  Common vocabulary for the cflow library: small dense types, the error
  hierarchy, a portable seeded RNG and a node-parallel loop helper.
*/

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cflow {

// Base manifolds used here have dimension <= 3; the ambient space adds one.
inline constexpr int kMaxBase = 3;
inline constexpr int kMaxAmbient = kMaxBase + 1;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxBase, kMaxBase>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxBase, 1>;
using AMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAmbient, kMaxAmbient>;
using AVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAmbient, 1>;

// Dense index-addressed tensors over the ambient index range 0..3.
using T2 = std::array<std::array<double, kMaxAmbient>, kMaxAmbient>;
using T3 = std::array<T2, kMaxAmbient>;
using T4 = std::array<T3, kMaxAmbient>;

/// Base-manifold point; unused trailing coordinates are zero.
using BasePoint = std::array<double, kMaxBase>;

enum class ErrorCode {
  OutOfRange,
  NotASpaceForm,
  WrongSignature,
  BadResolution,
  DegenerateMetric,
  NotSpacelike,
  OutsideCone,
  NonPositiveArgument,
  DegenerateSpread,
  LostAdmissibility,
  LostSpacelike,
  StepUnderflow,
  MeanCurvatureFloor,
  UnsupportedModel,
  NonPositiveSliceH,
  NewtonStall,
  LinearSolveFail,
  IndefiniteCoefficient,
  NonMonotone,
  BadPrecondition,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NotASpaceForm: return "NotASpaceForm";
    case ErrorCode::WrongSignature: return "WrongSignature";
    case ErrorCode::BadResolution: return "BadResolution";
    case ErrorCode::DegenerateMetric: return "DegenerateMetric";
    case ErrorCode::NotSpacelike: return "NotSpacelike";
    case ErrorCode::OutsideCone: return "OutsideCone";
    case ErrorCode::NonPositiveArgument: return "NonPositiveArgument";
    case ErrorCode::DegenerateSpread: return "DegenerateSpread";
    case ErrorCode::LostAdmissibility: return "LostAdmissibility";
    case ErrorCode::LostSpacelike: return "LostSpacelike";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::MeanCurvatureFloor: return "MeanCurvatureFloor";
    case ErrorCode::UnsupportedModel: return "UnsupportedModel";
    case ErrorCode::NonPositiveSliceH: return "NonPositiveSliceH";
    case ErrorCode::NewtonStall: return "NewtonStall";
    case ErrorCode::LinearSolveFail: return "LinearSolveFail";
    case ErrorCode::IndefiniteCoefficient: return "IndefiniteCoefficient";
    case ErrorCode::NonMonotone: return "NonMonotone";
    case ErrorCode::BadPrecondition: return "BadPrecondition";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline constexpr std::uint64_t kDefaultSeed = 20240611ULL;

/// mt19937_64 with hand-rolled uniforms so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = kDefaultSeed) : eng_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

/// Worker count from CFLOW_THREADS (default 1).
inline int thread_count() {
  static const int n = [] {
    const char* env = std::getenv("CFLOW_THREADS");
    if (env == nullptr) return 1;
    const int v = std::atoi(env);
    return v > 0 ? v : 1;
  }();
  return n;
}

/// Runs body(i) for i in [0, count). Bodies must only write to slot i, so the
/// result does not depend on the worker count. The first exception (in index
/// order of chunks) is rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  const int workers = thread_count();
  if (workers <= 1 || count < 256) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const std::size_t chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, w, &body, &errors] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace cflow
