#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace stctr {

// Error taxonomy shared by the library and the CLI. The category maps to a
// process exit code so scripted pipelines can tell config mistakes from bad
// data or numeric blowups.
enum class ErrorCategory { kConfig, kData, kNumeric, kIo, kUsage };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::kConfig, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::kData, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::kNumeric, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::kIo, w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorCategory::kUsage, w) {}
};

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kData: return 3;
    case ErrorCategory::kNumeric: return 4;
    case ErrorCategory::kIo: return 5;
    case ErrorCategory::kUsage: return 2;
  }
  return 1;
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG with a fixed bit-level contract, so generated datasets and
// training runs are reproducible byte-for-byte from a seed alone.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  // Derive an independent stream, e.g. one per request id or shard.
  Rng fork(uint64_t stream) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return Rng(s);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // standard normal via Box-Muller, one value per call
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Samples from {0,..,n-1} with P(k) proportional to (k+1)^-exponent.
class ZipfSampler {
 public:
  ZipfSampler(size_t n, double exponent) : cdf_(n) {
    double total = 0.0;
    for (size_t k = 0; k < n; ++k) {
      total += std::pow(double(k + 1), -exponent);
      cdf_[k] = total;
    }
    for (double& c : cdf_) c /= total;
  }

  size_t sample(Rng& rng) const {
    double u = rng.uniform();
    size_t lo = 0, hi = cdf_.size() - 1;
    while (lo < hi) {
      size_t mid = (lo + hi) / 2;
      if (cdf_[mid] < u) lo = mid + 1; else hi = mid;
    }
    return lo;
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace stctr
