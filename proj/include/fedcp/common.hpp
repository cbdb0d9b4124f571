#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedcp {

// ---------------------------------------------------------------------------
// Error taxonomy. Every throwing path in the library uses one of these so
// callers can distinguish bad input files from bad configuration from
// internal numeric problems.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class FormatError : public Error {  // malformed input file; message carries the line number
 public:
  explicit FormatError(const std::string& w) : Error(w) {}
};
class IntegrityError : public Error {  // structurally invalid dataset (self-loop, dangling edge, ...)
 public:
  explicit IntegrityError(const std::string& w) : Error(w) {}
};
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(w) {}
};
class KernelError : public Error {  // shape mismatch or non-finite operand in a numeric kernel
 public:
  explicit KernelError(const std::string& w) : Error(w) {}
};
class OptimizerError : public Error {
 public:
  explicit OptimizerError(const std::string& w) : Error(w) {}
};
class ModelError : public Error {
 public:
  explicit ModelError(const std::string& w) : Error(w) {}
};
class FederationError : public Error {
 public:
  explicit FederationError(const std::string& w) : Error(w) {}
};
class ScoreError : public Error {
 public:
  explicit ScoreError(const std::string& w) : Error(w) {}
};
class MetricsError : public Error {
 public:
  explicit MetricsError(const std::string& w) : Error(w) {}
};
class IoError : public Error {
 public:
  explicit IoError(const std::string& w) : Error(w) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness. All stochastic code paths draw from an explicitly
// seeded Rng; substreams are derived with splitmix64 so (seed, salt, salt)
// tuples give stable, independent streams regardless of call order or thread
// schedule. Uniform and normal variates are generated by hand instead of
// through <random> distributions, whose output is implementation-defined.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x2545f4914f6cdd1dULL)) {
    // avoid the all-zero fixed point of xorshift-style updates
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
  }

  std::uint64_t next() {
    // xorshift64* core, then a splitmix64 finalizer for output decorrelation
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return splitmix64(state_ * 0x2545f4914f6cdd1dULL);
  }

  /// Uniform double in [0, 1), 53 bits of precision.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; stateless (one variate per call).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    int v = int(uniform() * double(n));
    return v >= n ? n - 1 : v;
  }

  /// Fisher-Yates permutation of [0, n).
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

 private:
  std::uint64_t state_;
};

/// Derive an independent stream from (seed, salt_a, salt_b).
inline Rng make_rng(std::uint64_t seed, std::uint64_t salt_a = 0, std::uint64_t salt_b = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ splitmix64(salt_a + 0x165667b19e3779f9ULL));
  s = splitmix64(s ^ splitmix64(salt_b + 0x27d4eb2f165667c5ULL));
  return Rng(s);
}

// ---------------------------------------------------------------------------
// Warning sink. Clamps and fallbacks that should be visible go through here;
// tests can capture it.
// ---------------------------------------------------------------------------

inline std::function<void(const std::string&)>& log_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& m) {
    std::cerr << "[fedcp] " << m << "\n";
  };
  return sink;
}

inline void log_warn(const std::string& msg) {
  if (log_sink()) log_sink()(msg);
}

}  // namespace fedcp
