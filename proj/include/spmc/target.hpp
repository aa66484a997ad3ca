#pragma once

// Un-normalized log posterior targets consumed by the inference routines.

#include <cstdint>
#include <span>

#include "spmc/common.hpp"

namespace spmc {

struct LikelihoodEval {
  double value = 0.0;  // NaN when invalid
  bool valid = true;
  int invalid_count = 0;
  int tilt_fallbacks = 0;
};

class LogPosterior {
 public:
  virtual ~LogPosterior() = default;

  /// Parameter dimension.
  virtual int dim() const = 0;
  /// Number of independent likelihood factors (stations).
  virtual int units() const = 0;

  virtual double log_prior(const Vec& params) const = 0;

  /// Sum of log-likelihood estimates over `subset` (all units when empty).
  /// Unit k draws its randomness from (seed, k), so a fixed seed gives a
  /// deterministic function of params. n_is <= 0 selects the target default.
  virtual LikelihoodEval log_likelihood(const Vec& params, std::span<const int> subset, int n_is,
                                        std::uint64_t seed) const = 0;

  /// True when log_likelihood is exact (seed and n_is are ignored).
  virtual bool exact() const { return false; }
};

}  // namespace spmc
