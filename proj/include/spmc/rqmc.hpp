#pragma once

// Randomized quasi-Monte Carlo point sets: digitally shifted Sobol points,
// with maps to the box [-pi, pi)^d and to a Gaussian via the inverse CDF.

#include <cstdint>
#include <optional>

#include "spmc/common.hpp"

namespace spmc {

/// N x d points in [0,1)^d.
struct PointSet {
  Mat points;
  std::optional<std::uint64_t> shift_seed;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

/// Dimensions supported by the direction-number table.
int sobol_max_dimension();

/// First 2^m Sobol points in d dimensions, XOR-shifted by a random digital
/// shift drawn from `shift_seed` (no shift when absent).
PointSet sobol_points(int m, int d, std::optional<std::uint64_t> shift_seed);

/// N iid uniform points; the plain Monte Carlo counterpart of sobol_points.
PointSet random_points(int n, int d, std::uint64_t seed);

/// u -> 2 pi u - pi, coordinate-wise.
Mat to_uniform_box(const PointSet& ps);

/// Standard normal quantile. Inputs of exactly 0 are nudged to the smallest
/// positive double.
double normal_quantile(double u);

/// Rows Z_n = C V_n with V_n^j = Phi^{-1}(U_n^j); C is lower triangular.
Mat to_gaussian(const PointSet& ps, const Mat& chol_lower);

/// Smallest power of two >= n.
int next_pow2(int n);

}  // namespace spmc
