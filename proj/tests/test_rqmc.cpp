#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracle.hpp"
#include "spmc/rqmc.hpp"

using namespace spmc;

TEST_CASE("sobol_points basics") {
  const PointSet ps = sobol_points(1, 1, std::nullopt);
  REQUIRE(ps.size() == 2);
  CHECK(ps.points(0, 0) == 0.0);
  CHECK(ps.points(1, 0) == 0.5);

  const PointSet p3 = sobol_points(3, 1, std::nullopt);
  std::vector<double> col(p3.points.data(), p3.points.data() + 8);
  std::sort(col.begin(), col.end());
  for (int i = 0; i < 8; ++i) CHECK(col[i] == i / 8.0);

  CHECK(sobol_max_dimension() >= 64);
  CHECK_THROWS_AS(sobol_points(2, sobol_max_dimension() + 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sobol_points(2, 0, 1), std::invalid_argument);

  const PointSet a = sobol_points(6, 9, 1234), b = sobol_points(6, 9, 1234);
  CHECK(a.points == b.points);
  CHECK(a.points.minCoeff() >= 0.0);
  CHECK(a.points.maxCoeff() < 1.0);
}

TEST_CASE("every 2^m prefix is a (0,m,1)-net in each coordinate") {
  const int m = 8, d = 32;
  const PointSet ps = sobol_points(m, d, 77);
  for (int j = 0; j < d; ++j) {
    std::vector<int> bins(1 << m, 0);
    for (int i = 0; i < (1 << m); ++i) ++bins[static_cast<int>(ps.points(i, j) * (1 << m))];
    CHECK(std::all_of(bins.begin(), bins.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("randomized points are marginally uniform") {
  const int m = 6, d = 5, shifts = 100;
  const double n = 1 << m;
  for (int j = 0; j < d; ++j) {
    double mean_total = 0.0;
    std::vector<double> pooled;
    for (int s = 0; s < shifts; ++s) {
      const PointSet ps = sobol_points(m, d, static_cast<std::uint64_t>(s) + 1);
      mean_total += ps.points.col(j).mean();
      pooled.push_back(ps.points(0, j));
    }
    CHECK(std::abs(mean_total / shifts - 0.5) < 4.0 / std::sqrt(n));
    // Kolmogorov-Smirnov on the first point across shifts; 1% critical value.
    std::sort(pooled.begin(), pooled.end());
    double ks = 0.0;
    for (int i = 0; i < shifts; ++i)
      ks = std::max({ks, std::abs((i + 1.0) / shifts - pooled[i]), std::abs(pooled[i] - i / double(shifts))});
    CHECK(ks < 1.63 / std::sqrt(double(shifts)));
  }
}

TEST_CASE("to_uniform_box") {
  PointSet ps;
  ps.points = Mat(2, 1);
  ps.points << 0.5, 0.0;
  const Mat z = to_uniform_box(ps);
  CHECK(z(0, 0) == 0.0);
  CHECK(z(1, 0) == -std::numbers::pi);

  const Mat big = to_uniform_box(random_points(200000, 1, 3));
  const double mean = big.mean();
  const double var = (big.array() - mean).square().sum() / (big.rows() - 1.0);
  CHECK(var == doctest::Approx(std::numbers::pi * std::numbers::pi / 3.0).epsilon(0.02));
}

TEST_CASE("normal_quantile") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(std::isfinite(normal_quantile(0.0)));
  CHECK(normal_quantile(0.0) < -38.0);
  // Round trip through the normal CDF written independently with erfc.
  for (double u : {1e-300, 1e-12, 0.001, 0.2, 0.7, 0.999, 1.0 - 1e-16}) {
    const double x = normal_quantile(u);
    const double back = 0.5 * std::erfc(-x / std::sqrt(2.0));
    CHECK(std::abs(back - u) <= 1e-9 * std::max(u, 1e-3));
  }
}

TEST_CASE("to_gaussian") {
  PointSet half;
  half.points = Mat::Constant(1, 3, 0.5);
  CHECK(to_gaussian(half, Mat::Identity(3, 3)).isZero());

  SUBCASE("identity covariance") {
    const PointSet ps = sobol_points(14, 2, 5);
    const Mat z = to_gaussian(ps, Mat::Identity(2, 2));
    const Mat centered = z.rowwise() - z.colwise().mean();
    const Mat cov = centered.transpose() * centered / (z.rows() - 1.0);
    CHECK((cov - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(double(z.rows())));
  }
  SUBCASE("general covariance") {
    Mat c(2, 2);
    c << 2.0, 0.0, -1.0, 0.5;
    const Mat z = to_gaussian(random_points(200000, 2, 8), c);
    const Mat centered = z.rowwise() - z.colwise().mean();
    const Mat cov = centered.transpose() * centered / (z.rows() - 1.0);
    CHECK((cov - c * c.transpose()).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("RQMC beats plain MC on a smooth integrand") {
  const int m = 8, d = 3, reps = 200;
  auto integrate = [&](const PointSet& ps) {
    const Mat z = to_uniform_box(ps);
    return (-(z.rowwise().squaredNorm().array())).exp().mean();
  };
  std::vector<double> q, mc;
  for (int r = 0; r < reps; ++r) {
    q.push_back(integrate(sobol_points(m, d, 1000 + r)));
    mc.push_back(integrate(random_points(1 << m, d, 5000 + r)));
  }
  CHECK(oracle::mean_se(q).sd < oracle::mean_se(mc).sd);
}

TEST_CASE("next_pow2") {
  CHECK(next_pow2(1) == 1);
  CHECK(next_pow2(16) == 16);
  CHECK(next_pow2(17) == 32);
  CHECK(next_pow2(20000) == 32768);
}
