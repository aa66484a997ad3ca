#include "spmc/rqmc.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/random/detail/sobol_table.hpp>

namespace spmc {
namespace {

constexpr int kBits = 32;
constexpr int kMaxDim = 1024;

// Direction numbers v[dim][bit], left-aligned in 32 bits (Joe-Kuo primitive
// polynomials and initial values, as tabulated in Boost.Random).
class DirectionTable {
 public:
  DirectionTable() : v_(static_cast<std::size_t>(kMaxDim) * kBits) {
    using table = boost::random::detail::qrng_tables::sobol;
    for (int k = 0; k < kBits; ++k) at(0, k) = 1u << (kBits - 1 - k);
    for (int d = 1; d < kMaxDim; ++d) {
      const unsigned poly = table::polynomial(d - 1);
      int degree = 0;
      while ((poly >> (degree + 1)) != 0) ++degree;
      std::array<std::uint32_t, kBits> m{};
      for (int k = 0; k < degree && k < kBits; ++k) m[k] = table::minit(d - 1, k);
      for (int k = degree; k < kBits; ++k) {
        std::uint32_t val = m[k - degree] ^ (m[k - degree] << degree);
        for (int b = 1; b < degree; ++b) {
          if ((poly >> (degree - b)) & 1u) val ^= m[k - b] << b;
        }
        m[k] = val;
      }
      for (int k = 0; k < kBits; ++k) at(d, k) = m[k] << (kBits - 1 - k);
    }
  }

  std::uint32_t operator()(int d, int k) const { return v_[static_cast<std::size_t>(d) * kBits + k]; }

 private:
  std::uint32_t& at(int d, int k) { return v_[static_cast<std::size_t>(d) * kBits + k]; }
  std::vector<std::uint32_t> v_;
};

const DirectionTable& directions() {
  static const DirectionTable table;
  return table;
}

}  // namespace

int sobol_max_dimension() { return kMaxDim; }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

PointSet sobol_points(int m, int d, std::optional<std::uint64_t> shift_seed) {
  if (m < 0 || m >= kBits) throw std::invalid_argument("sobol_points: m out of range");
  if (d < 1 || d > kMaxDim) throw std::invalid_argument("sobol_points: dimension exceeds the direction-number table");
  const auto& v = directions();
  std::vector<std::uint32_t> shift(d, 0u);
  if (shift_seed) {
    Rng rng(*shift_seed);
    for (auto& s : shift) s = static_cast<std::uint32_t>(rng() >> 32);
  }
  const Eigen::Index n = Eigen::Index{1} << m;
  PointSet ps{Mat(n, d), shift_seed};
  // Gray-code order visits the same 2^m points; natural order is kept so that
  // point i is the XOR of direction numbers over the set bits of i.
  std::vector<std::uint32_t> x(d, 0u);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      std::uint32_t acc = 0;
      for (int k = 0; k < m; ++k) {
        if ((i >> k) & 1) acc ^= v(j, k);
      }
      ps.points(i, j) = static_cast<double>(acc ^ shift[j]) * 0x1.0p-32;
    }
  }
  return ps;
}

PointSet random_points(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 0) throw std::invalid_argument("random_points: bad size");
  Rng rng(seed);
  PointSet ps{Mat(n, d), std::nullopt};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ps.points(i, j) = uniform01(rng);
  }
  return ps;
}

Mat to_uniform_box(const PointSet& ps) {
  return (2.0 * std::numbers::pi * ps.points.array() - std::numbers::pi).matrix();
}

double normal_quantile(double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("normal_quantile: argument outside [0,1]");
  if (u <= 0.0) u = std::numeric_limits<double>::denorm_min();
  if (u >= 1.0) u = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
}

Mat to_gaussian(const PointSet& ps, const Mat& chol_lower) {
  if (chol_lower.rows() != ps.dim() || chol_lower.cols() != ps.dim()) {
    throw std::invalid_argument("to_gaussian: factor dimension mismatch");
  }
  Mat v = ps.points.unaryExpr([](double u) { return normal_quantile(u); });
  return v * chol_lower.transpose();
}

}  // namespace spmc
