#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracle.hpp"
#include "spmc/families.hpp"

using namespace spmc;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Counts counts(const std::vector<int>& x) {
  Counts c(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) c[static_cast<Eigen::Index>(i)] = x[i];
  return c;
}

std::vector<double> stdvec(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("constructors enforce the parameter invariants") {
  CHECK_THROWS_AS(MultinomialModel(3, vec({0.5, 0.5, 0.0})), std::invalid_argument);
  CHECK_THROWS_AS(MultinomialModel(0, vec({0.5, 0.5})), std::invalid_argument);
  CHECK_THROWS_AS(MultinomialModel(2, vec({0.5, 0.6})), std::invalid_argument);
  CHECK_THROWS_AS(BernoulliVectorModel(vec({0.5, 1.0})), std::invalid_argument);
  CHECK_NOTHROW(MultinomialModel(1, vec({1.0})));
}

TEST_CASE("char_fn") {
  const Model m1 = MultinomialModel(1, vec({0.3, 0.7}));
  const auto v = char_fn(m1, vec({std::numbers::pi, 0.0}));
  CHECK(v.real() == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(std::abs(v.imag()) < 1e-15);

  const Model b = BernoulliVectorModel(vec({0.2, 0.9}));
  CHECK(char_fn(m1, Vec::Zero(2)) == std::complex<double>(1.0, 0.0));
  CHECK(char_fn(b, Vec::Zero(2)) == std::complex<double>(1.0, 0.0));

  SUBCASE("matches the enumerated expectation") {
    const std::vector<double> p{0.5, 0.5};
    const Model m = MultinomialModel(2, vec({0.5, 0.5}));
    const Vec z = vec({1.0, 0.0});
    std::complex<double> ref = 0.0;
    oracle::for_each_composition(2, 2, [&](const std::vector<int>& x) {
      ref += oracle::multinomial_pmf(2, p, x) * std::polar(1.0, z[0] * x[0] + z[1] * x[1]);
    });
    CHECK(std::abs(char_fn(m, z) - ref) < 1e-12);
  }

  SUBCASE("enumerable models, random z: enumeration and modulus bound") {
    Rng rng(7);
    std::uniform_real_distribution<double> unif(-4.0, 4.0);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 2 + trial % 3;
      const int n = 1 + trial % 10;
      Vec p = Vec::NullaryExpr(d, [&] { return 0.1 + std::abs(unif(rng)); });
      p /= p.sum();
      const Model m = MultinomialModel(n, p);
      const Vec z = Vec::NullaryExpr(d, [&] { return unif(rng); });
      std::complex<double> ref = 0.0;
      oracle::for_each_composition(n, d, [&](const std::vector<int>& x) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += z[j] * x[j];
        ref += oracle::multinomial_pmf(n, stdvec(p), x) * std::polar(1.0, dot);
      });
      CHECK(std::abs(char_fn(m, z) - ref) < 1e-10);
      CHECK(std::abs(char_fn(m, z)) <= 1.0 + 1e-15);

      Vec q = (p.array() * 0.9 + 0.05).matrix();
      const Model bm = BernoulliVectorModel(q);
      std::complex<double> bref = 0.0;
      oracle::for_each_binary(d, [&](const std::vector<int>& x) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += z[j] * x[j];
        bref += oracle::bernoulli_pmf(stdvec(q), x) * std::polar(1.0, dot);
      });
      CHECK(std::abs(char_fn(bm, z) - bref) < 1e-12);
    }
  }
}

TEST_CASE("cumulant and derivatives") {
  const Model m = MultinomialModel(1, vec({0.5, 0.5}));
  CHECK(cumulant(m, Vec::Zero(2)) == 0.0);
  CHECK(cumulant(m, vec({std::log(2.0), 0.0})) == doctest::Approx(std::log(1.5)).epsilon(1e-14));

  SUBCASE("cumulant equals the enumerated log MGF") {
    const std::vector<double> p{0.2, 0.8};
    const Model m3 = MultinomialModel(3, vec({0.2, 0.8}));
    const Vec rho = vec({0.5, -0.5});
    double mgf = 0.0;
    oracle::for_each_composition(3, 2, [&](const std::vector<int>& x) {
      mgf += oracle::multinomial_pmf(3, p, x) * std::exp(rho[0] * x[0] + rho[1] * x[1]);
    });
    CHECK(cumulant(m3, rho) == doctest::Approx(std::log(mgf)).epsilon(1e-13));
  }

  SUBCASE("gradient and hessian at simple points") {
    const Model m4 = MultinomialModel(4, vec({0.25, 0.75}));
    CHECK((cumulant_grad(m4, Vec::Zero(2)) - vec({1.0, 3.0})).norm() < 1e-14);
    const Model m1 = MultinomialModel(1, vec({1.0 / 3.0, 2.0 / 3.0}));
    CHECK((cumulant_grad(m1, vec({std::log(2.0), 0.0})) - vec({0.5, 0.5})).norm() < 1e-14);
    Mat expected(2, 2);
    expected << 0.75, -0.75, -0.75, 0.75;
    CHECK((cumulant_hess(m4, Vec::Zero(2)) - expected).norm() < 1e-14);
    const Model b = BernoulliVectorModel(vec({0.5, 0.5}));
    CHECK((cumulant_hess(b, Vec::Zero(2)) - 0.25 * Mat::Identity(2, 2)).norm() < 1e-15);
  }

  SUBCASE("finite-difference agreement for random rho") {
    Rng rng(11);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      const int d = 3;
      Vec p = Vec::NullaryExpr(d, [&] { return 0.2 + std::abs(unif(rng)); });
      p /= p.sum();
      const Vec rho = Vec::NullaryExpr(d, [&] { return unif(rng); });
      for (const Model& m : {Model(MultinomialModel(7, p)), Model(BernoulliVectorModel(p))}) {
        const Vec g = cumulant_grad(m, rho);
        const Mat h = cumulant_hess(m, rho);
        for (int j = 0; j < d; ++j) {
          const double step = 1e-6 * std::max(1.0, std::abs(rho[j]));
          Vec up = rho, dn = rho;
          up[j] += step;
          dn[j] -= step;
          const double fd = (cumulant(m, up) - cumulant(m, dn)) / (2 * step);
          CHECK(std::abs(fd - g[j]) <= 1e-5 * std::max(1.0, std::abs(g[j])));
          const Vec fdg = (cumulant_grad(m, up) - cumulant_grad(m, dn)) / (2 * step);
          CHECK((fdg - h.col(j)).norm() <= 1e-5 * std::max(1.0, h.col(j).norm()));
        }
      }
    }
  }
}

TEST_CASE("tilt") {
  const MultinomialModel m(1, vec({1.0 / 3.0, 2.0 / 3.0}));
  CHECK((tilt(m, vec({std::log(2.0), 0.0})).probs() - vec({0.5, 0.5})).norm() < 1e-15);
  CHECK((tilt(m, Vec::Zero(2)).probs() - m.probs()).norm() < 1e-15);

  SUBCASE("composition of tilts") {
    const MultinomialModel mm(5, vec({0.1, 0.3, 0.6}));
    const Vec a = vec({0.3, -1.2, 0.4}), b = vec({-0.7, 0.2, 1.1});
    CHECK((tilt(tilt(mm, a), b).probs() - tilt(mm, Vec(a + b)).probs()).cwiseAbs().maxCoeff() < 1e-12);
    const BernoulliVectorModel bm(vec({0.1, 0.5, 0.9}));
    CHECK((tilt(tilt(bm, a), b).probs() - tilt(bm, Vec(a + b)).probs()).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("tilted pmf equals exp(rho'x) f(x) / M(rho) pointwise") {
    const Model base = MultinomialModel(4, vec({0.2, 0.3, 0.5}));
    const Vec rho = vec({0.4, -0.3, 0.9});
    const Model t = tilt(base, rho);
    const double kappa = cumulant(base, rho);
    oracle::for_each_composition(4, 3, [&](const std::vector<int>& x) {
      const Counts c = counts(x);
      const double expected = std::exp(rho.dot(c.cast<double>()) - kappa) * pmf(base, c);
      CHECK(pmf(t, c) == doctest::Approx(expected).epsilon(1e-12));
    });
  }
}

TEST_CASE("pmf") {
  CHECK(pmf(MultinomialModel(2, vec({0.5, 0.5})), counts({1, 1})) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(pmf(BernoulliVectorModel(vec({0.5, 0.5})), counts({1, 0})) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(pmf(MultinomialModel(2, vec({0.5, 0.5})), counts({2, 1})) == 0.0);
  CHECK(pmf(MultinomialModel(2, vec({0.5, 0.5})), counts({3, -1})) == 0.0);
  CHECK(pmf(BernoulliVectorModel(vec({0.5, 0.5})), counts({2, 0})) == 0.0);

  for (int n = 1; n <= 10; ++n) {
    const Model m = MultinomialModel(n, vec({0.1, 0.2, 0.3, 0.4}));
    double total = 0.0;
    oracle::for_each_composition(n, 4, [&](const std::vector<int>& x) { total += pmf(m, counts(x)); });
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("sample") {
  SUBCASE("multinomial frequencies") {
    const Vec p = vec({0.1, 0.2, 0.3, 0.4});
    const Model m = MultinomialModel(100, p);
    Rng rng(3);
    const int draws = 100000;
    Vec total = Vec::Zero(4);
    for (int s = 0; s < draws; ++s) total += sample(m, rng).cast<double>();
    for (int j = 0; j < 4; ++j) {
      const double freq = total[j] / (100.0 * draws);
      const double sigma = std::sqrt(p[j] * (1 - p[j]) / (100.0 * draws));
      CHECK(std::abs(freq - p[j]) < 4 * sigma);
    }
  }
  SUBCASE("bernoulli means") {
    const Vec q = vec({0.99, 0.01});
    const Model m = BernoulliVectorModel(q);
    Rng rng(4);
    const int draws = 100000;
    Vec total = Vec::Zero(2);
    for (int s = 0; s < draws; ++s) total += sample(m, rng).cast<double>();
    for (int j = 0; j < 2; ++j) {
      const double sigma = std::sqrt(q[j] * (1 - q[j]) / draws);
      CHECK(std::abs(total[j] / draws - q[j]) < 4 * sigma);
    }
  }
  SUBCASE("fixed seed reproduces the sequence") {
    const Model m = MultinomialModel(50, vec({0.3, 0.3, 0.4}));
    Rng a(99), b(99);
    for (int s = 0; s < 10; ++s) CHECK(sample(m, a) == sample(m, b));
  }
}
