#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "exact_target.hpp"
#include "spmc/inference.hpp"

using namespace spmc;

namespace {

ModelSpec make_spec(Variant v, int I, int J) {
  ModelSpec s;
  s.variant = v;
  s.I = I;
  s.J = J;
  return s;
}

// One-parameter model2 problem on 2 x 2 tables, small enough to enumerate.
struct OneParamCase {
  ModelSpec spec = make_spec(Variant::model2, 2, 2);
  std::vector<StationData> data;
  oracle::Quadrature1D quad;

  OneParamCase() {
    SynthOptions opt;
    opt.K = 20;
    opt.n = 10;
    opt.seed = 2024;
    data = synth_generate(spec, Theta{Vec::Constant(1, 0.8), {}}, opt);
    const oracle::ExactEIPosterior exact(spec, data);
    quad = oracle::quadrature_1d(
        [&](double t) {
          const Vec p = Vec::Constant(1, t);
          return exact.log_prior(p) + exact.log_likelihood(p, {}, 0, 0).value;
        },
        -8.0, 8.0);
  }
};

const OneParamCase& one_param() {
  static const OneParamCase c;
  return c;
}

}  // namespace

TEST_CASE("ess") {
  const std::vector<double> eq(10, -3.0);
  CHECK(ess(eq) == doctest::Approx(10.0).epsilon(1e-14));
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> one{ninf, 2.0, ninf};
  CHECK(ess(one) == 1.0);
  Rng rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  std::vector<double> lw(200);
  for (auto& x : lw) x = g(rng) + 500.0;
  double s1 = 0.0, s2 = 0.0;
  for (double x : lw) {
    s1 += std::exp(x - 500.0);
    s2 += std::exp(2 * (x - 500.0));
  }
  CHECK(ess(lw) == doctest::Approx(s1 * s1 / s2).epsilon(1e-10));
}

TEST_CASE("chain_ess") {
  Rng rng(2);
  std::normal_distribution<double> g;
  std::vector<double> iid(20000);
  for (auto& x : iid) x = g(rng);
  CHECK(chain_ess(iid) == doctest::Approx(20000).epsilon(0.1));
  // AR(1) with rho = 0.9: integrated autocorrelation time (1 + rho) / (1 - rho) = 19.
  std::vector<double> ar(100000);
  double x = 0.0;
  for (auto& v : ar) v = x = 0.9 * x + std::sqrt(1 - 0.81) * g(rng);
  CHECK(chain_ess(ar) == doctest::Approx(100000 / 19.0).epsilon(0.15));
}

TEST_CASE("log10_bayes_factor") {
  CHECK(log10_bayes_factor(3.0, 3.0) == 0.0);
  CHECK(log10_bayes_factor(std::log(10.0), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(log10_bayes_factor(std::nan(""), 0.0), std::invalid_argument);
}

TEST_CASE("jackknife_log_mean_se") {
  const std::vector<double> equal(10, -3.0);
  CHECK(jackknife_log_mean_se(equal) == doctest::Approx(0.0));

  // direct leave-one-out recomputation
  const std::vector<double> lw = {0.1, -2.0, 1.5, 0.0, -0.7, 3.0, -std::numeric_limits<double>::infinity()};
  const std::size_t n = lw.size();
  std::vector<double> loo;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) s += std::exp(lw[j]);
    }
    loo.push_back(std::log(s / (n - 1)));
  }
  double m = 0.0;
  for (double v : loo) m += v / n;
  double ss = 0.0;
  for (double v : loo) ss += (v - m) * (v - m);
  CHECK(jackknife_log_mean_se(lw) == doctest::Approx(std::sqrt(ss * (n - 1) / n)).epsilon(1e-12));

  // agrees with the delta method for many light-tailed weights
  Rng rng(5);
  std::normal_distribution<double> z(0.0, 0.5);
  std::vector<double> many(20000);
  for (double& v : many) v = z(rng);
  double sw = 0.0, sw2 = 0.0;
  for (double v : many) {
    sw += std::exp(v);
    sw2 += std::exp(2 * v);
  }
  const double nn = static_cast<double>(many.size());
  const double mean = sw / nn;
  const double sd = std::sqrt((sw2 / nn - mean * mean) * nn / (nn - 1));
  CHECK(jackknife_log_mean_se(many) == doctest::Approx(sd / (std::sqrt(nn) * mean)).epsilon(0.01));
  CHECK_THROWS_AS(jackknife_log_mean_se(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("grad_log_posterior") {
  SUBCASE("prior score with no data") {
    const EIPosterior target(make_spec(Variant::model1, 2, 2), {}, EstimatorConfig{});
    Vec p(3);
    p << 0.5, -1.0, 2.0;
    CHECK((grad_log_posterior(target, p, 16, 1) + p / 2.0).norm() < 1e-8);
  }
  SUBCASE("CRN: deterministic and smooth") {
    const ModelSpec s = make_spec(Variant::model3, 3, 3);
    SynthOptions opt;
    opt.K = 15;
    opt.n = 200;
    opt.seed = 3;
    Vec truth(8);
    truth << 0.3, -0.2, 0.5, 0.1, 0.4, 0.0, -0.3, 0.2;
    const auto data = synth_generate(s, unflatten(s, truth), opt);
    const EIPosterior target(s, data, EstimatorConfig{});
    Rng rng(5);
    std::normal_distribution<double> g(0.0, 0.5);
    for (int trial = 0; trial < 3; ++trial) {
      const Vec p = Vec::NullaryExpr(8, [&] { return g(rng); });
      const Vec g1 = grad_log_posterior(target, p, 16, 77);
      CHECK(g1 == grad_log_posterior(target, p, 16, 77));
      // Richardson-extrapolated differences with a different step as the oracle.
      Rng dir_rng(static_cast<std::uint64_t>(trial));
      const Vec u = Vec::NullaryExpr(8, [&] { return g(dir_rng); }).normalized();
      auto f = [&](double t) { return log_posterior_value(target, Vec(p + t * u), 16, 77).value; };
      const double h = 1e-3;
      const double d1 = (f(h) - f(-h)) / (2 * h);
      const double d2 = (f(h / 2) - f(-h / 2)) / h;
      const double rich = (4 * d2 - d1) / 3;
      CHECK(std::abs(g1.dot(u) - rich) <= 1e-4 * std::max(1.0, std::abs(rich)));
    }
  }
}

TEST_CASE("adam_map") {
  SUBCASE("no data: stays at the prior mode") {
    const EIPosterior target(make_spec(Variant::model1, 2, 2), {}, EstimatorConfig{});
    AdamSchedule sch;
    sch.phase1_iters = 10;
    sch.phase2_iters = 20;
    sch.tail_average = 5;
    CHECK(adam_map(target, sch, 1).mode.isZero(1e-12));
  }
  SUBCASE("synthetic model1 recovery") {
    const ModelSpec s = make_spec(Variant::model1, 2, 2);
    Vec truth(3);
    truth << 0.5, -0.5, 0.2;
    SynthOptions opt;
    opt.K = 50;
    opt.n = 200;
    opt.seed = 11;
    const auto data = synth_generate(s, Theta{truth, {}}, opt);
    const EIPosterior target(s, data, EstimatorConfig{});
    AdamSchedule sch;
    sch.phase1_iters = 300;
    sch.phase1_batch = 25;
    sch.phase2_iters = 300;
    sch.phase2_late_start = 250;
    sch.tail_average = 50;
    const MapResult map = adam_map(target, sch, 5);
    const LaplaceApprox lap = hessian_at(target, map.mode, 128, 9);
    const Vec sd = lap.hessian.inverse().diagonal().cwiseSqrt();
    const Vec p_true = model1_probs(s, Theta{truth, {}});
    const Vec p_hat = model1_probs(s, Theta{map.mode, {}});
    INFO("mode " << map.mode.transpose() << " sd " << sd.transpose());
    for (int j = 0; j < 3; ++j) CHECK(std::abs(map.mode[j] - truth[j]) < 3 * sd[j]);
    CHECK((p_hat - p_true).cwiseAbs().maxCoeff() < 0.1);

    // Doubling phase 2 stays within 2 posterior sd.
    AdamSchedule longer = sch;
    longer.phase2_iters = 600;
    longer.phase2_late_start = 550;
    const MapResult map2 = adam_map(target, longer, 5);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(map2.mode[j] - map.mode[j]) < 2 * sd[j]);
  }
  SUBCASE("schedule validation") {
    AdamSchedule bad;
    bad.tail_average = 6000;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    AdamSchedule ok;
    CHECK(ok.batch_for(200) == 100);
    CHECK(ok.batch_for(10000) == 2000);
  }
}

TEST_CASE("hessian_at and make_laplace") {
  SUBCASE("prior curvature") {
    const EIPosterior target(make_spec(Variant::model1, 2, 3), {}, EstimatorConfig{});
    const LaplaceApprox lap = hessian_at(target, Vec::Zero(5), 16, 1);
    CHECK((lap.hessian - 0.5 * Mat::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(lap.hessian == lap.hessian.transpose());
  }
  SUBCASE("one-parameter case matches the exact curvature") {
    const auto& c = one_param();
    const EIPosterior target(c.spec, c.data, EstimatorConfig{});
    const LaplaceApprox lap = hessian_at(target, Vec::Constant(1, c.quad.mode), 128, 3);
    CHECK(lap.hessian(0, 0) == doctest::Approx(-c.quad.second_derivative_at_mode).epsilon(0.05));
  }
  SUBCASE("repair") {
    Mat h(2, 2);
    h << 2.0, 0.0, 0.0, -1.0;
    const LaplaceApprox lap = make_laplace(Vec::Zero(2), h);
    CHECK(lap.floored_eigenvalues == 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(lap.hessian);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK_THROWS_AS(make_laplace(Vec::Zero(2), -Mat::Identity(2, 2)), NumericalError);
  }
}

TEST_CASE("random_weight_is") {
  SUBCASE("perfect proposal gives equal weights") {
    const EIPosterior target(make_spec(Variant::model1, 2, 2), {}, EstimatorConfig{});
    const LaplaceApprox lap = make_laplace(Vec::Zero(3), 0.5 * Mat::Identity(3, 3));
    const PosteriorDraws d = random_weight_is(target, lap, 100, 16, 1);
    CHECK(d.ess == doctest::Approx(100.0).epsilon(1e-10));
    CHECK(*d.log_marginal_likelihood == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("one-parameter case against quadrature") {
    const auto& c = one_param();
    const EIPosterior target(c.spec, c.data, EstimatorConfig{});
    const LaplaceApprox lap = hessian_at(target, Vec::Constant(1, c.quad.mode), 128, 3);
    const PosteriorDraws d = random_weight_is(target, lap, 4000, 128, 8);
    const auto w = normalized_weights(d.log_weights);
    const WeightedMoments m = weighted_moments(d);
    double se2 = 0.0;
    for (std::size_t n = 0; n < w.size(); ++n) se2 += w[n] * w[n] * std::pow(d.draws[n][0] - m.mean[0], 2);
    const double se = std::sqrt(se2);
    INFO("mean " << m.mean[0] << " quad " << c.quad.mean << " se " << se);
    CHECK(std::abs(m.mean[0] - c.quad.mean) < 3 * se);
    INFO("logZ " << *d.log_marginal_likelihood << " quad " << c.quad.log_z << " se " << *d.log_marginal_se);
    CHECK(std::abs(*d.log_marginal_likelihood - c.quad.log_z) < 3 * *d.log_marginal_se);
    // Adding a constant to every log-weight leaves the normalized mean unchanged.
    PosteriorDraws shifted = d;
    for (auto& lw : shifted.log_weights) lw += 1234.5;
    CHECK(weighted_moments(shifted).mean[0] == doctest::Approx(m.mean[0]).epsilon(1e-12));
  }
}

TEST_CASE("pmmh") {
  const auto& c = one_param();
  const EIPosterior target(c.spec, c.data, EstimatorConfig{});
  const LaplaceApprox lap = make_laplace(Vec::Constant(1, c.quad.mode), Mat::Constant(1, 1, 1.0 / (c.quad.sd * c.quad.sd)));

  SUBCASE("zero scale never moves") {
    const PosteriorDraws d = pmmh(target, Vec::Constant(1, 0.3), lap, 50, 0.0, 16, 1);
    for (const auto& x : d.draws) CHECK(x[0] == 0.3);
  }
  SUBCASE("exact and estimated likelihood chains match quadrature") {
    const oracle::ExactEIPosterior exact(c.spec, c.data);
    const int steps = 6000;
    const PosteriorDraws de = pmmh(exact, lap.mode, lap, steps, -1.0, 0, 2);
    const PosteriorDraws dp = pmmh(target, lap.mode, lap, steps, -1.0, 128, 3);
    for (const PosteriorDraws* d : {&de, &dp}) {
      const WeightedMoments m = weighted_moments(*d, 500);
      const double mcse = m.sd[0] / std::sqrt(d->ess);
      INFO("chain mean " << m.mean[0] << " sd " << m.sd[0] << " quad " << c.quad.mean << " " << c.quad.sd
                         << " ess " << d->ess << " acc " << d->acceptance_rate);
      CHECK(std::abs(m.mean[0] - c.quad.mean) < 3 * mcse);
      CHECK(std::abs(m.sd[0] - c.quad.sd) < 0.15 * c.quad.sd);
    }
  }
}

TEST_CASE("write_posterior_csv") {
  PosteriorDraws d;
  d.draws = {Vec::Constant(2, 0.5)};
  d.log_weights = {-1.25};
  std::ostringstream os;
  write_posterior_csv(os, d);
  CHECK(os.str() == "draw_index,log_weight_or_accept,param_1,param_2\n0,-1.25,0.5,0.5\n");
}
