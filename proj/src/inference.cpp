#include "spmc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "spmc/parallel.hpp"

namespace spmc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string describe(const LikelihoodEval& e) {
  std::ostringstream os;
  os << e.invalid_count << " non-positive likelihood estimate(s)";
  return os.str();
}

double logsumexp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (!(mx > kNegInf)) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

Vec standard_normal(int d, Rng& rng) {
  std::normal_distribution<double> g;
  Vec v(d);
  for (int i = 0; i < d; ++i) v[i] = g(rng);
  return v;
}

// x = mode + L^{-T} xi has covariance H^{-1} when H = L L'.
Vec laplace_offset(const LaplaceApprox& lap, const Vec& xi) {
  return lap.chol.transpose().triangularView<Eigen::Upper>().solve(xi);
}

}  // namespace

void AdamSchedule::validate() const {
  if (phase1_iters < 0 || phase2_iters < 1) throw std::invalid_argument("AdamSchedule: iteration counts must be positive");
  if (phase1_batch < 0) throw std::invalid_argument("AdamSchedule: batch size must be positive");
  if (!(phase1_lr > 0.0) || !(phase2_lr > 0.0)) throw std::invalid_argument("AdamSchedule: learning rates must be positive");
  if (phase2_nis_early < 1 || phase2_nis_late < 1) throw std::invalid_argument("AdamSchedule: N_IS must be positive");
  if (phase2_late_start < 0) throw std::invalid_argument("AdamSchedule: late start must be >= 0");
  if (tail_average < 1 || tail_average > phase2_iters) {
    throw std::invalid_argument("AdamSchedule: tail_average must be in [1, phase2_iters]");
  }
}

int AdamSchedule::batch_for(int units) const {
  const int b = phase1_batch > 0 ? phase1_batch : std::min(2000, units / 2);
  return std::clamp(b, std::min(1, units), units);
}

PosteriorValue log_posterior_value(const LogPosterior& target, const Vec& params, int n_is, std::uint64_t seed,
                                   std::span<const int> subset, double scale) {
  PosteriorValue out;
  out.likelihood = target.units() > 0 ? target.log_likelihood(params, subset, n_is, seed) : LikelihoodEval{};
  out.value = target.log_prior(params) + scale * out.likelihood.value;
  return out;
}

Vec grad_log_posterior(const LogPosterior& target, const Vec& params, int n_is, std::uint64_t crn_seed,
                       std::span<const int> subset, double scale) {
  const int d = target.dim();
  if (params.size() != d) throw std::invalid_argument("grad_log_posterior: parameter length mismatch");
  Vec g(d);
  for (int j = 0; j < d; ++j) {
    const double h = 1e-5 * std::max(1.0, std::abs(params[j]));
    Vec up = params, dn = params;
    up[j] += h;
    dn[j] -= h;
    const PosteriorValue fu = log_posterior_value(target, up, n_is, crn_seed, subset, scale);
    const PosteriorValue fd = log_posterior_value(target, dn, n_is, crn_seed, subset, scale);
    if (!fu.likelihood.valid || !fd.likelihood.valid) {
      throw NumericalError("grad_log_posterior: " +
                           describe(fu.likelihood.valid ? fd.likelihood : fu.likelihood));
    }
    g[j] = (fu.value - fd.value) / (up[j] - dn[j]);
  }
  return g;
}

MapResult adam_map(const LogPosterior& target, const AdamSchedule& schedule, std::uint64_t seed, Vec init) {
  schedule.validate();
  const int d = target.dim();
  const int K = target.units();
  MapResult out;
  Vec theta = init.size() ? init : Vec::Zero(d);
  if (theta.size() != d) throw std::invalid_argument("adam_map: initial point has the wrong length");

  const int total = schedule.phase1_iters + schedule.phase2_iters;
  const int max_invalid = std::max(1, total / 100);
  Vec tail_sum = Vec::Zero(d);
  int tail_count = 0;

  auto run_phase = [&](int phase, int iters, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Vec m = Vec::Zero(d), v = Vec::Zero(d);
    const int batch = schedule.batch_for(K);
    std::vector<int> all(K);
    std::iota(all.begin(), all.end(), 0);
    for (int t = 1; t <= iters; ++t) {
      const std::uint64_t crn = derive_seed(seed, static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(t));
      std::vector<int> subset;
      double scale = 1.0;
      int n_is = 0;
      if (phase == 1) {
        Rng rng(derive_seed(crn, 0xba7c));
        subset = all;
        std::shuffle(subset.begin(), subset.end(), rng);
        subset.resize(batch);
        std::sort(subset.begin(), subset.end());
        scale = batch > 0 ? static_cast<double>(K) / batch : 1.0;
      } else {
        n_is = t > schedule.phase2_late_start ? schedule.phase2_nis_late : schedule.phase2_nis_early;
      }
      Vec g;
      try {
        g = grad_log_posterior(target, theta, n_is, crn, subset, scale);
      } catch (const NumericalError& e) {
        if (++out.invalid_iterations > max_invalid) {
          throw NumericalError(std::string("adam_map: persistent invalid estimates (") +
                               std::to_string(out.invalid_iterations) + " iterations); last: " + e.what());
        }
        continue;
      }
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseProduct(g);
      const Vec mhat = m / (1 - std::pow(b1, t));
      const Vec vhat = v / (1 - std::pow(b2, t));
      theta += lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
      ++out.iterations;
      if (phase == 2) {
        if (t > iters - schedule.tail_average) {
          tail_sum += theta;
          ++tail_count;
        }
        if (K > 0) {
          const PosteriorValue pv = log_posterior_value(target, theta, n_is, crn);
          out.phase2_trace.push_back(pv.value);
        }
      }
    }
  };

  if (K > 0 && schedule.phase1_iters > 0) run_phase(1, schedule.phase1_iters, schedule.phase1_lr);
  run_phase(2, schedule.phase2_iters, schedule.phase2_lr);
  out.mode = tail_count > 0 ? Vec(tail_sum / tail_count) : theta;
  return out;
}

LaplaceApprox make_laplace(const Vec& mode, const Mat& hessian) {
  const int d = static_cast<int>(mode.size());
  if (hessian.rows() != d || hessian.cols() != d) throw std::invalid_argument("make_laplace: Hessian shape mismatch");
  if (!hessian.allFinite()) throw NumericalError("make_laplace: non-finite Hessian");
  LaplaceApprox lap;
  lap.mode = mode;
  const Mat sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const double top = es.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw NumericalError("make_laplace: Hessian has no positive eigenvalue");
  Vec ev = es.eigenvalues();
  for (int i = 0; i < d; ++i) {
    if (ev[i] < 1e-8 * top) {
      ev[i] = 1e-8 * top;
      ++lap.floored_eigenvalues;
    }
  }
  if (lap.floored_eigenvalues == 0) {
    lap.hessian = sym;
  } else {
    lap.hessian = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    lap.hessian = 0.5 * (lap.hessian + lap.hessian.transpose()).eval();
  }
  Eigen::LLT<Mat> llt(lap.hessian);
  if (llt.info() != Eigen::Success) throw NumericalError("make_laplace: repaired Hessian is not positive definite");
  lap.chol = llt.matrixL();
  return lap;
}

LaplaceApprox hessian_at(const LogPosterior& target, const Vec& mode, int n_is, std::uint64_t crn_seed) {
  const int d = target.dim();
  if (mode.size() != d || !mode.allFinite()) throw std::invalid_argument("hessian_at: mode must be finite, length d");
  Mat h(d, d);
  for (int j = 0; j < d; ++j) {
    const double step = 1e-4 * std::max(1.0, std::abs(mode[j]));
    Vec up = mode, dn = mode;
    up[j] += step;
    dn[j] -= step;
    const Vec gu = grad_log_posterior(target, up, n_is, crn_seed);
    const Vec gd = grad_log_posterior(target, dn, n_is, crn_seed);
    h.col(j) = -(gu - gd) / (up[j] - dn[j]);
  }
  if (h.isZero(0.0)) throw NumericalError("hessian_at: Hessian is identically zero");
  return make_laplace(mode, h);
}

double laplace_logpdf(const LaplaceApprox& lap, const Vec& x) {
  const int d = static_cast<int>(lap.mode.size());
  const Vec xi = lap.chol.transpose() * (x - lap.mode);
  const double half_logdet = lap.chol.diagonal().array().log().sum();
  return -0.5 * d * std::log(2.0 * std::numbers::pi) + half_logdet - 0.5 * xi.squaredNorm();
}

PosteriorDraws random_weight_is(const LogPosterior& target, const LaplaceApprox& lap, int n_draws, int n_is,
                                std::uint64_t seed, int threads) {
  if (n_draws < 1) throw std::invalid_argument("random_weight_is: need at least one draw");
  const int d = target.dim();
  PosteriorDraws out;
  out.kind = DrawsKind::weighted_is;
  out.draws.resize(n_draws);
  out.log_weights.resize(n_draws);
  std::vector<char> invalid(n_draws, 0);
  parallel_for(static_cast<std::size_t>(n_draws), threads, [&](std::size_t n) {
    Rng rng(derive_seed(seed, n, 0xd7a));
    const Vec xi = standard_normal(d, rng);
    const Vec theta = lap.mode + laplace_offset(lap, xi);
    const double log_q = laplace_logpdf(lap, theta);
    const PosteriorValue pv = log_posterior_value(target, theta, n_is, derive_seed(seed, n, 0xe57));
    out.draws[n] = theta;
    if (pv.likelihood.valid && std::isfinite(pv.value)) {
      out.log_weights[n] = pv.value - log_q;
    } else {
      out.log_weights[n] = kNegInf;
      invalid[n] = 1;
    }
  });
  out.invalid_count = static_cast<int>(std::count(invalid.begin(), invalid.end(), 1));
  const double lse = logsumexp(out.log_weights);
  if (!(lse > kNegInf)) throw NumericalError("random_weight_is: all importance weights are zero");
  out.ess = ess(out.log_weights);
  out.log_marginal_likelihood = lse - std::log(static_cast<double>(n_draws));

  // se(log Zhat) ~= sd(w) / (sqrt(N) mean(w))
  double mx = kNegInf;
  for (double lw : out.log_weights) mx = std::max(mx, lw);
  double s1 = 0.0, s2 = 0.0;
  for (double lw : out.log_weights) {
    const double w = std::exp(lw - mx);
    s1 += w;
    s2 += w * w;
  }
  const double N = n_draws;
  const double mean = s1 / N;
  const double var = N > 1 ? std::max(0.0, (s2 - N * mean * mean) / (N - 1)) : 0.0;
  out.log_marginal_se = std::sqrt(var / N) / mean;
  return out;
}

PosteriorDraws pmmh(const LogPosterior& target, const Vec& init, const LaplaceApprox& lap, int steps,
                    double step_scale, int n_is, std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("pmmh: steps must be >= 1");
  const int d = target.dim();
  if (init.size() != d) throw std::invalid_argument("pmmh: initial point has the wrong length");
  const double scale = step_scale < 0.0 ? 2.38 / std::sqrt(static_cast<double>(d)) : step_scale;
  PosteriorDraws out;
  out.kind = DrawsKind::mcmc_chain;
  out.draws.reserve(steps);
  out.log_weights.reserve(steps);

  Vec current = init;
  double current_lp = kNegInf;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const PosteriorValue pv = log_posterior_value(target, current, n_is, derive_seed(seed, 0xfffff, attempt));
    if (pv.likelihood.valid && std::isfinite(pv.value)) {
      current_lp = pv.value;
      break;
    }
    ++out.invalid_count;
  }
  if (!(current_lp > kNegInf)) throw NumericalError("pmmh: no valid estimate at the initial point");

  Rng rng(derive_seed(seed, 0x3c3c));
  int accepted = 0;
  for (int s = 0; s < steps; ++s) {
    const Vec xi = standard_normal(d, rng);
    const double u = uniform01(rng);
    const Vec prop = current + scale * laplace_offset(lap, xi);
    const PosteriorValue pv = log_posterior_value(target, prop, n_is, derive_seed(seed, static_cast<std::uint64_t>(s)));
    bool accept = false;
    if (!pv.likelihood.valid || !std::isfinite(pv.value)) {
      ++out.invalid_count;
    } else if (std::log(u) < pv.value - current_lp) {
      accept = true;
    }
    if (accept) {
      current = prop;
      current_lp = pv.value;
      ++accepted;
    }
    out.draws.push_back(current);
    out.log_weights.push_back(accept ? 1.0 : 0.0);
  }
  out.acceptance_rate = static_cast<double>(accepted) / steps;
  out.ess = chain_ess(out.draws);
  return out;
}

double ess(std::span<const double> log_weights) {
  double mx = kNegInf;
  for (double lw : log_weights) mx = std::max(mx, lw);
  if (!(mx > kNegInf)) throw std::invalid_argument("ess: no finite log-weight");
  double s1 = 0.0, s2 = 0.0;
  for (double lw : log_weights) {
    const double w = std::exp(lw - mx);
    s1 += w;
    s2 += w * w;
  }
  return s1 * s1 / s2;
}

double chain_ess(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return static_cast<double>(n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
    return s / n;
  };
  const double g0 = autocov(0);
  if (!(g0 > 0.0)) return static_cast<double>(n);
  double tau = -g0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = autocov(2 * m) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);  // initial monotone sequence
    prev = pair;
    tau += 2.0 * pair;
  }
  return n * g0 / std::max(tau, g0 / n);
}

double chain_ess(const std::vector<Vec>& draws) {
  if (draws.empty()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> x(draws.size());
  for (Eigen::Index j = 0; j < draws[0].size(); ++j) {
    for (std::size_t s = 0; s < draws.size(); ++s) x[s] = draws[s][j];
    best = std::min(best, chain_ess(x));
  }
  return best;
}

std::vector<double> normalized_weights(std::span<const double> log_weights) {
  const double lse = logsumexp(log_weights);
  if (!(lse > kNegInf)) throw std::invalid_argument("normalized_weights: all weights are zero");
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - lse);
  return w;
}

WeightedMoments weighted_moments(const PosteriorDraws& d, std::size_t burn_in) {
  if (d.draws.size() <= burn_in) throw std::invalid_argument("weighted_moments: no draws after burn-in");
  const auto dim = d.draws[0].size();
  std::vector<double> w;
  if (d.kind == DrawsKind::weighted_is) {
    w = normalized_weights(std::span<const double>(d.log_weights).subspan(burn_in));
  } else {
    w.assign(d.draws.size() - burn_in, 1.0 / static_cast<double>(d.draws.size() - burn_in));
  }
  WeightedMoments m{Vec::Zero(dim), Vec::Zero(dim)};
  for (std::size_t s = 0; s < w.size(); ++s) m.mean += w[s] * d.draws[burn_in + s];
  Vec var = Vec::Zero(dim);
  for (std::size_t s = 0; s < w.size(); ++s) var += w[s] * (d.draws[burn_in + s] - m.mean).cwiseAbs2();
  m.sd = var.cwiseSqrt();
  return m;
}

double log10_bayes_factor(double log_z_a, double log_z_b) {
  if (!std::isfinite(log_z_a) || !std::isfinite(log_z_b)) throw std::invalid_argument("log10_bayes_factor: non-finite evidence");
  return (log_z_a - log_z_b) / std::numbers::ln10;
}

double jackknife_log_mean_se(std::span<const double> log_weights) {
  const std::size_t n = log_weights.size();
  if (n < 2) throw std::invalid_argument("jackknife_log_mean_se: need at least 2 weights");
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) m = std::max(m, lw);
  if (!std::isfinite(m)) throw std::invalid_argument("jackknife_log_mean_se: all weights are zero");
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(log_weights[i] - m);
  // leave-one-out sums from prefix and suffix sums, avoiding S - w_i
  std::vector<double> prefix(n + 1, 0.0), suffix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + w[i];
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + w[i];
  std::vector<double> loo(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = prefix[i] + suffix[i + 1];
    if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
    loo[i] = std::log(s / static_cast<double>(n - 1));
  }
  double mean = 0.0;
  for (double v : loo) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : loo) ss += (v - mean) * (v - mean);
  return std::sqrt(ss * static_cast<double>(n - 1) / static_cast<double>(n));
}

void write_posterior_csv(std::ostream& out, const PosteriorDraws& d) {
  out << "draw_index,log_weight_or_accept";
  const auto dim = d.draws.empty() ? 0 : d.draws[0].size();
  for (Eigen::Index j = 0; j < dim; ++j) out << ",param_" << (j + 1);
  out << '\n';
  char buf[40];
  for (std::size_t s = 0; s < d.draws.size(); ++s) {
    out << s << ',';
    std::snprintf(buf, sizeof buf, "%.17g", d.log_weights[s]);
    out << buf;
    for (Eigen::Index j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", d.draws[s][j]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace spmc
