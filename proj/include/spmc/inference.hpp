#pragma once

// Posterior computation for a LogPosterior target: Adam MAP search, finite
// difference Hessian and Laplace approximation, random-weight importance
// sampling, pseudo-marginal Metropolis-Hastings, ESS and Bayes factors.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spmc/target.hpp"

namespace spmc {

struct AdamSchedule {
  int phase1_iters = 2000;
  int phase1_batch = 0;  // 0: min(2000, K/2)
  double phase1_lr = 1e-1;
  int phase2_iters = 5000;
  double phase2_lr = 1e-2;
  int phase2_nis_early = 16;
  int phase2_nis_late = 128;
  int phase2_late_start = 4500;
  int tail_average = 50;

  void validate() const;
  int batch_for(int units) const;
};

struct PosteriorValue {
  double value = 0.0;  // log prior + scale * log likelihood
  LikelihoodEval likelihood;
};

/// Estimated log posterior with the likelihood restricted to `subset` and
/// multiplied by `scale`.
PosteriorValue log_posterior_value(const LogPosterior& target, const Vec& params, int n_is, std::uint64_t seed,
                                   std::span<const int> subset = {}, double scale = 1.0);

/// Gradient of the estimated log posterior with the randomness frozen by
/// crn_seed: central differences with step 1e-5 max(1, |param_j|). Throws
/// NumericalError if any evaluation is invalid.
Vec grad_log_posterior(const LogPosterior& target, const Vec& params, int n_is, std::uint64_t crn_seed,
                       std::span<const int> subset = {}, double scale = 1.0);

struct MapResult {
  Vec mode;
  int iterations = 0;
  int invalid_iterations = 0;
  /// Log posterior estimate at each phase-2 iterate (for convergence checks).
  std::vector<double> phase2_trace;
};

/// Two-phase Adam ascent from `init` (zero when empty): minibatch phase with
/// the likelihood rescaled by K/batch, then full-data phase; returns the
/// average of the last tail_average iterates. Each iteration uses fresh
/// common random numbers. Iterations with invalid estimates are skipped;
/// more than 1% of them aborts with NumericalError.
MapResult adam_map(const LogPosterior& target, const AdamSchedule& schedule, std::uint64_t seed, Vec init = {});

struct LaplaceApprox {
  Vec mode;
  Mat hessian;  // of the negative log posterior, symmetric PD
  Mat chol;     // lower Cholesky factor of hessian
  int floored_eigenvalues = 0;
};

/// Builds the approximation N(mode, H^{-1}) from a Hessian: symmetrizes,
/// floors eigenvalues at 1e-8 times the largest. Throws NumericalError if
/// no eigenvalue is positive.
LaplaceApprox make_laplace(const Vec& mode, const Mat& hessian);

/// Central differences of the CRN gradient (step 1e-4 max(1, |param_j|)),
/// negated, then repaired by make_laplace.
LaplaceApprox hessian_at(const LogPosterior& target, const Vec& mode, int n_is, std::uint64_t crn_seed);

/// Log density of N(mode, H^{-1}) at x.
double laplace_logpdf(const LaplaceApprox& lap, const Vec& x);

enum class DrawsKind { weighted_is, mcmc_chain };

struct PosteriorDraws {
  DrawsKind kind = DrawsKind::weighted_is;
  std::vector<Vec> draws;
  /// weighted_is: log importance weights (-inf for invalid estimates).
  /// mcmc_chain: 1 for an accepted proposal, 0 otherwise.
  std::vector<double> log_weights;
  double ess = 0.0;
  std::optional<double> log_marginal_likelihood;
  /// Delta-method standard error of the log marginal likelihood.
  std::optional<double> log_marginal_se;
  int invalid_count = 0;
  double acceptance_rate = 0.0;
};

/// theta_n ~ N(mode, H^{-1}); log w_n = estimated log posterior - log
/// proposal density, with fresh estimator randomness per draw.
PosteriorDraws random_weight_is(const LogPosterior& target, const LaplaceApprox& lap, int n_draws, int n_is,
                                std::uint64_t seed, int threads = 1);

/// Pseudo-marginal random walk with proposal N(theta, s^2 H^{-1}); the
/// current state's estimate is kept until a proposal is accepted. A
/// negative step_scale selects 2.38 / sqrt(d).
PosteriorDraws pmmh(const LogPosterior& target, const Vec& init, const LaplaceApprox& lap, int steps,
                    double step_scale, int n_is, std::uint64_t seed);

/// (sum w)^2 / sum w^2 from log-weights, computed with a max shift.
double ess(std::span<const double> log_weights);

/// Effective sample size of a scalar chain (Geyer's initial positive
/// sequence estimator).
double chain_ess(std::span<const double> x);

/// Minimum over coordinates of chain_ess.
double chain_ess(const std::vector<Vec>& draws);

/// Normalized weights from log-weights.
std::vector<double> normalized_weights(std::span<const double> log_weights);

struct WeightedMoments {
  Vec mean;
  Vec sd;
};

WeightedMoments weighted_moments(const PosteriorDraws& d, std::size_t burn_in = 0);

double log10_bayes_factor(double log_z_a, double log_z_b);

/// Jackknife standard error of log(mean w) over the weights, from
/// log-weights (-inf entries count as zero weights).
double jackknife_log_mean_se(std::span<const double> log_weights);

/// CSV with header draw_index,log_weight_or_accept,param_1..param_d.
void write_posterior_csv(std::ostream& out, const PosteriorDraws& d);

}  // namespace spmc
