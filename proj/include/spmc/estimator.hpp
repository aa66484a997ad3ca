#pragma once

// Saddlepoint Monte Carlo: unbiased importance-sampling estimates of
// f_{AX}(y) from the inversion formula over [-pi, pi]^{d_Y}, with optional
// exponential tilting to the saddlepoint and a uniform or Gaussian proposal.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spmc/aggregation.hpp"
#include "spmc/families.hpp"

namespace spmc {

enum class Proposal { uniform, gaussian };

struct EstimatorConfig {
  Proposal proposal = Proposal::gaussian;
  bool tilt = true;
  int n_is = 16;
  bool use_rqmc = false;
  std::uint64_t seed = 0;
};

std::string variant_name(const EstimatorConfig& cfg);

struct SaddlepointSolution {
  Vec nu;
  bool converged = false;
  int iterations = 0;
  double residual_inf_norm = 0.0;
};

struct DensityEstimate {
  int sign = 0;  // +1, -1, or 0 (exactly zero, log_abs = -inf)
  double log_abs = -std::numeric_limits<double>::infinity();
  Vec nu;
  int newton_iters = 0;
  double weight_cv = 0.0;
  int effective_n_is = 0;
  bool feasible = true;
  bool tilt_fallback = false;

  double value() const;
};

/// Newton iteration for A grad kappa(A' nu) = y from nu = 0, with step
/// halving when the residual sup-norm does not decrease. Converged when the
/// residual sup-norm is <= 1e-8 max(1, |y|_inf); at most 50 iterations.
SaddlepointSolution solve_saddlepoint(const Model& model, const MarginsMap& a, const Vec& y);

/// One unbiased estimate of f_{AX}(y). Zero margins are reduced first; if the
/// saddlepoint solve fails the untilted estimator is used and flagged.
DensityEstimate estimate_density(const Model& model, const MarginsMap& a, const Counts& y, const EstimatorConfig& cfg);

/// Estimate tilted at a caller-chosen nu (any nu gives the same expectation).
/// nu is in the coordinates of the reduced problem, which must equal the
/// input problem (no zero margins).
DensityEstimate estimate_density_at(const Model& model, const MarginsMap& a, const Counts& y, const Vec& nu,
                                    const EstimatorConfig& cfg);

/// One observation of a product likelihood.
struct LikelihoodTerm {
  Model model;
  std::shared_ptr<const MarginsMap> a;
  Counts y;
  /// Randomness for this term is derived from (cfg.seed, stream).
  std::uint64_t stream = 0;
};

struct BatchResult {
  double total_log = 0.0;
  bool valid = true;
  int invalid_count = 0;
  int tilt_fallbacks = 0;
  std::vector<DensityEstimate> estimates;
};

/// Sum of per-term log estimates. Each term draws from its own counter-based
/// stream; the total is reduced in index order, so results do not depend on
/// `threads`. Any non-positive estimate invalidates the total (counted).
BatchResult batch_log_likelihood(std::span<const LikelihoodTerm> terms, const EstimatorConfig& cfg, int threads = 1);

/// Same as above with a shared map; term k uses stream k.
BatchResult batch_log_likelihood(std::span<const Model> models, const MarginsMap& a, std::span<const Counts> ys,
                                 const EstimatorConfig& cfg, int threads = 1);

/// Closed-form log-density of the Gaussian approximation
/// AX ~ N(A n p, A n (diag p - p p') A').
double gaussian_model_logpdf(const MultinomialModel& model, const MarginsMap& a, const Vec& y);

struct EstimatorVariant {
  std::string label;
  EstimatorConfig cfg;
};

/// The four proposal/tilt combinations.
std::vector<EstimatorVariant> standard_variants(int n_is, bool use_rqmc = false);

/// Synthetic setup for a variance study at a given n.
struct ProfileStudy {
  MarginsMap a;
  int observations = 1;
  /// Law used for estimation.
  std::function<Model(int n)> model;
  /// Law the observations are drawn from; `model` when empty.
  std::function<Model(int n)> generator;
};

struct VarianceRow {
  std::string variant;
  int n = 0;
  int n_is = 0;
  /// Per-observation sd / mean of the likelihood estimate, averaged over observations.
  double rel_se_likelihood = 0.0;
  /// Per-observation sd of the log estimate (positive estimates only), averaged.
  double sd_loglik = 0.0;
  int replications = 0;
  long invalid = 0;
};

std::vector<VarianceRow> variance_profile(const ProfileStudy& study, const std::vector<EstimatorVariant>& variants,
                                          const std::vector<int>& n_grid, int replications, std::uint64_t seed,
                                          int threads = 1);

/// Header: variant,n,N_IS,rel_se_likelihood,sd_loglik,replications
void write_variance_csv(std::ostream& out, const std::vector<VarianceRow>& rows);

}  // namespace spmc
