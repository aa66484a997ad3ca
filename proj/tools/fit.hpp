#pragma once

// MAP, Laplace approximation and posterior sampling for one model on one
// dataset, as run by `spmc fit` and `spmc compare`.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "spmc/data_prep.hpp"
#include "spmc/inference.hpp"

namespace spmc::cli {

enum class Stage { map, is, pmmh, all };

Stage parse_stage(const std::string& s);

/// "1", "2", "3" or "model1".."model3".
Variant parse_model_flag(const std::string& s);

struct FitOptions {
  ModelSpec spec;  // I and J are taken from the dataset
  AdamSchedule schedule;
  /// Proposal, tilt and RQMC of the likelihood estimator.
  EstimatorConfig estimator;
  /// Closed-form Gaussian likelihood in place of the estimated one.
  bool gaussian_likelihood = false;
  int n_is = 128;  // importance sampling and PMMH
  int hessian_n_is = 128;
  int is_draws = 1000;
  int pmmh_steps = 2000;
  int pmmh_burn_in = -1;  // -1: steps / 5
  double step_scale = -1.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct FitResult {
  ModelSpec spec;
  MapResult map;
  LaplaceApprox laplace;
  std::optional<PosteriorDraws> is;
  std::optional<PosteriorDraws> pmmh;
  int pmmh_burn_in = 0;
};

/// Checks the dataset against the model (model3 needs every covariate) and
/// builds the target.
std::unique_ptr<LogPosterior> make_target(const ModelSpec& spec, const Dataset& data, const FitOptions& opt);

/// Spec with I and J set from the dataset.
ModelSpec spec_for(const Dataset& data, const FitOptions& opt);

/// adam_map, hessian_at, then the samplers selected by `stage`. Randomness
/// for each step comes from its own stream of opt.seed.
FitResult fit_dataset(const Dataset& data, const FitOptions& opt, Stage stage);

}  // namespace spmc::cli
