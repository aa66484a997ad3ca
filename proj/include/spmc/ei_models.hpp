#pragma once

// Ecological-inference models on I x J transition tables. Cells are stored
// column-major (cell i + I j), matching the margins maps.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spmc/aggregation.hpp"
#include "spmc/estimator.hpp"
#include "spmc/target.hpp"

namespace spmc {

enum class Variant { model1, model2, model3 };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::model1;
  int I = 2;
  int J = 2;
  double prior_sigma2 = 2.0;
  /// Models 2/3: give every first-round row its own conditional logits,
  /// I (J-1) of them. By default the last row is held at the uniform
  /// conditional and (I-1)(J-1) logits are free.
  bool free_all_rows = false;

  void validate() const;
  /// Rows with free conditional logits (models 2/3).
  int free_rows() const;
  int theta_dim() const;
  /// theta_dim, doubled for model3 (beta has the shape of theta).
  int param_dim() const;
};

struct Theta {
  Vec theta;
  Vec beta;  // model3 only
};

Vec flatten(const ModelSpec& spec, const Theta& t);
Theta unflatten(const ModelSpec& spec, const Vec& params);

struct StationData {
  std::string station_id;
  Counts round1;  // length I
  Counts round2;  // length J
  int n = 0;
  std::optional<double> covariate;
};

/// Throws DataError when the station is inconsistent with the spec.
void validate_station(const ModelSpec& spec, const StationData& st);

/// Stable softmax of (0, logits...).
Vec softmax_with_reference(const Vec& logits);

/// Cell probabilities for model1.
Vec model1_probs(const ModelSpec& spec, const Theta& t);

/// I x J matrix of conditionals p_{j|i}. For model3 `covariate` enters as
/// theta + beta C; it is ignored otherwise.
Mat conditional_probs(const ModelSpec& spec, const Theta& t, double covariate = 0.0);

struct StationProblem {
  MultinomialModel model;
  std::shared_ptr<const MarginsMap> a;
  Counts y;
  /// First-round options kept in the table (rows with zero count are dropped
  /// for models 2/3).
  std::vector<int> kept_rows;
};

/// The station's multinomial model and observed margins (first I-1 row
/// counts, first J-1 column counts of the kept table).
StationProblem station_model(const ModelSpec& spec, const Theta& t, const StationData& st);

double log_prior(const ModelSpec& spec, const Theta& t);

/// Estimated un-normalized log posterior over a set of stations.
class EIPosterior : public LogPosterior {
 public:
  /// cfg supplies proposal, tilt, rqmc and the default n_is; its seed is
  /// ignored in favour of the seed passed per evaluation.
  EIPosterior(ModelSpec spec, std::vector<StationData> data, EstimatorConfig cfg, int threads = 1);

  int dim() const override { return spec_.param_dim(); }
  int units() const override { return static_cast<int>(data_.size()); }
  double log_prior(const Vec& params) const override;
  LikelihoodEval log_likelihood(const Vec& params, std::span<const int> subset, int n_is,
                                std::uint64_t seed) const override;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<StationData>& data() const { return data_; }

 private:
  ModelSpec spec_;
  std::vector<StationData> data_;
  EstimatorConfig cfg_;
  int threads_;
};

/// Closed-form Gaussian approximation of each station's margins (the
/// Wakefield model) in place of the exact multinomial likelihood.
class GaussianApproxPosterior : public LogPosterior {
 public:
  GaussianApproxPosterior(ModelSpec spec, std::vector<StationData> data);

  int dim() const override { return spec_.param_dim(); }
  int units() const override { return static_cast<int>(data_.size()); }
  double log_prior(const Vec& params) const override;
  LikelihoodEval log_likelihood(const Vec& params, std::span<const int> subset, int n_is,
                                std::uint64_t seed) const override;
  bool exact() const override { return true; }

 private:
  ModelSpec spec_;
  std::vector<StationData> data_;
};

struct PosteriorEstimate {
  double value = 0.0;
  LikelihoodEval likelihood;
};

PosteriorEstimate log_posterior_estimate(const ModelSpec& spec, const Theta& t, const std::vector<StationData>& data,
                                         const EstimatorConfig& cfg, int threads = 1);

struct SynthOptions {
  int K = 100;
  int n = 500;
  /// First-round shares used to draw row totals for models 2/3.
  Vec row_shares;  // uniform when empty
  /// Covariate law; standard normal when empty.
  std::function<double(Rng&)> covariate;
  std::uint64_t seed = 0;
};

/// Stations simulated from the model: model1 draws the table from
/// M(n, p); models 2/3 draw row totals from M(n, row_shares) and each row
/// from M(r_i, p_{.|i}).
std::vector<StationData> synth_generate(const ModelSpec& spec, const Theta& truth, const SynthOptions& opt);

enum class FamilyKind { type1, type2 };

/// I x I probability matrices of the asymmetry families. type1 weights the
/// circulant diagonals m (j - i = m mod I) by alpha^m for m from
/// -floor(I/2) to floor(I/2) (from -I/2 + 1 when I is even). type2 weights
/// row m by alpha^m for m = 0..I-1.
Mat prob_family(FamilyKind kind, double alpha, int I);
/// Rectangular I x J version; type1 offsets are taken modulo J.
Mat prob_family(FamilyKind kind, double alpha, int I, int J);

/// Column-major vectorisation.
Vec vec_colmajor(const Mat& m);

struct TransitionCell {
  int i = 0;
  int j = 0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
};

/// Smallest x with cumulative normalized weight >= q.
double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q);

/// Weighted 5/50/95% quantiles of each p_{j|i}. log_weights may be empty
/// (equal weights). Model3 conditionals are evaluated at covariate 0.
std::vector<TransitionCell> transition_summary(const ModelSpec& spec, const std::vector<Vec>& draws,
                                               const std::vector<double>& log_weights);

}  // namespace spmc
