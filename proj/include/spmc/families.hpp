#pragma once

// Exponential-family laws for the latent table X: multinomial and
// independent-Bernoulli vectors, with characteristic function, cumulant
// function and its derivatives, exponential tilting, pmf and sampling.

#include <complex>
#include <variant>

#include "spmc/common.hpp"

namespace spmc {

/// X ~ Multinomial(n, p). All p_j > 0, sum(p) = 1.
class MultinomialModel {
 public:
  MultinomialModel(int n, Vec p);

  int trials() const { return n_; }
  const Vec& probs() const { return p_; }
  Eigen::Index dim() const { return p_.size(); }

 private:
  int n_;
  Vec p_;
};

/// X with independent components X_j ~ Bernoulli(q_j), 0 < q_j < 1.
class BernoulliVectorModel {
 public:
  explicit BernoulliVectorModel(Vec q);

  const Vec& probs() const { return q_; }
  Eigen::Index dim() const { return q_.size(); }

 private:
  Vec q_;
};

using Model = std::variant<MultinomialModel, BernoulliVectorModel>;

struct Moments {
  Vec mean;
  Mat cov;
};

Eigen::Index dim(const Model& model);

/// E[exp(i z'X)]. The multinomial power is taken as exp(n Log S) with the
/// principal branch; only the value at z matters, so the branch is immaterial.
std::complex<double> char_fn(const Model& model, const Vec& z);

/// log E[exp(rho'X)], evaluated with a max-shift.
double cumulant(const Model& model, const Vec& rho);

/// Gradient of the cumulant function: the mean of the tilted law.
Vec cumulant_grad(const Model& model, const Vec& rho);

/// Hessian of the cumulant function: the covariance of the tilted law.
Mat cumulant_hess(const Model& model, const Vec& rho);

Moments moments(const Model& model);

/// The law with density exp(rho'x) f(x) / M(rho); stays in the family.
Model tilt(const Model& model, const Vec& rho);
MultinomialModel tilt(const MultinomialModel& model, const Vec& rho);
BernoulliVectorModel tilt(const BernoulliVectorModel& model, const Vec& rho);

/// Exact probability mass; 0 outside the support.
double pmf(const Model& model, const Counts& x);
double log_pmf(const Model& model, const Counts& x);

/// One exact draw.
Counts sample(const Model& model, Rng& rng);

}  // namespace spmc
