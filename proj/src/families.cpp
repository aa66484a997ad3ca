#include "spmc/families.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace spmc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_length(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    throw std::invalid_argument(std::string(what) + ": expected length " + std::to_string(expected) +
                                ", got " + std::to_string(got));
  }
}

// Tilted multinomial probabilities p_j e^{rho_j} / sum_k p_k e^{rho_k}, plus
// the log normalizer log sum_k p_k e^{rho_k}.
Vec tilted_probs(const MultinomialModel& m, const Vec& rho, double* log_norm = nullptr) {
  check_length(m.dim(), rho.size(), "multinomial tilt");
  Vec a = m.probs().array().log() + rho.array();
  const double shift = a.maxCoeff();
  Vec e = (a.array() - shift).exp();
  const double s = e.sum();
  if (log_norm) *log_norm = shift + std::log(s);
  return e / s;
}

// Bernoulli tilted success probabilities, computed as a logistic of
// logit(q) + rho.
Vec tilted_probs(const BernoulliVectorModel& m, const Vec& rho) {
  check_length(m.dim(), rho.size(), "bernoulli tilt");
  Vec out(m.dim());
  for (Eigen::Index j = 0; j < m.dim(); ++j) {
    const double q = m.probs()[j];
    const double eta = std::log(q) - std::log1p(-q) + rho[j];
    out[j] = eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
  }
  return out;
}

// log(1 - q + q e^r) = log(1-q) + softplus(logit q + r)
double log_bernoulli_mgf(double q, double r) {
  const double eta = std::log(q) - std::log1p(-q) + r;
  const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  return std::log1p(-q) + softplus;
}

}  // namespace

MultinomialModel::MultinomialModel(int n, Vec p) : n_(n), p_(std::move(p)) {
  if (n_ < 1) throw std::invalid_argument("MultinomialModel: n must be >= 1");
  if (p_.size() == 0) throw std::invalid_argument("MultinomialModel: empty probability vector");
  for (Eigen::Index j = 0; j < p_.size(); ++j) {
    if (!(p_[j] > 0.0) || !std::isfinite(p_[j])) {
      throw std::invalid_argument("MultinomialModel: probabilities must be > 0 (reduce zero margins first)");
    }
  }
  const double s = p_.sum();
  if (std::abs(s - 1.0) > 1e-12) {
    throw std::invalid_argument("MultinomialModel: probabilities must sum to 1");
  }
  p_ /= s;
}

BernoulliVectorModel::BernoulliVectorModel(Vec q) : q_(std::move(q)) {
  if (q_.size() == 0) throw std::invalid_argument("BernoulliVectorModel: empty probability vector");
  for (Eigen::Index j = 0; j < q_.size(); ++j) {
    if (!(q_[j] > 0.0 && q_[j] < 1.0)) {
      throw std::invalid_argument("BernoulliVectorModel: probabilities must lie in (0,1)");
    }
  }
}

Eigen::Index dim(const Model& model) {
  return std::visit([](const auto& m) { return m.dim(); }, model);
}

std::complex<double> char_fn(const Model& model, const Vec& z) {
  check_length(dim(model), z.size(), "char_fn");
  return std::visit(
      overloaded{
          [&](const MultinomialModel& m) {
            std::complex<double> s = 0.0;
            for (Eigen::Index j = 0; j < z.size(); ++j) s += m.probs()[j] * std::polar(1.0, z[j]);
            if (s == 0.0) return std::complex<double>(0.0, 0.0);
            if (m.trials() == 1) return s;
            return std::exp(static_cast<double>(m.trials()) * std::log(s));
          },
          [&](const BernoulliVectorModel& m) {
            std::complex<double> prod = 1.0;
            for (Eigen::Index j = 0; j < z.size(); ++j) {
              const double q = m.probs()[j];
              prod *= (1.0 - q) + q * std::polar(1.0, z[j]);
            }
            return prod;
          }},
      model);
}

double cumulant(const Model& model, const Vec& rho) {
  return std::visit(overloaded{[&](const MultinomialModel& m) {
                                 double log_norm = 0.0;
                                 tilted_probs(m, rho, &log_norm);
                                 return m.trials() * log_norm;
                               },
                               [&](const BernoulliVectorModel& m) {
                                 check_length(m.dim(), rho.size(), "cumulant");
                                 double s = 0.0;
                                 for (Eigen::Index j = 0; j < m.dim(); ++j) s += log_bernoulli_mgf(m.probs()[j], rho[j]);
                                 return s;
                               }},
                    model);
}

Vec cumulant_grad(const Model& model, const Vec& rho) {
  return std::visit(overloaded{[&](const MultinomialModel& m) -> Vec { return m.trials() * tilted_probs(m, rho); },
                               [&](const BernoulliVectorModel& m) -> Vec { return tilted_probs(m, rho); }},
                    model);
}

Mat cumulant_hess(const Model& model, const Vec& rho) {
  return std::visit(overloaded{[&](const MultinomialModel& m) -> Mat {
                                 const Vec pr = tilted_probs(m, rho);
                                 Mat h = -pr * pr.transpose();
                                 h.diagonal() += pr;
                                 return m.trials() * h;
                               },
                               [&](const BernoulliVectorModel& m) -> Mat {
                                 const Vec qr = tilted_probs(m, rho);
                                 return (qr.array() * (1.0 - qr.array())).matrix().asDiagonal();
                               }},
                    model);
}

Moments moments(const Model& model) {
  const Vec zero = Vec::Zero(dim(model));
  return {cumulant_grad(model, zero), cumulant_hess(model, zero)};
}

MultinomialModel tilt(const MultinomialModel& model, const Vec& rho) {
  return MultinomialModel(model.trials(), tilted_probs(model, rho));
}

BernoulliVectorModel tilt(const BernoulliVectorModel& model, const Vec& rho) {
  return BernoulliVectorModel(tilted_probs(model, rho));
}

Model tilt(const Model& model, const Vec& rho) {
  return std::visit([&](const auto& m) -> Model { return tilt(m, rho); }, model);
}

double log_pmf(const Model& model, const Counts& x) {
  check_length(dim(model), x.size(), "pmf");
  return std::visit(overloaded{[&](const MultinomialModel& m) {
                                 if ((x.array() < 0).any() || x.sum() != m.trials()) return kNegInf;
                                 double lp = std::lgamma(m.trials() + 1.0);
                                 for (Eigen::Index j = 0; j < x.size(); ++j) {
                                   lp += x[j] * std::log(m.probs()[j]) - std::lgamma(x[j] + 1.0);
                                 }
                                 return lp;
                               },
                               [&](const BernoulliVectorModel& m) {
                                 double lp = 0.0;
                                 for (Eigen::Index j = 0; j < x.size(); ++j) {
                                   if (x[j] == 1) {
                                     lp += std::log(m.probs()[j]);
                                   } else if (x[j] == 0) {
                                     lp += std::log1p(-m.probs()[j]);
                                   } else {
                                     return kNegInf;
                                   }
                                 }
                                 return lp;
                               }},
                    model);
}

double pmf(const Model& model, const Counts& x) { return std::exp(log_pmf(model, x)); }

Counts sample(const Model& model, Rng& rng) {
  return std::visit(overloaded{[&](const MultinomialModel& m) {
                                 // sequential binomial thinning
                                 Counts x = Counts::Zero(m.dim());
                                 int remaining = m.trials();
                                 double mass_left = 1.0;
                                 for (Eigen::Index j = 0; j + 1 < m.dim() && remaining > 0; ++j) {
                                   const double pj = std::min(1.0, m.probs()[j] / mass_left);
                                   std::binomial_distribution<int> binom(remaining, pj);
                                   x[j] = binom(rng);
                                   remaining -= x[j];
                                   mass_left -= m.probs()[j];
                                   if (mass_left <= 0.0) break;
                                 }
                                 x[m.dim() - 1] += remaining;
                                 return x;
                               },
                               [&](const BernoulliVectorModel& m) {
                                 Counts x(m.dim());
                                 for (Eigen::Index j = 0; j < m.dim(); ++j) x[j] = uniform01(rng) < m.probs()[j] ? 1 : 0;
                                 return x;
                               }},
                    model);
}

}  // namespace spmc
