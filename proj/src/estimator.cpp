#include "spmc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "spmc/parallel.hpp"
#include "spmc/rqmc.hpp"

namespace spmc {
namespace {

constexpr double kPi = std::numbers::pi;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kPointStream = 0x5eed;

Vec to_vec(const Counts& y) { return y.cast<double>(); }

// Cholesky of a symmetric PSD matrix, adding diagonal jitter from
// 1e-12 trace/d up to 1e-6 trace/d on failure.
bool robust_llt(const Mat& h, Eigen::LLT<Mat>& llt) {
  llt.compute(h);
  if (llt.info() == Eigen::Success) return true;
  const double d = static_cast<double>(h.rows());
  const double scale = std::max(h.trace() / d, std::numeric_limits<double>::min());
  for (double jitter = 1e-12; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
    Mat hj = h;
    hj.diagonal().array() += jitter * scale;
    llt.compute(hj);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

// A Hess_kappa(rho) A', accumulated over the sparse rows of A.
Mat projected_hessian(const Model& model, const MarginsMap& a, const Vec& rho) {
  const int d = a.dy();
  const auto& by_cell = a.margins_of_cell();
  Mat h = Mat::Zero(d, d);
  if (const auto* m = std::get_if<MultinomialModel>(&model)) {
    const Vec mean = cumulant_grad(model, rho);  // n p_rho
    const double n = m->trials();
    Vec am = Vec::Zero(d);
    for (int c = 0; c < a.dx(); ++c) {
      for (int r : by_cell[c]) {
        am[r] += mean[c];
        for (int s : by_cell[c]) h(r, s) += mean[c];
      }
    }
    h.noalias() -= (am / n) * am.transpose();
  } else {
    const Vec mean = cumulant_grad(model, rho);  // q_rho
    for (int c = 0; c < a.dx(); ++c) {
      const double v = mean[c] * (1.0 - mean[c]);
      for (int r : by_cell[c]) {
        for (int s : by_cell[c]) h(r, s) += v;
      }
    }
  }
  return h;
}

struct TermStats {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

// Average of Re{exp(-i z'y) phi(A'z)} / ((2 pi)^d q(z)) over proposal draws.
TermStats importance_average(const Model& working, const MarginsMap& a, const Counts& y, const EstimatorConfig& cfg) {
  const int d = a.dy();
  const int n_draws = cfg.use_rqmc ? next_pow2(cfg.n_is) : cfg.n_is;
  const std::uint64_t point_seed = derive_seed(cfg.seed, kPointStream);
  PointSet ps;
  if (cfg.use_rqmc) {
    int m = 0;
    while ((1 << m) < n_draws) ++m;
    ps = sobol_points(m, d, point_seed);
  } else {
    ps = random_points(n_draws, d, point_seed);
  }

  Mat z;
  Mat sigma;
  Mat chol;
  double log_norm = 0.0;  // log normalizer of N(0, Sigma_Y^{-1})
  const bool gaussian = cfg.proposal == Proposal::gaussian;
  if (gaussian) {
    sigma = projected_hessian(working, a, Vec::Zero(a.dx()));
    Eigen::LLT<Mat> llt;
    if (!robust_llt(sigma, llt)) throw NumericalError("Gaussian proposal: Sigma_Y is not positive definite");
    const Mat l = llt.matrixL();
    double half_logdet = 0.0;
    for (int r = 0; r < d; ++r) half_logdet += std::log(l(r, r));
    // exact factor of the proposal covariance Sigma_Y^{-1}
    const Mat precision_cov = llt.solve(Mat::Identity(d, d));
    Eigen::LLT<Mat> cov_llt(0.5 * (precision_cov + precision_cov.transpose()));
    if (cov_llt.info() != Eigen::Success) throw NumericalError("Gaussian proposal: cannot factor Sigma_Y^{-1}");
    chol = cov_llt.matrixL();
    z = to_gaussian(ps, chol);
    log_norm = -0.5 * d * kLog2Pi + half_logdet;
  } else {
    z = to_uniform_box(ps);
  }

  const auto& by_cell = a.margins_of_cell();
  const int dx = a.dx();
  std::vector<double> w(dx);
  std::vector<double> vbuf(d);
  const Vec yd = to_vec(y);

  auto log_phi = [&](const std::vector<double>& ww) -> std::complex<double> {
    if (const auto* m = std::get_if<MultinomialModel>(&working)) {
      double re = 0.0, im = 0.0;
      const double* p = m->probs().data();
      for (int c = 0; c < dx; ++c) {
        re += p[c] * std::cos(ww[c]);
        im += p[c] * std::sin(ww[c]);
      }
      const double mod2 = re * re + im * im;
      if (mod2 == 0.0) return {kNegInf, 0.0};
      const double nt = m->trials();
      return {0.5 * nt * std::log(mod2), nt * std::atan2(im, re)};
    }
    const auto& q = std::get<BernoulliVectorModel>(working).probs();
    std::complex<double> acc = 0.0;
    for (int c = 0; c < dx; ++c) {
      const double re = 1.0 - q[c] + q[c] * std::cos(ww[c]);
      const double im = q[c] * std::sin(ww[c]);
      const double mod2 = re * re + im * im;
      if (mod2 == 0.0) return {kNegInf, 0.0};
      acc += std::complex<double>(0.5 * std::log(mod2), std::atan2(im, re));
    }
    return acc;
  };

  // Welford accumulation
  TermStats st;
  double m2 = 0.0;
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    double term = 0.0;
    bool inside = true;
    if (gaussian) {
      for (int r = 0; r < d; ++r) {
        if (std::abs(z(s, r)) > kPi) {
          inside = false;
          break;
        }
      }
    }
    if (inside) {
      for (int c = 0; c < dx; ++c) {
        double acc = 0.0;
        for (int r : by_cell[c]) acc += z(s, r);
        w[c] = acc;
      }
      const std::complex<double> lp = log_phi(w);
      double zy = 0.0;
      for (int r = 0; r < d; ++r) zy += z(s, r) * yd[r];
      double log_mag = lp.real();
      if (gaussian) {
        // z = C v with C C' = Sigma^{-1}, so z' Sigma z = |v|^2; recover v by
        // forward substitution.
        double quad = 0.0;
        for (int r = 0; r < d; ++r) {
          double acc = z(s, r);
          for (int c = 0; c < r; ++c) acc -= chol(r, c) * vbuf[c];
          vbuf[r] = acc / chol(r, r);
          quad += vbuf[r] * vbuf[r];
        }
        log_mag += 0.5 * quad - log_norm - d * kLog2Pi;
      }
      if (log_mag > kNegInf) term = std::exp(log_mag) * std::cos(lp.imag() - zy);
    }
    ++st.n;
    const double delta = term - st.mean;
    st.mean += delta / st.n;
    m2 += delta * (term - st.mean);
  }
  st.sd = st.n > 1 ? std::sqrt(m2 / (st.n - 1)) : 0.0;
  return st;
}

// Extra full Newton steps past the convergence tolerance, kept while the
// residual keeps falling. The solution then varies smoothly with the model
// parameters, which finite-difference gradients under common random
// numbers rely on.
void polish(const Model& model, const MarginsMap& a, const Vec& y, SaddlepointSolution& sol) {
  for (int step = 0; step < 3 && sol.residual_inf_norm > 0.0; ++step) {
    const Mat h = projected_hessian(model, a, transpose_apply(a, sol.nu));
    Eigen::LLT<Mat> llt(h);
    if (llt.info() != Eigen::Success) return;
    const Vec r = y - apply(a, cumulant_grad(model, transpose_apply(a, sol.nu)));
    const Vec trial = sol.nu + llt.solve(r);
    const Vec r_trial = y - apply(a, cumulant_grad(model, transpose_apply(a, trial)));
    const double res = r_trial.cwiseAbs().maxCoeff();
    if (!(res < sol.residual_inf_norm)) return;
    sol.nu = trial;
    sol.residual_inf_norm = res;
  }
}

DensityEstimate finish(const TermStats& st, double log_prefactor, int n_draws) {
  DensityEstimate est;
  est.effective_n_is = n_draws;
  est.sign = st.mean > 0 ? 1 : (st.mean < 0 ? -1 : 0);
  est.log_abs = est.sign == 0 ? kNegInf : std::log(std::abs(st.mean)) + log_prefactor;
  est.weight_cv = st.mean != 0.0 ? st.sd / std::abs(st.mean) : std::numeric_limits<double>::infinity();
  return est;
}

DensityEstimate degenerate_estimate(const Reduction& red) {
  DensityEstimate est;
  est.sign = 1;
  est.log_abs = red.log_correction;
  est.nu = Vec::Zero(0);
  return est;
}

}  // namespace

std::string variant_name(const EstimatorConfig& cfg) {
  std::string s = cfg.proposal == Proposal::gaussian ? "gaussian" : "uniform";
  s += cfg.tilt ? "_tilt" : "_notilt";
  if (cfg.use_rqmc) s += "_rqmc";
  return s;
}

double DensityEstimate::value() const { return sign == 0 ? 0.0 : sign * std::exp(log_abs); }

SaddlepointSolution solve_saddlepoint(const Model& model, const MarginsMap& a, const Vec& y) {
  if (y.size() != a.dy()) throw std::invalid_argument("solve_saddlepoint: y length mismatch");
  if (dim(model) != a.dx()) throw std::invalid_argument("solve_saddlepoint: model dimension mismatch");
  SaddlepointSolution sol;
  sol.nu = Vec::Zero(a.dy());
  const double tol = 1e-8 * std::max(1.0, y.size() ? y.cwiseAbs().maxCoeff() : 0.0);

  auto residual = [&](const Vec& nu) -> Vec { return y - apply(a, cumulant_grad(model, transpose_apply(a, nu))); };
  Vec r = residual(sol.nu);
  double res = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
  while (res > tol && sol.iterations < 50) {
    const Mat h = projected_hessian(model, a, transpose_apply(a, sol.nu));
    Eigen::LLT<Mat> llt;
    if (!robust_llt(h, llt)) break;
    const Vec step = llt.solve(r);
    double scale = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving, scale *= 0.5) {
      const Vec trial = sol.nu + scale * step;
      const Vec r_trial = residual(trial);
      const double res_trial = r_trial.cwiseAbs().maxCoeff();
      if (std::isfinite(res_trial) && res_trial < res) {
        sol.nu = trial;
        r = r_trial;
        res = res_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++sol.iterations;
  }
  sol.residual_inf_norm = res;
  sol.converged = res <= tol;
  return sol;
}

DensityEstimate estimate_density(const Model& model, const MarginsMap& a, const Counts& y, const EstimatorConfig& cfg) {
  if (cfg.n_is < 1) throw std::invalid_argument("estimate_density: n_is must be >= 1");
  const Reduction red = reduce_zero_margins(a, model, y);
  if (!red.feasible) {
    DensityEstimate est;
    est.feasible = false;
    return est;
  }
  if (!red.model || red.a.dy() == 0) return degenerate_estimate(red);

  const Model& base = *red.model;
  Vec nu = Vec::Zero(red.a.dy());
  int iters = 0;
  bool fallback = false;
  double log_prefactor = red.log_correction;
  std::optional<Model> tilted;
  if (cfg.tilt) {
    SaddlepointSolution sol = solve_saddlepoint(base, red.a, to_vec(red.y));
    iters = sol.iterations;
    if (sol.converged) {
      polish(base, red.a, to_vec(red.y), sol);
      const Vec rho = transpose_apply(red.a, sol.nu);
      try {
        tilted = tilt(base, rho);
        nu = sol.nu;
        log_prefactor += cumulant(base, rho) - nu.dot(to_vec(red.y));
      } catch (const std::invalid_argument&) {
        fallback = true;
      }
    } else {
      fallback = true;
    }
  }
  const TermStats st = importance_average(tilted ? *tilted : base, red.a, red.y, cfg);
  DensityEstimate est = finish(st, log_prefactor, st.n);
  est.nu = nu;
  est.newton_iters = iters;
  est.tilt_fallback = fallback;
  return est;
}

DensityEstimate estimate_density_at(const Model& model, const MarginsMap& a, const Counts& y, const Vec& nu,
                                    const EstimatorConfig& cfg) {
  const Reduction red = reduce_zero_margins(a, model, y);
  if (!red.feasible) {
    DensityEstimate est;
    est.feasible = false;
    return est;
  }
  if (red.a.dy() != a.dy() || red.a.dx() != a.dx()) {
    throw std::invalid_argument("estimate_density_at: problem has zero margins; reduce it first");
  }
  const Vec rho = transpose_apply(a, nu);
  const Model tilted = tilt(model, rho);
  const TermStats st = importance_average(tilted, a, y, cfg);
  DensityEstimate est = finish(st, cumulant(model, rho) - nu.dot(to_vec(y)), st.n);
  est.nu = nu;
  return est;
}

BatchResult batch_log_likelihood(std::span<const LikelihoodTerm> terms, const EstimatorConfig& cfg, int threads) {
  BatchResult out;
  out.estimates.resize(terms.size());
  parallel_for(terms.size(), threads, [&](std::size_t k) {
    EstimatorConfig local = cfg;
    local.seed = derive_seed(cfg.seed, terms[k].stream);
    out.estimates[k] = estimate_density(terms[k].model, *terms[k].a, terms[k].y, local);
  });
  for (const auto& est : out.estimates) {
    if (est.tilt_fallback) ++out.tilt_fallbacks;
    if (est.sign <= 0) {
      ++out.invalid_count;
    } else {
      out.total_log += est.log_abs;
    }
  }
  out.valid = out.invalid_count == 0;
  if (!out.valid) out.total_log = std::numeric_limits<double>::quiet_NaN();
  return out;
}

BatchResult batch_log_likelihood(std::span<const Model> models, const MarginsMap& a, std::span<const Counts> ys,
                                 const EstimatorConfig& cfg, int threads) {
  if (models.size() != ys.size()) throw std::invalid_argument("batch_log_likelihood: list lengths differ");
  auto shared = std::make_shared<const MarginsMap>(a);
  std::vector<LikelihoodTerm> terms;
  terms.reserve(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) terms.push_back({models[k], shared, ys[k], k});
  return batch_log_likelihood(terms, cfg, threads);
}

double gaussian_model_logpdf(const MultinomialModel& model, const MarginsMap& a, const Vec& y) {
  if (y.size() != a.dy() || model.dim() != a.dx()) throw std::invalid_argument("gaussian_model_logpdf: size mismatch");
  const Mat ad = a.dense();
  const Moments mom = moments(model);
  const Vec mean = ad * mom.mean;
  const Mat cov = ad * mom.cov * ad.transpose();
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian_model_logpdf: singular covariance");
  const Mat l = llt.matrixL();
  const double scale = cov.diagonal().cwiseAbs().maxCoeff();
  if (l.rows() > 0 && l.diagonal().array().square().minCoeff() <= 1e-12 * scale) {
    throw NumericalError("gaussian_model_logpdf: singular covariance");
  }
  const Vec u = l.triangularView<Eigen::Lower>().solve(y - mean);
  double half_logdet = 0.0;
  for (Eigen::Index r = 0; r < l.rows(); ++r) half_logdet += std::log(l(r, r));
  return -0.5 * static_cast<double>(y.size()) * kLog2Pi - half_logdet - 0.5 * u.squaredNorm();
}

std::vector<EstimatorVariant> standard_variants(int n_is, bool use_rqmc) {
  std::vector<EstimatorVariant> out;
  for (Proposal prop : {Proposal::uniform, Proposal::gaussian}) {
    for (bool t : {false, true}) {
      EstimatorConfig cfg{prop, t, n_is, use_rqmc, 0};
      out.push_back({variant_name(cfg), cfg});
    }
  }
  return out;
}

std::vector<VarianceRow> variance_profile(const ProfileStudy& study, const std::vector<EstimatorVariant>& variants,
                                          const std::vector<int>& n_grid, int replications, std::uint64_t seed,
                                          int threads) {
  if (replications < 2) throw std::invalid_argument("variance_profile: need at least 2 replications");
  const int k_obs = study.observations;
  std::vector<VarianceRow> rows;
  for (int n : n_grid) {
    const Model model = study.model(n);
    const Model gen = study.generator ? study.generator(n) : model;
    std::vector<Counts> ys;
    Rng obs_rng(derive_seed(seed, static_cast<std::uint64_t>(n), 0x0b5));
    for (int k = 0; k < k_obs; ++k) ys.push_back(apply(study.a, sample(gen, obs_rng)));

    for (std::size_t v = 0; v < variants.size(); ++v) {
      std::vector<DensityEstimate> est(static_cast<std::size_t>(k_obs) * replications);
      parallel_for(est.size(), threads, [&](std::size_t idx) {
        const std::size_t k = idx / static_cast<std::size_t>(replications);
        const std::size_t r = idx % static_cast<std::size_t>(replications);
        EstimatorConfig cfg = variants[v].cfg;
        cfg.seed = derive_seed(seed, static_cast<std::uint64_t>(n), v, r, k);
        est[idx] = estimate_density(model, study.a, ys[k], cfg);
      });

      VarianceRow row{variants[v].label, n, 0, 0.0, 0.0, replications, 0};
      double rel_sum = 0.0, sd_sum = 0.0;
      int rel_units = 0, sd_units = 0;
      for (int k = 0; k < k_obs; ++k) {
        const DensityEstimate* e = &est[static_cast<std::size_t>(k) * replications];
        row.n_is = e[0].effective_n_is;
        double ref = kNegInf;
        for (int r = 0; r < replications; ++r) {
          if (e[r].sign != 0) ref = std::max(ref, e[r].log_abs);
        }
        double mean = 0.0, m2 = 0.0, lmean = 0.0, lm2 = 0.0;
        int lcount = 0;
        for (int r = 0; r < replications; ++r) {
          const double v_r = e[r].sign == 0 ? 0.0 : e[r].sign * std::exp(e[r].log_abs - ref);
          const double delta = v_r - mean;
          mean += delta / (r + 1);
          m2 += delta * (v_r - mean);
          if (e[r].sign > 0) {
            ++lcount;
            const double ld = e[r].log_abs - lmean;
            lmean += ld / lcount;
            lm2 += ld * (e[r].log_abs - lmean);
          } else {
            ++row.invalid;
          }
        }
        if (ref > kNegInf) {
          const double sd = std::sqrt(m2 / (replications - 1));
          rel_sum += mean > 0 ? sd / mean : std::numeric_limits<double>::infinity();
          ++rel_units;
        }
        if (lcount >= 2) {
          sd_sum += std::sqrt(lm2 / (lcount - 1));
          ++sd_units;
        }
      }
      row.rel_se_likelihood = rel_units ? rel_sum / rel_units : std::numeric_limits<double>::quiet_NaN();
      row.sd_loglik = sd_units ? sd_sum / sd_units : std::numeric_limits<double>::quiet_NaN();
      rows.push_back(row);
    }
  }
  return rows;
}

void write_variance_csv(std::ostream& out, const std::vector<VarianceRow>& rows) {
  out << "variant,n,N_IS,rel_se_likelihood,sd_loglik,replications\n";
  const auto old_prec = out.precision(10);
  for (const auto& r : rows) {
    out << r.variant << ',' << r.n << ',' << r.n_is << ',' << r.rel_se_likelihood << ',' << r.sd_loglik << ','
        << r.replications << '\n';
  }
  out.precision(old_prec);
}

}  // namespace spmc
