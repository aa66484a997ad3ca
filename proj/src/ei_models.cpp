#include "spmc/ei_models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace spmc {
namespace {

// Margins maps are immutable and shared between stations of the same shape.
std::shared_ptr<const MarginsMap> shared_table_margins(int I, int J) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const MarginsMap>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{I, J}];
  if (!slot) slot = std::make_shared<const MarginsMap>(table_margins(I, J));
  return slot;
}

Counts sample_multinomial(int n, const Vec& p, Rng& rng) {
  if (n == 0) return Counts::Zero(p.size());
  return sample(Model(MultinomialModel(n, p / p.sum())), rng);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::model1:
      return "model1";
    case Variant::model2:
      return "model2";
    case Variant::model3:
      return "model3";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "model1") return Variant::model1;
  if (s == "model2") return Variant::model2;
  if (s == "model3") return Variant::model3;
  throw std::invalid_argument("unknown model variant '" + s + "' (expected model1, model2 or model3)");
}

void ModelSpec::validate() const {
  if (I < 2 || J < 2) throw std::invalid_argument("ModelSpec: I and J must be >= 2");
  if (!(prior_sigma2 > 0.0)) throw std::invalid_argument("ModelSpec: prior_sigma2 must be positive");
}

int ModelSpec::free_rows() const { return free_all_rows ? I : I - 1; }

int ModelSpec::theta_dim() const {
  if (variant == Variant::model1) return I * J - 1;
  return free_rows() * (J - 1);
}

int ModelSpec::param_dim() const { return variant == Variant::model3 ? 2 * theta_dim() : theta_dim(); }

Vec flatten(const ModelSpec& spec, const Theta& t) {
  const int d = spec.theta_dim();
  if (t.theta.size() != d) throw std::invalid_argument("flatten: theta has the wrong length");
  if (spec.variant != Variant::model3) return t.theta;
  if (t.beta.size() != d) throw std::invalid_argument("flatten: beta has the wrong length");
  Vec out(2 * d);
  out << t.theta, t.beta;
  return out;
}

Theta unflatten(const ModelSpec& spec, const Vec& params) {
  const int d = spec.theta_dim();
  if (params.size() != spec.param_dim()) throw std::invalid_argument("unflatten: parameter vector has the wrong length");
  Theta t;
  t.theta = params.head(d);
  if (spec.variant == Variant::model3) t.beta = params.tail(d);
  return t;
}

void validate_station(const ModelSpec& spec, const StationData& st) {
  const std::string where = "station '" + st.station_id + "': ";
  if (st.round1.size() != spec.I) throw DataError(where + "first-round length differs from I");
  if (st.round2.size() != spec.J) throw DataError(where + "second-round length differs from J");
  if (st.n <= 0) throw DataError(where + "zero-total station");
  if (st.round1.minCoeff() < 0 || st.round2.minCoeff() < 0) throw DataError(where + "negative count");
  if (st.round1.sum() != st.n || st.round2.sum() != st.n) throw DataError(where + "rounds do not sum to n");
  if (spec.variant == Variant::model3 && !st.covariate) throw DataError(where + "model3 needs a covariate");
  if (st.covariate && !std::isfinite(*st.covariate)) throw DataError(where + "non-finite covariate");
}

Vec softmax_with_reference(const Vec& logits) {
  Vec out(logits.size() + 1);
  out[0] = 0.0;
  out.tail(logits.size()) = logits;
  const double mx = out.maxCoeff();
  out = (out.array() - mx).exp();
  return out / out.sum();
}

Vec model1_probs(const ModelSpec& spec, const Theta& t) {
  if (spec.variant != Variant::model1) throw std::invalid_argument("model1_probs: not a model1 spec");
  return softmax_with_reference(t.theta);
}

Mat conditional_probs(const ModelSpec& spec, const Theta& t, double covariate) {
  const int I = spec.I, J = spec.J;
  Mat cond(I, J);
  if (spec.variant == Variant::model1) {
    const Vec p = model1_probs(spec, t);
    for (int i = 0; i < I; ++i) {
      double row = 0.0;
      for (int j = 0; j < J; ++j) row += p[i + I * j];
      for (int j = 0; j < J; ++j) cond(i, j) = p[i + I * j] / row;
    }
    return cond;
  }
  const int free = spec.free_rows();
  for (int i = 0; i < I; ++i) {
    Vec logits = Vec::Zero(J - 1);
    if (i < free) {
      logits = t.theta.segment(i * (J - 1), J - 1);
      if (spec.variant == Variant::model3) logits += covariate * t.beta.segment(i * (J - 1), J - 1);
    }
    cond.row(i) = softmax_with_reference(logits).transpose();
  }
  return cond;
}

StationProblem station_model(const ModelSpec& spec, const Theta& t, const StationData& st) {
  validate_station(spec, st);
  const int I = spec.I, J = spec.J;
  if (spec.variant == Variant::model1) {
    std::vector<int> rows(I);
    for (int i = 0; i < I; ++i) rows[i] = i;
    Counts y(I + J - 2);
    y << st.round1.head(I - 1), st.round2.head(J - 1);
    return {MultinomialModel(st.n, model1_probs(spec, t)), shared_table_margins(I, J), y, rows};
  }

  const Mat cond = conditional_probs(spec, t, st.covariate.value_or(0.0));
  std::vector<int> kept;
  for (int i = 0; i < I; ++i) {
    if (st.round1[i] > 0) kept.push_back(i);
  }
  const int ik = static_cast<int>(kept.size());
  Vec p(ik * J);
  for (int jj = 0; jj < J; ++jj) {
    for (int r = 0; r < ik; ++r) {
      p[r + ik * jj] = static_cast<double>(st.round1[kept[r]]) / st.n * cond(kept[r], jj);
    }
  }
  Counts y(ik + J - 2);
  for (int r = 0; r + 1 < ik; ++r) y[r] = st.round1[kept[r]];
  y.tail(J - 1) = st.round2.head(J - 1);
  p /= p.sum();
  return {MultinomialModel(st.n, p), shared_table_margins(ik, J), y, kept};
}

double log_prior(const ModelSpec& spec, const Theta& t) {
  const Vec params = flatten(spec, t);
  const double s2 = spec.prior_sigma2;
  return -0.5 * params.size() * std::log(2.0 * std::numbers::pi * s2) - 0.5 * params.squaredNorm() / s2;
}

EIPosterior::EIPosterior(ModelSpec spec, std::vector<StationData> data, EstimatorConfig cfg, int threads)
    : spec_(spec), data_(std::move(data)), cfg_(cfg), threads_(threads) {
  spec_.validate();
  for (const auto& st : data_) validate_station(spec_, st);
}

double EIPosterior::log_prior(const Vec& params) const { return spmc::log_prior(spec_, unflatten(spec_, params)); }

LikelihoodEval EIPosterior::log_likelihood(const Vec& params, std::span<const int> subset, int n_is,
                                           std::uint64_t seed) const {
  const Theta t = unflatten(spec_, params);
  std::vector<LikelihoodTerm> terms;
  auto add = [&](int k) {
    StationProblem sp = station_model(spec_, t, data_[k]);
    terms.push_back({std::move(sp.model), std::move(sp.a), std::move(sp.y), static_cast<std::uint64_t>(k)});
  };
  if (subset.empty()) {
    terms.reserve(data_.size());
    for (int k = 0; k < units(); ++k) add(k);
  } else {
    terms.reserve(subset.size());
    for (int k : subset) add(k);
  }
  EstimatorConfig cfg = cfg_;
  cfg.seed = seed;
  if (n_is > 0) cfg.n_is = n_is;
  const BatchResult b = batch_log_likelihood(terms, cfg, threads_);
  return {b.total_log, b.valid, b.invalid_count, b.tilt_fallbacks};
}

GaussianApproxPosterior::GaussianApproxPosterior(ModelSpec spec, std::vector<StationData> data)
    : spec_(spec), data_(std::move(data)) {
  spec_.validate();
  for (const auto& st : data_) validate_station(spec_, st);
}

double GaussianApproxPosterior::log_prior(const Vec& params) const {
  return spmc::log_prior(spec_, unflatten(spec_, params));
}

LikelihoodEval GaussianApproxPosterior::log_likelihood(const Vec& params, std::span<const int> subset, int,
                                                       std::uint64_t) const {
  const Theta t = unflatten(spec_, params);
  LikelihoodEval out;
  auto add = [&](int k) {
    const StationProblem sp = station_model(spec_, t, data_[k]);
    try {
      out.value += gaussian_model_logpdf(sp.model, *sp.a, sp.y.cast<double>());
    } catch (const NumericalError&) {
      ++out.invalid_count;
    }
  };
  if (subset.empty()) {
    for (int k = 0; k < units(); ++k) add(k);
  } else {
    for (int k : subset) add(k);
  }
  out.valid = out.invalid_count == 0;
  if (!out.valid) out.value = std::numeric_limits<double>::quiet_NaN();
  return out;
}

PosteriorEstimate log_posterior_estimate(const ModelSpec& spec, const Theta& t, const std::vector<StationData>& data,
                                         const EstimatorConfig& cfg, int threads) {
  const EIPosterior post(spec, data, cfg, threads);
  const Vec params = flatten(spec, t);
  PosteriorEstimate out;
  out.likelihood = post.log_likelihood(params, {}, cfg.n_is, cfg.seed);
  out.value = post.log_prior(params) + out.likelihood.value;
  return out;
}

std::vector<StationData> synth_generate(const ModelSpec& spec, const Theta& truth, const SynthOptions& opt) {
  spec.validate();
  if (opt.K < 0 || opt.n < 1) throw std::invalid_argument("synth_generate: need K >= 0 and n >= 1");
  const int I = spec.I, J = spec.J;
  Vec shares = opt.row_shares.size() ? opt.row_shares : Vec::Constant(I, 1.0 / I);
  if (shares.size() != I || shares.minCoeff() <= 0.0) throw std::invalid_argument("synth_generate: bad row shares");
  shares /= shares.sum();

  std::vector<StationData> out;
  out.reserve(opt.K);
  for (int k = 0; k < opt.K; ++k) {
    Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(k)));
    StationData st;
    st.station_id = "synth-1-" + std::to_string(k + 1);
    st.n = opt.n;
    st.covariate = opt.covariate ? opt.covariate(rng) : std::normal_distribution<double>()(rng);
    Counts x(I * J);
    if (spec.variant == Variant::model1) {
      x = sample_multinomial(opt.n, model1_probs(spec, truth), rng);
    } else {
      const Mat cond = conditional_probs(spec, truth, *st.covariate);
      const Counts rows = sample_multinomial(opt.n, shares, rng);
      for (int i = 0; i < I; ++i) {
        const Counts xi = sample_multinomial(rows[i], cond.row(i).transpose(), rng);
        for (int j = 0; j < J; ++j) x[i + I * j] = xi[j];
      }
    }
    st.round1 = Counts::Zero(I);
    st.round2 = Counts::Zero(J);
    for (int j = 0; j < J; ++j) {
      for (int i = 0; i < I; ++i) {
        st.round1[i] += x[i + I * j];
        st.round2[j] += x[i + I * j];
      }
    }
    out.push_back(std::move(st));
  }
  return out;
}

Mat prob_family(FamilyKind kind, double alpha, int I) { return prob_family(kind, alpha, I, I); }

Mat prob_family(FamilyKind kind, double alpha, int I, int J) {
  if (!(alpha >= 1.0)) throw std::invalid_argument("prob_family: alpha must be >= 1");
  if (I < 1 || J < 1) throw std::invalid_argument("prob_family: I and J must be >= 1");
  Mat p(I, J);
  if (kind == FamilyKind::type1) {
    // diagonal offsets (j - i mod J) run over (J/2 - J, J/2]
    for (int i = 0; i < I; ++i) {
      for (int j = 0; j < J; ++j) {
        int m = ((j - i) % J + J) % J;
        if (m > J / 2) m -= J;
        p(i, j) = std::pow(alpha, m);
      }
    }
  } else {
    for (int i = 0; i < I; ++i) p.row(i).setConstant(std::pow(alpha, i));
  }
  return p / p.sum();
}

Vec vec_colmajor(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

double weighted_quantile(std::vector<std::pair<double, double>> value_weight, double q) {
  if (value_weight.empty()) throw std::invalid_argument("weighted_quantile: no values");
  double total = 0.0;
  for (const auto& [v, w] : value_weight) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("weighted_quantile: weights must be finite, >= 0");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("weighted_quantile: all weights are zero");
  std::sort(value_weight.begin(), value_weight.end());
  const double target = q * total;
  double cum = 0.0;
  for (const auto& [v, w] : value_weight) {
    cum += w;
    if (cum >= target) return v;
  }
  return value_weight.back().first;
}

std::vector<TransitionCell> transition_summary(const ModelSpec& spec, const std::vector<Vec>& draws,
                                               const std::vector<double>& log_weights) {
  if (draws.empty()) throw std::invalid_argument("transition_summary: no draws");
  if (!log_weights.empty() && log_weights.size() != draws.size()) {
    throw std::invalid_argument("transition_summary: weight count differs from draw count");
  }
  std::vector<double> w(draws.size(), 1.0);
  if (!log_weights.empty()) {
    const double mx = *std::max_element(log_weights.begin(), log_weights.end());
    if (!(mx > -std::numeric_limits<double>::infinity())) throw std::invalid_argument("transition_summary: all weights are zero");
    for (std::size_t s = 0; s < draws.size(); ++s) w[s] = std::exp(log_weights[s] - mx);
  }
  std::vector<Mat> conds;
  conds.reserve(draws.size());
  for (const auto& d : draws) conds.push_back(conditional_probs(spec, unflatten(spec, d), 0.0));

  std::vector<TransitionCell> out;
  for (int i = 0; i < spec.I; ++i) {
    for (int j = 0; j < spec.J; ++j) {
      std::vector<std::pair<double, double>> vw(draws.size());
      for (std::size_t s = 0; s < draws.size(); ++s) vw[s] = {conds[s](i, j), w[s]};
      out.push_back({i, j, weighted_quantile(vw, 0.05), weighted_quantile(vw, 0.5), weighted_quantile(vw, 0.95)});
    }
  }
  return out;
}

}  // namespace spmc
