#include "spmc/studies.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "spmc/ei_models.hpp"
#include "spmc/parallel.hpp"

namespace spmc {
namespace {

ProfileStudy uniform_study(int I, int J, int K) {
  ProfileStudy s{table_margins(I, J), K, nullptr, nullptr};
  const Vec p = Vec::Constant(I * J, 1.0 / (I * J));
  s.model = [p](int n) { return Model(MultinomialModel(n, p)); };
  return s;
}

std::vector<EstimatorVariant> pick(const std::vector<EstimatorVariant>& all, std::initializer_list<const char*> keep,
                                   bool rqmc) {
  std::vector<EstimatorVariant> out;
  for (const char* k : keep) {
    for (const auto& v : all) {
      if (v.label == std::string(k) + (rqmc ? "_rqmc" : "")) out.push_back(v);
    }
  }
  return out;
}

std::string alpha_label(double a) {
  std::ostringstream ss;
  ss << a;
  return ss.str();
}

void append(std::vector<BenchRow>& out, const std::string& setting, const std::vector<VarianceRow>& rows) {
  for (const auto& r : rows) out.push_back({setting, r});
}

}  // namespace

Study parse_study(const std::string& name) {
  if (name == "fig1") return Study::fig1;
  if (name == "loglik-vs-n") return Study::loglik_vs_n;
  if (name == "families") return Study::families;
  if (name == "tail") return Study::tail;
  throw std::invalid_argument("unknown study '" + name + "' (fig1, loglik-vs-n, families, tail)");
}

std::string study_name(Study s) {
  switch (s) {
    case Study::fig1: return "fig1";
    case Study::loglik_vs_n: return "loglik-vs-n";
    case Study::families: return "families";
    case Study::tail: return "tail";
  }
  return "";
}

StudyOptions default_study_options(Study s) {
  StudyOptions o;
  switch (s) {
    case Study::fig1:
      o.n_grid = {50, 100, 200, 500, 1000};
      o.K = 100;
      o.n_is = 10;
      o.replications = 1000;
      break;
    case Study::loglik_vs_n:
      o.n_grid = {5, 10, 20, 50, 100, 200, 500, 1000};
      o.K = 1;
      o.n_is = 20000;
      o.replications = 100;
      break;
    case Study::families:
      o.n_grid = {3000};
      o.K = 200;
      o.n_is = 1000;
      o.replications = 200;
      o.alphas = {1, 2, 5, 10};
      break;
    case Study::tail:
      o.n_grid = {1000};
      o.K = 200;
      o.n_is = 1000;
      o.replications = 200;
      break;
  }
  return o;
}

std::vector<BenchRow> run_study(Study s, const StudyOptions& opt) {
  if (opt.n_grid.empty()) throw std::invalid_argument("study needs a non-empty n grid");
  if (opt.K < 1 || opt.n_is < 1 || opt.replications < 2) {
    throw std::invalid_argument("study needs K >= 1, N_IS >= 1 and at least 2 replications");
  }
  const auto all = standard_variants(opt.n_is, opt.rqmc);
  std::vector<BenchRow> out;
  switch (s) {
    case Study::fig1:
      append(out, "uniform",
             variance_profile(uniform_study(opt.I, opt.J, opt.K), all, opt.n_grid, opt.replications, opt.seed,
                              opt.threads));
      break;
    case Study::loglik_vs_n:
      append(out, "uniform",
             variance_profile(uniform_study(opt.I, opt.J, opt.K), pick(all, {"uniform_tilt", "gaussian_tilt"}, opt.rqmc),
                              opt.n_grid, opt.replications, opt.seed, opt.threads));
      break;
    case Study::families: {
      if (opt.I != opt.J) throw std::invalid_argument("families study needs I == J");
      if (opt.alphas.empty()) throw std::invalid_argument("families study needs at least one alpha");
      const auto variants = pick(all, {"gaussian_tilt"}, opt.rqmc);
      for (FamilyKind kind : {FamilyKind::type1, FamilyKind::type2}) {
        for (std::size_t ai = 0; ai < opt.alphas.size(); ++ai) {
          const Vec p = vec_colmajor(prob_family(kind, opt.alphas[ai], opt.I));
          ProfileStudy st{table_margins(opt.I, opt.J), opt.K, nullptr, nullptr};
          st.model = [p](int n) { return Model(MultinomialModel(n, p)); };
          const std::string label =
              std::string(kind == FamilyKind::type1 ? "type1" : "type2") + "_alpha=" + alpha_label(opt.alphas[ai]);
          const std::uint64_t seed = derive_seed(opt.seed, kind == FamilyKind::type1 ? 1 : 2, ai);
          append(out, label, variance_profile(st, variants, opt.n_grid, opt.replications, seed, opt.threads));
        }
      }
      break;
    }
    case Study::tail: {
      if (opt.I != opt.J) throw std::invalid_argument("tail study needs I == J");
      const auto variants = pick(all, {"gaussian_tilt", "gaussian_notilt"}, opt.rqmc);
      ProfileStudy mode = uniform_study(opt.I, opt.J, opt.K);
      ProfileStudy tail = uniform_study(opt.I, opt.J, opt.K);
      const Vec pt = vec_colmajor(prob_family(FamilyKind::type1, opt.tail_alpha, opt.I));
      tail.generator = [pt](int n) { return Model(MultinomialModel(n, pt)); };
      append(out, "mode",
             variance_profile(mode, variants, opt.n_grid, opt.replications, derive_seed(opt.seed, 1), opt.threads));
      append(out, "tail",
             variance_profile(tail, variants, opt.n_grid, opt.replications, derive_seed(opt.seed, 2), opt.threads));
      break;
    }
  }
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "setting,variant,n,N_IS,rel_se_likelihood,sd_loglik,replications\n";
  const auto old_prec = out.precision(10);
  for (const auto& b : rows) {
    const VarianceRow& r = b.row;
    out << b.setting << ',' << r.variant << ',' << r.n << ',' << r.n_is << ',' << r.rel_se_likelihood << ','
        << r.sd_loglik << ',' << r.replications << '\n';
  }
  out.precision(old_prec);
}

CountEstimate count_binary_tables(const std::vector<int>& rows_in, const std::vector<int>& cols_in, int n_is,
                                  int replications, std::uint64_t seed, int threads, bool use_rqmc) {
  if (rows_in.empty() || cols_in.empty()) throw std::invalid_argument("count_binary_tables: empty margins");
  if (replications < 2) throw std::invalid_argument("count_binary_tables: need at least 2 replications");
  if (n_is < 1) throw std::invalid_argument("count_binary_tables: N_IS must be >= 1");
  CountEstimate res;
  res.replications = replications;
  res.n_is = n_is;

  std::vector<int> rows = rows_in, cols = cols_in;
  auto infeasible = [&]() {
    res.feasible = false;
    res.replicates.assign(replications, 0.0);
    return res;
  };
  for (int r : rows) {
    if (r < 0 || r > static_cast<int>(cols.size())) return infeasible();
  }
  for (int c : cols) {
    if (c < 0 || c > static_cast<int>(rows.size())) return infeasible();
  }
  if (std::accumulate(rows.begin(), rows.end(), 0) != std::accumulate(cols.begin(), cols.end(), 0)) {
    return infeasible();
  }

  // An empty or full line fixes its cells; drop it and update the others.
  for (bool changed = true; changed && !rows.empty() && !cols.empty();) {
    changed = false;
    const int nr = static_cast<int>(rows.size()), nc = static_cast<int>(cols.size());
    for (int i = 0; i < nr && !changed; ++i) {
      if (rows[i] == 0 || rows[i] == nc) {
        if (rows[i] == nc) {
          for (int& c : cols) --c;
        }
        rows.erase(rows.begin() + i);
        changed = true;
      }
    }
    for (int j = 0; j < nc && !changed; ++j) {
      if (cols[j] == 0 || cols[j] == nr) {
        if (cols[j] == nr) {
          for (int& r : rows) --r;
        }
        cols.erase(cols.begin() + j);
        changed = true;
      }
    }
    for (int r : rows) {
      if (r < 0 || r > static_cast<int>(cols.size())) return infeasible();
    }
    for (int c : cols) {
      if (c < 0 || c > static_cast<int>(rows.size())) return infeasible();
    }
  }
  res.reduced_rows = static_cast<int>(rows.size());
  res.reduced_cols = static_cast<int>(cols.size());
  if (rows.empty() || cols.empty()) {
    // Every cell is forced; the remaining margins must all be zero.
    for (int r : rows) {
      if (r != 0) return infeasible();
    }
    for (int c : cols) {
      if (c != 0) return infeasible();
    }
    res.estimate = 1.0;
    res.replicates.assign(replications, 1.0);
    return res;
  }

  const int I = res.reduced_rows, J = res.reduced_cols;
  const MarginsMap a = full_margins_matrix(I, J);
  Counts y(a.dy());
  for (int i = 0; i < I; ++i) y[i] = rows[i];
  for (int j = 0; j + 1 < J; ++j) y[I + j] = cols[j];
  const Model model = BernoulliVectorModel(Vec::Constant(I * J, 0.5));
  const double log_scale = I * J * std::log(2.0);

  EstimatorConfig base;
  base.proposal = Proposal::gaussian;
  base.tilt = true;
  base.n_is = n_is;
  base.use_rqmc = use_rqmc;
  res.replicates.assign(replications, 0.0);
  parallel_for(static_cast<std::size_t>(replications), threads, [&](std::size_t r) {
    EstimatorConfig cfg = base;
    cfg.seed = derive_seed(seed, r);
    const DensityEstimate e = estimate_density(model, a, y, cfg);
    res.replicates[r] = e.sign == 0 ? 0.0 : e.sign * std::exp(e.log_abs + log_scale);
  });
  double mean = 0.0;
  for (double v : res.replicates) mean += v;
  mean /= replications;
  double ss = 0.0;
  for (double v : res.replicates) ss += (v - mean) * (v - mean);
  res.estimate = mean;
  res.se = std::sqrt(ss / (replications - 1) / replications);
  return res;
}

}  // namespace spmc
