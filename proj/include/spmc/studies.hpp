#pragma once

// Synthetic variance studies for the estimator and Monte Carlo counting of
// binary matrices with fixed margins.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "spmc/estimator.hpp"

namespace spmc {

enum class Study { fig1, loglik_vs_n, families, tail };

Study parse_study(const std::string& name);
std::string study_name(Study s);

struct StudyOptions {
  std::vector<int> n_grid;
  int I = 3;
  int J = 3;
  int K = 100;
  int n_is = 10;
  int replications = 1000;
  std::vector<double> alphas;  // families
  double tail_alpha = 3.0;     // tail
  bool rqmc = false;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Desk-scale defaults mirroring the published experiment of each study.
StudyOptions default_study_options(Study s);

struct BenchRow {
  /// "uniform" (fig1, loglik-vs-n), "type1_alpha=2" (families),
  /// "mode" / "tail" (tail).
  std::string setting;
  VarianceRow row;
};

/// fig1: the four variants on uniform I x J tables over n_grid.
/// loglik-vs-n: uniform_tilt and gaussian_tilt, same setup.
/// families: gaussian_tilt with p in the type1 and type2 families
///   (I = J) for each alpha, data drawn from the same law.
/// tail: gaussian_tilt and gaussian_notilt under uniform p, with data drawn
///   either from uniform p ("mode") or from type1 with tail_alpha ("tail").
std::vector<BenchRow> run_study(Study s, const StudyOptions& opt);

/// Header: setting,variant,n,N_IS,rel_se_likelihood,sd_loglik,replications
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

struct CountEstimate {
  double estimate = 0.0;  // replication mean
  double se = 0.0;        // standard error of the replication mean
  int replications = 0;
  int n_is = 0;
  /// Rows and columns left after removing forced (empty or full) lines.
  int reduced_rows = 0;
  int reduced_cols = 0;
  bool feasible = true;
  std::vector<double> replicates;
};

/// Number of I x J binary matrices with the given row and column sums,
/// estimated as 2^{IJ} P(AX = y) for iid Bernoulli(1/2) cells with the
/// tilted Gaussian estimator. Empty or full rows/columns fix their cells
/// and are removed first; infeasible margins give exactly 0.
CountEstimate count_binary_tables(const std::vector<int>& rows, const std::vector<int>& cols, int n_is,
                                  int replications, std::uint64_t seed, int threads = 1, bool use_rqmc = false);

}  // namespace spmc
