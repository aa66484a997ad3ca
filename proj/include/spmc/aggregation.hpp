#pragma once

// The 0/1 aggregation map A taking a flattened table X to its observed
// margins Y = AX, and the zero-margin dimension reduction.

#include <optional>
#include <vector>

#include "spmc/common.hpp"
#include "spmc/families.hpp"

namespace spmc {

/// A margin that is not observed directly but is determined by the observed
/// ones: y = total_coef * n + sum_r margin_coefs[r] * y_r, over `cells`.
/// Used only by the reduction, to detect cells forced to a bound by a dropped
/// redundant margin.
struct ImpliedMargin {
  std::vector<int> cells;
  double total_coef = 0.0;
  std::vector<double> margin_coefs;
};

/// Sparse 0/1 matrix with d_Y rows over d_X columns; row r lists the cells
/// summed into margin r.
class MarginsMap {
 public:
  MarginsMap() = default;
  MarginsMap(int d_x, std::vector<std::vector<int>> rows, std::vector<ImpliedMargin> implied = {});

  int dx() const { return d_x_; }
  int dy() const { return static_cast<int>(rows_.size()); }
  const std::vector<std::vector<int>>& rows() const { return rows_; }
  const std::vector<ImpliedMargin>& implied() const { return implied_; }
  /// For each cell, the margins it contributes to.
  const std::vector<std::vector<int>>& margins_of_cell() const { return by_cell_; }

  Mat dense() const;

  /// Whether the rows are linearly independent, optionally together with the
  /// all-ones vector (the fixed multinomial total).
  bool independent(bool with_total) const { return with_total ? indep_with_total_ : indep_; }

 private:
  int d_x_ = 0;
  std::vector<std::vector<int>> rows_;
  std::vector<ImpliedMargin> implied_;
  std::vector<std::vector<int>> by_cell_;
  bool indep_ = true;
  bool indep_with_total_ = true;
};

/// Margins of an I x J table stacked column-major (cell (i,j) at index
/// i + I*j): row sums of rows 0..I-2, then column sums of columns 0..J-2.
/// The last row and column sums are redundant given the total n.
MarginsMap margins_matrix(int I, int J);

/// Same layout as margins_matrix but allows I or J equal to 1.
MarginsMap table_margins(int I, int J);

/// All I row sums and the first J-1 column sums. For laws without a fixed
/// total (Bernoulli tables) only the last column sum is redundant.
MarginsMap full_margins_matrix(int I, int J);

/// Each cell observed on its own.
MarginsMap identity_map(int d);

/// A single margin summing all cells.
MarginsMap sum_map(int d);

Vec apply(const MarginsMap& a, const Vec& x);
Counts apply(const MarginsMap& a, const Counts& x);
Vec transpose_apply(const MarginsMap& a, const Vec& z);

/// Result of removing cells forced to a bound by the observed margins.
struct Reduction {
  bool feasible = true;
  MarginsMap a;
  /// Absent when no cell remains free (the reduced problem is 0-dimensional).
  std::optional<Model> model;
  Counts y;
  /// log P(forced cells take their forced values); f_{AX}(y) =
  /// exp(log_correction) * f_{A'X'}(y').
  double log_correction = 0.0;
  std::vector<int> kept_cells;
  std::vector<int> kept_margins;
};

/// Deletes every cell pinned by a zero margin (or, for Bernoulli cells, by a
/// saturated margin), drops margins made redundant, and conditions the model
/// on the pinned cells. Multinomial: the remaining probabilities are
/// renormalized and the correction is n log(sum of kept p). Infeasible
/// margins are reported through `feasible`, checked before any solve.
Reduction reduce_zero_margins(const MarginsMap& a, const Model& model, const Counts& y);

}  // namespace spmc
