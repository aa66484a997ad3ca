#include "spmc/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace spmc {

MarginsMap::MarginsMap(int d_x, std::vector<std::vector<int>> rows, std::vector<ImpliedMargin> implied)
    : d_x_(d_x), rows_(std::move(rows)), implied_(std::move(implied)), by_cell_(d_x) {
  if (d_x_ < 0) throw std::invalid_argument("MarginsMap: negative d_X");
  std::set<std::vector<int>> seen;
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    auto& row = rows_[r];
    std::sort(row.begin(), row.end());
    if (std::adjacent_find(row.begin(), row.end()) != row.end()) {
      throw std::invalid_argument("MarginsMap: repeated cell in a row (entries must be 0/1)");
    }
    for (int c : row) {
      if (c < 0 || c >= d_x_) throw std::invalid_argument("MarginsMap: cell index out of range");
      by_cell_[c].push_back(static_cast<int>(r));
    }
    if (!seen.insert(row).second) throw std::invalid_argument("MarginsMap: duplicate rows");
  }
  if (dy() > d_x_) throw std::invalid_argument("MarginsMap: d_Y must not exceed d_X");
  for (auto& im : implied_) {
    std::sort(im.cells.begin(), im.cells.end());
    if (im.margin_coefs.size() != rows_.size()) {
      throw std::invalid_argument("MarginsMap: implied margin coefficient count mismatch");
    }
    for (int c : im.cells) {
      if (c < 0 || c >= d_x_) throw std::invalid_argument("MarginsMap: implied cell out of range");
    }
  }
  if (d_x_ > 0) {
    const Mat a = dense();
    indep_ = dy() == 0 || Eigen::FullPivLU<Mat>(a).rank() == dy();
    Mat with_total(dy() + 1, d_x_);
    with_total << a, Eigen::RowVectorXd::Ones(d_x_);
    indep_with_total_ = Eigen::FullPivLU<Mat>(with_total).rank() == dy() + 1;
  } else {
    indep_with_total_ = false;
  }
}

Mat MarginsMap::dense() const {
  Mat a = Mat::Zero(dy(), dx());
  for (int r = 0; r < dy(); ++r) {
    for (int c : rows_[r]) a(r, c) = 1.0;
  }
  return a;
}

MarginsMap table_margins(int I, int J) {
  if (I < 1 || J < 1) throw std::invalid_argument("table_margins: I and J must be >= 1");
  std::vector<std::vector<int>> rows;
  const int n_row_margins = I - 1;
  const int n_col_margins = J - 1;
  for (int i = 0; i < n_row_margins; ++i) {
    std::vector<int> row;
    for (int j = 0; j < J; ++j) row.push_back(i + I * j);
    rows.push_back(std::move(row));
  }
  for (int j = 0; j < n_col_margins; ++j) {
    std::vector<int> row;
    for (int i = 0; i < I; ++i) row.push_back(i + I * j);
    rows.push_back(std::move(row));
  }
  const std::size_t m = rows.size();
  std::vector<ImpliedMargin> implied;
  // last row: n - sum of observed row sums
  ImpliedMargin last_row{{}, 1.0, std::vector<double>(m, 0.0)};
  for (int j = 0; j < J; ++j) last_row.cells.push_back((I - 1) + I * j);
  for (int i = 0; i < n_row_margins; ++i) last_row.margin_coefs[i] = -1.0;
  implied.push_back(std::move(last_row));
  ImpliedMargin last_col{{}, 1.0, std::vector<double>(m, 0.0)};
  for (int i = 0; i < I; ++i) last_col.cells.push_back(i + I * (J - 1));
  for (int j = 0; j < n_col_margins; ++j) last_col.margin_coefs[n_row_margins + j] = -1.0;
  implied.push_back(std::move(last_col));
  return MarginsMap(I * J, std::move(rows), std::move(implied));
}

MarginsMap margins_matrix(int I, int J) {
  if (I < 2 || J < 2) throw std::invalid_argument("margins_matrix: I and J must be >= 2");
  return table_margins(I, J);
}

MarginsMap full_margins_matrix(int I, int J) {
  if (I < 1 || J < 1) throw std::invalid_argument("full_margins_matrix: I and J must be >= 1");
  std::vector<std::vector<int>> rows;
  for (int i = 0; i < I; ++i) {
    std::vector<int> row;
    for (int j = 0; j < J; ++j) row.push_back(i + I * j);
    rows.push_back(std::move(row));
  }
  for (int j = 0; j + 1 < J; ++j) {
    std::vector<int> row;
    for (int i = 0; i < I; ++i) row.push_back(i + I * j);
    rows.push_back(std::move(row));
  }
  // last column: sum of row sums - sum of observed column sums
  ImpliedMargin last_col{{}, 0.0, std::vector<double>(rows.size(), 0.0)};
  for (int i = 0; i < I; ++i) last_col.cells.push_back(i + I * (J - 1));
  for (int i = 0; i < I; ++i) last_col.margin_coefs[i] = 1.0;
  for (int j = 0; j + 1 < J; ++j) last_col.margin_coefs[I + j] = -1.0;
  return MarginsMap(I * J, std::move(rows), {std::move(last_col)});
}

MarginsMap identity_map(int d) {
  std::vector<std::vector<int>> rows;
  for (int j = 0; j < d; ++j) rows.push_back({j});
  return MarginsMap(d, std::move(rows));
}

MarginsMap sum_map(int d) {
  std::vector<int> all(d);
  for (int j = 0; j < d; ++j) all[j] = j;
  return MarginsMap(d, {all});
}

Vec apply(const MarginsMap& a, const Vec& x) {
  if (x.size() != a.dx()) throw std::invalid_argument("apply: length mismatch");
  Vec y = Vec::Zero(a.dy());
  for (int r = 0; r < a.dy(); ++r) {
    for (int c : a.rows()[r]) y[r] += x[c];
  }
  return y;
}

Counts apply(const MarginsMap& a, const Counts& x) {
  if (x.size() != a.dx()) throw std::invalid_argument("apply: length mismatch");
  Counts y = Counts::Zero(a.dy());
  for (int r = 0; r < a.dy(); ++r) {
    for (int c : a.rows()[r]) y[r] += x[c];
  }
  return y;
}

Vec transpose_apply(const MarginsMap& a, const Vec& z) {
  if (z.size() != a.dy()) throw std::invalid_argument("transpose_apply: length mismatch");
  Vec w = Vec::Zero(a.dx());
  for (int r = 0; r < a.dy(); ++r) {
    for (int c : a.rows()[r]) w[c] += z[r];
  }
  return w;
}

namespace {

struct WorkingMargin {
  std::vector<int> cells;
  long long value;
  bool implied;
  int source;  // index into the observed margins, -1 for implied
};

Reduction infeasible() {
  Reduction r;
  r.feasible = false;
  return r;
}

}  // namespace

Reduction reduce_zero_margins(const MarginsMap& a, const Model& model, const Counts& y) {
  if (y.size() != a.dy()) throw std::invalid_argument("reduce_zero_margins: y length mismatch");
  if (dim(model) != a.dx()) throw std::invalid_argument("reduce_zero_margins: model dimension mismatch");
  const auto* multi = std::get_if<MultinomialModel>(&model);
  const long long n_total = multi ? multi->trials() : 0;

  std::vector<WorkingMargin> margins;
  for (int r = 0; r < a.dy(); ++r) margins.push_back({a.rows()[r], y[r], false, r});
  for (const auto& im : a.implied()) {
    if (!multi && im.total_coef != 0.0) continue;  // needs a fixed total
    double v = im.total_coef * static_cast<double>(n_total);
    for (int r = 0; r < a.dy(); ++r) v += im.margin_coefs[r] * y[r];
    const double rounded = std::round(v);
    if (std::abs(v - rounded) > 1e-9) return infeasible();
    margins.push_back({im.cells, static_cast<long long>(rounded), true, -1});
  }

  // -1 free, 0 forced empty, 1 forced full
  std::vector<int> state(a.dx(), -1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& m : margins) {
      long long ones = 0, free = 0;
      for (int c : m.cells) {
        if (state[c] == 1) ++ones;
        if (state[c] == -1) ++free;
      }
      const long long rem = m.value - ones;
      if (rem < 0) return infeasible();
      if (free == 0) {
        if (rem != 0) return infeasible();
        continue;
      }
      if (multi) {
        if (rem > n_total) return infeasible();
      } else if (rem > free) {
        return infeasible();
      }
      int forced = -1;
      if (rem == 0) forced = 0;
      else if (!multi && rem == free) forced = 1;
      if (forced >= 0) {
        for (int c : m.cells) {
          if (state[c] == -1) state[c] = forced;
        }
        changed = true;
      }
    }
  }

  Reduction out;
  if (std::all_of(state.begin(), state.end(), [](int s) { return s == -1; }) && a.independent(multi != nullptr)) {
    out.a = a;
    out.model = model;
    out.y = y;
    out.kept_cells.resize(a.dx());
    for (int c = 0; c < a.dx(); ++c) out.kept_cells[c] = c;
    out.kept_margins.resize(a.dy());
    for (int r = 0; r < a.dy(); ++r) out.kept_margins[r] = r;
    return out;
  }
  std::vector<int> new_index(a.dx(), -1);
  for (int c = 0; c < a.dx(); ++c) {
    if (state[c] == -1) {
      new_index[c] = static_cast<int>(out.kept_cells.size());
      out.kept_cells.push_back(c);
    }
  }
  const int dx_new = static_cast<int>(out.kept_cells.size());
  if (multi && dx_new == 0) return infeasible();

  // Keep margins that are linearly independent of the ones already kept
  // (and of the all-ones total for multinomial laws); dependent margins must
  // agree with the combination they are implied by.
  std::vector<Vec> basis;
  std::vector<double> basis_values;
  if (multi && dx_new > 0) {
    basis.push_back(Vec::Ones(dx_new));
    basis_values.push_back(static_cast<double>(n_total));
  }
  std::vector<std::vector<int>> new_rows;
  std::vector<int> new_values;
  for (const auto& m : margins) {
    Vec v = Vec::Zero(dx_new);
    long long ones = 0;
    for (int c : m.cells) {
      if (state[c] == -1) v[new_index[c]] = 1.0;
      if (state[c] == 1) ++ones;
    }
    const double value = static_cast<double>(m.value - ones);
    if (v.isZero()) continue;
    bool dependent = false;
    if (!basis.empty()) {
      Mat b(dx_new, static_cast<Eigen::Index>(basis.size()));
      for (std::size_t k = 0; k < basis.size(); ++k) b.col(static_cast<Eigen::Index>(k)) = basis[k];
      const Vec coef = b.colPivHouseholderQr().solve(v);
      if ((b * coef - v).norm() < 1e-9 * (1.0 + v.norm())) {
        dependent = true;
        double implied_value = 0.0;
        for (std::size_t k = 0; k < basis.size(); ++k) implied_value += coef[static_cast<Eigen::Index>(k)] * basis_values[k];
        if (std::abs(implied_value - value) > 1e-6 * (1.0 + std::abs(value))) return infeasible();
      }
    }
    if (dependent || m.implied) continue;
    basis.push_back(v);
    basis_values.push_back(value);
    std::vector<int> row;
    for (int c : m.cells) {
      if (state[c] == -1) row.push_back(new_index[c]);
    }
    new_rows.push_back(std::move(row));
    new_values.push_back(static_cast<int>(value));
    out.kept_margins.push_back(m.source);
  }

  out.a = MarginsMap(dx_new, std::move(new_rows));
  out.y = Counts(static_cast<Eigen::Index>(new_values.size()));
  for (std::size_t r = 0; r < new_values.size(); ++r) out.y[static_cast<Eigen::Index>(r)] = new_values[r];

  if (multi) {
    Vec p(dx_new);
    for (int k = 0; k < dx_new; ++k) p[k] = multi->probs()[out.kept_cells[k]];
    const double kept_mass = p.sum();
    out.log_correction = dx_new == a.dx() ? 0.0 : static_cast<double>(n_total) * std::log(kept_mass);
    out.model = MultinomialModel(multi->trials(), p / kept_mass);
  } else {
    const auto& q = std::get<BernoulliVectorModel>(model).probs();
    double corr = 0.0;
    for (int c = 0; c < a.dx(); ++c) {
      if (state[c] == 0) corr += std::log1p(-q[c]);
      if (state[c] == 1) corr += std::log(q[c]);
    }
    out.log_correction = corr;
    if (dx_new > 0) {
      Vec qk(dx_new);
      for (int k = 0; k < dx_new; ++k) qk[k] = q[out.kept_cells[k]];
      out.model = BernoulliVectorModel(qk);
    }
  }
  return out;
}

}  // namespace spmc
