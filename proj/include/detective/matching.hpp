#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detective/geometry.hpp"
#include "detective/model.hpp"
#include "detective/ops.hpp"

namespace detective {

/// Ground-truth object: class index into the object classes plus its box.
struct TargetLabel {
  std::size_t cls = 0;
  BoxOffsets loc;

  std::vector<double> one_hot(std::size_t num_outputs) const {
    std::vector<double> v(num_outputs, 0.0);
    v.at(cls) = 1.0;
    return v;
  }
  bool operator==(const TargetLabel&) const = default;
};

struct MatchWeights {
  double cls = 0.0;
  double loc = 16.0;
};

/// Row = target, column = prediction.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw std::invalid_argument("cost matrix size mismatch");
  }
  static CostMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    CostMatrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw std::invalid_argument("ragged cost matrix");
      std::copy(rows[i].begin(), rows[i].end(), m.data_.begin() + i * m.cols_);
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<const double> values() const { return data_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// target_to_prediction[t] is the column matched to row t.
struct Assignment {
  std::vector<std::size_t> target_to_prediction;
  double total_cost = 0.0;
};

inline double assignment_cost(const CostMatrix& costs, const std::vector<std::size_t>& g) {
  double total = 0.0;
  for (std::size_t t = 0; t < g.size(); ++t) total += costs(t, g[t]);
  return total;
}

inline double classification_nll(std::span<const double> p_cls, std::size_t cls) {
  return -std::log(std::max(p_cls[cls], kProbabilityFloor));
}

inline double squared_distance(const BoxOffsets& a, const BoxOffsets& b) {
  const auto x = a.as_array(), y = b.as_array();
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  return total;
}

/// mu_cls * NLL(t_cls, p_cls) + mu_loc * ||t_loc - p_loc||^2
inline double pair_cost(const TargetLabel& t, std::span<const double> p_cls,
                        const BoxOffsets& p_loc, const MatchWeights& mu) {
  double cost = mu.loc * squared_distance(t.loc, p_loc);
  if (mu.cls != 0.0) cost += mu.cls * classification_nll(p_cls, t.cls);
  return cost;
}

inline double pair_cost(const TargetLabel& t, const Prediction& p, const MatchWeights& mu) {
  return pair_cost(t, p.p_cls, p.p_loc, mu);
}

/// Costs of every target against predictions[0, columns); columns defaults
/// to the number of targets.
inline CostMatrix build_cost_matrix(std::span<const TargetLabel> targets,
                                    std::span<const Prediction> predictions,
                                    const MatchWeights& mu,
                                    std::optional<std::size_t> columns = std::nullopt) {
  const std::size_t cols = columns.value_or(targets.size());
  if (predictions.size() < cols) {
    throw std::invalid_argument("build_cost_matrix: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(cols) + " columns");
  }
  CostMatrix m(targets.size(), cols);
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = pair_cost(targets[i], predictions[j], mu);
  return m;
}

namespace detail {

inline void require_finite(const CostMatrix& costs) {
  for (double v : costs.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("cost matrix has a non-finite entry");
  }
}

// Among optimal assignments (all edges tight under the dual potentials), move
// each target in turn to the lowest-index column that still admits a perfect
// matching of tight edges. Yields the lexicographically smallest optimum.
inline void lexicographic_tiebreak(const CostMatrix& c, const std::vector<double>& u,
                                   const std::vector<double>& v, std::vector<std::size_t>& g) {
  const std::size_t n = g.size();
  double scale = 1.0;
  for (double x : c.values()) scale = std::max(scale, std::abs(x));
  const double tol = 1e-11 * scale;
  auto tight = [&](std::size_t i, std::size_t j) { return c(i, j) - u[i] - v[j] <= tol; };

  std::vector<std::size_t> owner(n);
  for (std::size_t t = 0; t < n; ++t) owner[g[t]] = t;

  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < g[t]; ++j) {
      if (owner[j] < t || !tight(t, j)) continue;
      // Alternating path from owner[j] (which loses j) to column g[t].
      const std::size_t goal = g[t];
      std::vector<std::size_t> parent_col(n, n);  // column -> column we came from
      std::vector<bool> seen(n, false);
      std::vector<std::size_t> queue{j};
      seen[j] = true;
      bool found = false;
      for (std::size_t q = 0; q < queue.size() && !found; ++q) {
        const std::size_t row = owner[queue[q]];
        for (std::size_t col = 0; col < n; ++col) {
          if (seen[col] || owner[col] < t || !tight(row, col)) continue;
          seen[col] = true;
          parent_col[col] = queue[q];
          if (col == goal) {
            found = true;
            break;
          }
          queue.push_back(col);
        }
      }
      if (!found) continue;
      // Rotate: each row along the path takes the next column.
      std::size_t col = goal;
      while (col != j) {
        const std::size_t prev = parent_col[col];
        const std::size_t row = owner[prev];
        g[row] = col;
        owner[col] = row;
        col = prev;
      }
      g[t] = j;
      owner[j] = t;
      break;
    }
  }
}

}  // namespace detail

/// Optimal assignment for a square cost matrix by shortest augmenting paths
/// with dual potentials, O(n^3). Ties are broken towards the lexicographically
/// smallest assignment.
inline Assignment hungarian(const CostMatrix& costs) {
  if (costs.rows() != costs.cols()) {
    throw std::invalid_argument("hungarian: cost matrix must be square, got " +
                                std::to_string(costs.rows()) + "x" + std::to_string(costs.cols()));
  }
  detail::require_finite(costs);
  const std::size_t n = costs.rows();
  if (n == 0) return {};

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t i0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = costs(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  Assignment a;
  a.target_to_prediction.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.target_to_prediction[match[j] - 1] = j - 1;
  detail::lexicographic_tiebreak(costs, std::vector<double>(u.begin() + 1, u.end()),
                                 std::vector<double>(v.begin() + 1, v.end()),
                                 a.target_to_prediction);
  a.total_cost = assignment_cost(costs, a.target_to_prediction);
  return a;
}

/// Exhaustive search over all n! permutations in lexicographic order; the
/// first strictly smaller total wins. Test oracle, limited to n <= 8.
inline Assignment brute_force_assign(const CostMatrix& costs) {
  if (costs.rows() != costs.cols()) throw std::invalid_argument("brute_force_assign: not square");
  if (costs.rows() > 8) {
    throw std::invalid_argument("brute_force_assign: n = " + std::to_string(costs.rows()) +
                                " exceeds the limit of 8");
  }
  detail::require_finite(costs);
  std::vector<std::size_t> perm(costs.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Assignment best{perm, assignment_cost(costs, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double c = assignment_cost(costs, perm);
    if (c < best.total_cost) best = {perm, c};
  }
  return best;
}

/// n targets against k >= n predictions: rows are padded with zero-cost dummy
/// targets to a k x k problem; only the real rows are returned.
inline Assignment assign_rectangular(const CostMatrix& costs) {
  const std::size_t n = costs.rows(), k = costs.cols();
  if (k < n) {
    throw std::invalid_argument("assign_rectangular: fewer predictions than targets");
  }
  if (n == k) return hungarian(costs);
  CostMatrix padded(k, k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) padded(i, j) = costs(i, j);
  Assignment full = hungarian(padded);
  full.target_to_prediction.resize(n);
  full.total_cost = assignment_cost(costs, full.target_to_prediction);
  return full;
}

}  // namespace detective
