#include "ssr2/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ssr2::eval {

namespace {

std::vector<int> distinct_sorted(const std::vector<int>& v) {
  std::vector<int> out = v;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int dense_index(const std::vector<int>& sorted_labels, int label) {
  return static_cast<int>(
      std::lower_bound(sorted_labels.begin(), sorted_labels.end(), label) -
      sorted_labels.begin());
}

// Square min-cost assignment (Kuhn-Munkres with potentials, O(n^3)).
// Returns match_col[row].
std::vector<int> solve_assignment_min(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                           u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] >= 1)
      match_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return match_col;
}

// Contingency counts over dense label indices.
std::vector<std::vector<long>> contingency(const std::vector<int>& a,
                                           const std::vector<int>& b,
                                           const std::vector<int>& la,
                                           const std::vector<int>& lb) {
  std::vector<std::vector<long>> c(la.size(), std::vector<long>(lb.size(), 0));
  for (std::size_t i = 0; i < a.size(); ++i)
    c[static_cast<std::size_t>(dense_index(la, a[i]))]
     [static_cast<std::size_t>(dense_index(lb, b[i]))] += 1;
  return c;
}

bool identical_up_to_relabeling(const std::vector<std::vector<long>>& c) {
  // Exactly one nonzero cell per row and per column.
  std::vector<int> col_hits(c.empty() ? 0 : c[0].size(), 0);
  for (const auto& row : c) {
    int hits = 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] > 0) {
        ++hits;
        ++col_hits[j];
      }
    if (hits != 1) return false;
  }
  for (int h : col_hits)
    if (h > 1) return false;
  return true;
}

}  // namespace

ClusteringResult hungarian_acc(const std::vector<int>& pred,
                               const std::vector<int>& truth,
                               const std::set<int>& old_classes) {
  require(pred.size() == truth.size(), "hungarian_acc: length mismatch");
  require(!pred.empty(), "hungarian_acc: empty inputs");

  const auto pl = distinct_sorted(pred);
  const auto tl = distinct_sorted(truth);
  const int n = static_cast<int>(std::max(pl.size(), tl.size()));

  // Agreement matrix over the label union, padded with zero-overlap slots.
  std::vector<std::vector<double>> cost(
      static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto a = static_cast<std::size_t>(dense_index(pl, pred[i]));
    const auto b = static_cast<std::size_t>(dense_index(tl, truth[i]));
    cost[a][b] -= 1.0;  // negated agreement: minimize
  }
  const auto match_col = solve_assignment_min(cost);

  ClusteringResult res;
  std::map<int, int> pred_to_truth;
  for (std::size_t a = 0; a < pl.size(); ++a) {
    const int b = match_col[a];
    if (b >= 0 && b < static_cast<int>(tl.size()))
      pred_to_truth[pl[a]] = tl[static_cast<std::size_t>(b)];
  }
  res.matching = pred_to_truth;

  long correct_all = 0, correct_old = 0, correct_new = 0, n_old = 0, n_new = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto it = pred_to_truth.find(pred[i]);
    const bool ok = it != pred_to_truth.end() && it->second == truth[i];
    correct_all += ok;
    if (old_classes.count(truth[i])) {
      ++n_old;
      correct_old += ok;
    } else {
      ++n_new;
      correct_new += ok;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  res.acc_all = static_cast<double>(correct_all) / static_cast<double>(pred.size());
  res.acc_old = n_old ? static_cast<double>(correct_old) / n_old : nan;
  res.acc_new = n_new ? static_cast<double>(correct_new) / n_new : nan;
  return res;
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  require(a.size() == b.size(), "nmi: length mismatch");
  require(!a.empty(), "nmi: empty inputs");
  const double n = static_cast<double>(a.size());
  const auto la = distinct_sorted(a), lb = distinct_sorted(b);
  const auto c = contingency(a, b, la, lb);

  std::vector<double> pa(la.size(), 0.0), pb(lb.size(), 0.0);
  for (std::size_t i = 0; i < la.size(); ++i)
    for (std::size_t j = 0; j < lb.size(); ++j) {
      pa[i] += static_cast<double>(c[i][j]);
      pb[j] += static_cast<double>(c[i][j]);
    }

  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (double x : pa)
    if (x > 0) ha -= x / n * std::log(x / n);
  for (double x : pb)
    if (x > 0) hb -= x / n * std::log(x / n);
  for (std::size_t i = 0; i < la.size(); ++i)
    for (std::size_t j = 0; j < lb.size(); ++j)
      if (c[i][j] > 0) {
        const double pij = static_cast<double>(c[i][j]) / n;
        mi += pij * std::log(pij * n * n / (pa[i] * pb[j]));
      }

  if (ha <= 0.0 || hb <= 0.0)
    return identical_up_to_relabeling(c) ? 1.0 : 0.0;
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
  require(a.size() == b.size(), "ari: length mismatch");
  require(a.size() >= 2, "ari: needs at least 2 samples");
  const auto la = distinct_sorted(a), lb = distinct_sorted(b);
  const auto c = contingency(a, b, la, lb);

  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> ra(la.size(), 0.0), rb(lb.size(), 0.0);
  for (std::size_t i = 0; i < la.size(); ++i)
    for (std::size_t j = 0; j < lb.size(); ++j) {
      sum_ij += comb2(static_cast<double>(c[i][j]));
      ra[i] += static_cast<double>(c[i][j]);
      rb[j] += static_cast<double>(c[i][j]);
    }
  for (double x : ra) sum_a += comb2(x);
  for (double x : rb) sum_b += comb2(x);

  const double total = comb2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double maximum = 0.5 * (sum_a + sum_b);
  if (std::abs(maximum - expected) < 1e-12)
    return identical_up_to_relabeling(c) ? 1.0 : 0.0;
  return (sum_ij - expected) / (maximum - expected);
}

ClusteringResult evaluate_clustering(const std::vector<int>& pred,
                                     const std::vector<int>& truth,
                                     const std::set<int>& old_classes) {
  ClusteringResult res = hungarian_acc(pred, truth, old_classes);
  res.nmi = nmi(pred, truth);
  res.ari = ari(pred, truth);
  return res;
}

RhoResult consistency_rho(const Matrix& z, const std::vector<int>& truth) {
  require(static_cast<std::size_t>(z.rows()) == truth.size(),
          "consistency_rho: length mismatch");
  require_finite(z, "consistency_rho: non-finite embeddings");

  constexpr double kFloor = 1e-12;
  constexpr double kCap = 1e6;

  // Column sums let each class's edge masses come from class-sum vectors:
  // within = ||m_c||^2, cross = m_c . total - within.
  const Vector total = z.colwise().sum().transpose();
  RhoResult out;
  const auto classes = distinct_sorted(truth);
  for (int cls : classes) {
    Vector m = Vector::Zero(z.cols());
    for (int i = 0; i < z.rows(); ++i)
      if (truth[static_cast<std::size_t>(i)] == cls) m += z.row(i).transpose();
    const double within = m.squaredNorm();
    const double cross = m.dot(total) - within;
    double r = within / std::max(cross, kFloor);
    if (r > kCap) {
      r = kCap;
      out.capped = true;
    } else if (r < -kCap) {
      r = -kCap;
      out.capped = true;
    }
    out.per_class[cls] = r;
    out.rho += r;
  }
  out.rho /= static_cast<double>(classes.size());
  return out;
}

int numerical_rank(const Matrix& m, double energy) {
  require(m.rows() >= 1 && m.cols() >= 1, "numerical_rank: empty matrix");
  require(energy > 0.0 && energy < 1.0, "numerical_rank: energy in (0,1)");
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector s = svd.singularValues();
  double total = 0.0;
  for (int i = 0; i < s.size(); ++i) total += s(i) * s(i);
  if (total <= 0.0) return 0;
  // A cumulative share that merely ties the threshold does not reach it;
  // r equal singular values keep rank r (0.95 rounds up to all of them).
  const double threshold = energy * total * (1.0 + 1e-12);
  double cum = 0.0;
  for (int i = 0; i < s.size(); ++i) {
    cum += s(i) * s(i);
    if (cum > threshold) return i + 1;
  }
  return static_cast<int>(s.size());
}

double effective_rank(const Matrix& m) {
  require(m.rows() >= 1 && m.cols() >= 1, "effective_rank: empty matrix");
  Eigen::JacobiSVD<Matrix> svd(m);
  const Vector s = svd.singularValues();
  const double total = s.sum();
  if (total <= 0.0) return 0.0;
  double entropy = 0.0;
  for (int i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

RankReport mean_group_ranks(const Matrix& z, const std::vector<int>& truth,
                            const std::set<int>& old_classes) {
  require(static_cast<std::size_t>(z.rows()) == truth.size(),
          "mean_group_ranks: length mismatch");
  RankReport rep;
  double sum_old = 0.0, sum_new = 0.0;
  int n_old = 0, n_new = 0;
  for (int cls : distinct_sorted(truth)) {
    std::vector<int> rows;
    for (int i = 0; i < z.rows(); ++i)
      if (truth[static_cast<std::size_t>(i)] == cls) rows.push_back(i);
    Matrix zc(static_cast<Eigen::Index>(rows.size()), z.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      zc.row(static_cast<Eigen::Index>(r)) = z.row(rows[r]);
    const int rank = numerical_rank(zc);
    rep.per_class_rank[cls] = rank;
    rep.per_class_effective_rank[cls] = effective_rank(zc);
    if (old_classes.count(cls)) {
      sum_old += rank;
      ++n_old;
    } else {
      sum_new += rank;
      ++n_new;
    }
  }
  if (n_old) rep.mean_rank_old = sum_old / n_old;
  if (n_new) rep.mean_rank_new = sum_new / n_new;
  return rep;
}

}  // namespace ssr2::eval
