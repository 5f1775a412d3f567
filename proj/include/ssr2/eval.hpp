#pragma once

#include "ssr2/common.hpp"

#include <map>
#include <optional>
#include <set>
#include <vector>

namespace ssr2::eval {

// Clustering accuracy under one joint Hungarian matching over all samples,
// with Old/New subset accuracies computed from the same matching (the
// standard GCD protocol). Subset accuracies are NaN when the subset is
// empty.
struct ClusteringResult {
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  std::map<int, int> matching;  // predicted cluster -> true class
};

ClusteringResult hungarian_acc(const std::vector<int>& pred,
                               const std::vector<int>& truth,
                               const std::set<int>& old_classes);

// Normalized mutual information with arithmetic-mean normalization; 0 when
// either partition is trivial and the partitions differ.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Adjusted Rand index; 1 for identical partitions up to relabeling.
double ari(const std::vector<int>& a, const std::vector<int>& b);

// hungarian_acc with nmi/ari filled in.
ClusteringResult evaluate_clustering(const std::vector<int>& pred,
                                     const std::vector<int>& truth,
                                     const std::set<int>& old_classes);

// Intra-modal consistency ratio: with W_ij = z_i . z_j, per class the ratio
// of within-class edge mass (diagonal included) to cross-class edge mass,
// averaged over classes. Denominators are floored at 1e-12 and the ratio is
// clamped to +-1e6; `capped` flags that the clamp fired.
struct RhoResult {
  double rho = 0.0;
  bool capped = false;
  std::map<int, double> per_class;
};

RhoResult consistency_rho(const Matrix& z, const std::vector<int>& truth);

// Smallest r whose leading squared singular values capture strictly more
// than `energy` of the total squared spectral energy; a cumulative share
// that only ties the threshold does not count. Zero matrix -> 0.
int numerical_rank(const Matrix& m, double energy = 0.95);

// exp(entropy of the normalized singular-value distribution). Zero -> 0.
double effective_rank(const Matrix& m);

struct RankReport {
  std::map<int, int> per_class_rank;
  std::map<int, double> per_class_effective_rank;
  std::optional<double> mean_rank_old;
  std::optional<double> mean_rank_new;
};

RankReport mean_group_ranks(const Matrix& z, const std::vector<int>& truth,
                            const std::set<int>& old_classes);

}  // namespace ssr2::eval
