#pragma once

#include "ssr2/common.hpp"

#include <cstdint>
#include <vector>

namespace ssr2::rate {

// Distortion parameter and embedding dimension of the coding-rate terms.
struct RateConfig {
  double epsilon = 0.5;
  int embed_dim = 32;

  void validate() const;
};

// N unit-norm embeddings (rows) aligned to sample identities.
struct EmbeddingBatch {
  Matrix vectors;  // N x d, rows unit-norm
  std::vector<std::int64_t> sample_ids;

  // Checks row norms (1e-9), finiteness, and id uniqueness.
  static EmbeddingBatch checked(Matrix vectors,
                                std::vector<std::int64_t> sample_ids);
};

// Soft class memberships: N x k nonnegative, rows summing to 1.
// Hard assignments are one-hot rows. counts()[j] is the (possibly
// fractional) number of samples in class j.
struct PartitionWeights {
  Matrix membership;

  static PartitionWeights hard(const std::vector<int>& labels, int num_classes);
  Vector counts() const { return membership.colwise().sum(); }
  int num_classes() const { return static_cast<int>(membership.cols()); }

  void validate() const;
};

// Coding rate of the whole batch:
//   R(Z) = log det(I + d/(N eps^2) Z^T Z),
// evaluated on whichever Gram side is smaller (min{N, d}).
double expansion_rate(const Matrix& z, const RateConfig& cfg);

// Class-weighted compression rate:
//   sum_j N_j/total_n * log det(I + d/(N_j eps^2) Z^T Diag(col_j) Z).
// Classes with N_j = 0 contribute zero. total_n is the global batch size
// used in the N_j/N weights; it may exceed the number of rows of z when z
// is a subset of a larger batch.
double compression_rate(const Matrix& z, const PartitionWeights& p,
                        double total_n, const RateConfig& cfg);

// Semi-supervised rate-reduction value with all three terms weighted by the
// full batch size:
//   -R(Z) + R_c^s(Z_labeled, gt) + R_c^u(Z_unlabeled, pseudo).
// labeled/unlabeled index sets must be disjoint and cover all rows of z.
// Either subset may be empty (its term is zero). The value is <= 0 up to
// roundoff for any hard partition (rate reduction nonnegativity).
struct Ssr2Parts {
  double expansion = 0.0;
  double sup_compression = 0.0;
  double unsup_compression = 0.0;
  double value() const { return -expansion + sup_compression + unsup_compression; }
};

Ssr2Parts ssr2_loss(const Matrix& z, const std::vector<int>& labeled_rows,
                    const PartitionWeights& gt,
                    const std::vector<int>& unlabeled_rows,
                    const PartitionWeights& pseudo, const RateConfig& cfg);

// Analytic gradients of the scalar rates with respect to every entry of z.
// expansion: 2 c Z (I + c Z^T Z)^-1 with c = d/(N eps^2); compression is the
// per-class analog with membership weighting. Solves use a Cholesky
// factorization; the N x N Woodbury route is taken when N < d.
Matrix expansion_rate_grad(const Matrix& z, const RateConfig& cfg);
Matrix compression_rate_grad(const Matrix& z, const PartitionWeights& p,
                             double total_n, const RateConfig& cfg);

// Gradient of ssr2_loss' value with respect to z (same conventions).
Matrix ssr2_loss_grad(const Matrix& z, const std::vector<int>& labeled_rows,
                      const PartitionWeights& gt,
                      const std::vector<int>& unlabeled_rows,
                      const PartitionWeights& pseudo, const RateConfig& cfg);

}  // namespace ssr2::rate
