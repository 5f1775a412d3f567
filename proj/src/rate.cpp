#include "ssr2/rate.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace ssr2::rate {

namespace {

// log det(I + c G) for PSD G, via Cholesky of the (small) dense matrix.
double logdet_i_plus(Matrix g, double c) {
  g *= c;
  g.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rate: Cholesky failed on I + c*Gram");
  const auto diag = llt.matrixLLT().diagonal();
  double v = 0.0;
  for (int i = 0; i < diag.size(); ++i) v += std::log(diag(i));
  return std::max(2.0 * v, 0.0);
}

// log det(I + c Z^T Z) on whichever Gram side is smaller.
double logdet_small_side(const Matrix& z, double c) {
  if (z.rows() <= z.cols())
    return logdet_i_plus(z * z.transpose(), c);
  return logdet_i_plus(z.transpose() * z, c);
}

// Z (I + c Z^T Z)^-1, via the d x d factor when d <= N and the Woodbury
// identity on the N x N factor otherwise.
Matrix times_inverse(const Matrix& z, double c) {
  const Eigen::Index n = z.rows(), d = z.cols();
  if (d <= n) {
    Matrix b = c * (z.transpose() * z);
    b.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(b);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("rate: Cholesky failed in gradient solve");
    return llt.solve(z.transpose()).transpose();
  }
  Matrix cmat = c * (z * z.transpose());
  cmat.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(cmat);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("rate: Cholesky failed in gradient solve");
  return z - c * (z * z.transpose()) * llt.solve(z);
}

void check_membership(const Matrix& z, const PartitionWeights& p) {
  require(p.membership.rows() == z.rows(),
          "compression_rate: membership row count mismatch");
  require_finite(p.membership, "compression_rate: non-finite membership");
  require(p.membership.minCoeff() >= 0.0,
          "compression_rate: negative membership");
}

}  // namespace

void RateConfig::validate() const {
  require(epsilon > 0.0, "RateConfig: epsilon must be positive");
  require(embed_dim >= 1, "RateConfig: embed_dim must be >= 1");
}

EmbeddingBatch EmbeddingBatch::checked(Matrix vectors,
                                       std::vector<std::int64_t> sample_ids) {
  require(vectors.rows() >= 1, "EmbeddingBatch: empty batch");
  require(static_cast<std::size_t>(vectors.rows()) == sample_ids.size(),
          "EmbeddingBatch: id count mismatch");
  require_finite(vectors, "EmbeddingBatch: non-finite entries");
  require(has_unit_rows(vectors), "EmbeddingBatch: rows must be unit-norm");
  std::unordered_set<std::int64_t> seen(sample_ids.begin(), sample_ids.end());
  require(seen.size() == sample_ids.size(), "EmbeddingBatch: duplicate ids");
  return EmbeddingBatch{std::move(vectors), std::move(sample_ids)};
}

PartitionWeights PartitionWeights::hard(const std::vector<int>& labels,
                                        int num_classes) {
  require(num_classes >= 1, "PartitionWeights: num_classes must be >= 1");
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes,
            "PartitionWeights: label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return PartitionWeights{std::move(m)};
}

void PartitionWeights::validate() const {
  require_finite(membership, "PartitionWeights: non-finite membership");
  require(membership.minCoeff() >= 0.0, "PartitionWeights: negative membership");
  for (int i = 0; i < membership.rows(); ++i)
    require(std::abs(membership.row(i).sum() - 1.0) < 1e-9,
            "PartitionWeights: rows must sum to 1");
}

double expansion_rate(const Matrix& z, const RateConfig& cfg) {
  cfg.validate();
  require(z.rows() >= 1, "expansion_rate: empty batch");
  require(z.cols() == cfg.embed_dim, "expansion_rate: dimension mismatch");
  require_finite(z, "expansion_rate: non-finite entries");
  const double c = cfg.embed_dim /
                   (static_cast<double>(z.rows()) * cfg.epsilon * cfg.epsilon);
  return logdet_small_side(z, c);
}

double compression_rate(const Matrix& z, const PartitionWeights& p,
                        double total_n, const RateConfig& cfg) {
  cfg.validate();
  require(z.cols() == cfg.embed_dim, "compression_rate: dimension mismatch");
  require_finite(z, "compression_rate: non-finite entries");
  check_membership(z, p);
  require(total_n >= static_cast<double>(z.rows()),
          "compression_rate: total_n smaller than batch");

  double out = 0.0;
  for (int j = 0; j < p.num_classes(); ++j) {
    const Vector w = p.membership.col(j);
    const double nj = w.sum();
    if (nj <= 0.0) continue;  // empty class contributes zero

    std::vector<int> support;
    for (int i = 0; i < w.size(); ++i)
      if (w(i) > 0.0) support.push_back(i);

    Matrix zs(static_cast<Eigen::Index>(support.size()), z.cols());
    for (std::size_t s = 0; s < support.size(); ++s)
      zs.row(static_cast<Eigen::Index>(s)) =
          std::sqrt(w(support[s])) * z.row(support[s]);

    const double beta = cfg.embed_dim / (nj * cfg.epsilon * cfg.epsilon);
    out += nj / total_n * logdet_small_side(zs, beta);
  }
  return out;
}

Matrix expansion_rate_grad(const Matrix& z, const RateConfig& cfg) {
  cfg.validate();
  require(z.rows() >= 1, "expansion_rate_grad: empty batch");
  require(z.cols() == cfg.embed_dim, "expansion_rate_grad: dimension mismatch");
  require_finite(z, "expansion_rate_grad: non-finite entries");
  const double c = cfg.embed_dim /
                   (static_cast<double>(z.rows()) * cfg.epsilon * cfg.epsilon);
  return 2.0 * c * times_inverse(z, c);
}

Matrix compression_rate_grad(const Matrix& z, const PartitionWeights& p,
                             double total_n, const RateConfig& cfg) {
  cfg.validate();
  require(z.cols() == cfg.embed_dim, "compression_rate_grad: dimension mismatch");
  require_finite(z, "compression_rate_grad: non-finite entries");
  check_membership(z, p);
  require(total_n >= static_cast<double>(z.rows()),
          "compression_rate_grad: total_n smaller than batch");

  Matrix grad = Matrix::Zero(z.rows(), z.cols());
  for (int j = 0; j < p.num_classes(); ++j) {
    const Vector w = p.membership.col(j);
    const double nj = w.sum();
    if (nj <= 0.0) continue;

    std::vector<int> support;
    for (int i = 0; i < w.size(); ++i)
      if (w(i) > 0.0) support.push_back(i);

    const auto s = static_cast<Eigen::Index>(support.size());
    Matrix zs(s, z.cols());
    Vector ws(s);
    for (Eigen::Index r = 0; r < s; ++r) {
      zs.row(r) = z.row(support[static_cast<std::size_t>(r)]);
      ws(r) = w(support[static_cast<std::size_t>(r)]);
    }

    const double beta = cfg.embed_dim / (nj * cfg.epsilon * cfg.epsilon);
    // d/dZ logdet(I + beta Z^T D Z) = 2 beta D Z (I + beta Z^T D Z)^-1.
    Matrix xs;
    if (z.cols() <= s) {
      Matrix b = beta * (zs.transpose() * (ws.asDiagonal() * zs));
      b.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(b);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("rate: Cholesky failed in gradient solve");
      xs = llt.solve(zs.transpose()).transpose();
    } else {
      const Matrix y = ws.array().sqrt().matrix().asDiagonal() * zs;
      Matrix cm = beta * (y * y.transpose());
      cm.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(cm);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("rate: Cholesky failed in gradient solve");
      xs = zs - beta * (zs * y.transpose()) * llt.solve(y);
    }

    const double scale = nj / total_n * 2.0 * beta;
    for (Eigen::Index r = 0; r < s; ++r)
      grad.row(support[static_cast<std::size_t>(r)]) +=
          scale * ws(r) * xs.row(r);
  }
  return grad;
}

namespace {

void check_cover(const Matrix& z, const std::vector<int>& labeled_rows,
                 const std::vector<int>& unlabeled_rows) {
  std::vector<char> seen(static_cast<std::size_t>(z.rows()), 0);
  auto mark = [&](const std::vector<int>& rows) {
    for (int r : rows) {
      require(r >= 0 && r < z.rows(), "ssr2_loss: row index out of range");
      require(!seen[static_cast<std::size_t>(r)],
              "ssr2_loss: labeled/unlabeled index sets overlap");
      seen[static_cast<std::size_t>(r)] = 1;
    }
  };
  mark(labeled_rows);
  mark(unlabeled_rows);
  require(labeled_rows.size() + unlabeled_rows.size() ==
              static_cast<std::size_t>(z.rows()),
          "ssr2_loss: index sets must cover the batch");
}

Matrix take_rows(const Matrix& z, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = z.row(rows[i]);
  return out;
}

}  // namespace

Ssr2Parts ssr2_loss(const Matrix& z, const std::vector<int>& labeled_rows,
                    const PartitionWeights& gt,
                    const std::vector<int>& unlabeled_rows,
                    const PartitionWeights& pseudo, const RateConfig& cfg) {
  check_cover(z, labeled_rows, unlabeled_rows);
  const double total_n = static_cast<double>(z.rows());
  Ssr2Parts parts;
  parts.expansion = expansion_rate(z, cfg);
  if (!labeled_rows.empty())
    parts.sup_compression =
        compression_rate(take_rows(z, labeled_rows), gt, total_n, cfg);
  if (!unlabeled_rows.empty())
    parts.unsup_compression =
        compression_rate(take_rows(z, unlabeled_rows), pseudo, total_n, cfg);
  return parts;
}

Matrix ssr2_loss_grad(const Matrix& z, const std::vector<int>& labeled_rows,
                      const PartitionWeights& gt,
                      const std::vector<int>& unlabeled_rows,
                      const PartitionWeights& pseudo, const RateConfig& cfg) {
  check_cover(z, labeled_rows, unlabeled_rows);
  const double total_n = static_cast<double>(z.rows());
  Matrix grad = -expansion_rate_grad(z, cfg);
  auto scatter = [&](const std::vector<int>& rows, const PartitionWeights& p) {
    if (rows.empty()) return;
    const Matrix g = compression_rate_grad(take_rows(z, rows), p, total_n, cfg);
    for (std::size_t i = 0; i < rows.size(); ++i)
      grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  };
  scatter(labeled_rows, gt);
  scatter(unlabeled_rows, pseudo);
  return grad;
}

}  // namespace ssr2::rate
