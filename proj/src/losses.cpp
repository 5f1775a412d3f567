#include "ssr2/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ssr2::losses {

namespace {

Matrix row_softmax(const Matrix& logits, double temperature) {
  Matrix p(logits.rows(), logits.cols());
  for (int i = 0; i < logits.rows(); ++i) {
    const Vector s = logits.row(i).transpose() / temperature;
    const double mx = s.maxCoeff();
    const Vector e = (s.array() - mx).exp();
    p.row(i) = (e / e.sum()).transpose();
  }
  return p;
}

// log sum_{j != i} exp(s_j) for one row, numerically stable.
double lse_excluding(const Eigen::RowVectorXd& s, int i) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < s.size(); ++j)
    if (j != i) mx = std::max(mx, s(j));
  double acc = 0.0;
  for (int j = 0; j < s.size(); ++j)
    if (j != i) acc += std::exp(s(j) - mx);
  return mx + std::log(acc);
}

void check_pair(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), what);
  require_finite(a, what);
  require_finite(b, what);
}

void check_labeled(const std::vector<int>& labeled_rows,
                   const std::vector<int>& labels, int n) {
  require(labeled_rows.size() == labels.size(),
          "labeled rows and labels must align");
  for (int r : labeled_rows)
    require(r >= 0 && r < n, "labeled row index out of range");
}

}  // namespace

void LossConfig::validate() const {
  require(tau_c > 0 && tau_a > 0 && tau_b > 0, "LossConfig: temperatures > 0");
  require(lambda_con >= 0.0 && lambda_con <= 1.0, "LossConfig: lambda in [0,1]");
  require(gamma >= 0.0 && mu >= 0.0, "LossConfig: gamma, mu nonnegative");
  require(student_temp > 0 && teacher_temp > 0, "LossConfig: softmax temps > 0");
  require(teacher_temp < student_temp,
          "LossConfig: teacher temperature must be sharper than student");
  require(nu >= 0.0, "LossConfig: nu nonnegative");
}

PredictionBatch PredictionBatch::from_logits(Matrix logits, double temperature) {
  require(temperature > 0.0, "PredictionBatch: temperature > 0");
  require_finite(logits, "PredictionBatch: non-finite logits");
  PredictionBatch pb;
  pb.probs = row_softmax(logits, temperature);
  pb.logits = std::move(logits);
  pb.temperature = temperature;
  return pb;
}

std::vector<int> PredictionBatch::argmax() const {
  std::vector<int> out(static_cast<std::size_t>(size()));
  for (int i = 0; i < size(); ++i) {
    Eigen::Index j;
    probs.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

Vector PredictionBatch::confidence() const { return probs.rowwise().maxCoeff(); }

void PrototypeSet::validate() const {
  require(anchors.rows() >= 1, "PrototypeSet: empty");
  require(has_unit_rows(anchors, 1e-6), "PrototypeSet: rows must be unit-norm");
}

PairGrad clip_inter_loss(const Matrix& z_img, const Matrix& z_txt,
                         const LossConfig& cfg) {
  cfg.validate();
  check_pair(z_img, z_txt, "clip_inter_loss: shape/finite mismatch");
  const int n = static_cast<int>(z_img.rows());
  require(n >= 2, "clip_inter_loss: needs at least 2 samples");

  const Matrix s = (z_img * z_txt.transpose()) / cfg.tau_c;
  Matrix ds = Matrix::Zero(n, n);
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lse = lse_excluding(s.row(i), i);
    value -= s(i, i) - lse;
    ds(i, i) -= 1.0 / n;
    for (int j = 0; j < n; ++j)
      if (j != i) ds(i, j) += std::exp(s(i, j) - lse) / n;
  }
  PairGrad out;
  out.value = value / n;
  ds /= cfg.tau_c;
  out.grad_first = ds * z_txt;
  out.grad_second = ds.transpose() * z_img;
  return out;
}

ContrastiveResult contrastive_loss(const Matrix& view1, const Matrix& view2,
                                   const std::vector<int>& labeled_rows,
                                   const std::vector<int>& labels,
                                   const LossConfig& cfg) {
  cfg.validate();
  check_pair(view1, view2, "contrastive_loss: shape/finite mismatch");
  const int n = static_cast<int>(view1.rows());
  require(n >= 2, "contrastive_loss: needs at least 2 samples");
  check_labeled(labeled_rows, labels, n);

  const Matrix raw = view1 * view2.transpose();

  // Unsupervised term at tau_b: positives are a sample's own augmented view.
  const Matrix sb = raw / cfg.tau_b;
  Matrix db = Matrix::Zero(n, n);
  double unsup = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lse = lse_excluding(sb.row(i), i);
    unsup -= sb(i, i) - lse;
    db(i, i) -= 1.0;
    for (int m = 0; m < n; ++m)
      if (m != i) db(i, m) += std::exp(sb(i, m) - lse);
  }

  // Supervised term at tau_a: positives are other labeled samples with the
  // same label (their augmented views).
  const Matrix sa = raw / cfg.tau_a;
  Matrix da = Matrix::Zero(n, n);
  double sup = 0.0;
  std::vector<int> label_of(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < labeled_rows.size(); ++i)
    label_of[static_cast<std::size_t>(labeled_rows[i])] = labels[i];
  for (int i : labeled_rows) {
    std::vector<int> pos;
    for (int j : labeled_rows)
      if (j != i && label_of[static_cast<std::size_t>(j)] ==
                        label_of[static_cast<std::size_t>(i)])
        pos.push_back(j);
    if (pos.empty()) continue;  // no same-label peers: contributes zero
    const double inv = 1.0 / static_cast<double>(pos.size());
    const double lse = lse_excluding(sa.row(i), i);
    for (int j : pos) {
      sup -= inv * (sa(i, j) - lse);
      da(i, j) -= inv;
    }
    for (int m = 0; m < n; ++m)
      if (m != i) da(i, m) += std::exp(sa(i, m) - lse);
  }

  ContrastiveResult out;
  out.sup = sup;
  out.unsup = unsup;
  out.value = cfg.lambda_con * sup + (1.0 - cfg.lambda_con) * unsup;
  const Matrix g = cfg.lambda_con / cfg.tau_a * da +
                   (1.0 - cfg.lambda_con) / cfg.tau_b * db;
  out.grad_view1 = g * view2;
  out.grad_view2 = g.transpose() * view1;
  return out;
}

ClassifierResult classifier_loss(const PredictionBatch& preds,
                                 const PredictionBatch& preds_aug,
                                 const std::vector<int>& labeled_rows,
                                 const std::vector<int>& labels,
                                 const LossConfig& cfg) {
  cfg.validate();
  require(preds.size() == preds_aug.size() &&
              preds.num_classes() == preds_aug.num_classes(),
          "classifier_loss: prediction shape mismatch");
  require(std::abs(preds.temperature - preds_aug.temperature) < 1e-12,
          "classifier_loss: views must share the student temperature");
  const int n = preds.size(), k = preds.num_classes();
  check_labeled(labeled_rows, labels, n);
  for (int l : labels)
    require(l >= 0 && l < k, "classifier_loss: label out of classifier range");

  const double tau = preds.temperature;
  const Matrix& p1 = preds.probs;
  const Matrix& p2 = preds_aug.probs;
  // Detached targets from the augmented view at the sharper temperature.
  const Matrix teacher = row_softmax(preds_aug.logits, cfg.teacher_temp);

  ClassifierResult out;
  out.grad_logits = Matrix::Zero(n, k);
  out.grad_logits_aug = Matrix::Zero(n, k);

  for (std::size_t i = 0; i < labeled_rows.size(); ++i) {
    const int r = labeled_rows[i];
    out.sup_ce -= std::log(std::max(p1(r, labels[i]), 1e-300));
    out.grad_logits.row(r) += p1.row(r) / tau;
    out.grad_logits(r, labels[i]) -= 1.0 / tau;
  }

  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c)
      out.distill_ce -= teacher(i, c) * std::log(std::max(p1(i, c), 1e-300));
    out.grad_logits.row(i) += cfg.gamma / tau * (p1.row(i) - teacher.row(i));
  }

  // Entropy of the mean prediction over both views.
  const Eigen::RowVectorXd ybar =
      (p1.colwise().sum() + p2.colwise().sum()) / (2.0 * n);
  Eigen::RowVectorXd a(k);
  for (int c = 0; c < k; ++c) {
    const double y = ybar(c);
    out.mean_entropy -= y > 0.0 ? y * std::log(y) : 0.0;
    a(c) = y > 0.0 ? std::log(y) + 1.0 : 0.0;
  }
  const double escale = cfg.mu / (2.0 * n * tau);
  for (int i = 0; i < n; ++i) {
    const double dot1 = p1.row(i).dot(a);
    const double dot2 = p2.row(i).dot(a);
    out.grad_logits.row(i) +=
        escale * (p1.row(i).cwiseProduct(a - Eigen::RowVectorXd::Constant(k, dot1)));
    out.grad_logits_aug.row(i) +=
        escale * (p2.row(i).cwiseProduct(a - Eigen::RowVectorXd::Constant(k, dot2)));
  }

  out.value = out.sup_ce + cfg.gamma * out.distill_ce - cfg.mu * out.mean_entropy;
  return out;
}

CoteachResult coteach_loss(const PredictionBatch& preds_img,
                           const PredictionBatch& preds_txt,
                           const std::vector<int>& sel_img,
                           const std::vector<int>& sel_txt) {
  require(preds_img.size() == preds_txt.size() &&
              preds_img.num_classes() == preds_txt.num_classes(),
          "coteach_loss: prediction shape mismatch");
  const int n = preds_img.size(), k = preds_img.num_classes();

  CoteachResult out;
  out.grad_logits_img = Matrix::Zero(n, k);
  out.grad_logits_txt = Matrix::Zero(n, k);

  const auto arg_img = preds_img.argmax();
  const auto arg_txt = preds_txt.argmax();

  for (int i : sel_img) {  // image branch teaches the text classifier
    require(i >= 0 && i < n, "coteach_loss: selection index out of range");
    const int t = arg_img[static_cast<std::size_t>(i)];
    out.value -= std::log(std::max(preds_txt.probs(i, t), 1e-300));
    out.grad_logits_txt.row(i) += preds_txt.probs.row(i) / preds_txt.temperature;
    out.grad_logits_txt(i, t) -= 1.0 / preds_txt.temperature;
  }
  for (int j : sel_txt) {  // text branch teaches the image classifier
    require(j >= 0 && j < n, "coteach_loss: selection index out of range");
    const int t = arg_txt[static_cast<std::size_t>(j)];
    out.value -= std::log(std::max(preds_img.probs(j, t), 1e-300));
    out.grad_logits_img.row(j) += preds_img.probs.row(j) / preds_img.temperature;
    out.grad_logits_img(j, t) -= 1.0 / preds_img.temperature;
  }
  return out;
}

PairGrad cico_loss(const Matrix& z_img, const Matrix& z_txt,
                   const PrototypeSet& protos_img,
                   const PrototypeSet& protos_txt) {
  check_pair(z_img, z_txt, "cico_loss: shape/finite mismatch");
  protos_img.validate();
  protos_txt.validate();
  require(protos_img.anchors.rows() == protos_txt.anchors.rows(),
          "cico_loss: prototype count mismatch");
  require(protos_img.anchors.cols() == z_img.cols() &&
              protos_txt.anchors.cols() == z_txt.cols(),
          "cico_loss: prototype dimension mismatch");
  const int n = static_cast<int>(z_img.rows());
  require(n >= 1, "cico_loss: empty batch");

  const Matrix si = row_softmax(z_img * protos_img.anchors.transpose(), 1.0);
  const Matrix st = row_softmax(z_txt * protos_txt.anchors.transpose(), 1.0);
  const int k = static_cast<int>(si.cols());

  PairGrad out;
  out.grad_first = Matrix::Zero(z_img.rows(), z_img.cols());
  out.grad_second = Matrix::Zero(z_txt.rows(), z_txt.cols());
  const double scale = 1.0 / (2.0 * n);

  for (int i = 0; i < n; ++i) {
    double kl_it = 0.0, kl_ti = 0.0;  // KL(sI||sT), KL(sT||sI)
    for (int c = 0; c < k; ++c) {
      kl_it += si(i, c) * std::log(si(i, c) / st(i, c));
      kl_ti += st(i, c) * std::log(st(i, c) / si(i, c));
    }
    out.value += scale * (kl_it + kl_ti);

    Eigen::RowVectorXd du_i(k), du_t(k);
    for (int c = 0; c < k; ++c) {
      const double lr_i = std::log(si(i, c) / st(i, c));
      du_i(c) = scale * (si(i, c) - st(i, c) + si(i, c) * (lr_i - kl_it));
      du_t(c) = scale * (st(i, c) - si(i, c) + st(i, c) * (-lr_i - kl_ti));
    }
    out.grad_first.row(i) = du_i * protos_img.anchors;
    out.grad_second.row(i) = du_t * protos_txt.anchors;
  }
  return out;
}

namespace {

std::vector<int> complement_rows(int n, const std::vector<int>& rows) {
  std::vector<char> in(static_cast<std::size_t>(n), 0);
  for (int r : rows) in[static_cast<std::size_t>(r)] = 1;
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (!in[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

double branch_rate_terms(const BranchData& b, const std::vector<int>& labeled_rows,
                         const std::vector<int>& labels,
                         const std::vector<int>& unlabeled_rows,
                         bool with_unsup, const rate::RateConfig& rcfg) {
  double v = -rate::expansion_rate(b.z, rcfg);
  const double total_n = static_cast<double>(b.z.rows());
  if (!labeled_rows.empty()) {
    int k_sup = b.preds.num_classes();
    for (int l : labels) k_sup = std::max(k_sup, l + 1);
    Matrix zl(static_cast<Eigen::Index>(labeled_rows.size()), b.z.cols());
    for (std::size_t i = 0; i < labeled_rows.size(); ++i)
      zl.row(static_cast<Eigen::Index>(i)) = b.z.row(labeled_rows[i]);
    v += rate::compression_rate(zl, rate::PartitionWeights::hard(labels, k_sup),
                                total_n, rcfg);
  }
  if (with_unsup && !unlabeled_rows.empty()) {
    std::vector<int> pl;
    pl.reserve(unlabeled_rows.size());
    for (int r : unlabeled_rows)
      pl.push_back(b.pseudo_labels[static_cast<std::size_t>(r)]);
    Matrix zu(static_cast<Eigen::Index>(unlabeled_rows.size()), b.z.cols());
    for (std::size_t i = 0; i < unlabeled_rows.size(); ++i)
      zu.row(static_cast<Eigen::Index>(i)) = b.z.row(unlabeled_rows[i]);
    v += rate::compression_rate(
        zu, rate::PartitionWeights::hard(pl, b.preds.num_classes()), total_n,
        rcfg);
  }
  return v;
}

}  // namespace

double warmup_objective(const BranchData& img, const BranchData& txt,
                        const std::vector<int>& labeled_rows,
                        const std::vector<int>& labels,
                        const rate::RateConfig& rcfg, const LossConfig& lcfg) {
  double v = 0.0;
  for (const BranchData* b : {&img, &txt}) {
    v += branch_rate_terms(*b, labeled_rows, labels, {}, false, rcfg);
    v += classifier_loss(b->preds, b->preds_aug, labeled_rows, labels, lcfg).value;
  }
  return v;
}

double alignment_objective(const BranchData& img, const BranchData& txt,
                           const std::vector<int>& labeled_rows,
                           const std::vector<int>& labels,
                           const std::vector<int>& sel_img,
                           const std::vector<int>& sel_txt,
                           const rate::RateConfig& rcfg,
                           const LossConfig& lcfg) {
  const auto unlabeled =
      complement_rows(static_cast<int>(img.z.rows()), labeled_rows);
  double v = 0.0;
  for (const BranchData* b : {&img, &txt}) {
    v += branch_rate_terms(*b, labeled_rows, labels, unlabeled, true, rcfg);
    v += classifier_loss(b->preds, b->preds_aug, labeled_rows, labels, lcfg).value;
  }
  v += coteach_loss(img.preds, txt.preds, sel_img, sel_txt).value;
  return v;
}

}  // namespace ssr2::losses
