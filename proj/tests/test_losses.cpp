#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "ssr2/losses.hpp"

#include <cmath>

using namespace ssr2;
using namespace ssr2::losses;

namespace {

Matrix unit_batch(int n, int d, std::uint64_t seed) {
  auto rng = make_stream(seed, "test.losses.batch");
  return normalized_rows(gaussian_matrix(n, d, rng));
}

LossConfig base_cfg() {
  LossConfig cfg;
  return cfg;
}

// Direct double-loop evaluation of the inter-modal loss as printed.
double clip_oracle(const Matrix& zi, const Matrix& zt, double tau) {
  const int n = static_cast<int>(zi.rows());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double num = std::exp(zi.row(i).dot(zt.row(i)) / tau);
    double den = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) den += std::exp(zi.row(i).dot(zt.row(j)) / tau);
    loss -= std::log(num / den);
  }
  return loss / n;
}

// Direct evaluation of lambda*L_sup + (1-lambda)*L_unsup as printed.
double contrastive_oracle(const Matrix& z, const Matrix& zp,
                          const std::vector<int>& labeled_rows,
                          const std::vector<int>& labels, const LossConfig& c) {
  const int n = static_cast<int>(z.rows());
  double unsup = 0.0;
  for (int i = 0; i < n; ++i) {
    double den = 0.0;
    for (int m = 0; m < n; ++m)
      if (m != i) den += std::exp(z.row(i).dot(zp.row(m)) / c.tau_b);
    unsup -= std::log(std::exp(z.row(i).dot(zp.row(i)) / c.tau_b) / den);
  }
  double sup = 0.0;
  for (std::size_t a = 0; a < labeled_rows.size(); ++a) {
    const int i = labeled_rows[a];
    std::vector<int> peers;
    for (std::size_t b = 0; b < labeled_rows.size(); ++b)
      if (labeled_rows[b] != i && labels[b] == labels[a])
        peers.push_back(labeled_rows[b]);
    if (peers.empty()) continue;
    double den = 0.0;
    for (int m = 0; m < n; ++m)
      if (m != i) den += std::exp(z.row(i).dot(zp.row(m)) / c.tau_a);
    for (int j : peers)
      sup -= std::log(std::exp(z.row(i).dot(zp.row(j)) / c.tau_a) / den) /
             static_cast<double>(peers.size());
  }
  return c.lambda_con * sup + (1.0 - c.lambda_con) * unsup;
}

Matrix softmax_rows(const Matrix& logits, double tau) {
  Matrix p = logits;
  for (int i = 0; i < p.rows(); ++i) {
    Eigen::RowVectorXd e = ((p.row(i).array() - p.row(i).maxCoeff()) / tau).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

// Term-by-term evaluation of the classifier loss as printed.
double classifier_oracle(const Matrix& logits1, const Matrix& logits2,
                         const std::vector<int>& labeled_rows,
                         const std::vector<int>& labels, const LossConfig& c) {
  const int n = static_cast<int>(logits1.rows());
  const int k = static_cast<int>(logits1.cols());
  const Matrix p1 = softmax_rows(logits1, c.student_temp);
  const Matrix p2 = softmax_rows(logits2, c.student_temp);
  const Matrix teacher = softmax_rows(logits2, c.teacher_temp);
  double sup = 0.0;
  for (std::size_t a = 0; a < labeled_rows.size(); ++a)
    sup -= std::log(p1(labeled_rows[a], labels[a]));
  double distill = 0.0;
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < k; ++q) distill -= teacher(i, q) * std::log(p1(i, q));
  double h = 0.0;
  for (int q = 0; q < k; ++q) {
    const double y = (p1.col(q).sum() + p2.col(q).sum()) / (2.0 * n);
    if (y > 0) h -= y * std::log(y);
  }
  return sup + c.gamma * distill - c.mu * h;
}

double cico_oracle(const Matrix& zi, const Matrix& zt, const Matrix& ai,
                   const Matrix& at) {
  const int n = static_cast<int>(zi.rows());
  const Matrix si = softmax_rows(zi * ai.transpose(), 1.0);
  const Matrix st = softmax_rows(zt * at.transpose(), 1.0);
  double v = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < si.cols(); ++c)
      v += st(i, c) * std::log(st(i, c) / si(i, c)) +
           si(i, c) * std::log(si(i, c) / st(i, c));
  return v / (2.0 * n);
}

}  // namespace

TEST_CASE("clip loss: hand values and errors") {
  Matrix z(2, 2);
  z << 1, 0, 0, 1;
  LossConfig c = base_cfg();
  c.tau_c = 1.0;
  // Positive pair similarity 1, lone denominator term exp(0): each sample
  // contributes -log(e) = -1.
  CHECK(clip_inter_loss(z, z, c).value == doctest::Approx(-1.0).epsilon(1e-12));

  Matrix one(1, 2);
  one << 1, 0;
  CHECK_THROWS_AS(clip_inter_loss(one, one, c), std::invalid_argument);
}

TEST_CASE("clip loss matches the direct-summation oracle") {
  const LossConfig c = base_cfg();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix zi = unit_batch(5, 4, seed);
    const Matrix zt = unit_batch(5, 4, seed + 50);
    const auto got = clip_inter_loss(zi, zt, c);
    CHECK(got.value ==
          doctest::Approx(clip_oracle(zi, zt, c.tau_c)).epsilon(1e-10));
  }
}

TEST_CASE("clip loss is invariant to a shared rotation") {
  auto rng = make_stream(3, "test.losses.rot");
  const Matrix zi = unit_batch(6, 4, 1);
  const Matrix zt = unit_batch(6, 4, 2);
  const Matrix q = oracles::random_orthogonal(4, rng);
  const LossConfig c = base_cfg();
  CHECK(clip_inter_loss(zi * q, zt * q, c).value ==
        doctest::Approx(clip_inter_loss(zi, zt, c).value).epsilon(1e-10));
}

TEST_CASE("clip loss gradients match finite differences") {
  const LossConfig c = base_cfg();
  const Matrix zi = unit_batch(5, 3, 7);
  const Matrix zt = unit_batch(5, 3, 8);
  const auto got = clip_inter_loss(zi, zt, c);
  const Matrix fi = oracles::finite_difference_grad(
      [&](const Matrix& m) { return clip_inter_loss(m, zt, c).value; }, zi);
  const Matrix ft = oracles::finite_difference_grad(
      [&](const Matrix& m) { return clip_inter_loss(zi, m, c).value; }, zt);
  CHECK(oracles::relative_error(got.grad_first, fi) < 1e-5);
  CHECK(oracles::relative_error(got.grad_second, ft) < 1e-5);
}

TEST_CASE("contrastive loss: reductions and hand values") {
  LossConfig c = base_cfg();
  c.tau_b = 1.0;
  Matrix z(2, 2);
  z << 1, 0, 0, 1;

  // No labeled samples: reduces to (1-lambda) * L_unsup exactly.
  const auto got = contrastive_loss(z, z, {}, {}, c);
  CHECK(got.sup == doctest::Approx(0.0));
  // Identical orthonormal views: each unsupervised term is -log(e/1) = -1.
  CHECK(got.unsup == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(got.value ==
        doctest::Approx((1.0 - c.lambda_con) * -2.0).epsilon(1e-12));

  // A labeled sample with no same-label peer contributes zero to L_sup.
  const auto lone = contrastive_loss(z, z, {0, 1}, {0, 1}, c);
  CHECK(lone.sup == doctest::Approx(0.0));
}

TEST_CASE("contrastive loss matches the direct-summation oracle") {
  const LossConfig c = base_cfg();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix z = unit_batch(6, 4, seed);
    const Matrix zp = unit_batch(6, 4, seed + 60);
    const std::vector<int> rows = {0, 2, 3, 5};
    const std::vector<int> labels = {0, 1, 0, 1};
    const auto got = contrastive_loss(z, zp, rows, labels, c);
    CHECK(got.value ==
          doctest::Approx(contrastive_oracle(z, zp, rows, labels, c))
              .epsilon(1e-10));
  }
}

TEST_CASE("contrastive loss gradients match finite differences") {
  const LossConfig c = base_cfg();
  const Matrix z = unit_batch(6, 3, 21);
  const Matrix zp = unit_batch(6, 3, 22);
  const std::vector<int> rows = {0, 1, 4};
  const std::vector<int> labels = {1, 1, 0};
  const auto got = contrastive_loss(z, zp, rows, labels, c);
  const Matrix f1 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return contrastive_loss(m, zp, rows, labels, c).value; },
      z);
  const Matrix f2 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return contrastive_loss(z, m, rows, labels, c).value; },
      zp);
  CHECK(oracles::relative_error(got.grad_view1, f1) < 1e-5);
  CHECK(oracles::relative_error(got.grad_view2, f2) < 1e-5);
}

TEST_CASE("classifier loss: entropy and supervised terms") {
  LossConfig c = base_cfg();

  // Uniform predictions over K=4: H(y_bar) = ln 4.
  const auto uni = PredictionBatch::from_logits(Matrix::Zero(3, 4), c.student_temp);
  const auto r = classifier_loss(uni, uni, {}, {}, c);
  CHECK(r.mean_entropy == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // One-hot correct prediction with gamma = mu = 0 gives 0.
  LossConfig c0 = c;
  c0.gamma = 0.0;
  c0.mu = 0.0;
  Matrix sharp = Matrix::Zero(1, 4);
  sharp(0, 2) = 50.0;
  const auto onehot = PredictionBatch::from_logits(sharp, c.student_temp);
  CHECK(classifier_loss(onehot, onehot, {0}, {2}, c0).value ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("classifier loss matches the term-by-term oracle") {
  LossConfig c = base_cfg();
  c.gamma = 2.0;
  c.mu = 1.0;
  auto rng = make_stream(31, "test.losses.cls");
  const Matrix l1 = gaussian_matrix(6, 4, rng);
  const Matrix l2 = gaussian_matrix(6, 4, rng);
  const std::vector<int> rows = {0, 2, 5};
  const std::vector<int> labels = {1, 3, 1};
  const auto got = classifier_loss(PredictionBatch::from_logits(l1, c.student_temp),
                                   PredictionBatch::from_logits(l2, c.student_temp),
                                   rows, labels, c);
  CHECK(got.value ==
        doctest::Approx(classifier_oracle(l1, l2, rows, labels, c)).epsilon(1e-10));
  CHECK(got.mean_entropy <= std::log(4.0) + 1e-12);
}

TEST_CASE("classifier loss gradients match finite differences") {
  const LossConfig c = base_cfg();
  auto rng = make_stream(33, "test.losses.cls.fd");
  const Matrix l1 = gaussian_matrix(5, 3, rng);
  const Matrix l2 = gaussian_matrix(5, 3, rng);
  const std::vector<int> rows = {1, 3};
  const std::vector<int> labels = {0, 2};
  const auto got = classifier_loss(PredictionBatch::from_logits(l1, c.student_temp),
                                   PredictionBatch::from_logits(l2, c.student_temp),
                                   rows, labels, c);
  // The teacher targets are detached constants, so the finite-difference
  // oracle must hold them fixed while wiggling logits.
  const Matrix teacher = softmax_rows(l2, c.teacher_temp);
  auto frozen_value = [&](const Matrix& a, const Matrix& b) {
    const Matrix p1 = softmax_rows(a, c.student_temp);
    const Matrix p2 = softmax_rows(b, c.student_temp);
    double sup = 0.0;
    for (std::size_t q = 0; q < rows.size(); ++q)
      sup -= std::log(p1(rows[q], labels[q]));
    double distill = 0.0;
    for (int i = 0; i < p1.rows(); ++i)
      for (int q = 0; q < p1.cols(); ++q)
        distill -= teacher(i, q) * std::log(p1(i, q));
    double h = 0.0;
    for (int q = 0; q < p1.cols(); ++q) {
      const double y = (p1.col(q).sum() + p2.col(q).sum()) / (2.0 * p1.rows());
      if (y > 0) h -= y * std::log(y);
    }
    return sup + c.gamma * distill - c.mu * h;
  };
  const Matrix f1 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return frozen_value(m, l2); }, l1);
  const Matrix f2 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return frozen_value(l1, m); }, l2);
  CHECK(oracles::relative_error(got.grad_logits, f1) < 1e-5);
  CHECK(oracles::relative_error(got.grad_logits_aug, f2) < 1e-5);
}

TEST_CASE("co-teaching loss: agreement, uniform target, empty selections") {
  Matrix sharp = Matrix::Zero(2, 4);
  sharp(0, 1) = 50.0;
  sharp(1, 3) = 50.0;
  const auto confident = PredictionBatch::from_logits(sharp, 1.0);
  CHECK(coteach_loss(confident, confident, {0, 1}, {0, 1}).value ==
        doctest::Approx(0.0).epsilon(1e-9));

  // Image branch confident in class 0, text branch uniform: CE = ln 4.
  Matrix img = Matrix::Zero(1, 4);
  img(0, 0) = 50.0;
  const auto pi = PredictionBatch::from_logits(img, 1.0);
  const auto pt = PredictionBatch::from_logits(Matrix::Zero(1, 4), 1.0);
  CHECK(coteach_loss(pi, pt, {0}, {}).value ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  CHECK(coteach_loss(pi, pt, {}, {}).value == doctest::Approx(0.0));
  CHECK(coteach_loss(pi, pt, {0}, {0}).value >= 0.0);
}

TEST_CASE("co-teaching gradients match finite differences") {
  auto rng = make_stream(41, "test.losses.ct");
  const Matrix l1 = gaussian_matrix(5, 4, rng);
  const Matrix l2 = gaussian_matrix(5, 4, rng);
  const std::vector<int> si = {0, 2}, st = {1, 4};
  const double tau = 0.1;
  const auto got = coteach_loss(PredictionBatch::from_logits(l1, tau),
                                PredictionBatch::from_logits(l2, tau), si, st);
  // Targets are detached: perturbing logits moves only the CE predictions.
  // Keep perturbations small enough not to flip any argmax.
  auto value_of = [&](const Matrix& a, const Matrix& b) {
    return coteach_loss(PredictionBatch::from_logits(a, tau),
                        PredictionBatch::from_logits(b, tau), si, st)
        .value;
  };
  const Matrix f1 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return value_of(m, l2); }, l1, 1e-6);
  const Matrix f2 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return value_of(l1, m); }, l2, 1e-6);
  CHECK(oracles::relative_error(got.grad_logits_img, f1) < 1e-5);
  CHECK(oracles::relative_error(got.grad_logits_txt, f2) < 1e-5);
}

TEST_CASE("cico loss: identical distributions, hand value, nonnegativity") {
  Matrix anchors(2, 2);
  anchors << 1, 0, 0, 1;
  const PrototypeSet pa{anchors};

  const Matrix z = unit_batch(4, 2, 51);
  CHECK(cico_loss(z, z, pa, pa).value == doctest::Approx(0.0).epsilon(1e-12));

  // Single sample with s_I = (0.9, 0.1) and s_T = (0.1, 0.9):
  // symmetric KL = 2 * 0.8 * ln 9; with the 1/(2|B|) factor -> 0.8 ln 9.
  const double delta = std::log(9.0) / 2.0;
  Matrix zi(1, 2), zt(1, 2);
  zi << delta, -delta;
  zt << -delta, delta;
  CHECK(cico_loss(zi, zt, pa, pa).value ==
        doctest::Approx(0.8 * std::log(9.0)).epsilon(1e-12));
  CHECK(cico_loss(zi, zt, pa, pa).value == doctest::Approx(1.75778).epsilon(1e-5));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = unit_batch(5, 3, seed + 70);
    const Matrix b = unit_batch(5, 3, seed + 80);
    const Matrix pr = unit_batch(4, 3, seed + 90);
    CHECK(cico_loss(a, b, PrototypeSet{pr}, PrototypeSet{pr}).value >= -1e-12);
  }
}

TEST_CASE("cico loss matches the direct oracle and finite differences") {
  const Matrix zi = unit_batch(5, 3, 61);
  const Matrix zt = unit_batch(5, 3, 62);
  const Matrix ai = unit_batch(4, 3, 63);
  const Matrix at = unit_batch(4, 3, 64);
  const PrototypeSet pi{ai}, pt{at};

  const auto got = cico_loss(zi, zt, pi, pt);
  CHECK(got.value == doctest::Approx(cico_oracle(zi, zt, ai, at)).epsilon(1e-10));

  const Matrix f1 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return cico_loss(m, zt, pi, pt).value; }, zi);
  const Matrix f2 = oracles::finite_difference_grad(
      [&](const Matrix& m) { return cico_loss(zi, m, pi, pt).value; }, zt);
  CHECK(oracles::relative_error(got.grad_first, f1) < 1e-5);
  CHECK(oracles::relative_error(got.grad_second, f2) < 1e-5);
}

namespace {

BranchData make_branch(std::uint64_t seed, int n, int d, int k,
                       const LossConfig& c) {
  auto rng = make_stream(seed, "test.losses.branch");
  BranchData b;
  b.z = normalized_rows(gaussian_matrix(n, d, rng));
  b.preds = PredictionBatch::from_logits(gaussian_matrix(n, k, rng), c.student_temp);
  b.preds_aug =
      PredictionBatch::from_logits(gaussian_matrix(n, k, rng), c.student_temp);
  b.pseudo_labels = b.preds.argmax();
  return b;
}

}  // namespace

TEST_CASE("staged objectives compose their components") {
  const LossConfig c = base_cfg();
  rate::RateConfig rc;
  rc.epsilon = 0.5;
  rc.embed_dim = 3;

  const int n = 8, k = 3;
  const BranchData img = make_branch(71, n, 3, k, c);
  const BranchData txt = make_branch(72, n, 3, k, c);
  const std::vector<int> labeled = {0, 2, 4};
  const std::vector<int> labels = {0, 1, 0};
  const std::vector<int> unlabeled = {1, 3, 5, 6, 7};

  // Component oracle for the warm-up objective.
  double want = 0.0;
  for (const BranchData* b : {&img, &txt}) {
    want -= rate::expansion_rate(b->z, rc);
    Matrix zl(3, 3);
    for (int i = 0; i < 3; ++i) zl.row(i) = b->z.row(labeled[static_cast<std::size_t>(i)]);
    want += rate::compression_rate(zl, rate::PartitionWeights::hard(labels, k),
                                   static_cast<double>(n), rc);
    want += classifier_loss(b->preds, b->preds_aug, labeled, labels, c).value;
  }
  const double warm = warmup_objective(img, txt, labeled, labels, rc, c);
  CHECK(warm == doctest::Approx(want).epsilon(1e-9));

  // Alignment objective adds the unsupervised compression and co-teaching.
  double align_want = want;
  for (const BranchData* b : {&img, &txt}) {
    Matrix zu(5, 3);
    std::vector<int> pl;
    for (int i = 0; i < 5; ++i) {
      zu.row(i) = b->z.row(unlabeled[static_cast<std::size_t>(i)]);
      pl.push_back(b->pseudo_labels[static_cast<std::size_t>(
          unlabeled[static_cast<std::size_t>(i)])]);
    }
    align_want += rate::compression_rate(zu, rate::PartitionWeights::hard(pl, k),
                                         static_cast<double>(n), rc);
  }
  const std::vector<int> si = {0, 1}, st = {5};
  align_want += coteach_loss(img.preds, txt.preds, si, st).value;
  CHECK(alignment_objective(img, txt, labeled, labels, si, st, rc, c) ==
        doctest::Approx(align_want).epsilon(1e-9));
}

TEST_CASE("alignment degenerates to warm-up; duplicated branch doubles") {
  const LossConfig c = base_cfg();
  rate::RateConfig rc;
  rc.epsilon = 0.5;
  rc.embed_dim = 3;
  const int n = 6, k = 2;
  const BranchData img = make_branch(81, n, 3, k, c);
  const BranchData txt = make_branch(82, n, 3, k, c);

  // Every row labeled, no selections: Eq. 11 equals Eq. 10.
  const std::vector<int> all = {0, 1, 2, 3, 4, 5};
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  CHECK(alignment_objective(img, txt, all, labels, {}, {}, rc, c) ==
        doctest::Approx(warmup_objective(img, txt, all, labels, rc, c))
            .epsilon(1e-12));

  // Same inputs on both branches: exactly twice the one-branch value.
  const std::vector<int> some = {0, 3};
  const std::vector<int> slab = {1, 0};
  double one = -rate::expansion_rate(img.z, rc);
  Matrix zl(2, 3);
  zl.row(0) = img.z.row(0);
  zl.row(1) = img.z.row(3);
  one += rate::compression_rate(zl, rate::PartitionWeights::hard(slab, k),
                                static_cast<double>(n), rc);
  one += classifier_loss(img.preds, img.preds_aug, some, slab, c).value;
  CHECK(warmup_objective(img, img, some, slab, rc, c) ==
        doctest::Approx(2.0 * one).epsilon(1e-12));
}
