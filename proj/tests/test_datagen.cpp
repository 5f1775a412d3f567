#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssr2/datagen.hpp"

#include <filesystem>
#include <set>

using namespace ssr2;
using namespace ssr2::datagen;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.k_total = 4;
  cfg.k_old = 2;
  cfg.ambient_dim = 16;
  cfg.subspace_dim = 2;
  cfg.per_class_size = 20;
  cfg.labeled_fraction = 0.5;
  cfg.lexicon_distractors = 10;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("split counting follows the GCD protocol") {
  const auto [split, lex] = generate(small_cfg());
  CHECK(split.size() == 80);
  CHECK(split.labeled_indices().size() == 20);   // 2 old cats * 20 * 0.5
  CHECK(split.unlabeled_indices().size() == 60);

  // Labeled samples only from old categories.
  for (int i : split.labeled_indices())
    CHECK(split.gt_labels[static_cast<std::size_t>(i)] < split.k_old);

  // Unlabeled set contains every category.
  std::set<int> unl_cats;
  for (int i : split.unlabeled_indices())
    unl_cats.insert(split.gt_labels[static_cast<std::size_t>(i)]);
  CHECK(unl_cats.size() == 4);

  // Per-category labeled fraction matches within rounding.
  for (int k = 0; k < split.k_old; ++k) {
    int lab = 0, tot = 0;
    for (int i = 0; i < split.size(); ++i)
      if (split.gt_labels[static_cast<std::size_t>(i)] == k) {
        ++tot;
        lab += split.is_labeled[static_cast<std::size_t>(i)];
      }
    CHECK(lab == 10);
    CHECK(tot == 20);
  }

  CHECK(lex.tags.size() == 4 + 10);
  CHECK(lex.attributes.size() == 4 + 10);
  CHECK_NOTHROW(lex.validate());
}

TEST_CASE("noise_sigma = 0 keeps samples exactly in their subspace") {
  GenConfig cfg = small_cfg();
  cfg.noise_sigma = 0.0;
  const auto [split, lex] = generate(cfg);

  // Each category's samples span at most subspace_dim directions; the
  // residual after projecting onto the span of its own samples is zero.
  for (int k = 0; k < cfg.k_total; ++k) {
    std::vector<int> rows;
    for (int i = 0; i < split.size(); ++i)
      if (split.gt_labels[static_cast<std::size_t>(i)] == k) rows.push_back(i);
    Matrix zk(static_cast<Eigen::Index>(rows.size()), cfg.ambient_dim);
    for (std::size_t r = 0; r < rows.size(); ++r)
      zk.row(static_cast<Eigen::Index>(r)) = split.image_features.row(rows[r]);
    Eigen::JacobiSVD<Matrix> svd(zk, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Matrix basis = svd.matrixV().leftCols(cfg.subspace_dim);
    const Matrix residual = zk - (zk * basis) * basis.transpose();
    CHECK(residual.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("generation is deterministic given the seed") {
  const auto [a, la] = generate(small_cfg());
  const auto [b, lb] = generate(small_cfg());
  CHECK(a.image_features == b.image_features);
  CHECK(a.text_features == b.text_features);
  CHECK(a.gt_labels == b.gt_labels);
  CHECK(a.is_labeled == b.is_labeled);
  REQUIRE(la.tags.size() == lb.tags.size());
  for (std::size_t i = 0; i < la.tags.size(); ++i)
    CHECK(la.tags[i].vec == lb.tags[i].vec);

  GenConfig other = small_cfg();
  other.seed = 8;
  const auto [c, lc] = generate(other);
  CHECK(a.image_features != c.image_features);
}

TEST_CASE("augmentation basics") {
  GenConfig cfg = small_cfg();
  cfg.aug_noise = 0.0;
  cfg.aug_dropout = 0.0;
  const auto [split, lex] = generate(cfg);

  auto rng = make_stream(1, "test.datagen.aug");
  const auto [v1, v2] = augment(split, 3, Modality::image, rng);
  CHECK((v1 - split.image_features.row(3).transpose()).norm() == doctest::Approx(0.0));
  CHECK((v2 - split.image_features.row(3).transpose()).norm() == doctest::Approx(0.0));

  // Fixed rng seed -> reproducible views.
  GenConfig noisy = small_cfg();
  const auto [nsplit, nlex] = generate(noisy);
  auto r1 = make_stream(5, "test.datagen.aug2");
  auto r2 = make_stream(5, "test.datagen.aug2");
  const auto [a1, a2] = augment(nsplit, 0, Modality::text, r1);
  const auto [b1, b2] = augment(nsplit, 0, Modality::text, r2);
  CHECK((a1 - b1).norm() == doctest::Approx(0.0));
  CHECK((a2 - b2).norm() == doctest::Approx(0.0));
  CHECK((a1 - a2).norm() > 0.0);  // two views are independent draws

  // aug_dropout = 1 is rejected by the config invariant.
  GenConfig bad = small_cfg();
  bad.aug_dropout = 1.0;
  CHECK_THROWS_AS(generate(bad), std::invalid_argument);
}

TEST_CASE("nearest-centroid sanity: the synthetic task is solvable") {
  GenConfig cfg;  // defaults: K=10, 64-dim, sigma=0.05
  cfg.per_class_size = 50;
  cfg.seed = 0;
  const auto [split, lex] = generate(cfg);

  std::vector<Vector> centroids(static_cast<std::size_t>(cfg.k_total));
  std::vector<int> counts(static_cast<std::size_t>(cfg.k_total), 0);
  for (std::size_t k = 0; k < centroids.size(); ++k)
    centroids[k] = Vector::Zero(cfg.ambient_dim);
  for (int i = 0; i < split.size(); ++i) {
    const auto k = static_cast<std::size_t>(split.gt_labels[static_cast<std::size_t>(i)]);
    centroids[k] += split.image_features.row(i).transpose();
    counts[k] += 1;
  }
  for (std::size_t k = 0; k < centroids.size(); ++k) centroids[k] /= counts[k];

  int correct = 0;
  for (int i = 0; i < split.size(); ++i) {
    double best = 1e300;
    int arg = -1;
    for (std::size_t k = 0; k < centroids.size(); ++k) {
      const double d =
          (split.image_features.row(i).transpose() - centroids[k]).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    correct += (arg == split.gt_labels[static_cast<std::size_t>(i)]);
  }
  CHECK(static_cast<double>(correct) / split.size() >= 0.95);
}

TEST_CASE("dataset file round-trip") {
  const auto [split, lex] = generate(small_cfg());
  const auto path = std::filesystem::temp_directory_path() / "ssr2_ds_test.bin";
  split.save(path);
  const DatasetSplit back = DatasetSplit::load(path);
  CHECK(back.k_total == split.k_total);
  CHECK(back.k_old == split.k_old);
  CHECK(back.gt_labels == split.gt_labels);
  CHECK(back.is_labeled == split.is_labeled);
  CHECK(back.aug_noise == split.aug_noise);
  CHECK(back.image_features == split.image_features);
  CHECK(back.text_features == split.text_features);
  std::filesystem::remove(path);
}

TEST_CASE("invalid generator configs are rejected") {
  GenConfig cfg = small_cfg();
  cfg.subspace_dim = cfg.ambient_dim + 1;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);

  GenConfig tiny = small_cfg();
  tiny.per_class_size = 1;
  CHECK_THROWS_AS(generate(tiny), std::invalid_argument);

  GenConfig frac = small_cfg();
  frac.labeled_fraction = 0.0;
  CHECK_THROWS_AS(generate(frac), std::invalid_argument);
}
