#include "ssr2/datagen.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace ssr2::datagen {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', '2', 'D', 'S', '0', '1'};

// Orthonormal basis of a random subspace (thin QR of a gaussian matrix).
Matrix random_basis(int ambient, int dim, std::mt19937_64& rng) {
  const Matrix g = gaussian_matrix(ambient, dim, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = Matrix(qr.householderQ()) .leftCols(dim);
  const Matrix r = qr.matrixQR().topRows(dim).triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(T)));
}

}  // namespace

std::vector<int> GenConfig::sizes() const {
  if (!per_class_sizes.empty()) return per_class_sizes;
  return std::vector<int>(static_cast<std::size_t>(k_total), per_class_size);
}

void GenConfig::validate() const {
  require(k_total >= 1, "GenConfig: k_total >= 1");
  require(k_old >= 1 && k_old <= k_total, "GenConfig: k_old in [1, k_total]");
  require(ambient_dim >= 1, "GenConfig: ambient_dim >= 1");
  require(subspace_dim >= 1 && subspace_dim <= ambient_dim,
          "GenConfig: subspace_dim must not exceed ambient_dim");
  require(noise_sigma >= 0.0, "GenConfig: noise_sigma >= 0");
  require(labeled_fraction > 0.0 && labeled_fraction <= 1.0,
          "GenConfig: labeled_fraction in (0,1]");
  require(aug_noise >= 0.0, "GenConfig: aug_noise >= 0");
  require(aug_dropout >= 0.0 && aug_dropout < 1.0,
          "GenConfig: aug_dropout in [0,1)");
  require(lexicon_distractors >= 0, "GenConfig: lexicon_distractors >= 0");
  const auto sz = sizes();
  require(static_cast<int>(sz.size()) == k_total,
          "GenConfig: per_class_sizes must have k_total entries");
  for (int s : sz) require(s >= 2, "GenConfig: per-class sizes must be >= 2");
}

std::vector<int> DatasetSplit::labeled_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (is_labeled[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

std::vector<int> DatasetSplit::unlabeled_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!is_labeled[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

std::vector<int> DatasetSplit::old_class_list() const {
  std::vector<int> out;
  for (int k = 0; k < k_total; ++k)
    if (is_old_category[static_cast<std::size_t>(k)]) out.push_back(k);
  return out;
}

std::pair<DatasetSplit, rta::Lexicon> generate(const GenConfig& cfg) {
  cfg.validate();
  const auto sz = cfg.sizes();
  const int n = std::accumulate(sz.begin(), sz.end(), 0);

  DatasetSplit split;
  split.image_features.resize(n, cfg.ambient_dim);
  split.text_features.resize(n, cfg.ambient_dim);
  split.gt_labels.resize(static_cast<std::size_t>(n));
  split.is_labeled.assign(static_cast<std::size_t>(n), 0);
  split.is_old_category.assign(static_cast<std::size_t>(cfg.k_total), 0);
  split.k_total = cfg.k_total;
  split.k_old = cfg.k_old;
  split.aug_noise = cfg.aug_noise;
  split.aug_dropout = cfg.aug_dropout;
  for (int k = 0; k < cfg.k_old; ++k)
    split.is_old_category[static_cast<std::size_t>(k)] = 1;

  auto basis_rng = make_stream(cfg.seed, "datagen.basis");
  auto coef_rng = make_stream(cfg.seed, "datagen.coef");
  auto noise_rng = make_stream(cfg.seed, "datagen.noise");

  int row = 0;
  for (int k = 0; k < cfg.k_total; ++k) {
    // Independent geometry per modality; only the category identity is
    // shared between the two feature views.
    const Matrix basis_img = random_basis(cfg.ambient_dim, cfg.subspace_dim, basis_rng);
    const Matrix basis_txt = random_basis(cfg.ambient_dim, cfg.subspace_dim, basis_rng);
    Vector mean = Vector::Zero(cfg.subspace_dim);
    mean(0) = cfg.class_sep;

    for (int s = 0; s < sz[static_cast<std::size_t>(k)]; ++s, ++row) {
      split.gt_labels[static_cast<std::size_t>(row)] = k;
      const Vector ci = mean + gaussian_matrix(cfg.subspace_dim, 1, coef_rng).col(0);
      const Vector ct = mean + gaussian_matrix(cfg.subspace_dim, 1, coef_rng).col(0);
      split.image_features.row(row) =
          (basis_img * ci +
           cfg.noise_sigma * gaussian_matrix(cfg.ambient_dim, 1, noise_rng).col(0))
              .transpose();
      split.text_features.row(row) =
          (basis_txt * ct +
           cfg.noise_sigma * gaussian_matrix(cfg.ambient_dim, 1, noise_rng).col(0))
              .transpose();
    }
  }

  // Labeled subset: per old category, a random labeled_fraction of samples,
  // always leaving at least one sample unlabeled so the unlabeled set
  // contains every category.
  auto split_rng = make_stream(cfg.seed, "datagen.split");
  int offset = 0;
  for (int k = 0; k < cfg.k_total; ++k) {
    const int nk = sz[static_cast<std::size_t>(k)];
    if (k < cfg.k_old) {
      std::vector<int> order(static_cast<std::size_t>(nk));
      std::iota(order.begin(), order.end(), offset);
      std::shuffle(order.begin(), order.end(), split_rng);
      const int want = static_cast<int>(std::llround(cfg.labeled_fraction * nk));
      const int n_lab = std::min(want, nk - 1);
      for (int i = 0; i < n_lab; ++i)
        split.is_labeled[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    }
    offset += nk;
  }

  // Lexicon: one true entry per category (perturbed text centroid) plus
  // random distractors, for both lists.
  auto lex_rng = make_stream(cfg.seed, "datagen.lexicon");
  rta::Lexicon lex;
  offset = 0;
  std::vector<Vector> centroids;
  for (int k = 0; k < cfg.k_total; ++k) {
    const int nk = sz[static_cast<std::size_t>(k)];
    Vector c = split.text_features.middleRows(offset, nk).colwise().mean().transpose();
    centroids.push_back(c.normalized());
    offset += nk;
  }
  auto perturbed = [&](const Vector& c) {
    const Vector v =
        c + cfg.lexicon_perturb * gaussian_matrix(cfg.ambient_dim, 1, lex_rng).col(0);
    return v.normalized();
  };
  for (int k = 0; k < cfg.k_total; ++k) {
    lex.tags.push_back({"tag_cat" + std::to_string(k),
                        perturbed(centroids[static_cast<std::size_t>(k)])});
  }
  for (int j = 0; j < cfg.lexicon_distractors; ++j) {
    const Vector v = gaussian_matrix(cfg.ambient_dim, 1, lex_rng).col(0);
    lex.tags.push_back({"tag_rnd" + std::to_string(j), v.normalized()});
  }
  for (int k = 0; k < cfg.k_total; ++k) {
    lex.attributes.push_back({"attr_cat" + std::to_string(k),
                              perturbed(centroids[static_cast<std::size_t>(k)])});
  }
  for (int j = 0; j < cfg.lexicon_distractors; ++j) {
    const Vector v = gaussian_matrix(cfg.ambient_dim, 1, lex_rng).col(0);
    lex.attributes.push_back({"attr_rnd" + std::to_string(j), v.normalized()});
  }

  return {std::move(split), std::move(lex)};
}

Vector augment_vector(const Vector& base, double aug_noise, double aug_dropout,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Vector v = base;
  for (int i = 0; i < v.size(); ++i) v(i) += aug_noise * gauss(rng);
  if (aug_dropout > 0.0)
    for (int i = 0; i < v.size(); ++i)
      if (uni(rng) < aug_dropout) v(i) = 0.0;
  return v;
}

std::pair<Vector, Vector> augment(const DatasetSplit& split, int sample,
                                  Modality modality, std::mt19937_64& rng) {
  require(sample >= 0 && sample < split.size(), "augment: sample out of range");
  const Vector base = (modality == Modality::image
                           ? split.image_features.row(sample)
                           : split.text_features.row(sample))
                          .transpose();
  Vector a = augment_vector(base, split.aug_noise, split.aug_dropout, rng);
  Vector b = augment_vector(base, split.aug_noise, split.aug_dropout, rng);
  return {std::move(a), std::move(b)};
}

void DatasetSplit::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("DatasetSplit: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t kt = static_cast<std::uint32_t>(k_total);
  const std::uint32_t ko = static_cast<std::uint32_t>(k_old);
  const std::uint32_t ad = static_cast<std::uint32_t>(image_features.cols());
  const std::uint64_t n = static_cast<std::uint64_t>(size());
  write_raw(out, &kt, 1);
  write_raw(out, &ko, 1);
  write_raw(out, &ad, 1);
  write_raw(out, &n, 1);
  write_raw(out, &aug_noise, 1);
  write_raw(out, &aug_dropout, 1);
  std::vector<std::int32_t> labels(gt_labels.begin(), gt_labels.end());
  write_raw(out, labels.data(), labels.size());
  write_raw(out, is_labeled.data(), is_labeled.size());
  // Row-major feature dumps (matrices are column-major in memory, so go
  // through a contiguous row buffer).
  Eigen::RowVectorXd buf;
  for (const Matrix* m : {&image_features, &text_features})
    for (int i = 0; i < size(); ++i) {
      buf = m->row(i);
      write_raw(out, buf.data(), static_cast<std::size_t>(buf.size()));
    }
  if (!out) throw std::runtime_error("DatasetSplit: write failed " + path.string());
}

DatasetSplit DatasetSplit::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("DatasetSplit: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("DatasetSplit: bad magic in " + path.string());
  std::uint32_t kt = 0, ko = 0, ad = 0;
  std::uint64_t n = 0;
  read_raw(in, &kt, 1);
  read_raw(in, &ko, 1);
  read_raw(in, &ad, 1);
  read_raw(in, &n, 1);

  DatasetSplit split;
  read_raw(in, &split.aug_noise, 1);
  read_raw(in, &split.aug_dropout, 1);
  split.k_total = static_cast<int>(kt);
  split.k_old = static_cast<int>(ko);
  std::vector<std::int32_t> labels(n);
  read_raw(in, labels.data(), labels.size());
  split.gt_labels.assign(labels.begin(), labels.end());
  split.is_labeled.resize(n);
  read_raw(in, split.is_labeled.data(), n);
  split.image_features.resize(static_cast<Eigen::Index>(n), ad);
  split.text_features.resize(static_cast<Eigen::Index>(n), ad);
  Eigen::RowVectorXd buf(static_cast<Eigen::Index>(ad));
  for (Matrix* m : {&split.image_features, &split.text_features})
    for (std::uint64_t i = 0; i < n; ++i) {
      read_raw(in, buf.data(), ad);
      m->row(static_cast<Eigen::Index>(i)) = buf;
    }
  if (!in) throw std::runtime_error("DatasetSplit: truncated " + path.string());
  split.is_old_category.assign(kt, 0);
  for (std::uint32_t k = 0; k < ko; ++k) split.is_old_category[k] = 1;
  return split;
}

}  // namespace ssr2::datagen
