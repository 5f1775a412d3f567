#pragma once

#include "ssr2/common.hpp"
#include "ssr2/rta.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace ssr2::datagen {

// Synthetic two-modality GCD dataset: per-category low-dimensional subspace
// clusters with gaussian noise, offset inside the subspace so categories are
// linearly separable, plus a matched synthetic lexicon in the text geometry.
struct GenConfig {
  int k_total = 10;
  int k_old = 5;
  int ambient_dim = 64;
  int subspace_dim = 3;
  double noise_sigma = 0.05;
  std::vector<int> per_class_sizes;  // empty -> uniform per_class_size
  int per_class_size = 200;
  double labeled_fraction = 0.5;
  double class_sep = 3.0;  // mean coefficient offset inside each subspace
  double aug_noise = 0.05;
  double aug_dropout = 0.15;
  int lexicon_distractors = 30;    // extra entries per list
  double lexicon_perturb = 0.05;   // jitter of the true lexicon entries
  std::uint64_t seed = 0;

  std::vector<int> sizes() const;
  void validate() const;
};

struct DatasetSplit {
  Matrix image_features;  // n x ambient_dim
  Matrix text_features;   // n x ambient_dim
  std::vector<int> gt_labels;
  std::vector<std::uint8_t> is_labeled;
  std::vector<std::uint8_t> is_old_category;  // per category
  int k_total = 0;
  int k_old = 0;
  double aug_noise = 0.0;
  double aug_dropout = 0.0;

  int size() const { return static_cast<int>(gt_labels.size()); }
  std::vector<int> labeled_indices() const;
  std::vector<int> unlabeled_indices() const;
  std::vector<int> old_class_list() const;

  // Binary format, native endianness:
  //   magic "SSR2DS01"; u32 k_total, k_old, ambient_dim; u64 n;
  //   f64 aug_noise, aug_dropout; i32 labels[n]; u8 is_labeled[n];
  //   f64 image[n*ambient] row-major; f64 text[n*ambient] row-major.
  void save(const std::filesystem::path& path) const;
  static DatasetSplit load(const std::filesystem::path& path);
};

enum class Modality { image, text };

std::pair<DatasetSplit, rta::Lexicon> generate(const GenConfig& cfg);

// Two independent augmented views: base + gaussian(aug_noise), coordinates
// then zeroed independently with probability aug_dropout.
Vector augment_vector(const Vector& base, double aug_noise, double aug_dropout,
                      std::mt19937_64& rng);
std::pair<Vector, Vector> augment(const DatasetSplit& split, int sample,
                                  Modality modality, std::mt19937_64& rng);

}  // namespace ssr2::datagen
