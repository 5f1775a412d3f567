#include "ssr2/common.hpp"

namespace ssr2 {

namespace {

// splitmix64 finalizer; decorrelates seed/name/salt combinations.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t stream_id(std::string_view name, std::uint64_t salt) {
  // FNV-1a over the name, then mixed with the salt.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix(h ^ mix(salt));
}

std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name,
                            std::uint64_t salt) {
  return std::mt19937_64(mix(seed) ^ stream_id(name, salt));
}

Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

Matrix normalized_rows(Matrix m) {
  for (int i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n < 1e-12) throw std::invalid_argument("normalized_rows: zero row");
    m.row(i) /= n;
  }
  return m;
}

bool has_unit_rows(const Matrix& m, double tol) {
  for (int i = 0; i < m.rows(); ++i)
    if (std::abs(m.row(i).norm() - 1.0) > tol) return false;
  return true;
}

}  // namespace ssr2
