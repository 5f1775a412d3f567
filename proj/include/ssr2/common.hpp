#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>

namespace ssr2 {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// All randomness in the project flows from a single experiment seed through
// named sub-streams, so that components (data generation, init, batching,
// augmentation) are individually reproducible. A stream is identified by a
// string name plus an optional integer salt (e.g. an epoch index).
std::uint64_t stream_id(std::string_view name, std::uint64_t salt = 0);
std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name,
                            std::uint64_t salt = 0);

// N x d matrix with i.i.d. standard gaussian entries.
Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng);

// Rows rescaled to unit L2 norm. Throws if a row has norm below 1e-12.
Matrix normalized_rows(Matrix m);

// Rows are unit-norm within `tol`.
bool has_unit_rows(const Matrix& m, double tol = 1e-9);

inline void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(what);
}

}  // namespace ssr2
