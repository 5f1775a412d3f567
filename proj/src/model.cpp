#include "ssr2/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ssr2::model {

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  require(cfg.in_dim >= 1 && cfg.hidden_dim >= 1 && cfg.out_dim >= 1,
          "EncoderConfig: dimensions must be positive");
  w1_ = gaussian_matrix(cfg.hidden_dim, cfg.in_dim, rng) / std::sqrt(cfg.in_dim);
  b1_ = Matrix::Zero(1, cfg.hidden_dim);
  // Output layer: larger weight scale and a negative bias give spread-out
  // sparse-ish codes under the softplus, instead of a collapsed cone.
  w2_ = gaussian_matrix(cfg.out_dim, cfg.hidden_dim, rng) * 3.0 /
        std::sqrt(cfg.hidden_dim);
  b2_ = Matrix::Constant(1, cfg.out_dim, -1.0);
}

namespace {

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
}
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Encoder::Cache Encoder::forward_cached(const Matrix& x) const {
  require(x.cols() == cfg_.in_dim, "Encoder: input dimension mismatch");
  require_finite(x, "Encoder: non-finite input");
  Cache c;
  c.x = x;
  c.h = ((x * w1_.transpose()).rowwise() + b1_.row(0)).array().tanh();
  const Matrix pre = (c.h * w2_.transpose()).rowwise() + b2_.row(0);
  Matrix u(pre.rows(), pre.cols());
  c.sgrad.resize(pre.rows(), pre.cols());
  for (int i = 0; i < pre.rows(); ++i)
    for (int j = 0; j < pre.cols(); ++j) {
      u(i, j) = softplus(pre(i, j));
      c.sgrad(i, j) = sigmoid(pre(i, j));
    }
  c.inv_norm.resize(u.rows());
  c.z.resize(u.rows(), u.cols());
  for (int i = 0; i < u.rows(); ++i) {
    const double n = std::max(u.row(i).norm(), 1e-12);
    c.inv_norm(i) = 1.0 / n;
    c.z.row(i) = u.row(i) / n;
  }
  return c;
}

Matrix Encoder::forward(const Matrix& x) const { return forward_cached(x).z; }

Encoder::Grads Encoder::backward(const Cache& cache, const Matrix& dz) const {
  require(dz.rows() == cache.z.rows() && dz.cols() == cache.z.cols(),
          "Encoder: gradient shape mismatch");
  // Through the normalization: du_i = (dz_i - (dz_i . z_i) z_i) / ||u_i||,
  // then through the softplus via its derivative.
  Matrix du(dz.rows(), dz.cols());
  for (int i = 0; i < dz.rows(); ++i) {
    const double dot = dz.row(i).dot(cache.z.row(i));
    du.row(i) = (dz.row(i) - dot * cache.z.row(i)) * cache.inv_norm(i);
  }
  du.array() *= cache.sgrad.array();
  Grads g;
  g.w2 = du.transpose() * cache.h;
  g.b2 = du.colwise().sum();
  const Matrix dh = du * w2_;
  const Matrix dpre = dh.array() * (1.0 - cache.h.array().square());
  g.w1 = dpre.transpose() * cache.x;
  g.b1 = dpre.colwise().sum();
  return g;
}

ClassifierHead::ClassifierHead(int embed_dim, int d_cls, std::mt19937_64& rng) {
  require(embed_dim >= 1 && d_cls >= 1, "ClassifierHead: dimensions >= 1");
  w = gaussian_matrix(embed_dim, d_cls, rng) / std::sqrt(embed_dim);
}

Matrix ClassifierHead::normalized_w() const {
  Matrix nw = w;
  for (int j = 0; j < nw.cols(); ++j) {
    const double n = nw.col(j).norm();
    if (n > 1e-12) nw.col(j) /= n;
  }
  return nw;
}

Matrix ClassifierHead::grad_w(const Matrix& z, const Matrix& dlogits) const {
  require(z.rows() == dlogits.rows() && z.cols() == w.rows() &&
              dlogits.cols() == w.cols(),
          "ClassifierHead: gradient shape mismatch");
  const Matrix raw = z.transpose() * dlogits;  // d(logits)/d(normalized w)
  Matrix g(w.rows(), w.cols());
  for (int j = 0; j < w.cols(); ++j) {
    const double n = w.col(j).norm();
    if (n <= 1e-12) {
      g.col(j).setZero();
      continue;
    }
    const Vector wh = w.col(j) / n;
    g.col(j) = (raw.col(j) - wh.dot(raw.col(j)) * wh) / n;
  }
  return g;
}

losses::PredictionBatch predict(const ClassifierHead& head, const Matrix& z,
                                double temperature) {
  require(z.cols() == head.w.rows(), "predict: dimension mismatch");
  return losses::PredictionBatch::from_logits(head.logits(z), temperature);
}

int SgdOptimizer::add_group(std::vector<Matrix*> params, double base_lr) {
  require(base_lr > 0.0, "SgdOptimizer: base_lr must be positive");
  require(cfg_.momentum >= 0.0 && cfg_.momentum < 1.0,
          "SgdOptimizer: momentum must be in [0,1)");
  Group g;
  g.base_lr = base_lr;
  g.params = std::move(params);
  for (Matrix* p : g.params) g.velocity.push_back(Matrix::Zero(p->rows(), p->cols()));
  groups_.push_back(std::move(g));
  return static_cast<int>(groups_.size()) - 1;
}

double SgdOptimizer::cosine_multiplier(int epoch, int total_epochs) {
  require(total_epochs >= 1, "cosine_multiplier: total_epochs >= 1");
  return 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                               static_cast<double>(total_epochs)));
}

void SgdOptimizer::step(const std::vector<std::vector<Matrix>>& grads, int epoch) {
  require(grads.size() == groups_.size(), "SgdOptimizer: group count mismatch");
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    Group& g = groups_[gi];
    require(grads[gi].size() == g.params.size(),
            "SgdOptimizer: tensor count mismatch");
    const double lr = g.base_lr * cosine_multiplier(epoch, cfg_.total_epochs);
    for (std::size_t ti = 0; ti < g.params.size(); ++ti) {
      const Matrix& grad = grads[gi][ti];
      if (!grad.allFinite())
        throw std::runtime_error("SgdOptimizer: non-finite gradient in group " +
                                 std::to_string(gi) + ", tensor " +
                                 std::to_string(ti));
      Matrix& v = g.velocity[ti];
      Matrix& p = *g.params[ti];
      v = cfg_.momentum * v + grad + cfg_.weight_decay * p;
      p -= lr * v;
    }
  }
}

namespace {
constexpr char kMagic[8] = {'S', 'S', 'R', '2', 'C', 'K', 'P', 'T'};
}

void save_tensors(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensors: cannot open " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, mat] : tensors) {
    const std::uint32_t len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(name.data(), len);
    const std::uint64_t rows = static_cast<std::uint64_t>(mat->rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(mat->cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    Eigen::RowVectorXd buf;
    for (Eigen::Index i = 0; i < mat->rows(); ++i) {
      buf = mat->row(i);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(sizeof(double) * buf.size()));
    }
  }
  if (!out) throw std::runtime_error("save_tensors: write failed " + path.string());
}

std::map<std::string, Matrix> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensors: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_tensors: bad magic in " + path.string());
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::map<std::string, Matrix> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::uint64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    Eigen::RowVectorXd buf(static_cast<Eigen::Index>(cols));
    for (std::uint64_t i = 0; i < rows; ++i) {
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(sizeof(double) * cols));
      m.row(static_cast<Eigen::Index>(i)) = buf;
    }
    if (!in) throw std::runtime_error("load_tensors: truncated " + path.string());
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace ssr2::model
