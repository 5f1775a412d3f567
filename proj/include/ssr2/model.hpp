#pragma once

#include "ssr2/common.hpp"
#include "ssr2/losses.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ssr2::model {

// One-hidden-layer MLP: tanh hidden layer, softplus output layer, final
// row-wise L2 normalization, so forward outputs are unit-norm embeddings in
// the nonnegative orthant (the cone structure of real vision-language
// features, which keeps similarity-graph diagnostics well conditioned).
// Backpropagation through the normalization uses the exact projection
// Jacobian.
struct EncoderConfig {
  int in_dim = 64;
  int hidden_dim = 128;
  int out_dim = 32;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  struct Cache {
    Matrix x;         // N x in
    Matrix h;         // N x hidden (post-tanh)
    Matrix sgrad;     // N x out, softplus derivative at the output layer
    Matrix z;         // N x out (unit rows)
    Vector inv_norm;  // 1/||u_i|| per row
  };

  struct Grads {
    Matrix w1, b1, w2, b2;
  };

  Matrix forward(const Matrix& x) const;
  Cache forward_cached(const Matrix& x) const;
  Grads backward(const Cache& cache, const Matrix& dz) const;

  std::vector<Matrix*> params() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::vector<const Matrix*> params() const { return {&w1_, &b1_, &w2_, &b2_}; }
  static std::vector<Matrix> grads_as_list(Grads g) {
    return {std::move(g.w1), std::move(g.b1), std::move(g.w2), std::move(g.b2)};
  }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Matrix w1_;  // hidden x in
  Matrix b1_;  // 1 x hidden
  Matrix w2_;  // out x hidden
  Matrix b2_;  // 1 x out
};

// Prototype classifier head: logits are cosine similarities between the
// (unit-norm) embeddings and column-normalized prototype weights, sharpened
// by a temperature softmax downstream. Bounded logits keep unused prototype
// slots alive for the entropy regularizer, which is what lets new classes
// claim their own slot. d_cls may deliberately differ from the number of
// categories.
struct ClassifierHead {
  Matrix w;  // embed_dim x d_cls

  ClassifierHead() = default;
  ClassifierHead(int embed_dim, int d_cls, std::mt19937_64& rng);

  // Columns of w rescaled to unit norm (zero columns stay zero).
  Matrix normalized_w() const;
  Matrix logits(const Matrix& z) const { return z * normalized_w(); }
  // Chain rule of `logits` into w for a given upstream gradient.
  Matrix grad_w(const Matrix& z, const Matrix& dlogits) const;
};

losses::PredictionBatch predict(const ClassifierHead& head, const Matrix& z,
                                double temperature);

// SGD with momentum, weight decay folded into the gradient, and a cosine
// annealed learning rate:
//   v <- m v + g + wd p;  p <- p - lr(epoch) v,
//   lr(epoch) = base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs)).
struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int total_epochs = 50;
};

class SgdOptimizer {
 public:
  explicit SgdOptimizer(const SgdConfig& cfg) : cfg_(cfg) {}

  int add_group(std::vector<Matrix*> params, double base_lr);
  // grads[g][t] must align with group g's tensor t. Throws on non-finite
  // gradients, naming the offending group/tensor.
  void step(const std::vector<std::vector<Matrix>>& grads, int epoch);

  static double cosine_multiplier(int epoch, int total_epochs);

  // Velocity tensors, exposed for checkpointing.
  std::vector<Matrix>& velocity(int group) { return groups_.at(static_cast<std::size_t>(group)).velocity; }
  const SgdConfig& config() const { return cfg_; }

 private:
  struct Group {
    std::vector<Matrix*> params;
    std::vector<Matrix> velocity;
    double base_lr = 0.0;
  };
  SgdConfig cfg_;
  std::vector<Group> groups_;
};

// Flat binary tensor archive:
//   magic "SSR2CKPT"; u32 tensor count; per tensor: u32 name length, name
//   bytes, u64 rows, u64 cols, f64 values row-major.
void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, const Matrix*>>& tensors);
std::map<std::string, Matrix> load_tensors(const std::filesystem::path& path);

}  // namespace ssr2::model
