#pragma once

#include "ssr2/common.hpp"
#include "ssr2/datagen.hpp"
#include "ssr2/eval.hpp"
#include "ssr2/losses.hpp"
#include "ssr2/model.hpp"
#include "ssr2/rate.hpp"
#include "ssr2/rta.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ssr2::trainer {

// Representation-loss selection, mirroring the ablation grid.
enum class RepLoss {
  none,
  clip,
  con,
  ssr2,
  clip_con,
  clip_ssr2,
  cico,
  cico_con,
  cico_ssr2,
};

const char* to_string(RepLoss loss);
RepLoss rep_loss_from_string(const std::string& name);

struct ModelConfig {
  int hidden_dim = 128;
  int embed_dim = 32;
  int d_cls = 0;  // 0: use the dataset's category count
};

struct OptimConfig {
  double lr_encoder = 0.001;
  double lr_classifier = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct TrainConfig {
  int epochs_total = 50;
  int epochs_warmup = 10;
  int batch_size = 128;
  double coteach_fraction = 0.6;
  losses::LossConfig loss_cfg;
  rate::RateConfig rate_cfg;
  rta::RtaConfig rta_cfg;
  ModelConfig model_cfg;
  OptimConfig optim_cfg;
  RepLoss rep_loss = RepLoss::ssr2;
  double nu = 1.0;  // weight of the inter-modal term in combined modes
  std::uint64_t seed = 0;
  std::string checkpoint_path;  // empty: no checkpoint file
  std::string resume_path;      // empty: fresh start
  int stop_after = 0;  // 0: run to epochs_total; else pause after this epoch

  void validate() const;
};

// One row per epoch. Loss columns are the optimized per-batch-normalized
// values averaged over the epoch; metric columns are computed on the
// unlabeled set at the epoch's end.
struct MetricsRecord {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_rep = 0.0;
  double loss_cls = 0.0;
  double loss_coteach = 0.0;
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  double rho_img = 0.0;
  double rho_txt = 0.0;
  double rank_old = 0.0;
  double rank_new = 0.0;
};

struct Models {
  model::Encoder enc_img, enc_txt;
  model::ClassifierHead head_img, head_txt;
};

struct TrainResult {
  Models models;
  std::vector<MetricsRecord> history;
  std::vector<int> predictions;       // fused argmax per sample, all samples
  eval::ClusteringResult final_eval;  // on the unlabeled set
};

// Per-class confidence selection: group samples by predicted class and keep
// the top ceil(fraction * class size) by max probability, ties broken by
// sample index ascending. Returns ascending indices.
std::vector<int> select_confident(const losses::PredictionBatch& preds,
                                  double fraction);

// One epoch of batches targeting a 50/50 labeled/unlabeled mix, sampling
// without replacement from both pools (all-of-one-kind once a pool is
// exhausted). Every index appears exactly once per epoch; a trailing
// fragment smaller than 4 is merged into the previous batch.
std::vector<std::vector<int>> compose_epoch_batches(
    const std::vector<int>& labeled, const std::vector<int>& unlabeled,
    int batch_size, std::mt19937_64& rng);

TrainResult run(const datagen::DatasetSplit& split, const rta::Lexicon& lex,
                const TrainConfig& cfg);

// Fixed-header CSV:
// epoch,loss_total,loss_rep,loss_cls,loss_coteach,acc_all,acc_old,acc_new,
// nmi,ari,rho_img,rho_txt,rank_old,rank_new
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRecord>& history);

namespace detail {

// The SSR^2 part of one branch's objective on one batch: -R(Z) plus the
// supervised compression term, plus (alignment stage only) the unsupervised
// compression term under detached pseudo-labels.
struct RepTerm {
  double value = 0.0;
  Matrix grad;  // wrt z
};

RepTerm ssr2_branch_term(const Matrix& z, const std::vector<int>& labeled_local,
                         const std::vector<int>& labels,
                         const std::vector<int>& unlabeled_local,
                         const std::vector<int>& pseudo_labels, int k_sup,
                         int d_cls, bool with_unsup,
                         const rate::RateConfig& rcfg);

}  // namespace detail

}  // namespace ssr2::trainer
