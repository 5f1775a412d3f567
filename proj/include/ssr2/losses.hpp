#pragma once

#include "ssr2/common.hpp"
#include "ssr2/rate.hpp"

#include <vector>

namespace ssr2::losses {

// Temperatures and balancing weights of the training losses. teacher_temp is
// the sharper softmax temperature used to build self-distillation targets.
// nu trades the inter-modal term off against the intra-modal one when both
// are active.
struct LossConfig {
  double tau_c = 0.07;  // inter-modal contrastive
  double tau_a = 0.03;  // supervised intra-modal contrastive
  double tau_b = 0.07;  // unsupervised intra-modal contrastive
  double lambda_con = 0.5;
  double gamma = 2.0;
  double mu = 2.0;
  double student_temp = 0.1;
  double teacher_temp = 0.07;
  double nu = 1.0;

  void validate() const;
};

// Classifier outputs: probs = row-softmax(logits / temperature).
struct PredictionBatch {
  Matrix logits;  // N x K
  Matrix probs;   // N x K, rows sum to 1
  double temperature = 1.0;

  static PredictionBatch from_logits(Matrix logits, double temperature);
  int size() const { return static_cast<int>(logits.rows()); }
  int num_classes() const { return static_cast<int>(logits.cols()); }
  std::vector<int> argmax() const;
  Vector confidence() const;  // row max of probs
};

// Per-modality class anchors (unit-norm rows).
struct PrototypeSet {
  Matrix anchors;  // K x d
  void validate() const;
};

struct PairGrad {
  double value = 0.0;
  Matrix grad_first;   // same shape as the first embedding argument
  Matrix grad_second;  // same shape as the second
};

// Inter-modal contrastive loss, exactly as printed: for each i the positive
// pair z_i^I . z_i^T sits over a denominator that sums exp(z_i^I . z_j^T)
// over j != i only (the positive itself is excluded), image->text direction,
// averaged over the batch with a leading minus. No symmetrization.
PairGrad clip_inter_loss(const Matrix& z_img, const Matrix& z_txt,
                         const LossConfig& cfg);

// Intra-modal contrastive loss over two augmented views:
// lambda * L_sup + (1 - lambda) * L_unsup, both written as sums.
// N_i is the set of *other* labeled samples sharing sample i's label; a
// labeled sample with empty N_i contributes zero to the supervised sum.
struct ContrastiveResult {
  double value = 0.0;
  double sup = 0.0;
  double unsup = 0.0;
  Matrix grad_view1;
  Matrix grad_view2;
};

ContrastiveResult contrastive_loss(const Matrix& view1, const Matrix& view2,
                                   const std::vector<int>& labeled_rows,
                                   const std::vector<int>& labels,
                                   const LossConfig& cfg);

// Classifier loss: supervised CE on the labeled subset, gamma-weighted
// self-distillation CE of view-1 predictions against detached sharper-
// temperature targets from view 2, minus mu times the entropy of the mean
// prediction of both views at the student temperature. All sums as printed.
struct ClassifierResult {
  double value = 0.0;
  double sup_ce = 0.0;
  double distill_ce = 0.0;
  double mean_entropy = 0.0;  // H(y_bar)
  Matrix grad_logits;      // wrt view-1 logits
  Matrix grad_logits_aug;  // wrt view-2 logits
};

ClassifierResult classifier_loss(const PredictionBatch& preds,
                                 const PredictionBatch& preds_aug,
                                 const std::vector<int>& labeled_rows,
                                 const std::vector<int>& labels,
                                 const LossConfig& cfg);

// Co-teaching: each branch's confident samples supervise the other branch
// with detached one-hot targets built from its own argmax.
struct CoteachResult {
  double value = 0.0;
  Matrix grad_logits_img;
  Matrix grad_logits_txt;
};

CoteachResult coteach_loss(const PredictionBatch& preds_img,
                           const PredictionBatch& preds_txt,
                           const std::vector<int>& sel_img,
                           const std::vector<int>& sel_txt);

// Cross-modal instance consistency: symmetric KL between prototype-similarity
// softmaxes of the two modalities, with the 1/(2|B|) factor. Prototypes are
// detached constants.
PairGrad cico_loss(const Matrix& z_img, const Matrix& z_txt,
                   const PrototypeSet& protos_img,
                   const PrototypeSet& protos_txt);

// Everything one modality branch contributes to the staged objectives.
struct BranchData {
  Matrix z;                       // view-1 embeddings, N x d
  PredictionBatch preds;          // view-1 predictions (student temperature)
  PredictionBatch preds_aug;      // view-2 predictions (student temperature)
  std::vector<int> pseudo_labels; // per-row argmax, used on unlabeled rows
};

// Warm-up objective: per branch -R(Z) + R_c^s over the labeled subset, plus
// both branches' classifier losses. The unsupervised compression term is
// excluded.
double warmup_objective(const BranchData& img, const BranchData& txt,
                        const std::vector<int>& labeled_rows,
                        const std::vector<int>& labels,
                        const rate::RateConfig& rcfg, const LossConfig& lcfg);

// Alignment objective: warm-up plus each branch's R_c^u under its own
// detached pseudo-labels, plus the co-teaching term.
double alignment_objective(const BranchData& img, const BranchData& txt,
                           const std::vector<int>& labeled_rows,
                           const std::vector<int>& labels,
                           const std::vector<int>& sel_img,
                           const std::vector<int>& sel_txt,
                           const rate::RateConfig& rcfg,
                           const LossConfig& lcfg);

}  // namespace ssr2::losses
