#include "ssr2/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace ssr2::trainer {

namespace {

bool uses_ssr2(RepLoss l) {
  return l == RepLoss::ssr2 || l == RepLoss::clip_ssr2 || l == RepLoss::cico_ssr2;
}
bool uses_con(RepLoss l) {
  return l == RepLoss::con || l == RepLoss::clip_con || l == RepLoss::cico_con;
}
bool uses_clip(RepLoss l) {
  return l == RepLoss::clip || l == RepLoss::clip_con || l == RepLoss::clip_ssr2;
}
bool uses_cico(RepLoss l) {
  return l == RepLoss::cico || l == RepLoss::cico_con || l == RepLoss::cico_ssr2;
}

Matrix take_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void add_rows(Matrix& dst, const std::vector<int>& rows, const Matrix& src) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    dst.row(rows[i]) += src.row(static_cast<Eigen::Index>(i));
}

std::vector<Matrix> add_lists(std::vector<Matrix> a, const std::vector<Matrix>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

const char* to_string(RepLoss loss) {
  switch (loss) {
    case RepLoss::none: return "none";
    case RepLoss::clip: return "clip";
    case RepLoss::con: return "con";
    case RepLoss::ssr2: return "ssr2";
    case RepLoss::clip_con: return "clip+con";
    case RepLoss::clip_ssr2: return "clip+ssr2";
    case RepLoss::cico: return "cico";
    case RepLoss::cico_con: return "cico+con";
    case RepLoss::cico_ssr2: return "cico+ssr2";
  }
  return "?";
}

RepLoss rep_loss_from_string(const std::string& name) {
  for (RepLoss l : {RepLoss::none, RepLoss::clip, RepLoss::con, RepLoss::ssr2,
                    RepLoss::clip_con, RepLoss::clip_ssr2, RepLoss::cico,
                    RepLoss::cico_con, RepLoss::cico_ssr2})
    if (name == to_string(l)) return l;
  throw std::invalid_argument("unknown representation loss: " + name);
}

void TrainConfig::validate() const {
  require(epochs_total >= 1, "TrainConfig: epochs_total >= 1");
  require(epochs_warmup >= 0 && epochs_warmup <= epochs_total,
          "TrainConfig: epochs_warmup must not exceed epochs_total");
  require(batch_size >= 4, "TrainConfig: batch_size >= 4");
  require(coteach_fraction > 0.0 && coteach_fraction <= 1.0,
          "TrainConfig: coteach_fraction in (0,1]");
  require(nu >= 0.0, "TrainConfig: nu >= 0");
  require(stop_after >= 0 && stop_after <= epochs_total,
          "TrainConfig: stop_after must not exceed epochs_total");
  loss_cfg.validate();
  rate_cfg.validate();
  rta_cfg.validate();
  require(model_cfg.hidden_dim >= 1 && model_cfg.embed_dim >= 1,
          "TrainConfig: model dimensions >= 1");
  require(model_cfg.d_cls >= 0, "TrainConfig: d_cls >= 0");
  require(rate_cfg.embed_dim == model_cfg.embed_dim,
          "TrainConfig: rate embed_dim must match the model embed_dim");
}

std::vector<int> select_confident(const losses::PredictionBatch& preds,
                                  double fraction) {
  require(fraction > 0.0 && fraction <= 1.0,
          "select_confident: fraction in (0,1]");
  const auto arg = preds.argmax();
  const Vector conf = preds.confidence();

  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < preds.size(); ++i)
    by_class[arg[static_cast<std::size_t>(i)]].push_back(i);

  std::vector<int> out;
  for (auto& [cls, members] : by_class) {
    std::stable_sort(members.begin(), members.end(), [&](int a, int b) {
      if (conf(a) != conf(b)) return conf(a) > conf(b);
      return a < b;
    });
    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < keep && i < members.size(); ++i)
      out.push_back(members[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<int>> compose_epoch_batches(
    const std::vector<int>& labeled, const std::vector<int>& unlabeled,
    int batch_size, std::mt19937_64& rng) {
  require(batch_size >= 4, "compose_epoch_batches: batch_size >= 4");
  std::vector<int> lab = labeled, unl = unlabeled;
  std::shuffle(lab.begin(), lab.end(), rng);
  std::shuffle(unl.begin(), unl.end(), rng);

  std::vector<std::vector<int>> batches;
  std::size_t pl = 0, pu = 0;
  const auto want_lab = static_cast<std::size_t>(batch_size / 2);
  while (pl < lab.size() || pu < unl.size()) {
    std::size_t t_l = std::min(want_lab, lab.size() - pl);
    std::size_t t_u = std::min(static_cast<std::size_t>(batch_size) - t_l,
                               unl.size() - pu);
    if (t_l + t_u < static_cast<std::size_t>(batch_size))
      t_l = std::min(static_cast<std::size_t>(batch_size) - t_u, lab.size() - pl);
    std::vector<int> batch;
    batch.reserve(t_l + t_u);
    for (std::size_t i = 0; i < t_l; ++i) batch.push_back(lab[pl++]);
    for (std::size_t i = 0; i < t_u; ++i) batch.push_back(unl[pu++]);
    batches.push_back(std::move(batch));
  }
  if (batches.size() >= 2 && batches.back().size() < 4) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

namespace detail {

RepTerm ssr2_branch_term(const Matrix& z, const std::vector<int>& labeled_local,
                         const std::vector<int>& labels,
                         const std::vector<int>& unlabeled_local,
                         const std::vector<int>& pseudo_labels, int k_sup,
                         int d_cls, bool with_unsup,
                         const rate::RateConfig& rcfg) {
  RepTerm term;
  term.value = -rate::expansion_rate(z, rcfg);
  term.grad = -rate::expansion_rate_grad(z, rcfg);
  const double total_n = static_cast<double>(z.rows());
  if (!labeled_local.empty()) {
    const auto part = rate::PartitionWeights::hard(labels, k_sup);
    const Matrix zl = take_rows(z, labeled_local);
    term.value += rate::compression_rate(zl, part, total_n, rcfg);
    add_rows(term.grad, labeled_local,
             rate::compression_rate_grad(zl, part, total_n, rcfg));
  }
  if (with_unsup && !unlabeled_local.empty()) {
    std::vector<int> pl;
    pl.reserve(unlabeled_local.size());
    for (int r : unlabeled_local)
      pl.push_back(pseudo_labels[static_cast<std::size_t>(r)]);
    const auto part = rate::PartitionWeights::hard(pl, d_cls);
    const Matrix zu = take_rows(z, unlabeled_local);
    term.value += rate::compression_rate(zu, part, total_n, rcfg);
    add_rows(term.grad, unlabeled_local,
             rate::compression_rate_grad(zu, part, total_n, rcfg));
  }
  return term;
}

}  // namespace detail

namespace {

struct Branch {
  model::Encoder* enc = nullptr;
  model::ClassifierHead* head = nullptr;
  const Matrix* base = nullptr;  // n x ambient input features
};

std::vector<std::pair<std::string, Matrix*>> named_tensors(
    Models& m, model::SgdOptimizer& opt) {
  std::vector<std::pair<std::string, Matrix*>> out;
  const char* enc_names[] = {"w1", "b1", "w2", "b2"};
  auto add_enc = [&](const char* prefix, model::Encoder& e) {
    auto ps = e.params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      out.emplace_back(std::string(prefix) + enc_names[i], ps[i]);
  };
  add_enc("enc_img.", m.enc_img);
  add_enc("enc_txt.", m.enc_txt);
  out.emplace_back("head_img.w", &m.head_img.w);
  out.emplace_back("head_txt.w", &m.head_txt.w);
  for (int g = 0; g < 2; ++g) {
    auto& vel = opt.velocity(g);
    for (std::size_t i = 0; i < vel.size(); ++i)
      out.emplace_back("opt.g" + std::to_string(g) + ".v" + std::to_string(i),
                       &vel[i]);
  }
  return out;
}

void restore_tensors(Models& m, model::SgdOptimizer& opt,
                     const std::map<std::string, Matrix>& saved) {
  for (auto& [name, ptr] : named_tensors(m, opt)) {
    const auto it = saved.find(name);
    require(it != saved.end(), "checkpoint: missing tensor");
    require(it->second.rows() == ptr->rows() && it->second.cols() == ptr->cols(),
            "checkpoint: tensor shape mismatch");
    *ptr = it->second;
  }
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRecord>& history) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
  out << "epoch,loss_total,loss_rep,loss_cls,loss_coteach,acc_all,acc_old,"
         "acc_new,nmi,ari,rho_img,rho_txt,rank_old,rank_new\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    out << r.epoch << ',' << fmt(r.loss_total) << ',' << fmt(r.loss_rep) << ','
        << fmt(r.loss_cls) << ',' << fmt(r.loss_coteach) << ',' << fmt(r.acc_all)
        << ',' << fmt(r.acc_old) << ',' << fmt(r.acc_new) << ',' << fmt(r.nmi)
        << ',' << fmt(r.ari) << ',' << fmt(r.rho_img) << ',' << fmt(r.rho_txt)
        << ',' << fmt(r.rank_old) << ',' << fmt(r.rank_new) << '\n';
  }
  if (!out)
    throw std::runtime_error("write_metrics_csv: write failed " + path.string());
}

TrainResult run(const datagen::DatasetSplit& split, const rta::Lexicon& lex,
                const TrainConfig& cfg) {
  cfg.validate();
  require(split.size() >= cfg.batch_size, "run: dataset smaller than one batch");
  const int n = split.size();
  const int ambient = static_cast<int>(split.image_features.cols());
  const int d_cls = cfg.model_cfg.d_cls > 0 ? cfg.model_cfg.d_cls : split.k_total;
  const double stemp = cfg.loss_cfg.student_temp;

  // Frozen retrieval: the pseudo-text input of every sample is the RTA
  // aggregate for its normalized raw image feature. Queries and lexicon
  // never change during training, so this is computed once up front.
  Matrix text_input(n, ambient);
  for (int i = 0; i < n; ++i) {
    Vector q = split.image_features.row(i).transpose();
    const double norm = q.norm();
    require(norm > 1e-12, "run: zero image feature");
    text_input.row(i) = rta::aggregate_text(q / norm, lex, cfg.rta_cfg).transpose();
  }

  // Models and optimizer: encoders in one parameter group, classifier heads
  // in the other (separate base learning rates).
  Models models;
  {
    auto rng = make_stream(cfg.seed, "trainer.init");
    model::EncoderConfig ec;
    ec.in_dim = ambient;
    ec.hidden_dim = cfg.model_cfg.hidden_dim;
    ec.out_dim = cfg.model_cfg.embed_dim;
    models.enc_img = model::Encoder(ec, rng);
    models.enc_txt = model::Encoder(ec, rng);
    models.head_img = model::ClassifierHead(cfg.model_cfg.embed_dim, d_cls, rng);
    models.head_txt = model::ClassifierHead(cfg.model_cfg.embed_dim, d_cls, rng);
  }
  model::SgdConfig scfg;
  scfg.momentum = cfg.optim_cfg.momentum;
  scfg.weight_decay = cfg.optim_cfg.weight_decay;
  scfg.total_epochs = cfg.epochs_total;
  model::SgdOptimizer opt(scfg);
  {
    std::vector<Matrix*> encs;
    for (Matrix* p : models.enc_img.params()) encs.push_back(p);
    for (Matrix* p : models.enc_txt.params()) encs.push_back(p);
    opt.add_group(std::move(encs), cfg.optim_cfg.lr_encoder);
    opt.add_group({&models.head_img.w, &models.head_txt.w},
                  cfg.optim_cfg.lr_classifier);
  }

  int start_epoch = 0;
  if (!cfg.resume_path.empty()) {
    const auto saved = model::load_tensors(cfg.resume_path);
    const auto it = saved.find("meta.epoch");
    require(it != saved.end(), "resume: missing meta.epoch");
    start_epoch = static_cast<int>(it->second(0, 0));
    require(start_epoch >= 0 && start_epoch <= cfg.epochs_total,
            "resume: epoch out of range");
    restore_tensors(models, opt, saved);
  }

  const auto labeled = split.labeled_indices();
  const auto unlabeled = split.unlabeled_indices();
  const auto old_list = split.old_class_list();
  const std::set<int> old_set(old_list.begin(), old_list.end());
  std::vector<int> truth_unl;
  truth_unl.reserve(unlabeled.size());
  for (int i : unlabeled)
    truth_unl.push_back(split.gt_labels[static_cast<std::size_t>(i)]);

  const bool w_ssr2 = uses_ssr2(cfg.rep_loss);
  const bool w_con = uses_con(cfg.rep_loss);
  const bool w_clip = uses_clip(cfg.rep_loss);
  const bool w_cico = uses_cico(cfg.rep_loss);
  const bool train_encoders = cfg.rep_loss != RepLoss::none;
  // In combined modes the inter-modal term carries the tradeoff weight nu.
  const double inter_w = (w_clip || w_cico) && (w_ssr2 || w_con) ? cfg.nu : 1.0;

  int k_sup = 1;
  for (int i : labeled)
    k_sup = std::max(k_sup, split.gt_labels[static_cast<std::size_t>(i)] + 1);
  k_sup = std::max(k_sup, d_cls);

  auto save_checkpoint = [&](int epoch, const std::filesystem::path& path) {
    Matrix meta(1, 1);
    meta(0, 0) = epoch;
    std::vector<std::pair<std::string, const Matrix*>> tensors;
    for (auto& [name, ptr] : named_tensors(models, opt))
      tensors.emplace_back(name, ptr);
    tensors.emplace_back("meta.epoch", &meta);
    model::save_tensors(path, tensors);
  };

  TrainResult result;
  std::map<std::string, Matrix> last_good;  // snapshot at last epoch boundary

  auto snapshot = [&]() {
    last_good.clear();
    for (auto& [name, ptr] : named_tensors(models, opt)) last_good[name] = *ptr;
  };
  snapshot();

  const Branch branches[2] = {
      {&models.enc_img, &models.head_img, &split.image_features},
      {&models.enc_txt, &models.head_txt, &text_input},
  };

  const int end_epoch = cfg.stop_after > 0 ? cfg.stop_after : cfg.epochs_total;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const bool align_stage = epoch >= cfg.epochs_warmup;

    // CICO prototypes: unit-normalized class means of the labeled embeddings
    // per modality, refreshed at each epoch start.
    losses::PrototypeSet protos[2];
    if (w_cico) {
      for (int m = 0; m < 2; ++m) {
        const Matrix zl = branches[m].enc->forward(take_rows(*branches[m].base, labeled));
        Matrix anchors = Matrix::Zero(k_sup, cfg.model_cfg.embed_dim);
        std::vector<int> counts(static_cast<std::size_t>(k_sup), 0);
        for (std::size_t i = 0; i < labeled.size(); ++i) {
          const int c = split.gt_labels[static_cast<std::size_t>(labeled[i])];
          anchors.row(c) += zl.row(static_cast<Eigen::Index>(i));
          counts[static_cast<std::size_t>(c)] += 1;
        }
        for (int c = 0; c < k_sup; ++c) {
          if (counts[static_cast<std::size_t>(c)] == 0) {
            anchors(c, 0) = 1.0;  // unused class slot: arbitrary unit anchor
          }
          anchors.row(c).normalize();
        }
        protos[m].anchors = std::move(anchors);
      }
    }

    auto batch_rng = make_stream(cfg.seed, "trainer.batch", static_cast<std::uint64_t>(epoch));
    auto aug_rng = make_stream(cfg.seed, "trainer.augment", static_cast<std::uint64_t>(epoch));
    const auto batches = compose_epoch_batches(labeled, unlabeled, cfg.batch_size, batch_rng);

    double ep_rep = 0.0, ep_cls = 0.0, ep_ct = 0.0;
    try {
    for (const auto& batch : batches) {
      const int b = static_cast<int>(batch.size());

      // Batch-local labeled bookkeeping.
      std::vector<int> lab_local, lab_labels, unl_local;
      for (int i = 0; i < b; ++i) {
        const int s = batch[static_cast<std::size_t>(i)];
        if (split.is_labeled[static_cast<std::size_t>(s)]) {
          lab_local.push_back(i);
          lab_labels.push_back(split.gt_labels[static_cast<std::size_t>(s)]);
        } else {
          unl_local.push_back(i);
        }
      }

      // Two augmented views per modality.
      Matrix x1[2], x2[2];
      for (int m = 0; m < 2; ++m) {
        x1[m].resize(b, ambient);
        x2[m].resize(b, ambient);
        for (int i = 0; i < b; ++i) {
          const Vector base =
              branches[m].base->row(batch[static_cast<std::size_t>(i)]).transpose();
          x1[m].row(i) = datagen::augment_vector(base, split.aug_noise,
                                                 split.aug_dropout, aug_rng)
                             .transpose();
          x2[m].row(i) = datagen::augment_vector(base, split.aug_noise,
                                                 split.aug_dropout, aug_rng)
                             .transpose();
        }
      }

      model::Encoder::Cache c1[2], c2[2];
      losses::PredictionBatch p1[2], p2[2];
      for (int m = 0; m < 2; ++m) {
        c1[m] = branches[m].enc->forward_cached(x1[m]);
        c2[m] = branches[m].enc->forward_cached(x2[m]);
        p1[m] = model::predict(*branches[m].head, c1[m].z, stemp);
        p2[m] = model::predict(*branches[m].head, c2[m].z, stemp);
      }

      Matrix dz1[2], dz2[2], dlogits1[2], dlogits2[2];
      for (int m = 0; m < 2; ++m) {
        dz1[m] = Matrix::Zero(b, cfg.model_cfg.embed_dim);
        dz2[m] = Matrix::Zero(b, cfg.model_cfg.embed_dim);
        dlogits1[m] = Matrix::Zero(b, d_cls);
        dlogits2[m] = Matrix::Zero(b, d_cls);
      }

      double rep_value = 0.0;
      if (w_ssr2) {
        for (int m = 0; m < 2; ++m) {
          const auto pseudo = p1[m].argmax();  // detached, refreshed per batch
          const auto term = detail::ssr2_branch_term(
              c1[m].z, lab_local, lab_labels, unl_local, pseudo, k_sup, d_cls,
              align_stage, cfg.rate_cfg);
          rep_value += term.value;
          dz1[m] += term.grad;
        }
      }
      if (w_con) {
        // Per-term normalization: the supervised sum by the labeled count,
        // the unsupervised sum by the batch size. Expressed through the
        // loss's own lambda parameterization: c1*L_s + c2*L_u equals
        // (c1+c2) * [lambda' L_s + (1-lambda') L_u] with lambda' = c1/(c1+c2).
        const double c1w =
            lab_local.empty()
                ? 0.0
                : cfg.loss_cfg.lambda_con / static_cast<double>(lab_local.size());
        const double c2w = (1.0 - cfg.loss_cfg.lambda_con) / b;
        losses::LossConfig lc = cfg.loss_cfg;
        lc.lambda_con = c1w / (c1w + c2w);
        const double scale = c1w + c2w;
        for (int m = 0; m < 2; ++m) {
          const auto con =
              losses::contrastive_loss(c1[m].z, c2[m].z, lab_local, lab_labels, lc);
          rep_value += scale * con.value;
          dz1[m] += scale * con.grad_view1;
          dz2[m] += scale * con.grad_view2;
        }
      }
      if (w_clip) {
        const auto clip = losses::clip_inter_loss(c1[0].z, c1[1].z, cfg.loss_cfg);
        rep_value += inter_w * clip.value;
        dz1[0] += inter_w * clip.grad_first;
        dz1[1] += inter_w * clip.grad_second;
      }
      if (w_cico) {
        const auto cico = losses::cico_loss(c1[0].z, c1[1].z, protos[0], protos[1]);
        rep_value += inter_w * cico.value;
        dz1[0] += inter_w * cico.grad_first;
        dz1[1] += inter_w * cico.grad_second;
      }

      // Classifier losses, normalized per term (supervised CE by the labeled
      // count, self-distillation by the batch size, entropy unscaled) by
      // folding the scales into gamma/mu.
      double cls_value = 0.0;
      {
        losses::LossConfig lc = cfg.loss_cfg;
        double scale;
        if (!lab_local.empty()) {
          scale = 1.0 / static_cast<double>(lab_local.size());
          lc.gamma = cfg.loss_cfg.gamma * static_cast<double>(lab_local.size()) / b;
          lc.mu = cfg.loss_cfg.mu * static_cast<double>(lab_local.size());
        } else {
          scale = 1.0 / b;
          lc.mu = cfg.loss_cfg.mu * b;
        }
        for (int m = 0; m < 2; ++m) {
          const auto cls = losses::classifier_loss(p1[m], p2[m], lab_local,
                                                   lab_labels, lc);
          cls_value += scale * cls.value;
          dlogits1[m] += scale * cls.grad_logits;
          dlogits2[m] += scale * cls.grad_logits_aug;
        }
      }

      double ct_value = 0.0;
      if (align_stage) {
        const auto sel_img = select_confident(p1[0], cfg.coteach_fraction);
        const auto sel_txt = select_confident(p1[1], cfg.coteach_fraction);
        const auto ct = losses::coteach_loss(p1[0], p1[1], sel_img, sel_txt);
        ct_value = ct.value / b;
        dlogits1[0] += ct.grad_logits_img / b;
        dlogits1[1] += ct.grad_logits_txt / b;
      }

      const double batch_total = rep_value + cls_value + ct_value;
      if (!std::isfinite(batch_total))
        throw std::runtime_error("non-finite training loss");
      ep_rep += rep_value;
      ep_cls += cls_value;
      ep_ct += ct_value;

      // Backprop: heads, then embeddings, then encoders.
      std::vector<Matrix> enc_grads;
      std::vector<Matrix> head_grads;
      for (int m = 0; m < 2; ++m) {
        head_grads.push_back(branches[m].head->grad_w(c1[m].z, dlogits1[m]) +
                             branches[m].head->grad_w(c2[m].z, dlogits2[m]));
        const Matrix nw = branches[m].head->normalized_w();
        dz1[m] += dlogits1[m] * nw.transpose();
        dz2[m] += dlogits2[m] * nw.transpose();
      }
      for (int m = 0; m < 2; ++m) {
        auto g = add_lists(
            model::Encoder::grads_as_list(branches[m].enc->backward(c1[m], dz1[m])),
            model::Encoder::grads_as_list(branches[m].enc->backward(c2[m], dz2[m])));
        if (!train_encoders)
          for (auto& t : g) t.setZero();  // frozen random encoder mode
        for (auto& t : g) enc_grads.push_back(std::move(t));
      }

      opt.step({std::move(enc_grads), std::move(head_grads)}, epoch);
    }
    } catch (const std::exception& e) {
      // Divergence (or any numeric failure mid-epoch): roll back to the last
      // epoch boundary, persist it if a checkpoint path was given, abort.
      restore_tensors(models, opt, last_good);
      if (!cfg.checkpoint_path.empty()) save_checkpoint(epoch, cfg.checkpoint_path);
      throw std::runtime_error(
          "trainer: aborted at epoch " + std::to_string(epoch) + ": " + e.what() +
          (cfg.checkpoint_path.empty() ? " (no checkpoint path configured)"
                                       : " (last-good checkpoint written)"));
    }

    // Epoch metrics on the unlabeled set (no augmentation).
    MetricsRecord rec;
    rec.epoch = epoch;
    const auto nb = static_cast<double>(batches.size());
    rec.loss_rep = ep_rep / nb;
    rec.loss_cls = ep_cls / nb;
    rec.loss_coteach = ep_ct / nb;
    rec.loss_total = rec.loss_rep + rec.loss_cls + rec.loss_coteach;

    const Matrix z_img = models.enc_img.forward(take_rows(split.image_features, unlabeled));
    const Matrix z_txt = models.enc_txt.forward(take_rows(text_input, unlabeled));
    const auto pi = model::predict(models.head_img, z_img, stemp);
    const auto pt = model::predict(models.head_txt, z_txt, stemp);
    std::vector<int> fused(unlabeled.size());
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
      Eigen::Index arg;
      (pi.probs.row(static_cast<Eigen::Index>(i)) +
       pt.probs.row(static_cast<Eigen::Index>(i)))
          .maxCoeff(&arg);
      fused[i] = static_cast<int>(arg);
    }
    const auto ev = eval::evaluate_clustering(fused, truth_unl, old_set);
    rec.acc_all = ev.acc_all;
    rec.acc_old = ev.acc_old;
    rec.acc_new = ev.acc_new;
    rec.nmi = ev.nmi;
    rec.ari = ev.ari;
    rec.rho_img = eval::consistency_rho(z_img, truth_unl).rho;
    rec.rho_txt = eval::consistency_rho(z_txt, truth_unl).rho;
    const auto ranks = eval::mean_group_ranks(z_img, truth_unl, old_set);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.rank_old = ranks.mean_rank_old.value_or(nan);
    rec.rank_new = ranks.mean_rank_new.value_or(nan);
    result.history.push_back(rec);

    snapshot();
  }

  if (!cfg.checkpoint_path.empty()) save_checkpoint(end_epoch, cfg.checkpoint_path);

  // Final fused predictions over all samples; evaluation on the unlabeled set.
  const Matrix z_img_all = models.enc_img.forward(split.image_features);
  const Matrix z_txt_all = models.enc_txt.forward(text_input);
  const auto pi = model::predict(models.head_img, z_img_all, stemp);
  const auto pt = model::predict(models.head_txt, z_txt_all, stemp);
  result.predictions.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Eigen::Index arg;
    (pi.probs.row(i) + pt.probs.row(i)).maxCoeff(&arg);
    result.predictions[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  std::vector<int> fused_unl;
  fused_unl.reserve(unlabeled.size());
  for (int i : unlabeled)
    fused_unl.push_back(result.predictions[static_cast<std::size_t>(i)]);
  result.final_eval = eval::evaluate_clustering(fused_unl, truth_unl, old_set);
  result.models = std::move(models);
  return result;
}

}  // namespace ssr2::trainer
