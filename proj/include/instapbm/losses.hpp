// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "instapbm/network.hpp"
#include "instapbm/tensor.hpp"

namespace instapbm {

// Which batch the mutual-information term is evaluated on.
enum class MarginalSource { target, source };

enum class MixupDirection {
  target_to_prediction,  // KL(q || p), cross-entropy with soft targets
  prediction_to_target,  // KL(p || q) with label smoothing on q
};

struct LossConfig {
  double lambda_M = 1.0;
  double lambda_C = 1.0;
  double lambda_U = 0.5;
  double lambda_S = 0.5;
  double lambda_con = 0.1;
  double supervised_weight = 1.0;
  // Absolute ceiling in nats; unset means 0.95 * ln K.
  std::optional<double> entropy_ceiling;
  double marginal_momentum = 0.1;
  double mixup_alpha = 0.2;
  // Per-pair cap on the disagreement KL.
  double disagreement_margin = 5.0;
  double mixup_smoothing = 0.01;
  MarginalSource mim_source = MarginalSource::target;
  MixupDirection mixup_direction = MixupDirection::target_to_prediction;

  double ceiling_for(std::size_t classes) const;
  void validate(std::size_t classes) const;
};

/// Exponential moving average of the predicted class marginal.
class MarginalTracker {
 public:
  static constexpr double kFloor = 1e-6;

  MarginalTracker(std::size_t classes, double momentum);

  std::span<const double> q() const { return q_; }
  double momentum() const { return momentum_; }
  std::size_t updates() const { return updates_; }
  double entropy() const;

  // q <- (1-m) q + m * batch_mean, then floor at kFloor and renormalise.
  void update(std::span<const double> batch_mean);
  // Overwrite q (floored and renormalised), e.g. to warm-start.
  void reset(std::span<const double> q);

 private:
  void normalise();

  std::vector<double> q_;
  double momentum_;
  std::size_t updates_ = 0;
};

struct MimTerms {
  Tensor loss;
  double diversity = 0.0;     // E_x sum_y p log q  (0 when gated off)
  double confidence = 0.0;    // H(Y|X)
  bool diversity_active = false;
  double marginal_entropy = 0.0;  // H(q) before the update
};

/// L_M = E_x sum_y p(y|x) log q(y) + H(Y|X), with q constant. The first term
/// is dropped once H(q) reaches `ceiling`. Updates the tracker afterwards.
MimTerms mim_terms(const Tensor& logits, MarginalTracker& tracker, double ceiling);
Tensor mim_loss(const Tensor& logits, MarginalTracker& tracker, double ceiling);

/// Row-wise KL(p || q) between the softmax distributions of two logit sets.
Tensor kl_rows(const Tensor& logits_p, const Tensor& logits_q);

/// E[KL(p(x) || p(t(x)))] - lambda_con * E_masked[min(KL(p(x) || p(x')), margin)].
Tensor cpbm_loss(const Tensor& logits_orig, const Tensor& logits_aug, const Tensor& src_logits_a,
                 const Tensor& src_logits_b, std::span<const bool> diff_class_mask, double lambda_con,
                 double margin = 5.0);

/// E[KL(q || p)] for soft targets q; targets carry no gradient.
Tensor mupbm_loss(const Tensor& mixed_logits, const Tensor& mixed_targets,
                  MixupDirection direction = MixupDirection::target_to_prediction, double smoothing = 0.01);

/// Mean cross-entropy over rows with integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean over tasks of the per-task cross-entropy.
Tensor tpbm_loss(const std::map<Head, Tensor>& task_logits, const std::map<Head, std::vector<int>>& task_labels);

enum class KernelKind { rbf_sum, linear };

/// Biased MMD^2 with a sum of RBF kernels exp(-|a-b|^2 / (2 s^2)) over
/// `bandwidths`, or the linear kernel a.b.
Tensor mmd_distance(const Tensor& z_src, const Tensor& z_tgt, std::span<const double> bandwidths,
                    KernelKind kernel = KernelKind::rbf_sum);
/// {0.5, 1, 2, 4} x median pairwise distance of the joint sample (no gradient).
std::vector<double> median_bandwidths(const Tensor& z_src, const Tensor& z_tgt);

/// |C_S - C_T|_F^2 / (4 d^2) with unbiased sample covariances.
Tensor coral_distance(const Tensor& z_src, const Tensor& z_tgt);

// ---------------------------------------------------------------------------
// Combined objective

/// One optimisation step's inputs. Network inputs are flattened rows.
/// Joint batch = [source_x; target_x].
struct BatchBundle {
  Tensor source_x;
  std::vector<int> source_y;
  Tensor target_x;

  // Contrastive matching: augmented joint batch, row-aligned with the joint
  // batch, and source pairs (first[i], second[i]) for the disagreement term.
  std::optional<Tensor> augmented_x;
  std::vector<std::size_t> pair_first;
  std::vector<std::size_t> pair_second;

  // Mix-up: mixed_x[i] = beta[i] * joint[first[i]] + (1 - beta[i]) * joint[second[i]].
  std::optional<Tensor> mixed_x;
  std::vector<std::size_t> mix_first;
  std::vector<std::size_t> mix_second;
  std::vector<double> mix_beta;
  // Soft labels for the mixed rows. Unset: built from source one-hots and the
  // detached target predictions of the current parameters.
  std::optional<Tensor> mix_targets;

  // Task-oriented matching: transformed joint batch and pretext labels.
  std::map<Head, std::pair<Tensor, std::vector<int>>> task_inputs;
};

/// Mix-up soft labels for `bundle` given the target rows' logits.
Tensor mixed_soft_labels(const BatchBundle& bundle, const Tensor& tgt_logits, std::size_t k);

struct LossReport {
  double supervised = 0.0;
  double mim = 0.0;
  double cpbm = 0.0;
  double mupbm = 0.0;
  double tpbm = 0.0;
  double total = 0.0;
  double marginal_entropy = 0.0;
  bool mim_diversity_active = false;
  std::size_t source_correct = 0;  // argmax hits on the source rows
};

/// supervised_weight * CE + lambda_M L_M + lambda_C L_C + lambda_U L_U + lambda_S L_S.
/// Terms with zero weight are not evaluated.
std::pair<Tensor, LossReport> total_objective(const BatchBundle& bundle, const ModelParams& params,
                                              const LossConfig& cfg, MarginalTracker& tracker);

}  // namespace instapbm
