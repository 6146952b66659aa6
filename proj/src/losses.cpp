// SPDX-License-Identifier: Apache-2.0
#include "instapbm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "instapbm/errors.hpp"

namespace instapbm {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected [rows, cols], got " + to_string(t.shape()));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out(Shape{labels.size(), classes}, 0.0);
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range for " + std::to_string(classes) +
                            " classes");
    }
    d[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

std::vector<double> column_mean(std::span<const double> values, std::size_t rows, std::size_t cols) {
  std::vector<double> m(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[c] += values[r * cols + c];
  for (auto& v : m) v /= static_cast<double>(rows);
  return m;
}

Tensor squared_distances(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0);
  const std::size_t m = b.dim(0);
  const Tensor a_sq = reshape(sum(a * a, 1), Shape{n, 1});
  const Tensor b_sq = sum(b * b, 1);
  const Tensor ones(Shape{1, m}, 1.0);
  return matmul(a_sq, ones) + b_sq - scale(matmul(a, transpose(b)), 2.0);
}

Tensor kernel_mean(const Tensor& sq, std::span<const double> bandwidths) {
  Tensor acc;
  bool first = true;
  for (double s : bandwidths) {
    const Tensor k = mean(exp(scale(sq, -1.0 / (2.0 * s * s))));
    acc = first ? k : acc + k;
    first = false;
  }
  return acc;
}

Tensor covariance(const Tensor& z) {
  const std::size_t n = z.dim(0);
  const Tensor centred = z - mean(z, 0);
  return scale(matmul(transpose(centred), centred), 1.0 / static_cast<double>(n - 1));
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::distance(row.begin(), std::max_element(row.begin(), row.end())));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and tracker

double LossConfig::ceiling_for(std::size_t classes) const {
  return entropy_ceiling.value_or(0.95 * std::log(static_cast<double>(classes)));
}

void LossConfig::validate(std::size_t classes) const {
  for (double w : {lambda_M, lambda_C, lambda_U, lambda_S, lambda_con, supervised_weight, disagreement_margin}) {
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("loss config: weights must be finite and >= 0");
  }
  const double c = ceiling_for(classes);
  if (!(c > 0.0) || c > std::log(static_cast<double>(classes)) + 1e-12) {
    throw ValidationError("loss config: entropy ceiling must lie in (0, ln K]");
  }
  if (!(marginal_momentum > 0.0 && marginal_momentum < 1.0)) throw ValidationError("loss config: marginal momentum must lie in (0, 1)");
  if (!(mixup_alpha > 0.0)) throw ValidationError("loss config: mixup alpha must be positive");
  if (mixup_smoothing < 0.0 || mixup_smoothing >= 1.0) throw ValidationError("loss config: smoothing must lie in [0, 1)");
}

MarginalTracker::MarginalTracker(std::size_t classes, double momentum)
    : q_(classes, 1.0 / static_cast<double>(classes)), momentum_(momentum) {
  if (classes < 2) throw ValidationError("marginal tracker: need at least 2 classes");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ValidationError("marginal tracker: momentum must lie in (0, 1)");
}

double MarginalTracker::entropy() const {
  double h = 0.0;
  for (double v : q_) h -= v * std::log(v);
  return h;
}

void MarginalTracker::update(std::span<const double> batch_mean) {
  if (batch_mean.size() != q_.size()) throw ShapeError("marginal tracker: class count mismatch");
  for (std::size_t k = 0; k < q_.size(); ++k) q_[k] = (1.0 - momentum_) * q_[k] + momentum_ * batch_mean[k];
  normalise();
  ++updates_;
}

void MarginalTracker::reset(std::span<const double> q) {
  if (q.size() != q_.size()) throw ShapeError("marginal tracker: class count mismatch");
  q_.assign(q.begin(), q.end());
  normalise();
}

void MarginalTracker::normalise() {
  for (auto& v : q_) v = std::max(v, kFloor);
  const double total = std::accumulate(q_.begin(), q_.end(), 0.0);
  for (auto& v : q_) v /= total;
}

// ---------------------------------------------------------------------------
// Loss terms

MimTerms mim_terms(const Tensor& logits, MarginalTracker& tracker, double ceiling) {
  require_matrix(logits, "mim_loss");
  const std::size_t k = logits.dim(1);
  if (k != tracker.q().size()) {
    throw ShapeError("mim_loss: logits have " + std::to_string(k) + " classes, tracker has " +
                     std::to_string(tracker.q().size()));
  }
  const Tensor log_p = log_softmax(logits);
  const Tensor p = exp(log_p);
  const Tensor conditional_entropy = mean(sum(neg(p * log_p), 1));

  MimTerms out;
  out.marginal_entropy = tracker.entropy();
  out.confidence = conditional_entropy.item();
  // A ceiling at ln K never gates: H(q) cannot exceed it.
  out.diversity_active = ceiling >= std::log(static_cast<double>(k)) || out.marginal_entropy < ceiling;
  if (out.diversity_active) {
    std::vector<double> log_q(k);
    std::ranges::transform(tracker.q(), log_q.begin(), [](double v) { return std::log(v); });
    const Tensor diversity = mean(sum(p * Tensor::vector(std::move(log_q)), 1));
    out.diversity = diversity.item();
    out.loss = diversity + conditional_entropy;
  } else {
    out.loss = conditional_entropy;
  }
  tracker.update(column_mean(p.data(), logits.dim(0), k));
  return out;
}

Tensor mim_loss(const Tensor& logits, MarginalTracker& tracker, double ceiling) {
  return mim_terms(logits, tracker, ceiling).loss;
}

Tensor kl_rows(const Tensor& logits_p, const Tensor& logits_q) {
  require_matrix(logits_p, "kl");
  if (logits_p.shape() != logits_q.shape()) {
    throw ShapeError("kl: shape mismatch " + to_string(logits_p.shape()) + " vs " + to_string(logits_q.shape()));
  }
  const Tensor log_p = log_softmax(logits_p);
  const Tensor log_q = log_softmax(logits_q);
  return sum(exp(log_p) * (log_p - log_q), 1);
}

Tensor cpbm_loss(const Tensor& logits_orig, const Tensor& logits_aug, const Tensor& src_logits_a,
                 const Tensor& src_logits_b, std::span<const bool> diff_class_mask, double lambda_con,
                 double margin) {
  if (logits_orig.shape() != logits_aug.shape()) {
    throw ShapeError("cpbm_loss: original/augmented shape mismatch " + to_string(logits_orig.shape()) + " vs " +
                     to_string(logits_aug.shape()));
  }
  const Tensor consistency = mean(kl_rows(logits_orig, logits_aug));
  if (src_logits_a.shape() != src_logits_b.shape()) {
    throw ShapeError("cpbm_loss: pair shape mismatch " + to_string(src_logits_a.shape()) + " vs " +
                     to_string(src_logits_b.shape()));
  }
  require_matrix(src_logits_a, "cpbm_loss");
  if (diff_class_mask.size() != src_logits_a.dim(0)) throw ShapeError("cpbm_loss: mask length must equal pair count");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < diff_class_mask.size(); ++i)
    if (diff_class_mask[i]) rows.push_back(i);
  if (rows.empty() || lambda_con == 0.0) return consistency;
  const Tensor disagreement =
      mean(clamp_max(kl_rows(index_rows(src_logits_a, rows), index_rows(src_logits_b, rows)), margin));
  return consistency - scale(disagreement, lambda_con);
}

Tensor mupbm_loss(const Tensor& mixed_logits, const Tensor& mixed_targets, MixupDirection direction,
                  double smoothing) {
  require_matrix(mixed_logits, "mupbm_loss");
  if (mixed_logits.shape() != mixed_targets.shape()) {
    throw ShapeError("mupbm_loss: shape mismatch " + to_string(mixed_logits.shape()) + " vs " +
                     to_string(mixed_targets.shape()));
  }
  const std::size_t rows = mixed_logits.dim(0);
  const std::size_t k = mixed_logits.dim(1);
  const auto q = mixed_targets.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (q[r * k + c] < 0.0) throw ValidationError("mupbm_loss: negative target probability");
      total += q[r * k + c];
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("mupbm_loss: target row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
  const Tensor log_p = log_softmax(mixed_logits);
  if (direction == MixupDirection::target_to_prediction) {
    // KL(q || p) = sum q log q - sum q log p, with 0 log 0 = 0.
    double neg_entropy = 0.0;
    for (double v : q)
      if (v > 0.0) neg_entropy += v * std::log(v);
    neg_entropy /= static_cast<double>(rows);
    return add_scalar(neg(mean(sum(mixed_targets.detach() * log_p, 1))), neg_entropy);
  }
  std::vector<double> log_smoothed(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    log_smoothed[i] = std::log((1.0 - smoothing) * q[i] + smoothing / static_cast<double>(k));
  }
  const Tensor log_q(mixed_targets.shape(), std::move(log_smoothed));
  return mean(sum(exp(log_p) * (log_p - log_q), 1));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  if (labels.size() != logits.dim(0)) throw ShapeError("cross_entropy: one label per row required");
  return neg(mean(sum(one_hot(labels, logits.dim(1)) * log_softmax(logits), 1)));
}

Tensor tpbm_loss(const std::map<Head, Tensor>& task_logits, const std::map<Head, std::vector<int>>& task_labels) {
  if (task_logits.empty()) throw ValidationError("tpbm_loss: no active tasks");
  Tensor total;
  bool first = true;
  for (const auto& [head, logits] : task_logits) {
    auto it = task_labels.find(head);
    if (it == task_labels.end()) throw ValidationError("tpbm_loss: missing labels for task " + to_string(head));
    require_matrix(logits, "tpbm_loss");
    if (logits.dim(1) != pretext_classes(head)) {
      throw ShapeError("tpbm_loss: task " + to_string(head) + " expects " + std::to_string(pretext_classes(head)) +
                       " outputs, got " + to_string(logits.shape()));
    }
    const Tensor ce = cross_entropy(logits, it->second);
    total = first ? ce : total + ce;
    first = false;
  }
  return scale(total, 1.0 / static_cast<double>(task_logits.size()));
}

Tensor mmd_distance(const Tensor& z_src, const Tensor& z_tgt, std::span<const double> bandwidths, KernelKind kernel) {
  require_matrix(z_src, "mmd_distance");
  require_matrix(z_tgt, "mmd_distance");
  if (z_src.dim(1) != z_tgt.dim(1)) {
    throw ShapeError("mmd_distance: feature dims differ " + to_string(z_src.shape()) + " vs " + to_string(z_tgt.shape()));
  }
  if (kernel == KernelKind::linear) {
    const Tensor diff = mean(z_src, 0) - mean(z_tgt, 0);
    return sum(diff * diff);
  }
  if (bandwidths.empty()) throw ValidationError("mmd_distance: no bandwidths");
  for (double s : bandwidths)
    if (!(s > 0.0)) throw ValidationError("mmd_distance: bandwidths must be positive");
  const Tensor kss = kernel_mean(squared_distances(z_src, z_src), bandwidths);
  const Tensor ktt = kernel_mean(squared_distances(z_tgt, z_tgt), bandwidths);
  const Tensor kst = kernel_mean(squared_distances(z_src, z_tgt), bandwidths);
  return kss + ktt - scale(kst, 2.0);
}

std::vector<double> median_bandwidths(const Tensor& z_src, const Tensor& z_tgt) {
  require_matrix(z_src, "median_bandwidths");
  require_matrix(z_tgt, "median_bandwidths");
  const std::size_t d = z_src.dim(1);
  if (z_tgt.dim(1) != d) throw ShapeError("median_bandwidths: feature dims differ");
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < z_src.dim(0); ++i) rows.push_back(z_src.data().data() + i * d);
  for (std::size_t i = 0; i < z_tgt.dim(0); ++i) rows.push_back(z_tgt.data().data() + i * d);
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = rows[i][c] - rows[j][c];
        acc += diff * diff;
      }
      dist.push_back(std::sqrt(acc));
    }
  double med = 1.0;
  if (!dist.empty()) {
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    if (*mid > 0.0) med = *mid;
  }
  return {0.5 * med, med, 2.0 * med, 4.0 * med};
}

Tensor coral_distance(const Tensor& z_src, const Tensor& z_tgt) {
  require_matrix(z_src, "coral_distance");
  require_matrix(z_tgt, "coral_distance");
  const std::size_t d = z_src.dim(1);
  if (z_tgt.dim(1) != d) {
    throw ShapeError("coral_distance: feature dims differ " + to_string(z_src.shape()) + " vs " + to_string(z_tgt.shape()));
  }
  if (z_src.dim(0) < 2 || z_tgt.dim(0) < 2) throw ValidationError("coral_distance: need at least 2 rows per side");
  const Tensor diff = covariance(z_src) - covariance(z_tgt);
  return scale(sum(diff * diff), 1.0 / (4.0 * static_cast<double>(d * d)));
}

// ---------------------------------------------------------------------------
// Combined objective

Tensor mixed_soft_labels(const BatchBundle& bundle, const Tensor& tgt_logits, std::size_t k) {
  const std::size_t ns = bundle.source_y.size();
  const std::size_t nt = tgt_logits.dim(0);
  const std::size_t rows = bundle.mix_first.size();
  // One-hot on source rows, detached predictions on target rows.
  std::vector<double> soft((ns + nt) * k, 0.0);
  for (std::size_t r = 0; r < ns; ++r) soft[r * k + static_cast<std::size_t>(bundle.source_y[r])] = 1.0;
  const Tensor tgt_prob = softmax(tgt_logits.detach());
  std::ranges::copy(tgt_prob.data(), soft.begin() + static_cast<std::ptrdiff_t>(ns * k));
  std::vector<double> targets(rows * k);
  for (std::size_t i = 0; i < rows; ++i) {
    const double b = bundle.mix_beta[i];
    for (std::size_t c = 0; c < k; ++c) {
      targets[i * k + c] = b * soft.at(bundle.mix_first[i] * k + c) + (1.0 - b) * soft.at(bundle.mix_second[i] * k + c);
    }
  }
  return Tensor(Shape{rows, k}, std::move(targets));
}

std::pair<Tensor, LossReport> total_objective(const BatchBundle& bundle, const ModelParams& params,
                                              const LossConfig& cfg, MarginalTracker& tracker) {
  const std::size_t k = params.class_count();
  cfg.validate(k);
  require_matrix(bundle.source_x, "total_objective");
  const std::size_t ns = bundle.source_x.dim(0);
  if (bundle.source_y.size() != ns) throw ShapeError("total_objective: one source label per row required");

  const bool use_sup = cfg.supervised_weight > 0.0;
  const bool use_mim = cfg.lambda_M > 0.0;
  const bool use_cpbm = cfg.lambda_C > 0.0;
  const bool use_mix = cfg.lambda_U > 0.0;
  const bool use_task = cfg.lambda_S > 0.0;
  const bool need_target = use_cpbm || use_mix || (use_mim && cfg.mim_source == MarginalSource::target);

  Tensor src_logits;
  Tensor tgt_logits;
  Tensor joint_logits;
  std::size_t nt = 0;
  if (need_target) {
    require_matrix(bundle.target_x, "total_objective");
    nt = bundle.target_x.dim(0);
    const Tensor parts[] = {bundle.source_x, bundle.target_x};
    joint_logits = forward(params, concat_rows(parts));
    src_logits = slice_rows(joint_logits, 0, ns);
    tgt_logits = slice_rows(joint_logits, ns, ns + nt);
  } else {
    src_logits = forward(params, bundle.source_x);
  }

  LossReport report;
  for (std::size_t r = 0; r < ns; ++r) {
    if (argmax_row(src_logits.data().subspan(r * k, k)) == static_cast<std::size_t>(bundle.source_y[r])) ++report.source_correct;
  }

  Tensor total = Tensor::scalar(0.0);
  auto accumulate = [&total](const Tensor& term, double weight) { total = total + scale(term, weight); };

  if (use_sup) {
    const Tensor ce = cross_entropy(src_logits, bundle.source_y);
    report.supervised = ce.item();
    accumulate(ce, cfg.supervised_weight);
  }
  if (use_mim) {
    const Tensor& logits = cfg.mim_source == MarginalSource::target ? tgt_logits : src_logits;
    MimTerms m = mim_terms(logits, tracker, cfg.ceiling_for(k));
    report.mim = m.loss.item();
    report.marginal_entropy = m.marginal_entropy;
    report.mim_diversity_active = m.diversity_active;
    accumulate(m.loss, cfg.lambda_M);
  } else {
    report.marginal_entropy = tracker.entropy();
  }
  if (use_cpbm) {
    if (!bundle.augmented_x) throw ValidationError("total_objective: contrastive term needs augmented inputs");
    if (bundle.pair_first.size() != bundle.pair_second.size()) throw ShapeError("total_objective: unpaired indices");
    const Tensor aug_logits = forward(params, *bundle.augmented_x);
    const std::size_t pairs = bundle.pair_first.size();
    auto mask = std::make_unique<bool[]>(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
      mask[i] = bundle.source_y.at(bundle.pair_first[i]) != bundle.source_y.at(bundle.pair_second[i]);
    }
    const Tensor c = cpbm_loss(joint_logits, aug_logits, index_rows(src_logits, bundle.pair_first),
                               index_rows(src_logits, bundle.pair_second), std::span<const bool>(mask.get(), pairs),
                               cfg.lambda_con,
                               cfg.disagreement_margin);
    report.cpbm = c.item();
    accumulate(c, cfg.lambda_C);
  }
  if (use_mix) {
    if (!bundle.mixed_x) throw ValidationError("total_objective: mix-up term needs mixed inputs");
    const std::size_t rows = bundle.mix_first.size();
    if (bundle.mix_second.size() != rows || bundle.mix_beta.size() != rows || bundle.mixed_x->dim(0) != rows) {
      throw ShapeError("total_objective: mix-up bookkeeping does not match mixed inputs");
    }
    Tensor targets = bundle.mix_targets ? *bundle.mix_targets : mixed_soft_labels(bundle, tgt_logits, k);
    const Tensor u = mupbm_loss(forward(params, *bundle.mixed_x), targets,
                                cfg.mixup_direction, cfg.mixup_smoothing);
    report.mupbm = u.item();
    accumulate(u, cfg.lambda_U);
  }
  if (use_task) {
    if (bundle.task_inputs.empty()) throw ValidationError("total_objective: task term needs transformed inputs");
    std::map<Head, Tensor> logits;
    std::map<Head, std::vector<int>> labels;
    for (const auto& [head, input] : bundle.task_inputs) {
      logits.emplace(head, forward(params, input.first, head));
      labels.emplace(head, input.second);
    }
    const Tensor s = tpbm_loss(logits, labels);
    report.tpbm = s.item();
    accumulate(s, cfg.lambda_S);
  }
  report.total = total.item();
  return {total, report};
}

}  // namespace instapbm
