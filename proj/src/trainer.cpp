// SPDX-License-Identifier: Apache-2.0
#include "instapbm/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "instapbm/errors.hpp"
#include "instapbm/rng.hpp"

namespace instapbm {

namespace {

constexpr std::size_t kEvalChunk = 512;

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
}

double fraction(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

void check_finite(double value, const char* term, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite " << term << " loss (" << value << ") at epoch " << epoch << ", step " << step;
    throw NumericalError(msg.str());
  }
}

std::vector<std::size_t> cycle_take(const std::vector<std::size_t>& perm, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = perm[(begin + i) % perm.size()];
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

Tensor as_images(const Tensor& rows, std::size_t height, std::size_t width) {
  return reshape(rows, Shape{rows.dim(0), height, width});
}

void check_pair(const DomainDataset& src, const DomainDataset& tgt) {
  src.validate();
  tgt.validate();
  if (src.class_count != tgt.class_count) {
    throw ValidationError("train: source has " + std::to_string(src.class_count) + " classes, target " +
                          std::to_string(tgt.class_count));
  }
  if (src.is_image() != tgt.is_image() || src.height() != tgt.height() || src.width() != tgt.width() ||
      src.feature_dim() != tgt.feature_dim()) {
    throw ValidationError("train: source and target input geometry differ (" + to_string(src.inputs.shape()) + " vs " +
                          to_string(tgt.inputs.shape()) + ")");
  }
  for (int y : src.labels)
    if (y < 0) throw ValidationError("train: source rows must all be labelled");
}

nlohmann::json optimizer_json(const OptimizerSettings& o) {
  return {{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd_momentum"},
          {"learning_rate", o.learning_rate},
          {"momentum", o.momentum},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon},
          {"weight_decay", o.weight_decay}};
}

OptimizerSettings optimizer_from_json(const nlohmann::json& j) {
  OptimizerSettings o;
  const std::string kind = j.value("kind", std::string("adam"));
  if (kind == "adam") o.kind = OptimizerKind::adam;
  else if (kind == "sgd_momentum" || kind == "sgd") o.kind = OptimizerKind::sgd_momentum;
  else throw ValidationError("unknown optimizer '" + kind + "'");
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.momentum = j.value("momentum", o.momentum);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  return o;
}

nlohmann::json loss_json(const LossConfig& l) {
  nlohmann::json j = {{"lambda_M", l.lambda_M},
                      {"lambda_C", l.lambda_C},
                      {"lambda_U", l.lambda_U},
                      {"lambda_S", l.lambda_S},
                      {"lambda_con", l.lambda_con},
                      {"supervised_weight", l.supervised_weight},
                      {"marginal_momentum", l.marginal_momentum},
                      {"mixup_alpha", l.mixup_alpha},
                      {"disagreement_margin", l.disagreement_margin},
                      {"mixup_smoothing", l.mixup_smoothing},
                      {"mim_source", l.mim_source == MarginalSource::target ? "target" : "source"},
                      {"mixup_direction", l.mixup_direction == MixupDirection::target_to_prediction
                                              ? "target_to_prediction"
                                              : "prediction_to_target"}};
  j["entropy_ceiling"] = l.entropy_ceiling ? nlohmann::json(*l.entropy_ceiling) : nlohmann::json("default");
  return j;
}

LossConfig loss_from_json(const nlohmann::json& j) {
  LossConfig l;
  l.lambda_M = j.value("lambda_M", l.lambda_M);
  l.lambda_C = j.value("lambda_C", l.lambda_C);
  l.lambda_U = j.value("lambda_U", l.lambda_U);
  l.lambda_S = j.value("lambda_S", l.lambda_S);
  l.lambda_con = j.value("lambda_con", l.lambda_con);
  l.supervised_weight = j.value("supervised_weight", l.supervised_weight);
  l.marginal_momentum = j.value("marginal_momentum", l.marginal_momentum);
  l.mixup_alpha = j.value("mixup_alpha", l.mixup_alpha);
  l.disagreement_margin = j.value("disagreement_margin", l.disagreement_margin);
  l.mixup_smoothing = j.value("mixup_smoothing", l.mixup_smoothing);
  if (j.contains("entropy_ceiling") && j["entropy_ceiling"].is_number()) l.entropy_ceiling = j["entropy_ceiling"].get<double>();
  const std::string src = j.value("mim_source", std::string("target"));
  if (src != "target" && src != "source") throw ValidationError("unknown mim_source '" + src + "'");
  l.mim_source = src == "target" ? MarginalSource::target : MarginalSource::source;
  const std::string dir = j.value("mixup_direction", std::string("target_to_prediction"));
  if (dir != "target_to_prediction" && dir != "prediction_to_target") throw ValidationError("unknown mixup_direction '" + dir + "'");
  l.mixup_direction = dir == "target_to_prediction" ? MixupDirection::target_to_prediction : MixupDirection::prediction_to_target;
  return l;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::source_only: return "source_only";
    case Method::dm_mmd: return "dm_mmd";
    case Method::dm_coral: return "dm_coral";
    case Method::instapbm: return "instapbm";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::source_only, Method::dm_mmd, Method::dm_coral, Method::instapbm})
    if (to_string(m) == name) return m;
  throw ValidationError("unknown method '" + name + "'");
}

Components Components::full() { return {true, true, true, true, true, true, true}; }

std::vector<TransformingTask> Components::tasks() const {
  std::vector<TransformingTask> out;
  if (tpbm_rot) out.push_back(TransformingTask::rotate90);
  if (tpbm_flip) out.push_back(TransformingTask::vflip);
  if (tpbm_qdr) out.push_back(TransformingTask::patch_location);
  return out;
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = {"Baseline",  "+MIM",      "+CPBM_RA",  "+CPBM_NI",
                                                "+CPBM_ALL", "+MuPBM",    "+TPBM_ROT", "+TPBM_QDR",
                                                "+TPBM_FLIP", "+TPBM_ALL", "InstaPBM"};
  return rows;
}

TrainConfig config_for_row(const TrainConfig& base, const std::string& row) {
  TrainConfig c = base;
  c.method = Method::instapbm;
  c.components = Components{};
  if (row == "Baseline") c.method = Method::source_only;
  else if (row == "+MIM") c.components.mim = true;
  else if (row == "+CPBM_RA") c.components.cpbm_ra = true;
  else if (row == "+CPBM_NI") c.components.cpbm_ni = true;
  else if (row == "+CPBM_ALL") c.components.cpbm_ra = c.components.cpbm_ni = true;
  else if (row == "+MuPBM") c.components.mupbm = true;
  else if (row == "+TPBM_ROT") c.components.tpbm_rot = true;
  else if (row == "+TPBM_QDR") c.components.tpbm_qdr = true;
  else if (row == "+TPBM_FLIP") c.components.tpbm_flip = true;
  else if (row == "+TPBM_ALL") c.components.tpbm_rot = c.components.tpbm_flip = c.components.tpbm_qdr = true;
  else if (row == "InstaPBM") c.components = Components::full();
  else if (row == "dm_mmd") c.method = Method::dm_mmd;
  else if (row == "dm_coral") c.method = Method::dm_coral;
  else throw ValidationError("unknown ablation row '" + row + "'");
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ValidationError("train config: batch size must be >= 2");
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (hidden.empty()) throw ValidationError("train config: at least one hidden layer is required");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ValidationError("train config: holdout fraction must lie in [0, 1)");
  if (!(dm_weight >= 0.0) || !std::isfinite(dm_weight)) throw ValidationError("train config: dm_weight must be finite and >= 0");
  if (!(point_noise_sigma >= 0.0)) throw ValidationError("train config: point noise must be >= 0");
  optimizer.validate();
}

LossConfig TrainConfig::effective_loss() const {
  LossConfig l = loss;
  if (method != Method::instapbm) {
    l.lambda_M = l.lambda_C = l.lambda_U = l.lambda_S = 0.0;
    return l;
  }
  if (!components.mim) l.lambda_M = 0.0;
  if (!components.cpbm()) l.lambda_C = 0.0;
  if (!components.mupbm) l.lambda_U = 0.0;
  if (!components.tpbm()) l.lambda_S = 0.0;
  return l;
}

PreservingConfig TrainConfig::preserving_config() const {
  if (components.cpbm_ra && components.cpbm_ni) return PreservingConfig::all();
  if (components.cpbm_ni) return PreservingConfig::noise_injection();
  return PreservingConfig::random_augmentation();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", to_string(c.method)},
       {"components",
        {{"mim", c.components.mim},
         {"cpbm_ra", c.components.cpbm_ra},
         {"cpbm_ni", c.components.cpbm_ni},
         {"mupbm", c.components.mupbm},
         {"tpbm_rot", c.components.tpbm_rot},
         {"tpbm_flip", c.components.tpbm_flip},
         {"tpbm_qdr", c.components.tpbm_qdr}}},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"hidden", c.hidden},
       {"optimizer", optimizer_json(c.optimizer)},
       {"loss", loss_json(c.loss)},
       {"dm_weight", c.dm_weight},
       {"dm_ramp_steps", c.dm_ramp_steps},
       {"dm_kernel", c.dm_kernel == KernelKind::rbf_sum ? "rbf_sum" : "linear"},
       {"point_noise_sigma", c.point_noise_sigma},
       {"model_seed", c.model_seed},
       {"data_seed", c.data_seed},
       {"holdout_fraction", c.holdout_fraction},
       {"evaluate_every_epoch", c.evaluate_every_epoch}};
  j["initial_marginal"] = c.initial_marginal ? nlohmann::json(*c.initial_marginal) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.method = method_from_string(j.value("method", to_string(c.method)));
  if (j.contains("row")) c = config_for_row(c, j["row"].get<std::string>());
  if (j.contains("components")) {
    const auto& k = j["components"];
    c.components.mim = k.value("mim", false);
    c.components.cpbm_ra = k.value("cpbm_ra", false);
    c.components.cpbm_ni = k.value("cpbm_ni", false);
    c.components.mupbm = k.value("mupbm", false);
    c.components.tpbm_rot = k.value("tpbm_rot", false);
    c.components.tpbm_flip = k.value("tpbm_flip", false);
    c.components.tpbm_qdr = k.value("tpbm_qdr", false);
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j["optimizer"]);
  if (j.contains("loss")) c.loss = loss_from_json(j["loss"]);
  c.dm_weight = j.value("dm_weight", c.dm_weight);
  c.dm_ramp_steps = j.value("dm_ramp_steps", c.dm_ramp_steps);
  const std::string kernel = j.value("dm_kernel", std::string("rbf_sum"));
  if (kernel != "rbf_sum" && kernel != "linear") throw ValidationError("unknown dm_kernel '" + kernel + "'");
  c.dm_kernel = kernel == "linear" ? KernelKind::linear : KernelKind::rbf_sum;
  c.point_noise_sigma = j.value("point_noise_sigma", c.point_noise_sigma);
  c.model_seed = j.value("model_seed", c.model_seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.evaluate_every_epoch = j.value("evaluate_every_epoch", c.evaluate_every_epoch);
  if (j.contains("initial_marginal") && j["initial_marginal"].is_array())
    c.initial_marginal = j["initial_marginal"].get<std::vector<double>>();
  c.validate();
}

EvalResult evaluate(const ModelParams& params, const DomainDataset& ds) {
  const std::size_t k = params.class_count();
  if (ds.class_count != k) {
    throw ValidationError("evaluate: model has " + std::to_string(k) + " classes, dataset " + std::to_string(ds.class_count));
  }
  EvalResult r;
  r.class_counts.assign(k, 0);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.prediction_marginal.assign(k, 0.0);
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), begin + kEvalChunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor prob = softmax(forward(params, ds.rows(idx)).detach());
    const auto p = prob.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = p.subspan(i * k, k);
      for (std::size_t c = 0; c < k; ++c) r.prediction_marginal[c] += row[c];
      const int y = ds.labels[begin + i];
      if (y < 0) continue;
      const std::size_t pred = argmax(row);
      ++r.class_counts[static_cast<std::size_t>(y)];
      ++r.confusion[static_cast<std::size_t>(y)][pred];
      ++r.evaluated;
      if (pred == static_cast<std::size_t>(y)) ++hits;
    }
  }
  if (r.evaluated == 0) throw ValidationError("evaluate: dataset has no labelled rows");
  for (auto& m : r.prediction_marginal) m /= static_cast<double>(ds.size());
  r.accuracy = fraction(hits, r.evaluated);
  r.per_class_accuracy.resize(k);
  for (std::size_t c = 0; c < k; ++c) r.per_class_accuracy[c] = fraction(r.confusion[c][c], r.class_counts[c]);
  return r;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"loss",
        {{"supervised", r.supervised},
         {"mim", r.mim},
         {"cpbm", r.cpbm},
         {"mupbm", r.mupbm},
         {"tpbm", r.tpbm},
         {"dm", r.dm_distance},
         {"total", r.total}}},
       {"source_train_accuracy", r.source_train_accuracy},
       {"target_accuracy", r.target_accuracy},
       {"target_transductive_accuracy", r.target_transductive_accuracy},
       {"per_class_target_accuracy", r.per_class_target_accuracy},
       {"target_marginal", r.target_marginal},
       {"marginal_entropy", r.marginal_entropy},
       {"diversity_active_fraction", r.diversity_active_fraction}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_target(std::size_t n, double holdout_fraction,
                                                                             std::uint64_t seed) {
  auto perm = permutation(n, derive_seed({seed, 0x5911ULL}));
  const auto held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  std::vector<std::size_t> hold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> adapt(perm.begin() + static_cast<std::ptrdiff_t>(held), perm.end());
  std::ranges::sort(hold);
  std::ranges::sort(adapt);
  return {adapt, hold};
}

TrainResult train(const TrainConfig& cfg, const DomainDataset& src, const DomainDataset& tgt, const StepObserver& observer) {
  cfg.validate();
  check_pair(src, tgt);
  const std::size_t k = src.class_count;
  const LossConfig loss = cfg.effective_loss();
  loss.validate(k);
  const bool images = src.is_image();
  const auto tasks = cfg.method == Method::instapbm ? cfg.components.tasks() : std::vector<TransformingTask>{};
  if (!tasks.empty() && !images) throw ValidationError("train: pretext tasks need image inputs");

  std::vector<std::size_t> sizes = {src.feature_dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(k);
  std::vector<Head> heads;
  for (auto t : tasks) heads.push_back(head_for(t));
  TrainResult result;
  result.params = init_params(sizes, cfg.model_seed, heads);
  ModelParams& params = result.params;
  OptimState opt(cfg.optimizer);
  MarginalTracker tracker(k, loss.marginal_momentum);
  if (cfg.initial_marginal) tracker.reset(*cfg.initial_marginal);

  auto [adapt_rows, hold_rows] = split_target(tgt.size(), cfg.holdout_fraction, cfg.data_seed);
  if (adapt_rows.empty()) throw ValidationError("train: target adaptation split is empty");
  result.holdout_rows = hold_rows;
  const DomainDataset tgt_adapt = tgt.subset(adapt_rows);
  const DomainDataset tgt_hold = tgt.subset(hold_rows);
  const auto has_labels = [](const DomainDataset& d) { return std::ranges::any_of(d.labels, [](int y) { return y >= 0; }); };
  const bool eval_hold = has_labels(tgt_hold);
  const bool eval_adapt = has_labels(tgt_adapt);

  const std::size_t b = cfg.batch_size;
  const std::size_t steps_per_epoch =
      std::max((src.size() + b - 1) / b, (tgt_adapt.size() + b - 1) / b);
  const PreservingConfig preserving = cfg.preserving_config();
  const bool is_dm = cfg.method == Method::dm_mmd || cfg.method == Method::dm_coral;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto src_perm = permutation(src.size(), derive_seed({cfg.data_seed, epoch, 0x5ULL}));
    const auto tgt_perm = permutation(tgt_adapt.size(), derive_seed({cfg.data_seed, epoch, 0x7ULL}));
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t correct = 0;
    std::size_t seen = 0;
    std::size_t active = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::uint64_t step_seed = derive_seed({cfg.data_seed, epoch, s});
      const auto si = cycle_take(src_perm, s * b, b);
      const auto ti = cycle_take(tgt_perm, s * b, b);
      BatchBundle bundle;
      bundle.source_x = src.rows(si);
      for (auto i : si) bundle.source_y.push_back(src.labels[i]);
      bundle.target_x = tgt_adapt.rows(ti);

      Tensor joint;
      if (loss.lambda_C > 0.0 || loss.lambda_U > 0.0 || loss.lambda_S > 0.0) {
        const Tensor parts[] = {bundle.source_x, bundle.target_x};
        joint = concat_rows(parts);
      }
      if (loss.lambda_C > 0.0) {
        const std::uint64_t seed = derive_seed({step_seed, 0xa06ULL});
        if (images) {
          const ImageBatch aug = apply_semantic_preserving(ImageBatch(as_images(joint, src.height(), src.width())), seed, preserving);
          bundle.augmented_x = aug.flatten();
        } else {
          bundle.augmented_x = perturb_rows(joint, cfg.point_noise_sigma, seed);
        }
        bundle.pair_first.resize(b);
        std::iota(bundle.pair_first.begin(), bundle.pair_first.end(), 0);
        bundle.pair_second = permutation(b, derive_seed({step_seed, 0xba1ULL}));
      }
      if (loss.lambda_U > 0.0) {
        const std::size_t rows = joint.dim(0);
        Rng rng(derive_seed({step_seed, 0x313ULL}));
        bundle.mix_first.resize(rows);
        std::iota(bundle.mix_first.begin(), bundle.mix_first.end(), 0);
        bundle.mix_second = permutation(rows, derive_seed({step_seed, 0x314ULL}));
        bundle.mix_beta.resize(rows);
        for (auto& beta : bundle.mix_beta) beta = sample_beta(rng, loss.mixup_alpha);
        bundle.mixed_x = mix_rows(joint, index_rows(joint, bundle.mix_second), bundle.mix_beta);
      }
      if (loss.lambda_S > 0.0) {
        const ImageBatch joint_images(as_images(joint, src.height(), src.width()));
        for (auto task : tasks) {
          auto [moved, labels] = apply_semantic_transforming(joint_images, task, derive_seed({step_seed, 0x7a5ULL}));
          bundle.task_inputs.emplace(head_for(task), std::make_pair(moved.flatten(), std::move(labels)));
        }
      }

      std::optional<ModelParams> params_before;
      std::optional<MarginalTracker> tracker_before;
      if (observer) {
        params_before = params.clone();
        tracker_before = tracker;
      }

      zero_grads(params);
      auto [objective, report] = total_objective(bundle, params, loss, tracker);
      double dm_value = 0.0;
      if (is_dm) {
        const Tensor zs = features(params, bundle.source_x);
        const Tensor zt = features(params, bundle.target_x);
        Tensor d;
        if (cfg.method == Method::dm_mmd) {
          const auto bw = median_bandwidths(zs, zt);
          d = mmd_distance(zs, zt, bw, cfg.dm_kernel);
        } else {
          d = coral_distance(zs, zt);
        }
        dm_value = d.item();
        check_finite(dm_value, "dm", epoch, s);
        const std::size_t global = epoch * steps_per_epoch + s;
        const double ramp = cfg.dm_ramp_steps == 0
                                ? 1.0
                                : std::min(1.0, static_cast<double>(global + 1) / static_cast<double>(cfg.dm_ramp_steps));
        if (cfg.dm_weight > 0.0) objective = objective + scale(d, cfg.dm_weight * ramp);
        report.total = objective.item();
      }
      check_finite(report.supervised, "supervised", epoch, s);
      check_finite(report.mim, "mim", epoch, s);
      check_finite(report.cpbm, "cpbm", epoch, s);
      check_finite(report.mupbm, "mupbm", epoch, s);
      check_finite(report.tpbm, "tpbm", epoch, s);
      check_finite(report.total, "total", epoch, s);

      if (observer) {
        StepTrace trace{epoch, s, &bundle, &*params_before, &*tracker_before, report};
        observer(trace);
      }

      backward(objective);
      step(params, opt);
      ++result.steps;

      rec.supervised += report.supervised;
      rec.mim += report.mim;
      rec.cpbm += report.cpbm;
      rec.mupbm += report.mupbm;
      rec.tpbm += report.tpbm;
      rec.dm_distance += dm_value;
      rec.total += report.total;
      correct += report.source_correct;
      seen += b;
      active += report.mim_diversity_active ? 1 : 0;
    }
    const double n = static_cast<double>(steps_per_epoch);
    rec.supervised /= n;
    rec.mim /= n;
    rec.cpbm /= n;
    rec.mupbm /= n;
    rec.tpbm /= n;
    rec.dm_distance /= n;
    rec.total /= n;
    rec.source_train_accuracy = fraction(correct, seen);
    rec.marginal_entropy = tracker.entropy();
    rec.diversity_active_fraction = static_cast<double>(active) / n;
    const bool last = epoch + 1 == cfg.epochs;
    if (cfg.evaluate_every_epoch || last) {
      if (eval_hold) {
        const EvalResult e = evaluate(params, tgt_hold);
        rec.target_accuracy = e.accuracy;
        rec.per_class_target_accuracy = e.per_class_accuracy;
        rec.target_marginal = e.prediction_marginal;
        if (last) result.metrics.target = e;
      }
      if (eval_adapt) {
        const EvalResult e = evaluate(params, tgt_adapt);
        rec.target_transductive_accuracy = e.accuracy;
        if (last) result.metrics.target_transductive = e;
      }
    }
    result.metrics.epochs.push_back(std::move(rec));
  }
  result.metrics.source = evaluate(params, src);
  return result;
}

double AblationTable::mean(const std::string& row, const std::optional<std::string>& benchmark) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (c.row != row || (benchmark && c.benchmark != *benchmark)) continue;
    total += c.target_accuracy;
    ++n;
  }
  if (n == 0) throw ValidationError("ablation table has no cells for row '" + row + "'");
  return total / static_cast<double>(n);
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json j = {{"rows", rows}, {"benchmarks", benchmarks}};
  nlohmann::json means = nlohmann::json::object();
  for (const auto& r : rows) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& b : benchmarks) m[b] = mean(r, b);
    m["average"] = mean(r);
    means[r] = m;
  }
  j["mean_target_accuracy"] = means;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : cells) {
    list.push_back({{"row", c.row},
                    {"benchmark", c.benchmark},
                    {"seed", c.seed},
                    {"target_accuracy", c.target_accuracy},
                    {"source_accuracy", c.source_accuracy}});
  }
  j["cells"] = list;
  return j;
}

std::string AblationTable::to_markdown() const {
  std::ostringstream out;
  out << "| Method |";
  for (const auto& b : benchmarks) out << ' ' << b << " |";
  out << " Avg |\n|---|";
  for (std::size_t i = 0; i <= benchmarks.size(); ++i) out << "---|";
  out << '\n';
  out.setf(std::ios::fixed);
  out.precision(1);
  for (const auto& r : rows) {
    out << "| " << r << " |";
    for (const auto& b : benchmarks) out << ' ' << 100.0 * mean(r, b) << " |";
    out << ' ' << 100.0 * mean(r) << " |\n";
  }
  return out.str();
}

AblationTable ablation_suite(const TrainConfig& base, const std::vector<NamedBenchmark>& benchmarks,
                             const std::vector<std::string>& rows, const std::vector<std::uint64_t>& seeds) {
  AblationTable table;
  table.rows = rows;
  for (const auto& b : benchmarks) table.benchmarks.push_back(b.name);
  struct Job {
    const NamedBenchmark* bench;
    TrainConfig cfg;
  };
  std::vector<Job> jobs;
  for (const auto& b : benchmarks) {
    for (const auto& row : rows) {
      for (auto seed : seeds) {
        TrainConfig cfg = config_for_row(base, row);
        cfg.model_seed = seed;
        cfg.data_seed = seed;
        cfg.evaluate_every_epoch = false;
        jobs.push_back({&b, cfg});
        table.cells.push_back({row, b.name, seed, 0.0, 0.0});
      }
    }
  }
  // Cells are independent; each worker owns its trainer and writes only its own cell.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const TrainResult r = train(jobs[i].cfg, jobs[i].bench->source, jobs[i].bench->target);
        table.cells[i].target_accuracy = r.metrics.target.accuracy;
        table.cells[i].source_accuracy = r.metrics.source.accuracy;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return table;
}

double feature_mmd(const ModelParams& params, const DomainDataset& src, const DomainDataset& tgt, std::size_t max_rows) {
  auto latent = [&](const DomainDataset& d) {
    std::vector<std::size_t> idx(std::min(d.size(), max_rows));
    std::iota(idx.begin(), idx.end(), 0);
    return features(params, d.rows(idx)).detach();
  };
  const Tensor zs = latent(src);
  const Tensor zt = latent(tgt);
  const auto bw = median_bandwidths(zs, zt);
  const std::size_t d = zs.dim(1);
  auto kernel_mean = [&](const Tensor& a, const Tensor& c) {
    const auto pa = a.data();
    const auto pc = c.data();
    const std::size_t ra = a.dim(0);
    const std::size_t rc = c.dim(0);
    double total = 0.0;
    for (std::size_t i = 0; i < ra; ++i) {
      for (std::size_t j = 0; j < rc; ++j) {
        double sq = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = pa[i * d + t] - pc[j * d + t];
          sq += diff * diff;
        }
        for (double s : bw) total += std::exp(-sq / (2.0 * s * s));
      }
    }
    return total / static_cast<double>(ra * rc);
  };
  return kernel_mean(zs, zs) + kernel_mean(zt, zt) - 2.0 * kernel_mean(zs, zt);
}

ProbeSettings ProbeSettings::defaults() {
  ProbeSettings s;
  s.blobs.samples = 2000;
  s.blobs.target_offset = {0.0, 2.0};
  s.dm_config.method = Method::dm_mmd;
  s.dm_config.components = Components{};
  s.dm_config.hidden = {32, 16};
  s.dm_config.epochs = 30;
  s.dm_config.batch_size = 128;
  s.dm_config.evaluate_every_epoch = false;
  s.instapbm_config = s.dm_config;
  s.instapbm_config.method = Method::instapbm;
  s.instapbm_config.components = Components{};
  s.instapbm_config.components.mim = true;
  s.instapbm_config.components.cpbm_ni = true;
  s.instapbm_config.components.mupbm = true;
  return s;
}

nlohmann::json ProbeResult::to_json() const {
  auto points = [](const std::vector<ProbePoint>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : v) {
      a.push_back({{"dm_weight", p.dm_weight},
                   {"seed", p.seed},
                   {"mmd", p.mmd},
                   {"source_accuracy", p.source_accuracy},
                   {"target_accuracy", p.target_accuracy}});
    }
    return a;
  };
  return {{"ceiling", ceiling}, {"dm_mmd", points(curve)}, {"instapbm", points(instapbm)}};
}

ProbeResult lds_failure_probe(const ProbeSettings& settings) {
  settings.blobs.validate();
  if (settings.blobs.classes != 2) throw ValidationError("lds_failure_probe: the probe is defined for K = 2");
  ProbeResult out;
  double tv = 0.0;
  for (std::size_t c = 0; c < settings.blobs.classes; ++c)
    tv += std::abs(settings.blobs.source_priors[c] - settings.blobs.target_priors[c]);
  out.ceiling = 1.0 - 0.5 * tv;
  for (auto seed : settings.seeds) {
    BlobPairSpec spec = settings.blobs;
    spec.seed = derive_seed({settings.blobs.seed, seed});
    const auto [src, tgt] = generate_blob_pair(spec);
    auto measure = [&](const TrainConfig& base, double weight) {
      TrainConfig cfg = base;
      cfg.dm_weight = weight;
      cfg.model_seed = seed;
      cfg.data_seed = seed;
      const TrainResult r = train(cfg, src, tgt);
      return ProbePoint{weight, seed, feature_mmd(r.params, src, tgt), r.metrics.source.accuracy, r.metrics.target.accuracy};
    };
    for (double w : settings.dm_weights) out.curve.push_back(measure(settings.dm_config, w));
    out.instapbm.push_back(measure(settings.instapbm_config, 0.0));
  }
  return out;
}

ProbeResult lds_failure_probe(std::span<const double> priors_src, std::span<const double> priors_tgt,
                              std::span<const double> dm_weight_schedule) {
  ProbeSettings s = ProbeSettings::defaults();
  s.blobs.source_priors.assign(priors_src.begin(), priors_src.end());
  s.blobs.target_priors.assign(priors_tgt.begin(), priors_tgt.end());
  s.dm_weights.assign(dm_weight_schedule.begin(), dm_weight_schedule.end());
  return lds_failure_probe(s);
}

}  // namespace instapbm
