// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "instapbm/data_synth.hpp"
#include "instapbm/losses.hpp"
#include "instapbm/network.hpp"
#include "instapbm/rds_bench.hpp"
#include "instapbm/transforms.hpp"

namespace instapbm {

enum class Method { source_only, dm_mmd, dm_coral, instapbm };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

/// Which matching terms an instapbm run switches on.
struct Components {
  bool mim = false;
  bool cpbm_ra = false;  // random augmentation
  bool cpbm_ni = false;  // noise injection
  bool mupbm = false;
  bool tpbm_rot = false;
  bool tpbm_flip = false;
  bool tpbm_qdr = false;  // patch location

  static Components full();
  bool cpbm() const { return cpbm_ra || cpbm_ni; }
  bool tpbm() const { return tpbm_rot || tpbm_flip || tpbm_qdr; }
  bool any() const { return mim || cpbm() || mupbm || tpbm(); }
  std::vector<TransformingTask> tasks() const;
  bool operator==(const Components&) const = default;
};

/// Ablation rows in table order: Baseline, each single component, full.
const std::vector<std::string>& ablation_rows();

struct TrainConfig {
  Method method = Method::instapbm;
  Components components = Components::full();
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  std::vector<std::size_t> hidden = {128, 64};  // last entry is the latent width
  OptimizerSettings optimizer;
  LossConfig loss;
  double dm_weight = 1.0;
  std::size_t dm_ramp_steps = 10;  // linear warm-up of dm_weight, DM methods only
  KernelKind dm_kernel = KernelKind::rbf_sum;
  double point_noise_sigma = 0.1;  // CPBM perturbation for non-image inputs
  std::uint64_t model_seed = 17;
  std::uint64_t data_seed = 17;
  double holdout_fraction = 0.2;  // target rows reserved for evaluation
  std::optional<std::vector<double>> initial_marginal;  // tracker warm start
  bool evaluate_every_epoch = true;

  void validate() const;
  /// Loss weights with inactive components zeroed.
  LossConfig effective_loss() const;
  PreservingConfig preserving_config() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Config of one ablation row applied to `base`.
TrainConfig config_for_row(const TrainConfig& base, const std::string& row);

struct EvalResult {
  std::size_t evaluated = 0;  // labelled rows only
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> class_counts;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> prediction_marginal;          // mean softmax over all rows
};

/// Argmax accuracy over rows with label >= 0. Throws when none are labelled.
EvalResult evaluate(const ModelParams& params, const DomainDataset& ds);

struct EpochRecord {
  std::size_t epoch = 0;
  double supervised = 0.0;
  double mim = 0.0;
  double cpbm = 0.0;
  double mupbm = 0.0;
  double tpbm = 0.0;
  double dm_distance = 0.0;
  double total = 0.0;
  double source_train_accuracy = 0.0;
  double target_accuracy = 0.0;
  double target_transductive_accuracy = 0.0;
  std::vector<double> per_class_target_accuracy;
  std::vector<double> target_marginal;
  double marginal_entropy = 0.0;
  double diversity_active_fraction = 0.0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct Metrics {
  std::vector<EpochRecord> epochs;
  EvalResult source;
  EvalResult target;               // held-out split
  EvalResult target_transductive;  // adaptation split
};

/// Everything needed to recompute one optimisation step's objective.
struct StepTrace {
  std::size_t epoch = 0;
  std::size_t step = 0;
  const BatchBundle* bundle = nullptr;
  const ModelParams* params_before = nullptr;
  const MarginalTracker* tracker_before = nullptr;
  LossReport report;
};

using StepObserver = std::function<void(const StepTrace&)>;

struct TrainResult {
  ModelParams params;
  Metrics metrics;
  std::size_t steps = 0;
  std::vector<std::size_t> holdout_rows;  // indices into the target dataset
};

/// Deterministic split of target rows into (adaptation, held-out).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_target(std::size_t n, double holdout_fraction,
                                                                             std::uint64_t seed);

TrainResult train(const TrainConfig& cfg, const DomainDataset& src, const DomainDataset& tgt,
                  const StepObserver& observer = {});

struct AblationCell {
  std::string row;
  std::string benchmark;
  std::uint64_t seed = 0;
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
};

struct AblationTable {
  std::vector<std::string> rows;
  std::vector<std::string> benchmarks;
  std::vector<AblationCell> cells;

  // Mean target accuracy of a row on a benchmark (or across all benchmarks).
  double mean(const std::string& row, const std::optional<std::string>& benchmark = std::nullopt) const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

struct NamedBenchmark {
  std::string name;
  DomainDataset source;
  DomainDataset target;
};

AblationTable ablation_suite(const TrainConfig& base, const std::vector<NamedBenchmark>& benchmarks,
                             const std::vector<std::string>& rows, const std::vector<std::uint64_t>& seeds);

/// Biased MMD^2 with median-heuristic RBF bandwidths, computed directly on at
/// most `max_rows` rows per side.
double feature_mmd(const ModelParams& params, const DomainDataset& src, const DomainDataset& tgt,
                   std::size_t max_rows = 2000);

struct ProbePoint {
  double dm_weight = 0.0;
  std::uint64_t seed = 0;
  double mmd = 0.0;
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
};

struct ProbeResult {
  double ceiling = 1.0;  // 1 - TV(source priors, target priors)
  std::vector<ProbePoint> curve;
  std::vector<ProbePoint> instapbm;  // one point per seed, dm_weight 0
  nlohmann::json to_json() const;
};

struct ProbeSettings {
  BlobPairSpec blobs;
  TrainConfig dm_config;
  TrainConfig instapbm_config;
  std::vector<double> dm_weights = {0.0, 1.0, 10.0, 100.0};
  std::vector<std::uint64_t> seeds = {17, 29, 41};

  static ProbeSettings defaults();
};

ProbeResult lds_failure_probe(const ProbeSettings& settings);
ProbeResult lds_failure_probe(std::span<const double> priors_src, std::span<const double> priors_tgt,
                              std::span<const double> dm_weight_schedule);

}  // namespace instapbm
