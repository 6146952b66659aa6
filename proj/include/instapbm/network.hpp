// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "instapbm/tensor.hpp"

namespace instapbm {

/// Output heads sharing the feature extractor. `label` is the K-way
/// classifier; the others are the self-supervised pretext heads.
enum class Head { label, rotation, flip, patch_location };

std::string to_string(Head head);
Head head_from_string(const std::string& name);
// Class count of a pretext head (rotation 4, flip 2, patch location 4).
std::size_t pretext_classes(Head head);

inline constexpr Head kPretextHeads[] = {Head::rotation, Head::flip, Head::patch_location};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

/// Parameters of f = h . g plus the auxiliary heads.
///
/// `phi` holds the feature extractor layers (ReLU after each), `psi` the
/// linear label head, `omega` one linear head per pretext task.
struct ModelParams {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., latent, K
  std::uint64_t seed = 0;
  std::vector<DenseLayer> phi;
  DenseLayer psi;
  std::map<Head, DenseLayer> omega;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t latent_dim() const { return layer_sizes[layer_sizes.size() - 2]; }
  std::size_t class_count() const { return layer_sizes.back(); }

  // Declaration order: phi, psi, omega (in Head order). Handles, not copies.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  ModelParams clone() const;
};

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
ModelParams init_params(std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                        std::span<const Head> pretext_heads = kPretextHeads);

Tensor features(const ModelParams& params, const Tensor& x);
Tensor head_logits(const ModelParams& params, const Tensor& z, Head head);
Tensor forward(const ModelParams& params, const Tensor& x, Head head = Head::label);

void zero_grads(ModelParams& params);

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.0;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;  // L2 coefficient added to the gradient

  void validate() const;
};

struct OptimState {
  OptimizerSettings settings;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t steps = 0;

  explicit OptimState(OptimizerSettings s = {});
};

/// Applies one update to every parameter. Gradients are left in place.
void step(ModelParams& params, OptimState& opt);

// Checkpoint: one line of JSON header, then the parameters as little-endian
// float64 in declaration order.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::size_t step_count);
ModelParams load_checkpoint(const std::filesystem::path& path, std::size_t* step_count = nullptr);

}  // namespace instapbm
