// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "instapbm/tensor.hpp"
#include "instapbm/transforms.hpp"

namespace instapbm {

enum class DomainRole { source, target };

std::string to_string(DomainRole role);
DomainRole role_from_string(const std::string& name);

inline constexpr int kOutlierLabel = -1;

/// Labelled (or partly unlabelled) samples from one domain.
///
/// `inputs` is [N, H, W] for image datasets and [N, D] for point datasets.
/// Label -1 marks a sample with no valid class (target outliers).
struct DomainDataset {
  Tensor inputs;
  std::vector<int> labels;
  std::optional<std::vector<int>> sublabels;
  DomainRole role = DomainRole::source;
  std::size_t class_count = 0;
  nlohmann::json metadata;  // enough to regenerate the dataset

  std::size_t size() const { return labels.size(); }
  bool is_image() const { return inputs.rank() == 3; }
  std::size_t height() const { return is_image() ? inputs.dim(1) : 0; }
  std::size_t width() const { return is_image() ? inputs.dim(2) : 0; }
  std::size_t feature_dim() const;

  // Flattened [rows.size(), feature_dim] network input.
  Tensor rows(std::span<const std::size_t> idx) const;
  ImageBatch images(std::span<const std::size_t> idx) const;
  DomainDataset subset(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> class_counts() const;

  void validate() const;
};

bool identical(const DomainDataset& a, const DomainDataset& b);

/// Procedural seven-segment style glyphs on a small canvas.
struct GlyphDomainSpec {
  std::size_t classes = 4;
  std::size_t substyles = 2;
  std::size_t height = 16;
  std::size_t width = 16;
  double stroke_thickness = 1.2;  // px, [0.5, 4]
  double background = 0.0;        // [0, 0.6]
  bool invert = false;
  double noise = 0.0;   // pixel noise sigma, [0, 0.4]
  double jitter = 1.0;  // translation amplitude in px, [0, 4]
  std::size_t samples_per_class = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const GlyphDomainSpec& s);
void from_json(const nlohmann::json& j, GlyphDomainSpec& s);

DomainDataset generate_glyph_dataset(const GlyphDomainSpec& spec, DomainRole role);
std::pair<DomainDataset, DomainDataset> generate_glyph_pair(const GlyphDomainSpec& src_spec,
                                                             const GlyphDomainSpec& tgt_spec);

/// Gaussian clusters with per-domain label priors. Class-conditionals are
/// shared up to `target_offset`, which translates every target point; a zero
/// offset gives pure label shift.
struct BlobPairSpec {
  std::size_t classes = 2;
  std::vector<double> source_priors = {0.5, 0.5};
  std::vector<double> target_priors = {0.7, 0.3};
  std::vector<std::vector<double>> means = {{-2.0, 0.0}, {2.0, 0.0}};
  double spread = 0.5;
  std::size_t samples = 1000;  // per domain
  std::uint64_t seed = 1;
  std::vector<double> target_offset;  // empty = no offset

  void validate() const;
};

void to_json(nlohmann::json& j, const BlobPairSpec& s);
void from_json(const nlohmann::json& j, BlobPairSpec& s);

std::pair<DomainDataset, DomainDataset> generate_blob_pair(const BlobPairSpec& spec);

enum class OutlierStyle { blank, checker, inverted_random };

std::string to_string(OutlierStyle style);
OutlierStyle outlier_style_from_string(const std::string& name);

/// Images far from the glyph manifold: flat fields, unit checkerboards, bright
/// noise.
ImageBatch outlier_pool(OutlierStyle style, std::size_t n, std::uint64_t seed, std::size_t height = 16,
                        std::size_t width = 16);

/// Rebuilds a generated dataset from its metadata (generator outputs only;
/// benchmark outputs are handled by regenerate_dataset in rds_bench.hpp).
DomainDataset regenerate_generated(const nlohmann::json& metadata);

}  // namespace instapbm
