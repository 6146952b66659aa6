// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "instapbm/network.hpp"
#include "instapbm/tensor.hpp"

namespace instapbm {

/// Grayscale images in [0, 1], stored as a [batch, H, W] tensor.
struct ImageBatch {
  Tensor data;

  ImageBatch() : data(Shape{0, 0, 0}) {}
  explicit ImageBatch(Tensor images);
  ImageBatch(std::size_t batch, std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t batch() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  std::size_t pixels() const { return height() * width(); }

  std::span<const double> image(std::size_t n) const { return data.data().subspan(n * pixels(), pixels()); }
  std::span<double> image(std::size_t n) { return data.mutable_data().subspan(n * pixels(), pixels()); }

  // [batch, H*W] copy suitable as network input.
  Tensor flatten() const;
  ImageBatch select(std::span<const std::size_t> rows) const;
};

// ---------------------------------------------------------------------------
// Semantic-preserving operations

enum class PreservingKind { shift, small_rotate, cutout, brightness, contrast, gaussian_noise };

/// Kinds and magnitude ranges for random augmentation and noise injection.
struct PreservingConfig {
  std::vector<PreservingKind> kinds = {PreservingKind::shift,      PreservingKind::small_rotate,
                                       PreservingKind::cutout,     PreservingKind::brightness,
                                       PreservingKind::contrast,   PreservingKind::gaussian_noise};
  int max_shift_px = 2;           // <= 2
  double max_rotation_deg = 15.0;  // <= 15
  std::size_t cutout_size = 4;
  double max_brightness = 0.15;
  double max_contrast = 0.3;   // factor drawn from [1 - c, 1 + c]
  double noise_sigma = 0.1;    // <= 0.15
  int max_ops = 2;             // each sample receives 1..max_ops kinds

  static PreservingConfig random_augmentation();
  static PreservingConfig noise_injection();
  static PreservingConfig all();
  // Every magnitude zero: operations become the identity.
  static PreservingConfig zero_magnitude();

  void validate() const;
};

/// Applies a random composition of 1-2 preserving kinds to each sample and
/// clamps to [0, 1]. Sample n draws from a stream keyed by (seed, n).
ImageBatch apply_semantic_preserving(const ImageBatch& x, std::uint64_t seed,
                                     const PreservingConfig& config = PreservingConfig::all());

/// Gaussian noise on arbitrary [N, D] rows, no clamping. Used for point data
/// where the image kinds do not apply.
Tensor perturb_rows(const Tensor& x, double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Interpolation

/// (beta*x + (1-beta)*x2, beta*y + (1-beta)*y2).
std::pair<ImageBatch, Tensor> mixup_interpolate(const ImageBatch& x, const ImageBatch& x2, const Tensor& y,
                                                const Tensor& y2, double beta);

/// Row-wise interpolation with one coefficient per row: out[i] = b[i]*a[i] + (1-b[i])*c[i].
Tensor mix_rows(const Tensor& a, const Tensor& c, std::span<const double> betas);

// ---------------------------------------------------------------------------
// Semantic-transforming operations

enum class TransformingTask { rotate90, vflip, patch_location };

Head head_for(TransformingTask task);
std::size_t task_classes(TransformingTask task);

/// Draws a label per sample (uniform, keyed by (seed, n)) and applies the
/// corresponding transform: k clockwise quarter turns, b vertical flips, or
/// quadrant q moved to the origin on a zeroed canvas.
std::pair<ImageBatch, std::vector<int>> apply_semantic_transforming(const ImageBatch& x, TransformingTask task,
                                                                     std::uint64_t seed);

/// Same transform with caller-chosen labels.
ImageBatch transform_with_labels(const ImageBatch& x, TransformingTask task, std::span<const int> labels);

}  // namespace instapbm
