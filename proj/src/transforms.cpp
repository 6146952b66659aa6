// SPDX-License-Identifier: Apache-2.0
#include "instapbm/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "instapbm/errors.hpp"
#include "instapbm/rng.hpp"

namespace instapbm {

namespace {

double image_mean(std::span<const double> img) {
  return std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
}

// Nearest-neighbour resampling with clamp-to-edge addressing.
void shift(std::span<double> img, std::size_t h, std::size_t w, int dy, int dx) {
  if (dx == 0 && dy == 0) return;
  const std::vector<double> src(img.begin(), img.end());
  const int ih = static_cast<int>(h);
  const int iw = static_cast<int>(w);
  for (int r = 0; r < ih; ++r)
    for (int c = 0; c < iw; ++c) {
      const int sr = std::clamp(r - dy, 0, ih - 1);
      const int sc = std::clamp(c - dx, 0, iw - 1);
      img[static_cast<std::size_t>(r * iw + c)] = src[static_cast<std::size_t>(sr * iw + sc)];
    }
}

void small_rotate(std::span<double> img, std::size_t h, std::size_t w, double degrees) {
  if (degrees == 0.0) return;
  const std::vector<double> src(img.begin(), img.end());
  const double t = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(t);
  const double sn = std::sin(t);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const long ih = static_cast<long>(h);
  const long iw = static_cast<long>(w);
  for (long r = 0; r < ih; ++r)
    for (long c = 0; c < iw; ++c) {
      const double y = static_cast<double>(r) - cy;
      const double x = static_cast<double>(c) - cx;
      // inverse map of a rotation by t
      const long sr = std::clamp(std::lround(cs * y - sn * x + cy), 0L, ih - 1);
      const long sc = std::clamp(std::lround(sn * y + cs * x + cx), 0L, iw - 1);
      img[static_cast<std::size_t>(r * iw + c)] = src[static_cast<std::size_t>(sr * iw + sc)];
    }
}

void quarter_turns(std::span<double> img, std::size_t n, int k) {
  k = ((k % 4) + 4) % 4;
  for (int turn = 0; turn < k; ++turn) {
    const std::vector<double> src(img.begin(), img.end());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) img[r * n + c] = src[(n - 1 - c) * n + r];
  }
}

void vertical_flip(std::span<double> img, std::size_t h, std::size_t w) {
  for (std::size_t r = 0; r < h / 2; ++r)
    std::swap_ranges(img.begin() + static_cast<std::ptrdiff_t>(r * w),
                     img.begin() + static_cast<std::ptrdiff_t>((r + 1) * w),
                     img.begin() + static_cast<std::ptrdiff_t>((h - 1 - r) * w));
}

void patch_to_origin(std::span<double> img, std::size_t h, std::size_t w, int quadrant) {
  const std::size_t ph = h / 2;
  const std::size_t pw = w / 2;
  const std::size_t r0 = quadrant >= 2 ? ph : 0;
  const std::size_t c0 = (quadrant % 2) == 1 ? pw : 0;
  std::vector<double> out(h * w, 0.0);
  for (std::size_t r = 0; r < ph; ++r)
    for (std::size_t c = 0; c < pw; ++c) out[r * w + c] = img[(r0 + r) * w + (c0 + c)];
  std::copy(out.begin(), out.end(), img.begin());
}

void apply_kind(PreservingKind kind, std::span<double> img, std::size_t h, std::size_t w, const PreservingConfig& cfg,
                Rng& rng) {
  switch (kind) {
    case PreservingKind::shift: {
      if (cfg.max_shift_px == 0) return;
      std::uniform_int_distribution<int> d(-cfg.max_shift_px, cfg.max_shift_px);
      const int dy = d(rng);
      const int dx = d(rng);
      shift(img, h, w, dy, dx);
      return;
    }
    case PreservingKind::small_rotate: {
      if (cfg.max_rotation_deg == 0.0) return;
      std::uniform_real_distribution<double> d(-cfg.max_rotation_deg, cfg.max_rotation_deg);
      small_rotate(img, h, w, d(rng));
      return;
    }
    case PreservingKind::cutout: {
      const std::size_t size = std::min({cfg.cutout_size, h, w});
      if (size == 0) return;
      std::uniform_int_distribution<std::size_t> dr(0, h - size);
      std::uniform_int_distribution<std::size_t> dc(0, w - size);
      const std::size_t r0 = dr(rng);
      const std::size_t c0 = dc(rng);
      const double fill = image_mean(img);
      for (std::size_t r = r0; r < r0 + size; ++r)
        for (std::size_t c = c0; c < c0 + size; ++c) img[r * w + c] = fill;
      return;
    }
    case PreservingKind::brightness: {
      if (cfg.max_brightness == 0.0) return;
      std::uniform_real_distribution<double> d(-cfg.max_brightness, cfg.max_brightness);
      const double delta = d(rng);
      for (auto& v : img) v += delta;
      return;
    }
    case PreservingKind::contrast: {
      if (cfg.max_contrast == 0.0) return;
      std::uniform_real_distribution<double> d(1.0 - cfg.max_contrast, 1.0 + cfg.max_contrast);
      const double factor = d(rng);
      const double m = image_mean(img);
      for (auto& v : img) v = (v - m) * factor + m;
      return;
    }
    case PreservingKind::gaussian_noise: {
      if (cfg.noise_sigma == 0.0) return;
      std::normal_distribution<double> d(0.0, cfg.noise_sigma);
      for (auto& v : img) v += d(rng);
      return;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ImageBatch

ImageBatch::ImageBatch(Tensor images) : data(std::move(images)) {
  if (data.rank() != 3) throw ShapeError("ImageBatch: expected [batch, H, W], got " + to_string(data.shape()));
}

ImageBatch::ImageBatch(std::size_t batch, std::size_t height, std::size_t width, double fill)
    : data(Shape{batch, height, width}, fill) {}

Tensor ImageBatch::flatten() const {
  return Tensor(Shape{batch(), pixels()}, std::vector<double>(data.data().begin(), data.data().end()));
}

ImageBatch ImageBatch::select(std::span<const std::size_t> rows) const {
  ImageBatch out(rows.size(), height(), width());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= batch()) throw ShapeError("ImageBatch::select: row out of range");
    std::ranges::copy(image(rows[i]), out.image(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic preserving

PreservingConfig PreservingConfig::random_augmentation() {
  PreservingConfig c;
  c.kinds = {PreservingKind::shift, PreservingKind::small_rotate, PreservingKind::cutout, PreservingKind::brightness,
             PreservingKind::contrast};
  return c;
}

PreservingConfig PreservingConfig::noise_injection() {
  PreservingConfig c;
  c.kinds = {PreservingKind::gaussian_noise};
  return c;
}

PreservingConfig PreservingConfig::all() { return PreservingConfig{}; }

PreservingConfig PreservingConfig::zero_magnitude() {
  PreservingConfig c;
  c.max_shift_px = 0;
  c.max_rotation_deg = 0.0;
  c.cutout_size = 0;
  c.max_brightness = 0.0;
  c.max_contrast = 0.0;
  c.noise_sigma = 0.0;
  return c;
}

void PreservingConfig::validate() const {
  if (kinds.empty()) throw ValidationError("preserving config: no kinds selected");
  if (max_shift_px < 0 || max_shift_px > 2) throw ValidationError("preserving config: shift must lie in [0, 2] px");
  if (max_rotation_deg < 0.0 || max_rotation_deg > 15.0) throw ValidationError("preserving config: rotation must lie in [0, 15] degrees");
  if (noise_sigma < 0.0 || noise_sigma > 0.15) throw ValidationError("preserving config: noise sigma must lie in [0, 0.15]");
  if (max_brightness < 0.0 || max_brightness > 0.5) throw ValidationError("preserving config: brightness must lie in [0, 0.5]");
  if (max_contrast < 0.0 || max_contrast >= 1.0) throw ValidationError("preserving config: contrast must lie in [0, 1)");
  if (max_ops < 1) throw ValidationError("preserving config: max_ops must be >= 1");
}

ImageBatch apply_semantic_preserving(const ImageBatch& x, std::uint64_t seed, const PreservingConfig& config) {
  config.validate();
  ImageBatch out(x.data.detach());
  const std::size_t h = x.height();
  const std::size_t w = x.width();
  for (std::size_t n = 0; n < x.batch(); ++n) {
    Rng rng(derive_seed({seed, n}));
    std::vector<PreservingKind> pool = config.kinds;
    const int available = static_cast<int>(pool.size());
    const int upper = std::min(config.max_ops, available);
    const int count = upper <= 1 ? 1 : std::uniform_int_distribution<int>(1, upper)(rng);
    auto img = out.image(n);
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
      apply_kind(pool[static_cast<std::size_t>(i)], img, h, w, config, rng);
    }
    for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Tensor perturb_rows(const Tensor& x, double sigma, std::uint64_t seed) {
  if (x.rank() != 2) throw ShapeError("perturb_rows: expected [N, D], got " + to_string(x.shape()));
  Tensor out = x.detach();
  if (sigma == 0.0) return out;
  const std::size_t d = x.dim(1);
  auto v = out.mutable_data();
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    Rng rng(derive_seed({seed, n}));
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t j = 0; j < d; ++j) v[n * d + j] += noise(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interpolation

Tensor mix_rows(const Tensor& a, const Tensor& c, std::span<const double> betas) {
  if (a.shape() != c.shape()) throw ShapeError("mix_rows: shape mismatch " + to_string(a.shape()) + " vs " + to_string(c.shape()));
  if (a.rank() == 0 || betas.size() != a.dim(0)) throw ShapeError("mix_rows: need one coefficient per row");
  const std::size_t width = a.size() / a.dim(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < betas.size(); ++i) {
    const double b = betas[i];
    if (!(b >= 0.0 && b <= 1.0)) throw ValidationError("mixup: beta must lie in [0, 1], got " + std::to_string(b));
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t k = i * width + j;
      out[k] = b * a[k] + (1.0 - b) * c[k];
    }
  }
  return Tensor(a.shape(), std::move(out));
}

std::pair<ImageBatch, Tensor> mixup_interpolate(const ImageBatch& x, const ImageBatch& x2, const Tensor& y,
                                                const Tensor& y2, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("mixup: beta must lie in [0, 1], got " + std::to_string(beta));
  if (y.rank() != 2 || y.dim(0) != x.batch()) throw ShapeError("mixup: labels must be [batch, K]");
  const std::vector<double> betas(x.batch(), beta);
  return {ImageBatch(mix_rows(x.data, x2.data, betas)), mix_rows(y, y2, betas)};
}

// ---------------------------------------------------------------------------
// Semantic transforming

Head head_for(TransformingTask task) {
  switch (task) {
    case TransformingTask::rotate90: return Head::rotation;
    case TransformingTask::vflip: return Head::flip;
    case TransformingTask::patch_location: return Head::patch_location;
  }
  return Head::label;
}

std::size_t task_classes(TransformingTask task) { return pretext_classes(head_for(task)); }

ImageBatch transform_with_labels(const ImageBatch& x, TransformingTask task, std::span<const int> labels) {
  if (labels.size() != x.batch()) throw ShapeError("transform_with_labels: one label per sample required");
  const std::size_t h = x.height();
  const std::size_t w = x.width();
  if (task == TransformingTask::rotate90 && h != w) throw ShapeError("rotate90: image must be square");
  if (task == TransformingTask::patch_location && (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2)) {
    throw ValidationError("patch_location: image dimensions must be even, got " + std::to_string(h) + "x" +
                          std::to_string(w));
  }
  const int classes = static_cast<int>(task_classes(task));
  ImageBatch out(x.data.detach());
  for (std::size_t n = 0; n < x.batch(); ++n) {
    const int label = labels[n];
    if (label < 0 || label >= classes) throw ValidationError("transform_with_labels: label out of range");
    auto img = out.image(n);
    switch (task) {
      case TransformingTask::rotate90: quarter_turns(img, h, label); break;
      case TransformingTask::vflip:
        if (label == 1) vertical_flip(img, h, w);
        break;
      case TransformingTask::patch_location: patch_to_origin(img, h, w, label); break;
    }
  }
  return out;
}

std::pair<ImageBatch, std::vector<int>> apply_semantic_transforming(const ImageBatch& x, TransformingTask task,
                                                                     std::uint64_t seed) {
  const int classes = static_cast<int>(task_classes(task));
  std::vector<int> labels(x.batch());
  for (std::size_t n = 0; n < x.batch(); ++n) {
    Rng rng(derive_seed({seed, n, static_cast<std::uint64_t>(task)}));
    labels[n] = std::uniform_int_distribution<int>(0, classes - 1)(rng);
  }
  ImageBatch out = transform_with_labels(x, task, labels);
  return {std::move(out), std::move(labels)};
}

}  // namespace instapbm
