// SPDX-License-Identifier: Apache-2.0
#include "instapbm/data_synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>

#include "instapbm/errors.hpp"
#include "instapbm/rng.hpp"

namespace instapbm {

namespace {

// Stored values are rounded to float so that the on-disk f32 format
// round-trips exactly.
double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Segment {
  double u0, v0, u1, v1;  // glyph-box units, u right, v down
};

// Seven-segment layout: a top, b upper right, c lower right, d bottom,
// e lower left, f upper left, g middle.
constexpr std::array<Segment, 7> kSegments = {{
    {0, 0, 1, 0},      // a
    {1, 0, 1, 0.5},    // b
    {1, 0.5, 1, 1},    // c
    {0, 1, 1, 1},      // d
    {0, 0.5, 0, 1},    // e
    {0, 0, 0, 0.5},    // f
    {0, 0.5, 1, 0.5},  // g
}};

// Segment masks for digits 0-9 (bit i = segment i).
constexpr std::array<unsigned, 10> kDigitMasks = {
    0b0111111,  // 0 abcdef
    0b0000110,  // 1 bc
    0b1011011,  // 2 abdeg
    0b1001111,  // 3 abcdg
    0b1100110,  // 4 bcfg
    0b1101101,  // 5 acdfg
    0b1111101,  // 6 acdefg
    0b0000111,  // 7 abc
    0b1111111,  // 8
    0b1101111,  // 9 abcdfg
};

constexpr std::array<double, 4> kSubstyleShear = {0.0, 0.35, -0.3, 0.15};
constexpr std::array<double, 4> kSubstyleWidth = {1.0, 0.8, 1.15, 0.9};

std::vector<Segment> glyph_segments(std::size_t cls, std::size_t substyle) {
  std::vector<Segment> out;
  const unsigned mask = kDigitMasks[cls];
  for (std::size_t s = 0; s < kSegments.size(); ++s)
    if (mask & (1u << s)) out.push_back(kSegments[s]);
  if (substyle % 2 == 1) {
    // serif ticks on horizontal strokes
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Segment s = out[i];
      if (s.v0 != s.v1) continue;
      const double dir = s.v0 < 0.25 ? 1.0 : -1.0;
      out.push_back({s.u0, s.v0, s.u0, s.v0 + 0.18 * dir});
      out.push_back({s.u1, s.v1, s.u1, s.v1 + 0.18 * dir});
    }
  }
  return out;
}

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = x0 + t * dx - px;
  const double ey = y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

void render_glyph(std::span<double> img, const GlyphDomainSpec& spec, std::size_t cls, std::size_t substyle, Rng& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double w = static_cast<double>(spec.width);
  const double h = static_cast<double>(spec.height);
  const double jx = spec.jitter * unit(rng);
  const double jy = spec.jitter * unit(rng);
  const double zoom = 1.0 + 0.1 * unit(rng);
  const double thickness = spec.stroke_thickness * (1.0 + 0.15 * unit(rng));
  const double shear = kSubstyleShear[substyle % kSubstyleShear.size()];
  const double box_w = 0.38 * w * kSubstyleWidth[substyle % kSubstyleWidth.size()] * zoom;
  const double box_h = 0.62 * h * zoom;
  const double x0 = 0.5 * w - 0.5 * box_w + jx;
  const double y0 = 0.5 * h - 0.5 * box_h + jy;
  auto to_px = [&](double u, double v) {
    return std::pair{x0 + (u + shear * (0.5 - v)) * box_w, y0 + v * box_h};
  };
  const auto segments = glyph_segments(cls, substyle);
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      const double px = static_cast<double>(c) + 0.5;
      const double py = static_cast<double>(r) + 0.5;
      double fg = 0.0;
      for (const auto& s : segments) {
        const auto [ax, ay] = to_px(s.u0, s.v0);
        const auto [bx, by] = to_px(s.u1, s.v1);
        const double d = segment_distance(px, py, ax, ay, bx, by);
        fg = std::max(fg, std::clamp(0.5 * thickness + 0.5 - d, 0.0, 1.0));
      }
      img[r * spec.width + c] = spec.background + (1.0 - spec.background) * fg;
    }
  }
  std::normal_distribution<double> noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
  for (auto& v : img) {
    if (spec.invert) v = 1.0 - v;
    if (spec.noise > 0.0) v += noise(rng);
    v = to_storage(std::clamp(v, 0.0, 1.0));
  }
}

}  // namespace

std::string to_string(DomainRole role) { return role == DomainRole::source ? "source" : "target"; }

DomainRole role_from_string(const std::string& name) {
  if (name == "source") return DomainRole::source;
  if (name == "target") return DomainRole::target;
  throw ValidationError("unknown domain role '" + name + "'");
}

// ---------------------------------------------------------------------------
// DomainDataset

std::size_t DomainDataset::feature_dim() const {
  if (inputs.rank() == 3) return inputs.dim(1) * inputs.dim(2);
  if (inputs.rank() == 2) return inputs.dim(1);
  throw ShapeError("dataset inputs must be [N, H, W] or [N, D], got " + to_string(inputs.shape()));
}

Tensor DomainDataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t d = feature_dim();
  std::vector<double> out;
  out.reserve(idx.size() * d);
  const auto all = inputs.data();
  for (auto i : idx) {
    if (i >= size()) throw ShapeError("dataset row out of range");
    out.insert(out.end(), all.begin() + static_cast<std::ptrdiff_t>(i * d),
               all.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return Tensor(Shape{idx.size(), d}, std::move(out));
}

ImageBatch DomainDataset::images(std::span<const std::size_t> idx) const {
  if (!is_image()) throw ValidationError("dataset does not hold images");
  return ImageBatch(inputs).select(idx);
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> idx) const {
  DomainDataset out;
  Shape shape = inputs.shape();
  shape[0] = idx.size();
  const Tensor picked = rows(idx);
  out.inputs = Tensor(shape, std::vector<double>(picked.data().begin(), picked.data().end()));
  for (auto i : idx) out.labels.push_back(labels[i]);
  if (sublabels) {
    out.sublabels.emplace();
    for (auto i : idx) out.sublabels->push_back((*sublabels)[i]);
  }
  out.role = role;
  out.class_count = class_count;
  out.metadata = metadata;
  return out;
}

std::vector<std::size_t> DomainDataset::class_counts() const {
  std::vector<std::size_t> counts(class_count, 0);
  for (int y : labels)
    if (y >= 0) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

void DomainDataset::validate() const {
  if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
    throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for inputs of shape " +
                          to_string(inputs.shape()));
  }
  for (int y : labels)
    if (y < kOutlierLabel || (y >= 0 && static_cast<std::size_t>(y) >= class_count)) {
      throw ValidationError("dataset: label " + std::to_string(y) + " out of range");
    }
  if (sublabels && sublabels->size() != labels.size()) throw ValidationError("dataset: sublabel count mismatch");
}

bool identical(const DomainDataset& a, const DomainDataset& b) {
  if (a.inputs.shape() != b.inputs.shape()) return false;
  const auto da = a.inputs.data();
  const auto db = b.inputs.data();
  if (!std::equal(da.begin(), da.end(), db.begin(), [](double x, double y) {
        return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
      })) {
    return false;
  }
  return a.labels == b.labels && a.sublabels == b.sublabels && a.role == b.role && a.class_count == b.class_count &&
         a.metadata == b.metadata;
}

// ---------------------------------------------------------------------------
// Glyphs

void GlyphDomainSpec::validate() const {
  if (classes < 2 || classes > kDigitMasks.size()) throw ValidationError("glyph spec: classes must lie in [2, 10]");
  if (substyles < 1 || substyles > kSubstyleShear.size()) throw ValidationError("glyph spec: substyles must lie in [1, 4]");
  if (height < 8 || width < 8) throw ValidationError("glyph spec: canvas must be at least 8x8");
  if (stroke_thickness < 0.5 || stroke_thickness > 4.0) throw ValidationError("glyph spec: stroke thickness must lie in [0.5, 4]");
  if (background < 0.0 || background > 0.6) throw ValidationError("glyph spec: background must lie in [0, 0.6]");
  if (noise < 0.0 || noise > 0.4) throw ValidationError("glyph spec: noise must lie in [0, 0.4]");
  if (jitter < 0.0 || jitter > 4.0) throw ValidationError("glyph spec: jitter must lie in [0, 4]");
  if (samples_per_class < 1) throw ValidationError("glyph spec: samples_per_class must be >= 1");
}

void to_json(nlohmann::json& j, const GlyphDomainSpec& s) {
  j = {{"classes", s.classes},   {"substyles", s.substyles}, {"height", s.height},
       {"width", s.width},       {"stroke_thickness", s.stroke_thickness},
       {"background", s.background}, {"invert", s.invert},   {"noise", s.noise},
       {"jitter", s.jitter},     {"samples_per_class", s.samples_per_class}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, GlyphDomainSpec& s) {
  GlyphDomainSpec d;
  s.classes = j.value("classes", d.classes);
  s.substyles = j.value("substyles", d.substyles);
  s.height = j.value("height", d.height);
  s.width = j.value("width", d.width);
  s.stroke_thickness = j.value("stroke_thickness", d.stroke_thickness);
  s.background = j.value("background", d.background);
  s.invert = j.value("invert", d.invert);
  s.noise = j.value("noise", d.noise);
  s.jitter = j.value("jitter", d.jitter);
  s.samples_per_class = j.value("samples_per_class", d.samples_per_class);
  s.seed = j.value("seed", d.seed);
}

DomainDataset generate_glyph_dataset(const GlyphDomainSpec& spec, DomainRole role) {
  spec.validate();
  const std::size_t n = spec.classes * spec.samples_per_class;
  const std::size_t pixels = spec.height * spec.width;
  DomainDataset ds;
  ds.inputs = Tensor(Shape{n, spec.height, spec.width}, 0.0);
  ds.labels.reserve(n);
  ds.sublabels.emplace();
  ds.role = role;
  ds.class_count = spec.classes;
  auto data = ds.inputs.mutable_data();
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++row) {
      const std::size_t style = i % spec.substyles;
      Rng rng(derive_seed({spec.seed, c, i}));
      render_glyph(data.subspan(row * pixels, pixels), spec, c, style, rng);
      ds.labels.push_back(static_cast<int>(c));
      ds.sublabels->push_back(static_cast<int>(c * spec.substyles + style));
    }
  }
  ds.metadata = {{"generator", "glyph"}, {"spec", spec}, {"role", to_string(role)}};
  return ds;
}

std::pair<DomainDataset, DomainDataset> generate_glyph_pair(const GlyphDomainSpec& src_spec,
                                                             const GlyphDomainSpec& tgt_spec) {
  if (src_spec.classes != tgt_spec.classes) {
    throw ValidationError("glyph pair: class counts differ (" + std::to_string(src_spec.classes) + " vs " +
                          std::to_string(tgt_spec.classes) + ")");
  }
  if (src_spec.substyles != tgt_spec.substyles) throw ValidationError("glyph pair: sub-style counts differ");
  if (src_spec.height != tgt_spec.height || src_spec.width != tgt_spec.width) {
    throw ValidationError("glyph pair: canvas sizes differ");
  }
  return {generate_glyph_dataset(src_spec, DomainRole::source), generate_glyph_dataset(tgt_spec, DomainRole::target)};
}

// ---------------------------------------------------------------------------
// Blobs

void BlobPairSpec::validate() const {
  if (classes < 2) throw ValidationError("blob spec: need at least 2 classes");
  if (means.size() != classes) throw ValidationError("blob spec: need one mean per class");
  const std::size_t d = means.front().size();
  if (d == 0) throw ValidationError("blob spec: means must have at least one coordinate");
  for (const auto& m : means)
    if (m.size() != d) throw ValidationError("blob spec: means have different dimensions");
  if (!target_offset.empty() && target_offset.size() != d) throw ValidationError("blob spec: offset dimension mismatch");
  for (const auto* priors : {&source_priors, &target_priors}) {
    if (priors->size() != classes) throw ValidationError("blob spec: need one prior per class");
    double total = 0.0;
    for (double p : *priors) {
      if (p < 0.0) throw ValidationError("blob spec: priors must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("blob spec: priors must sum to 1");
  }
  if (spread < 0.0) throw ValidationError("blob spec: spread must be non-negative");
  if (samples < 1) throw ValidationError("blob spec: need at least one sample");
}

void to_json(nlohmann::json& j, const BlobPairSpec& s) {
  j = {{"classes", s.classes}, {"source_priors", s.source_priors}, {"target_priors", s.target_priors},
       {"means", s.means},     {"spread", s.spread},               {"samples", s.samples},
       {"seed", s.seed},       {"target_offset", s.target_offset}};
}

void from_json(const nlohmann::json& j, BlobPairSpec& s) {
  BlobPairSpec d;
  s.classes = j.value("classes", d.classes);
  s.source_priors = j.value("source_priors", d.source_priors);
  s.target_priors = j.value("target_priors", d.target_priors);
  s.means = j.value("means", d.means);
  s.spread = j.value("spread", d.spread);
  s.samples = j.value("samples", d.samples);
  s.seed = j.value("seed", d.seed);
  s.target_offset = j.value("target_offset", d.target_offset);
}

std::pair<DomainDataset, DomainDataset> generate_blob_pair(const BlobPairSpec& spec) {
  spec.validate();
  const std::size_t d = spec.means.front().size();
  auto make = [&](DomainRole role) {
    const bool is_target = role == DomainRole::target;
    const auto& priors = is_target ? spec.target_priors : spec.source_priors;
    Rng rng(derive_seed({spec.seed, is_target ? 1u : 0u}));
    std::discrete_distribution<int> pick(priors.begin(), priors.end());
    std::normal_distribution<double> noise(0.0, 1.0);
    DomainDataset ds;
    ds.inputs = Tensor(Shape{spec.samples, d}, 0.0);
    ds.role = role;
    ds.class_count = spec.classes;
    auto v = ds.inputs.mutable_data();
    for (std::size_t i = 0; i < spec.samples; ++i) {
      const int y = pick(rng);
      ds.labels.push_back(y);
      for (std::size_t c = 0; c < d; ++c) {
        double x = spec.means[static_cast<std::size_t>(y)][c] + spec.spread * noise(rng);
        if (is_target && !spec.target_offset.empty()) x += spec.target_offset[c];
        v[i * d + c] = to_storage(x);
      }
    }
    ds.metadata = {{"generator", "blob"}, {"spec", spec}, {"role", to_string(role)}};
    return ds;
  };
  return {make(DomainRole::source), make(DomainRole::target)};
}

// ---------------------------------------------------------------------------
// Outliers

std::string to_string(OutlierStyle style) {
  switch (style) {
    case OutlierStyle::blank: return "blank";
    case OutlierStyle::checker: return "checker";
    case OutlierStyle::inverted_random: return "inverted_random";
  }
  return "unknown";
}

OutlierStyle outlier_style_from_string(const std::string& name) {
  for (auto s : {OutlierStyle::blank, OutlierStyle::checker, OutlierStyle::inverted_random})
    if (to_string(s) == name) return s;
  throw ValidationError("unknown outlier style '" + name + "'");
}

ImageBatch outlier_pool(OutlierStyle style, std::size_t n, std::uint64_t seed, std::size_t height, std::size_t width) {
  if (n < 1) throw ValidationError("outlier_pool: n must be >= 1");
  ImageBatch pool(n, height, width);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed({seed, i, static_cast<std::uint64_t>(style)}));
    auto img = pool.image(i);
    switch (style) {
      case OutlierStyle::blank: {
        const double level = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
        std::ranges::fill(img, level);
        break;
      }
      case OutlierStyle::checker: {
        const std::size_t phase = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
        for (std::size_t r = 0; r < height; ++r)
          for (std::size_t c = 0; c < width; ++c) img[r * width + c] = (r + c + phase) % 2 == 0 ? 1.0 : 0.0;
        break;
      }
      case OutlierStyle::inverted_random: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& v : img) v = to_storage(1.0 - 0.6 * u(rng));
        break;
      }
    }
  }
  return pool;
}

DomainDataset regenerate_generated(const nlohmann::json& metadata) {
  const std::string generator = metadata.at("generator").get<std::string>();
  const DomainRole role = role_from_string(metadata.at("role").get<std::string>());
  if (generator == "glyph") return generate_glyph_dataset(metadata.at("spec").get<GlyphDomainSpec>(), role);
  if (generator == "blob") {
    auto pair = generate_blob_pair(metadata.at("spec").get<BlobPairSpec>());
    return role == DomainRole::source ? std::move(pair.first) : std::move(pair.second);
  }
  throw ValidationError("unknown generator '" + generator + "'");
}

}  // namespace instapbm
