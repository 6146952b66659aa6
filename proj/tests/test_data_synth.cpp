// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "instapbm/dataset_io.hpp"
#include "instapbm/errors.hpp"

using namespace instapbm;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("instapbm_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

double pixel_mean(const DomainDataset& ds) {
  double acc = 0.0;
  for (double v : ds.inputs.data()) acc += v;
  return acc / static_cast<double>(ds.inputs.size());
}

}  // namespace

TEST_CASE("glyph generation is deterministic and balanced") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 12;
  const DomainDataset a = generate_glyph_dataset(spec, DomainRole::source);
  const DomainDataset b = generate_glyph_dataset(spec, DomainRole::source);
  CHECK(identical(a, b));
  CHECK(a.size() == 48);
  CHECK(a.inputs.shape() == Shape{48, 16, 16});
  CHECK(a.class_counts() == std::vector<std::size_t>{12, 12, 12, 12});
  REQUIRE(a.sublabels);
  CHECK(*std::ranges::max_element(*a.sublabels) == 7);
  for (double v : a.inputs.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  spec.seed = 2;
  CHECK_FALSE(identical(a, generate_glyph_dataset(spec, DomainRole::source)));
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("classes render differently") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 1;
  spec.jitter = 0.0;
  spec.substyles = 1;
  const DomainDataset ds = generate_glyph_dataset(spec, DomainRole::source);
  const auto x = ds.images(std::vector<std::size_t>{0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK_FALSE(std::ranges::equal(x.image(i), x.image(j)));
}

TEST_CASE("style knobs move the pixel statistics") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 20;
  const double plain = pixel_mean(generate_glyph_dataset(spec, DomainRole::source));
  GlyphDomainSpec bright = spec;
  bright.background = 0.4;
  CHECK(pixel_mean(generate_glyph_dataset(bright, DomainRole::target)) > plain + 0.2);
  GlyphDomainSpec thick = spec;
  thick.stroke_thickness = 3.0;
  CHECK(pixel_mean(generate_glyph_dataset(thick, DomainRole::target)) > plain);
  GlyphDomainSpec inverted = spec;
  inverted.invert = true;
  CHECK(pixel_mean(generate_glyph_dataset(inverted, DomainRole::target)) > 0.5);
}

TEST_CASE("glyph spec validation") {
  auto bad = [](auto mutate) {
    GlyphDomainSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(bad([](auto& s) { s.classes = 1; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.classes = 11; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.stroke_thickness = 5.0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.background = 0.7; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.noise = 0.5; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.jitter = 5.0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](auto& s) { s.height = 4; }).validate(), ValidationError);
  GlyphDomainSpec a;
  GlyphDomainSpec b;
  b.classes = 5;
  CHECK_THROWS_AS(generate_glyph_pair(a, b), ValidationError);
  b = a;
  b.width = 20;
  CHECK_THROWS_AS(generate_glyph_pair(a, b), ValidationError);
  b = a;
  b.substyles = 3;
  CHECK_THROWS_AS(generate_glyph_pair(a, b), ValidationError);
}

TEST_CASE("glyph spec json round trip") {
  GlyphDomainSpec s;
  s.background = 0.25;
  s.invert = true;
  s.seed = 99;
  const GlyphDomainSpec r = nlohmann::json(s).get<GlyphDomainSpec>();
  CHECK(nlohmann::json(r) == nlohmann::json(s));
}

TEST_CASE("blob priors are respected") {
  BlobPairSpec spec;
  spec.samples = 20000;
  spec.target_priors = {0.8, 0.2};
  const auto [src, tgt] = generate_blob_pair(spec);
  const auto cs = src.class_counts();
  const auto ct = tgt.class_counts();
  // Binomial standard error at n = 20000 is about 0.0035.
  CHECK(std::abs(static_cast<double>(cs[0]) / 20000.0 - 0.5) < 0.02);
  CHECK(std::abs(static_cast<double>(ct[0]) / 20000.0 - 0.8) < 0.02);
  CHECK(src.inputs.shape() == Shape{20000, 2});
  CHECK(src.feature_dim() == 2);
}

TEST_CASE("blob target offset translates the target") {
  BlobPairSpec spec;
  spec.samples = 4000;
  spec.target_priors = spec.source_priors;
  spec.target_offset = {0.0, 3.0};
  const auto [src, tgt] = generate_blob_pair(spec);
  double ms = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < 4000; ++i) {
    ms += src.inputs.at(i, 1) / 4000.0;
    mt += tgt.inputs.at(i, 1) / 4000.0;
  }
  CHECK(mt - ms == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("blob spec validation") {
  BlobPairSpec s;
  s.target_priors = {0.6, 0.6};
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = BlobPairSpec{};
  s.means = {{0.0, 0.0}};
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = BlobPairSpec{};
  s.target_offset = {1.0};
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("outlier pools") {
  const ImageBatch checker = outlier_pool(OutlierStyle::checker, 3, 1);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(std::ranges::count(checker.image(n), 1.0) == 128);
  }
  const ImageBatch blank = outlier_pool(OutlierStyle::blank, 2, 1);
  const auto b0 = blank.image(0);
  CHECK(std::ranges::all_of(b0, [&](double v) { return v == b0[0]; }));
  const ImageBatch bright = outlier_pool(OutlierStyle::inverted_random, 4, 1);
  for (double v : bright.data.data()) CHECK(v >= 0.39);
  CHECK(std::ranges::equal(bright.data.data(), outlier_pool(OutlierStyle::inverted_random, 4, 1).data.data()));
  CHECK_THROWS_AS(outlier_pool(OutlierStyle::blank, 0, 1), ValidationError);
  CHECK(outlier_style_from_string("checker") == OutlierStyle::checker);
  CHECK_THROWS_AS(outlier_style_from_string("plaid"), ValidationError);
}

TEST_CASE("dataset validation and subsets") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 3;
  DomainDataset ds = generate_glyph_dataset(spec, DomainRole::source);
  const std::vector<std::size_t> idx = {0, 5, 11};
  const DomainDataset sub = ds.subset(idx);
  CHECK(sub.labels == std::vector<int>{0, 1, 3});
  CHECK(std::ranges::equal(sub.rows(std::vector<std::size_t>{1}).data(), ds.images(std::vector<std::size_t>{5}).image(0)));
  CHECK_THROWS_AS(ds.rows(std::vector<std::size_t>{12}), ShapeError);
  ds.labels[0] = 7;
  CHECK_THROWS_AS(ds.validate(), ValidationError);
  ds.labels[0] = kOutlierLabel;
  CHECK_NOTHROW(ds.validate());
  ds.labels.pop_back();
  CHECK_THROWS_AS(ds.validate(), ValidationError);
}

TEST_CASE("dataset directory round trip") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 5;
  DomainDataset ds = generate_glyph_dataset(spec, DomainRole::target);
  ds.labels[3] = kOutlierLabel;
  const auto dir = scratch_dir("io");
  save_dataset(dir, ds);
  CHECK(std::filesystem::exists(dir / "meta.json"));
  CHECK(std::filesystem::exists(dir / "images.f32le"));
  CHECK(std::filesystem::file_size(dir / "images.f32le") == 20 * 256 * 4);
  const DomainDataset back = load_dataset(dir);
  CHECK(identical(ds, back));
  CHECK(back.role == DomainRole::target);

  BlobPairSpec blobs;
  blobs.samples = 17;
  const auto pts = generate_blob_pair(blobs).second;
  save_dataset(dir / "pts", pts);
  CHECK(identical(pts, load_dataset(dir / "pts")));
  CHECK_THROWS_AS(load_dataset(dir / "missing"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("datasets regenerate from metadata") {
  GlyphDomainSpec spec;
  spec.samples_per_class = 4;
  const DomainDataset ds = generate_glyph_dataset(spec, DomainRole::source);
  CHECK(identical(ds, regenerate_generated(ds.metadata)));
  BlobPairSpec blobs;
  blobs.samples = 30;
  const auto [s, t] = generate_blob_pair(blobs);
  CHECK(identical(t, regenerate_generated(t.metadata)));
  CHECK_THROWS_AS(regenerate_generated({{"generator", "fractal"}, {"role", "source"}}), ValidationError);
}
