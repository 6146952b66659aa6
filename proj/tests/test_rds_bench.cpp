// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "instapbm/errors.hpp"
#include "instapbm/rds_bench.hpp"

using namespace instapbm;

namespace {

DomainDataset glyphs(std::size_t classes, std::size_t per_class, std::size_t substyles = 2, std::uint64_t seed = 3) {
  GlyphDomainSpec s;
  s.classes = classes;
  s.substyles = substyles;
  s.samples_per_class = per_class;
  s.height = 8;
  s.width = 8;
  s.seed = seed;
  return generate_glyph_dataset(s, DomainRole::target);
}

// Each row's pixels as a key; multiset comparison for sub-multiset checks.
std::multiset<std::vector<double>> row_set(const DomainDataset& ds) {
  std::multiset<std::vector<double>> out;
  const std::size_t p = ds.height() * ds.width();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto v = ds.inputs.data().subspan(i * p, p);
    std::vector<double> key(v.begin(), v.end());
    key.push_back(ds.labels[i]);
    out.insert(std::move(key));
  }
  return out;
}

bool sub_multiset(const std::multiset<std::vector<double>>& small, std::multiset<std::vector<double>> big) {
  for (const auto& k : small) {
    auto it = big.find(k);
    if (it == big.end()) return false;
    big.erase(it);
  }
  return true;
}

BenchmarkSpec lds(double factor, std::uint64_t seed = 1) {
  BenchmarkSpec s;
  s.kind = BenchmarkKind::lds;
  s.imbalance_factor = factor;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("long-tail counts follow the exponential profile") {
  CHECK(long_tail_counts(1000, 4, 10.0) == std::vector<std::size_t>{1000, 464, 215, 100});
  CHECK(long_tail_counts(500, 3, 1.0) == std::vector<std::size_t>{500, 500, 500});
  for (std::size_t k : {2u, 5u, 10u}) {
    const auto c = long_tail_counts(800, k, 20.0);
    for (std::size_t i = 0; i < k; ++i) {
      const double exact = 800.0 * std::pow(20.0, -static_cast<double>(i) / static_cast<double>(k - 1));
      CHECK(std::abs(static_cast<double>(c[i]) - exact) <= 0.5);
    }
  }
}

TEST_CASE("LDS resampling hits the requested counts") {
  const DomainDataset t = glyphs(4, 1000);
  BenchmarkSpec spec = lds(10.0);
  spec.class_order = std::vector<int>{2, 0, 3, 1};
  const DomainDataset out = resample_lds(t, spec);
  CHECK(out.class_counts() == std::vector<std::size_t>{464, 100, 1000, 215});
  CHECK(sub_multiset(row_set(out), row_set(t)));
  CHECK(out.metadata.at("generator") == "benchmark");

  spec.class_order.reset();
  const DomainDataset drawn = resample_lds(t, spec);
  auto counts = drawn.class_counts();
  std::ranges::sort(counts, std::greater<>());
  CHECK(counts == std::vector<std::size_t>{1000, 464, 215, 100});
  CHECK(identical(drawn, resample_lds(t, spec)));
}

TEST_CASE("achieved imbalance ratio tracks the factor") {
  const DomainDataset t = glyphs(3, 400);
  for (double f : {2.0, 5.0, 10.0, 50.0}) {
    const auto c = resample_lds(t, lds(f)).class_counts();
    const double ratio = static_cast<double>(*std::ranges::max_element(c)) / static_cast<double>(*std::ranges::min_element(c));
    const double n_min = 400.0 / f;
    // Rounding the tail count moves the ratio by at most n_max / n_min^2 * 0.5.
    CHECK(std::abs(ratio - f) <= 0.5 * 400.0 / ((n_min - 0.5) * n_min) + 1e-9);
  }
}

TEST_CASE("LDS with factor 1 keeps every sample") {
  const DomainDataset t = glyphs(3, 20);
  const DomainDataset out = resample_lds(t, lds(1.0));
  CHECK(out.size() == t.size());
  CHECK(row_set(out) == row_set(t));
}

TEST_CASE("LDS errors") {
  const DomainDataset t = glyphs(4, 10);
  CHECK_THROWS_AS(resample_lds(t, lds(100.0)), ValidationError);  // tail rounds to 0
  CHECK_THROWS_AS(resample_lds(t, lds(0.5)), ValidationError);
  BenchmarkSpec bad_order = lds(2.0);
  bad_order.class_order = std::vector<int>{0, 1, 1, 2};
  CHECK_THROWS_AS(resample_lds(t, bad_order), ValidationError);
  const std::vector<std::size_t> rows = {0, 1, 2, 10, 20, 30};
  CHECK_THROWS_AS(resample_lds(t.subset(rows), lds(2.0)), ValidationError);  // unbalanced input
}

TEST_CASE("ILDS trims sub-classes inside each meta-class") {
  const DomainDataset t = glyphs(2, 1800);
  BenchmarkSpec spec;
  spec.kind = BenchmarkKind::ilds;
  spec.imbalance_factor = 9.0;
  spec.seed = 4;
  const DomainDataset out = build_ilds(t, spec);
  CHECK(out.class_counts() == std::vector<std::size_t>{1000, 1000});
  std::map<int, std::size_t> per_sub;
  for (int s : *out.sublabels) ++per_sub[s];
  for (int meta : {0, 1}) {
    std::vector<std::size_t> pair = {per_sub[2 * meta], per_sub[2 * meta + 1]};
    std::ranges::sort(pair, std::greater<>());
    CHECK(pair == std::vector<std::size_t>{900, 100});
  }
  CHECK(identical(out, build_ilds(t, spec)));
}

TEST_CASE("ILDS with an explicit map relabels to meta-classes") {
  const DomainDataset t = glyphs(4, 20);
  BenchmarkSpec spec;
  spec.kind = BenchmarkKind::ilds;
  spec.imbalance_factor = 1.0;
  spec.meta_class_map = {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 1}, {5, 1}, {6, 1}, {7, 1}};
  const DomainDataset out = build_ilds(t, spec);
  CHECK(out.class_count == 2);
  CHECK(out.class_counts() == std::vector<std::size_t>{40, 40});
  const DomainDataset src = relabel_ilds_source(glyphs(4, 6), spec);
  CHECK(src.class_count == 2);
  CHECK(src.class_counts() == std::vector<std::size_t>{12, 12});
  CHECK(regenerate_dataset(src.metadata).labels == src.labels);

  spec.meta_class_map.erase(7);
  CHECK_THROWS_AS(build_ilds(t, spec), ValidationError);
}

TEST_CASE("TwO appends the requested share of outliers") {
  const DomainDataset t = glyphs(3, 300);
  BenchmarkSpec spec;
  spec.kind = BenchmarkKind::two;
  spec.outlier_fraction = 0.1;
  spec.seed = 8;
  CHECK(outlier_count(900, 0.1) == 100);
  const ImageBatch pool = outlier_pool(OutlierStyle::checker, 100, 1, 8, 8);
  const DomainDataset out = inject_two(t, pool, spec);
  CHECK(out.size() == 1000);
  const LabelHistogram h = label_histogram(out);
  CHECK(h.outliers == 100);
  CHECK(h.counts == std::vector<std::size_t>{300, 300, 300});
  // Evaluation counts only the 900 labelled samples.
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == 900);
  std::multiset<std::vector<double>> kept;
  for (const auto& k : row_set(out))
    if (k.back() >= 0) kept.insert(k);
  CHECK(kept == row_set(t));

  CHECK_THROWS_AS(inject_two(t, outlier_pool(OutlierStyle::checker, 50, 1, 8, 8), spec), ValidationError);
  CHECK_THROWS_AS(inject_two(t, outlier_pool(OutlierStyle::checker, 100, 1), spec), ValidationError);
  spec.outlier_fraction = 0.0;
  const DomainDataset none = inject_two(t, ImageBatch(), spec);
  CHECK(std::ranges::equal(none.inputs.data(), t.inputs.data()));
  CHECK(none.labels == t.labels);
  spec.outlier_fraction = 1.0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("label histogram total variation") {
  DomainDataset ds = glyphs(2, 10);
  const std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5, 6, 10, 11, 12};
  const LabelHistogram h = label_histogram(ds.subset(rows));
  CHECK(h.tv_from_uniform == doctest::Approx(0.2));

  const DomainDataset t = resample_lds(glyphs(5, 200), lds(10.0));
  const LabelHistogram l = label_histogram(t);
  double oracle = 0.0;
  for (std::size_t c = 0; c < 5; ++c) {
    std::size_t n = 0;
    for (int y : t.labels) n += y == static_cast<int>(c) ? 1 : 0;
    oracle += std::abs(static_cast<double>(n) / static_cast<double>(t.size()) - 0.2);
  }
  CHECK(l.tv_from_uniform == doctest::Approx(oracle / 2.0).epsilon(1e-12));
}

TEST_CASE("the source side is never resampled") {
  GlyphDomainSpec ss;
  ss.samples_per_class = 40;
  ss.height = ss.width = 8;
  GlyphDomainSpec ts = ss;
  ts.seed = 9;
  ts.background = 0.2;
  const auto [src, tgt] = generate_glyph_pair(ss, ts);
  BenchmarkSpec spec = lds(4.0);
  CHECK(identical(apply_benchmark(src, tgt, spec).first, src));
  spec.kind = BenchmarkKind::ilds;
  CHECK(identical(apply_benchmark(src, tgt, spec).first, src));
  spec.kind = BenchmarkKind::two;
  spec.outlier_fraction = 0.2;
  const auto two = apply_benchmark(src, tgt, spec);
  CHECK(identical(two.first, src));
  CHECK(label_histogram(two.second).outliers == 40);
}

TEST_CASE("benchmark outputs regenerate from metadata") {
  GlyphDomainSpec ss;
  ss.samples_per_class = 30;
  ss.height = ss.width = 8;
  const DomainDataset t = generate_glyph_dataset(ss, DomainRole::target);
  BenchmarkSpec spec = lds(3.0, 12);
  const DomainDataset a = resample_lds(t, spec);
  CHECK(identical(a, regenerate_dataset(a.metadata)));
  spec.kind = BenchmarkKind::two;
  spec.outlier_fraction = 0.25;
  const DomainDataset b = apply_benchmark(t, a, spec).second;
  CHECK(identical(b, regenerate_dataset(b.metadata)));
  spec.kind = BenchmarkKind::ilds;
  const DomainDataset c = build_ilds(t, spec);
  CHECK(identical(c, regenerate_dataset(c.metadata)));
}

TEST_CASE("benchmark spec json and names") {
  BenchmarkSpec s = lds(7.0, 3);
  s.class_order = std::vector<int>{1, 0};
  s.meta_class_map = {{0, 1}};
  const BenchmarkSpec r = nlohmann::json(s).get<BenchmarkSpec>();
  CHECK(nlohmann::json(r) == nlohmann::json(s));
  CHECK(benchmark_kind_from_string("two") == BenchmarkKind::two);
  CHECK_THROWS_AS(benchmark_kind_from_string("xyz"), ValidationError);
  const nlohmann::json report = benchmark_report(s, glyphs(2, 5), glyphs(2, 5), glyphs(2, 5));
  CHECK(report.is_object());
}
