// SPDX-License-Identifier: Apache-2.0
#include "instapbm/rds_bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "instapbm/errors.hpp"
#include "instapbm/rng.hpp"

namespace instapbm {

namespace {

std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed) {
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

std::vector<int> resolve_order(const BenchmarkSpec& spec, std::size_t classes) {
  if (spec.class_order) {
    std::vector<int> order = *spec.class_order;
    std::vector<int> sorted = order;
    std::ranges::sort(sorted);
    std::vector<int> expected(classes);
    std::iota(expected.begin(), expected.end(), 0);
    if (sorted != expected) throw ValidationError("benchmark: class_order must be a permutation of 0..K-1");
    return order;
  }
  std::vector<int> order(classes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed({spec.seed, 0x0de5ULL}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Keeps `count` members of each group, picked by a seeded shuffle, and
// returns the kept row indices in their original order.
std::vector<std::size_t> keep_rows(const std::map<int, std::vector<std::size_t>>& groups,
                                   const std::map<int, std::size_t>& counts, std::uint64_t seed) {
  std::vector<std::size_t> kept;
  for (const auto& [group, rows] : groups) {
    const std::size_t n = counts.at(group);
    auto order = shuffled(rows, derive_seed({seed, static_cast<std::uint64_t>(group)}));
    kept.insert(kept.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::ranges::sort(kept);
  return kept;
}

nlohmann::json derived_metadata(const DomainDataset& base, const BenchmarkSpec& spec) {
  return {{"generator", "benchmark"}, {"benchmark", spec}, {"base", base.metadata}};
}

}  // namespace

std::string to_string(BenchmarkKind kind) {
  switch (kind) {
    case BenchmarkKind::lds: return "lds";
    case BenchmarkKind::ilds: return "ilds";
    case BenchmarkKind::two: return "two";
  }
  return "unknown";
}

BenchmarkKind benchmark_kind_from_string(const std::string& name) {
  for (auto k : {BenchmarkKind::lds, BenchmarkKind::ilds, BenchmarkKind::two})
    if (to_string(k) == name) return k;
  throw ValidationError("unknown benchmark kind '" + name + "'");
}

void BenchmarkSpec::validate() const {
  if (!std::isfinite(imbalance_factor) || imbalance_factor < 1.0) {
    throw ValidationError("benchmark: imbalance factor must be finite and >= 1, got " + std::to_string(imbalance_factor));
  }
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) throw ValidationError("benchmark: outlier fraction must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
  nlohmann::json map = nlohmann::json::object();
  for (const auto& [sub, meta] : s.meta_class_map) map[std::to_string(sub)] = meta;
  j = {{"kind", to_string(s.kind)},
       {"imbalance_factor", s.imbalance_factor},
       {"class_order", s.class_order ? nlohmann::json(*s.class_order) : nlohmann::json("random")},
       {"meta_class_map", map},
       {"outlier_fraction", s.outlier_fraction},
       {"outlier_style", to_string(s.outlier_style)},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
  s = BenchmarkSpec{};
  s.kind = benchmark_kind_from_string(j.value("kind", std::string("lds")));
  s.imbalance_factor = j.value("imbalance_factor", s.imbalance_factor);
  if (j.contains("class_order") && j["class_order"].is_array()) s.class_order = j["class_order"].get<std::vector<int>>();
  if (j.contains("meta_class_map")) {
    for (const auto& [sub, meta] : j["meta_class_map"].items()) s.meta_class_map[std::stoi(sub)] = meta.get<int>();
  }
  s.outlier_fraction = j.value("outlier_fraction", s.outlier_fraction);
  s.outlier_style = outlier_style_from_string(j.value("outlier_style", to_string(s.outlier_style)));
  s.seed = j.value("seed", s.seed);
}

std::vector<std::size_t> long_tail_counts(std::size_t n_max, std::size_t classes, double imbalance_factor) {
  std::vector<std::size_t> counts(classes, n_max);
  if (classes < 2) return counts;
  for (std::size_t k = 0; k < classes; ++k) {
    const double exponent = -static_cast<double>(k) / static_cast<double>(classes - 1);
    counts[k] = static_cast<std::size_t>(std::llround(static_cast<double>(n_max) * std::pow(imbalance_factor, exponent)));
  }
  return counts;
}

DomainDataset resample_lds(const DomainDataset& target, const BenchmarkSpec& spec) {
  spec.validate();
  if (spec.kind != BenchmarkKind::lds) throw ValidationError("resample_lds: spec kind is " + to_string(spec.kind));
  const std::size_t k = target.class_count;
  const auto have = target.class_counts();
  const std::size_t n_max = have.empty() ? 0 : have.front();
  if (n_max == 0 || std::ranges::any_of(have, [&](std::size_t c) { return c != n_max; })) {
    throw ValidationError("resample_lds: target must be balanced across classes");
  }
  const auto order = resolve_order(spec, k);
  const auto tail = long_tail_counts(n_max, k, spec.imbalance_factor);
  if (tail.back() == 0) {
    throw ValidationError("resample_lds: tail class rounds to 0 samples; increase samples per class above " +
                          std::to_string(n_max));
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target.labels[i] >= 0) groups[target.labels[i]].push_back(i);
  std::map<int, std::size_t> counts;
  for (std::size_t pos = 0; pos < k; ++pos) counts[order[pos]] = tail[pos];
  DomainDataset out = target.subset(keep_rows(groups, counts, derive_seed({spec.seed, 0x1d5})));
  out.metadata = derived_metadata(target, spec);
  out.metadata["achieved_counts"] = out.class_counts();
  out.metadata["class_order"] = order;
  return out;
}

DomainDataset build_ilds(const DomainDataset& target, const BenchmarkSpec& spec) {
  spec.validate();
  if (spec.kind != BenchmarkKind::ilds) throw ValidationError("build_ilds: spec kind is " + to_string(spec.kind));
  if (!target.sublabels) throw ValidationError("build_ilds: dataset has no sublabels");
  const auto& subs = *target.sublabels;
  std::map<int, int> map = spec.meta_class_map;
  if (map.empty()) {
    for (std::size_t i = 0; i < target.size(); ++i)
      if (subs[i] >= 0) map.emplace(subs[i], target.labels[i]);
  }
  std::map<int, std::vector<std::size_t>> groups;  // by sublabel
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (subs[i] < 0) continue;
    if (!map.contains(subs[i])) throw ValidationError("build_ilds: sublabel " + std::to_string(subs[i]) + " missing from meta-class map");
    groups[subs[i]].push_back(i);
  }
  std::map<int, std::vector<int>> members;  // meta -> sublabels
  for (const auto& [sub, rows] : groups) members[map.at(sub)].push_back(sub);
  std::map<int, std::size_t> counts;
  nlohmann::json per_meta = nlohmann::json::object();
  for (auto& [meta, list] : members) {
    std::size_t n_max = 0;
    for (int sub : list) n_max = std::max(n_max, groups[sub].size());
    for (int sub : list)
      if (groups[sub].size() != n_max) throw ValidationError("build_ilds: sub-classes must be balanced before trimming");
    Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(meta), 0x5abULL}));
    std::shuffle(list.begin(), list.end(), rng);
    const auto tail = long_tail_counts(n_max, list.size(), spec.imbalance_factor);
    if (tail.back() == 0) throw ValidationError("build_ilds: tail sub-class rounds to 0 samples; increase samples per class");
    for (std::size_t j = 0; j < list.size(); ++j) counts[list[j]] = tail[j];
    per_meta[std::to_string(meta)] = {{"sub_order", list}, {"sub_counts", tail}};
  }
  DomainDataset out = target.subset(keep_rows(groups, counts, derive_seed({spec.seed, 0x11d5})));
  int top = -1;
  for (const auto& [sub, meta] : map) top = std::max(top, meta);
  for (std::size_t i = 0; i < out.size(); ++i)
    if ((*out.sublabels)[i] >= 0) out.labels[i] = map.at((*out.sublabels)[i]);
  out.class_count = static_cast<std::size_t>(top + 1);
  out.metadata = derived_metadata(target, spec);
  out.metadata["achieved_counts"] = out.class_counts();
  out.metadata["meta_classes"] = per_meta;
  out.validate();
  return out;
}

DomainDataset relabel_ilds_source(const DomainDataset& source, const BenchmarkSpec& spec) {
  if (!source.sublabels) throw ValidationError("relabel_ilds_source: dataset has no sublabels");
  if (spec.meta_class_map.empty()) return source;
  DomainDataset out = source;
  out.labels = source.labels;
  int top = -1;
  for (const auto& [sub, meta] : spec.meta_class_map) top = std::max(top, meta);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int sub = (*source.sublabels)[i];
    auto it = spec.meta_class_map.find(sub);
    if (it == spec.meta_class_map.end()) throw ValidationError("relabel_ilds_source: sublabel " + std::to_string(sub) + " missing from map");
    out.labels[i] = it->second;
  }
  out.class_count = static_cast<std::size_t>(top + 1);
  if (out.labels == source.labels && out.class_count == source.class_count) return source;
  out.metadata = {{"generator", "relabel"}, {"benchmark", spec}, {"base", source.metadata}};
  return out;
}

std::size_t outlier_count(std::size_t target_size, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(target_size) / (1.0 - fraction)));
}

DomainDataset inject_two(const DomainDataset& target, const ImageBatch& pool, const BenchmarkSpec& spec) {
  spec.validate();
  if (spec.kind != BenchmarkKind::two) throw ValidationError("inject_two: spec kind is " + to_string(spec.kind));
  const std::size_t n_out = outlier_count(target.size(), spec.outlier_fraction);
  if (n_out == 0) {
    DomainDataset out = target;
    out.metadata = derived_metadata(target, spec);
    return out;
  }
  if (!target.is_image()) throw ValidationError("inject_two: target must hold images");
  if (pool.batch() < n_out) {
    throw ValidationError("inject_two: pool holds " + std::to_string(pool.batch()) + " images, need " + std::to_string(n_out));
  }
  if (pool.height() != target.height() || pool.width() != target.width()) throw ValidationError("inject_two: pool geometry differs from target");
  const std::size_t n = target.size();
  const std::size_t total = n + n_out;
  const std::size_t pixels = pool.pixels();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  order = shuffled(std::move(order), derive_seed({spec.seed, 0x7e0ULL}));

  DomainDataset out;
  out.inputs = Tensor(Shape{total, target.height(), target.width()}, 0.0);
  out.role = target.role;
  out.class_count = target.class_count;
  if (target.sublabels) out.sublabels.emplace();
  auto dst = out.inputs.mutable_data();
  const auto src = target.inputs.data();
  const auto extra = pool.data.data();
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t from = order[i];
    if (from < n) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(from * pixels), pixels, dst.begin() + static_cast<std::ptrdiff_t>(i * pixels));
      out.labels.push_back(target.labels[from]);
      if (out.sublabels) out.sublabels->push_back((*target.sublabels)[from]);
    } else {
      std::copy_n(extra.begin() + static_cast<std::ptrdiff_t>((from - n) * pixels), pixels,
                  dst.begin() + static_cast<std::ptrdiff_t>(i * pixels));
      out.labels.push_back(kOutlierLabel);
      if (out.sublabels) out.sublabels->push_back(kOutlierLabel);
    }
  }
  out.metadata = derived_metadata(target, spec);
  out.metadata["outliers"] = n_out;
  return out;
}

std::pair<DomainDataset, DomainDataset> apply_benchmark(const DomainDataset& source, const DomainDataset& target,
                                                        const BenchmarkSpec& spec) {
  switch (spec.kind) {
    case BenchmarkKind::lds: return {source, resample_lds(target, spec)};
    case BenchmarkKind::ilds: return {relabel_ilds_source(source, spec), build_ilds(target, spec)};
    case BenchmarkKind::two: {
      spec.validate();
      const std::size_t n_out = outlier_count(target.size(), spec.outlier_fraction);
      if (n_out == 0) return {source, inject_two(target, ImageBatch(), spec)};
      const ImageBatch pool = outlier_pool(spec.outlier_style, n_out, spec.seed, target.height(), target.width());
      return {source, inject_two(target, pool, spec)};
    }
  }
  throw ValidationError("apply_benchmark: unknown kind");
}

LabelHistogram label_histogram(const DomainDataset& ds) {
  LabelHistogram h;
  h.counts = ds.class_counts();
  for (int y : ds.labels) h.outliers += y < 0 ? 1 : 0;
  const std::size_t labelled = ds.size() - h.outliers;
  if (labelled == 0 || h.counts.empty()) return h;
  const double uniform = 1.0 / static_cast<double>(h.counts.size());
  double tv = 0.0;
  for (auto c : h.counts) tv += std::abs(static_cast<double>(c) / static_cast<double>(labelled) - uniform);
  h.tv_from_uniform = 0.5 * tv;
  return h;
}

DomainDataset regenerate_dataset(const nlohmann::json& metadata) {
  const std::string generator = metadata.at("generator").get<std::string>();
  if (generator != "benchmark" && generator != "relabel") return regenerate_generated(metadata);
  const DomainDataset base = regenerate_dataset(metadata.at("base"));
  const BenchmarkSpec spec = metadata.at("benchmark").get<BenchmarkSpec>();
  if (generator == "relabel") return relabel_ilds_source(base, spec);
  switch (spec.kind) {
    case BenchmarkKind::lds: return resample_lds(base, spec);
    case BenchmarkKind::ilds: return build_ilds(base, spec);
    case BenchmarkKind::two: {
      const std::size_t n_out = outlier_count(base.size(), spec.outlier_fraction);
      if (n_out == 0) return inject_two(base, ImageBatch(), spec);
      return inject_two(base, outlier_pool(spec.outlier_style, n_out, spec.seed, base.height(), base.width()), spec);
    }
  }
  throw ValidationError("regenerate_dataset: unknown benchmark kind");
}

nlohmann::json benchmark_report(const BenchmarkSpec& spec, const DomainDataset& source,
                                const DomainDataset& target_before, const DomainDataset& target_after) {
  auto describe = [](const DomainDataset& ds) {
    const auto h = label_histogram(ds);
    return nlohmann::json{{"size", ds.size()}, {"counts", h.counts}, {"outliers", h.outliers}, {"tv_from_uniform", h.tv_from_uniform}};
  };
  return {{"spec", spec},
          {"source", describe(source)},
          {"target_before", describe(target_before)},
          {"target_after", describe(target_after)}};
}

}  // namespace instapbm
