// SPDX-License-Identifier: Apache-2.0
#include "instapbm/experiments.hpp"

#include "instapbm/errors.hpp"

#include <cmath>

namespace instapbm {

void to_json(nlohmann::json& j, const GlyphPairSpec& s) { j = {{"source", s.source}, {"target", s.target}}; }

void from_json(const nlohmann::json& j, GlyphPairSpec& s) {
  s.source = j.at("source").get<GlyphDomainSpec>();
  s.target = j.at("target").get<GlyphDomainSpec>();
}

GlyphPairSpec desk_glyph_pair() {
  GlyphPairSpec p;
  p.source.classes = 4;
  p.source.substyles = 2;
  p.source.samples_per_class = 300;
  p.source.seed = 101;
  p.target = p.source;
  p.target.stroke_thickness = 2.0;
  p.target.background = 0.0;
  p.target.noise = 0.1;
  p.target.jitter = 2.0;
  p.target.samples_per_class = 500;
  p.target.seed = 202;
  return p;
}

TrainConfig desk_train_config() {
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 64;
  c.hidden = {128, 64};
  c.optimizer.kind = OptimizerKind::sgd_momentum;
  c.optimizer.learning_rate = 0.03;
  c.optimizer.momentum = 0.9;
  c.loss.lambda_M = 0.1;
  c.loss.entropy_ceiling = 0.8 * std::log(4.0);  // desk glyphs have 4 classes
  return c;
}

void to_json(nlohmann::json& j, const AblationPlan& p) {
  nlohmann::json benches = nlohmann::json::array();
  for (const auto& [name, spec] : p.benchmarks) benches.push_back({{"name", name}, {"spec", spec}});
  j = {{"train", p.base}, {"data", p.data}, {"benchmarks", benches}, {"rows", p.rows}, {"seeds", p.seeds}};
}

void from_json(const nlohmann::json& j, AblationPlan& p) {
  p = desk_ablation_plan();
  if (j.contains("train")) p.base = j["train"].get<TrainConfig>();
  if (j.contains("data")) p.data = j["data"].get<GlyphPairSpec>();
  if (j.contains("benchmarks")) {
    p.benchmarks.clear();
    for (const auto& b : j["benchmarks"]) p.benchmarks.emplace_back(b.at("name").get<std::string>(), b.at("spec").get<BenchmarkSpec>());
  }
  if (j.contains("rows")) p.rows = j["rows"].get<std::vector<std::string>>();
  if (j.contains("seeds")) p.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (p.seeds.empty() || p.rows.empty() || p.benchmarks.empty()) throw ValidationError("ablation plan needs rows, seeds and benchmarks");
}

AblationPlan desk_ablation_plan() {
  AblationPlan p;
  p.base = desk_train_config();
  p.data = desk_glyph_pair();
  BenchmarkSpec lds;
  lds.kind = BenchmarkKind::lds;
  lds.imbalance_factor = 10.0;
  lds.seed = 5;
  p.benchmarks = {{"G-LDS", lds}};
  p.rows = ablation_rows();
  p.seeds = {17, 29, 41};
  return p;
}

std::vector<NamedBenchmark> build_benchmarks(const AblationPlan& plan) {
  const auto [src, tgt] = generate_glyph_pair(plan.data.source, plan.data.target);
  std::vector<NamedBenchmark> out;
  for (const auto& [name, spec] : plan.benchmarks) {
    auto [s, t] = apply_benchmark(src, tgt, spec);
    out.push_back({name, std::move(s), std::move(t)});
  }
  return out;
}

}  // namespace instapbm
