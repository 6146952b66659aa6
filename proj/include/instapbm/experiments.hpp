// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "instapbm/data_synth.hpp"
#include "instapbm/rds_bench.hpp"
#include "instapbm/trainer.hpp"

namespace instapbm {

/// Source and target glyph domains generated together.
struct GlyphPairSpec {
  GlyphDomainSpec source;
  GlyphDomainSpec target;
};

void to_json(nlohmann::json& j, const GlyphPairSpec& s);
void from_json(const nlohmann::json& j, GlyphPairSpec& s);

/// The desk-scale glyph pair used by the ablation and robustness runs.
GlyphPairSpec desk_glyph_pair();
/// Training defaults sized for a single CPU core.
TrainConfig desk_train_config();

struct AblationPlan {
  TrainConfig base;
  GlyphPairSpec data;
  std::vector<std::pair<std::string, BenchmarkSpec>> benchmarks;
  std::vector<std::string> rows;
  std::vector<std::uint64_t> seeds;
};

void to_json(nlohmann::json& j, const AblationPlan& p);
void from_json(const nlohmann::json& j, AblationPlan& p);

/// Glyph LDS (IF = 10) with every ablation row and seeds {17, 29, 41}.
AblationPlan desk_ablation_plan();

std::vector<NamedBenchmark> build_benchmarks(const AblationPlan& plan);

}  // namespace instapbm
