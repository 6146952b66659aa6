// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "instapbm/trainer.hpp"

namespace instapbm {

/// One JSON object per line, one line per epoch.
std::string metrics_jsonl(const Metrics& metrics);
nlohmann::json run_summary(const TrainConfig& cfg, const TrainResult& result);
std::string confusion_csv(const EvalResult& eval);

/// Writes config.json, metrics.jsonl, summary.json, confusion.csv and
/// checkpoint.bin into `dir` (created if missing).
void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& result);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace instapbm
