// SPDX-License-Identifier: Apache-2.0
#include "instapbm/run_io.hpp"

#include <fstream>
#include <sstream>

#include "instapbm/errors.hpp"

namespace instapbm {

namespace {

nlohmann::json eval_json(const EvalResult& e) {
  return {{"evaluated", e.evaluated},
          {"accuracy", e.accuracy},
          {"per_class_accuracy", e.per_class_accuracy},
          {"class_counts", e.class_counts},
          {"prediction_marginal", e.prediction_marginal}};
}

}  // namespace

std::string metrics_jsonl(const Metrics& metrics) {
  std::string out;
  for (const auto& rec : metrics.epochs) {
    out += nlohmann::json(rec).dump();
    out += '\n';
  }
  return out;
}

nlohmann::json run_summary(const TrainConfig& cfg, const TrainResult& result) {
  nlohmann::json j = {{"method", to_string(cfg.method)},
                      {"steps", result.steps},
                      {"source", eval_json(result.metrics.source)},
                      {"target", eval_json(result.metrics.target)},
                      {"target_transductive", eval_json(result.metrics.target_transductive)}};
  if (!result.metrics.epochs.empty()) {
    const auto& last = result.metrics.epochs.back();
    j["final_losses"] = nlohmann::json(last)["loss"];
    j["marginal_entropy"] = last.marginal_entropy;
  }
  return j;
}

std::string confusion_csv(const EvalResult& eval) {
  std::ostringstream out;
  out << "true\\pred";
  for (std::size_t c = 0; c < eval.confusion.size(); ++c) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < eval.confusion.size(); ++r) {
    out << r;
    for (auto v : eval.confusion[r]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& result) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
  write_text(dir / "metrics.jsonl", metrics_jsonl(result.metrics));
  write_text(dir / "summary.json", run_summary(cfg, result).dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(result.metrics.target.evaluated > 0 ? result.metrics.target
                                                                                     : result.metrics.source));
  save_checkpoint(dir / "checkpoint.bin", result.params, result.steps);
}

}  // namespace instapbm
