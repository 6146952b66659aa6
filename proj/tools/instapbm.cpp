// SPDX-License-Identifier: Apache-2.0
// Command-line front end: data generation, benchmark construction, training,
// evaluation, ablation, gradient checks and the label-shift probe.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "instapbm/dataset_io.hpp"
#include "instapbm/errors.hpp"
#include "instapbm/experiments.hpp"
#include "instapbm/gradient_suite.hpp"
#include "instapbm/rds_bench.hpp"
#include "instapbm/run_io.hpp"
#include "instapbm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace instapbm;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

json load_json_arg(const std::string& arg) {
  if (!fs::exists(arg)) throw ValidationError("no such file: " + arg);
  return read_json(arg);
}

void cmd_generate(const std::string& spec_arg, const fs::path& out, std::optional<std::uint64_t> seed) {
  json spec;
  if (spec_arg == "glyph") spec = {{"generator", "glyph"}, {"pair", desk_glyph_pair()}};
  else if (spec_arg == "blob") spec = {{"generator", "blob"}, {"spec", BlobPairSpec{}}};
  else spec = load_json_arg(spec_arg);

  const std::string generator = spec.value("generator", std::string("glyph"));
  std::pair<DomainDataset, DomainDataset> pair;
  if (generator == "glyph") {
    GlyphPairSpec p = spec.contains("pair") ? spec["pair"].get<GlyphPairSpec>() : spec.get<GlyphPairSpec>();
    if (seed) {
      p.source.seed = *seed;
      p.target.seed = *seed + 1;
    }
    pair = generate_glyph_pair(p.source, p.target);
  } else if (generator == "blob") {
    BlobPairSpec b = spec.contains("spec") ? spec["spec"].get<BlobPairSpec>() : spec.get<BlobPairSpec>();
    if (seed) b.seed = *seed;
    pair = generate_blob_pair(b);
  } else {
    throw ValidationError("unknown generator '" + generator + "'");
  }
  save_dataset(out / "source", pair.first);
  save_dataset(out / "target", pair.second);
  std::cout << "wrote " << pair.first.size() << " source and " << pair.second.size() << " target samples to " << out
            << '\n';
}

void cmd_bench(const std::string& kind, const fs::path& in, const fs::path& out, double imbalance, double rho,
               std::uint64_t seed, const std::string& style) {
  BenchmarkSpec spec;
  spec.kind = benchmark_kind_from_string(kind);
  spec.imbalance_factor = imbalance;
  spec.outlier_fraction = rho;
  spec.outlier_style = outlier_style_from_string(style);
  spec.seed = seed;
  spec.validate();
  const DomainDataset src = load_dataset(in / "source");
  const DomainDataset tgt = load_dataset(in / "target");
  const auto [bsrc, btgt] = apply_benchmark(src, tgt, spec);
  save_dataset(out / "source", bsrc);
  save_dataset(out / "target", btgt);
  const json report = benchmark_report(spec, bsrc, tgt, btgt);
  write_text(out / "benchmark.json", report.dump(2) + "\n");
  std::cout << report["target_after"].dump() << '\n';
}

TrainConfig config_arg(const std::string& arg) {
  if (arg == "desk") return desk_train_config();
  return load_json_arg(arg).get<TrainConfig>();
}

void cmd_train(const std::string& config, const fs::path& src_dir, const fs::path& tgt_dir, const fs::path& out) {
  const TrainConfig cfg = config_arg(config);
  const DomainDataset src = load_dataset(src_dir);
  const DomainDataset tgt = load_dataset(tgt_dir);
  const TrainResult result = train(cfg, src, tgt);
  write_run(out, cfg, result);
  std::printf("source %.4f  target %.4f  target(transductive) %.4f\n", result.metrics.source.accuracy,
              result.metrics.target.accuracy, result.metrics.target_transductive.accuracy);
}

void cmd_eval(const fs::path& checkpoint, const fs::path& data) {
  const ModelParams params = load_checkpoint(checkpoint);
  const EvalResult e = evaluate(params, load_dataset(data));
  const json j = {{"evaluated", e.evaluated},
                  {"accuracy", e.accuracy},
                  {"per_class_accuracy", e.per_class_accuracy},
                  {"class_counts", e.class_counts},
                  {"confusion", e.confusion}};
  std::cout << j.dump(2) << '\n';
}

void cmd_ablate(const std::string& config, const fs::path& out) {
  const AblationPlan plan = config == "desk" ? desk_ablation_plan() : load_json_arg(config).get<AblationPlan>();
  const AblationTable table = ablation_suite(plan.base, build_benchmarks(plan), plan.rows, plan.seeds);
  fs::create_directories(out);
  write_text(out / "plan.json", json(plan).dump(2) + "\n");
  write_text(out / "table.json", table.to_json().dump(2) + "\n");
  write_text(out / "table.md", table.to_markdown());
  std::cout << table.to_markdown();
}

int cmd_gradcheck(double tol, std::size_t instances) {
  const GradientSuiteResult r = run_gradient_suite(tol, instances);
  for (const auto& c : r.cases) {
    std::printf("%-34s %3zu instances  max rel err %.3e  %s\n", c.name.c_str(), c.instances, c.max_relative_error,
                c.passed() ? "ok" : "FAIL");
  }
  std::printf("%zu cases, %.1f s, %s\n", r.cases.size(), r.seconds, r.passed() ? "all passed" : "FAILED");
  return r.passed() ? 0 : kExitNumerical;
}

void cmd_probe(const fs::path& out) {
  const ProbeResult r = lds_failure_probe(ProbeSettings::defaults());
  fs::create_directories(out);
  write_text(out / "probe.json", r.to_json().dump(2) + "\n");
  std::printf("ceiling 1 - TV = %.3f\n", r.ceiling);
  for (const auto& p : r.curve) {
    std::printf("dm_mmd   w=%-7g seed %-3llu mmd %.4f  source %.3f  target %.3f\n", p.dm_weight,
                static_cast<unsigned long long>(p.seed), p.mmd, p.source_accuracy, p.target_accuracy);
  }
  for (const auto& p : r.instapbm) {
    std::printf("instapbm          seed %-3llu mmd %.4f  source %.3f  target %.3f\n", static_cast<unsigned long long>(p.seed),
                p.mmd, p.source_accuracy, p.target_accuracy);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive-behavior matching for unsupervised domain adaptation"};
  app.require_subcommand(1);

  std::string spec_arg;
  fs::path out;
  std::optional<std::uint64_t> seed;
  auto* generate = app.add_subcommand("generate", "Generate a source/target dataset pair");
  generate->add_option("--spec", spec_arg, "JSON spec file, or 'glyph' / 'blob' for the built-in pairs")->required();
  generate->add_option("--out", out, "Output directory")->required();
  generate->add_option("--seed", seed, "Override the generator seeds");

  std::string kind;
  fs::path in;
  double imbalance = 10.0;
  double rho = 0.0;
  std::uint64_t bench_seed = 0;
  std::string style = "inverted_random";
  auto* bench = app.add_subcommand("bench", "Build an LDS / ILDS / TwO benchmark from a generated pair");
  bench->add_option("--kind", kind, "lds, ilds or two")->required()->check(CLI::IsMember({"lds", "ilds", "two"}));
  bench->add_option("--in", in, "Directory holding source/ and target/")->required();
  bench->add_option("--out", out, "Output directory")->required();
  bench->add_option("--if", imbalance, "Imbalance factor (lds, ilds)");
  bench->add_option("--rho", rho, "Outlier fraction (two)");
  bench->add_option("--seed", bench_seed, "Benchmark seed");
  bench->add_option("--outlier-style", style, "blank, checker or inverted_random");

  std::string config;
  fs::path src_dir;
  fs::path tgt_dir;
  auto* train_cmd = app.add_subcommand("train", "Train one configuration and write a run directory");
  train_cmd->add_option("--config", config, "TrainConfig JSON, or 'desk'")->required();
  train_cmd->add_option("--src", src_dir, "Source dataset directory")->required();
  train_cmd->add_option("--tgt", tgt_dir, "Target dataset directory")->required();
  train_cmd->add_option("--out", out, "Run directory")->required();

  fs::path checkpoint;
  fs::path data;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
  eval->add_option("--data", data, "Dataset directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Run the component ablation table");
  ablate->add_option("--config", config, "Ablation plan JSON, or 'desk'")->required();
  ablate->add_option("--out", out, "Output directory")->required();

  double tol = 1e-4;
  std::size_t instances = 20;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every operation and loss");
  gradcheck->add_option("--tol", tol, "Relative tolerance");
  gradcheck->add_option("--instances", instances, "Random instances per case");

  auto* probe = app.add_subcommand("probe-lds", "Distribution matching under label shift on the blob pair");
  probe->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitValidation;
  }

  try {
    if (*generate) cmd_generate(spec_arg, out, seed);
    else if (*bench) cmd_bench(kind, in, out, imbalance, rho, bench_seed, style);
    else if (*train_cmd) cmd_train(config, src_dir, tgt_dir, out);
    else if (*eval) cmd_eval(checkpoint, data);
    else if (*ablate) cmd_ablate(config, out);
    else if (*gradcheck) return cmd_gradcheck(tol, instances);
    else if (*probe) cmd_probe(out);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DomainError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return 0;
}
