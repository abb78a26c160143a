#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "moa/bench.hpp"
#include "moa/expressivity.hpp"
#include "moa/train.hpp"

namespace moa {

inline constexpr int kConfigSchemaVersion = 1;

// Everything a CLI run reads. Text form: one `section.key = value` per line,
// `#` comments, blank lines ignored. schema_version is mandatory and unknown
// keys are rejected.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::string output_dir = "runs/latest";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  ModelConfig model;
  // Empty selects the flavor default: "gsr2lr" (Type-I), "gsr2ltr" (Type-II).
  std::string dictionary;
  double leaky_slope = kDefaultLeakySlope;
  TrainConfig train;

  GridSpec grid;             // dim is chosen per target
  FitBudget fit;             // seed and jobs come from the run
  FitBudget report_fit{.restarts = 2, .steps = 1500};
  BenchOptions bench{.steps = 20, .warmup = 3, .batch_size = 4, .seed = 0};
};

// ConfigError naming the line and key on any problem.
RunConfig parse_config(std::string_view text, std::string_view source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
std::string render_config(const RunConfig& config);

// Applies one `key=value` override (the --set flag).
void apply_override(RunConfig& config, std::string_view assignment);

std::vector<std::string> config_keys();

// The model config with the dictionary resolved for the variant's flavor.
ModelConfig resolved_model(const RunConfig& config);
ActivationDictionary resolved_dictionary(const RunConfig& config, Flavor flavor);

// Ablation grid file:
//   schema_version = 1
//   baseline = SwiGLU
//   max_lrs = 1e-3, 3e-3, 1e-2
//   arm.SwiGLU = variant=BaselineII
//   arm.Sigmoid = variant=BiMoA gate=Sigmoid dictionary=gsr2ltr
// Each arm expands to one cell per learning rate, named arm@lr. Arm settings
// start from the run config's ffn section; an arm may set its own max_lrs
// (colon separated, e.g. max_lrs=1e-3:3e-3).
struct AblationGrid {
  std::vector<AblationCell> cells;
  std::string baseline;  // first cell of the baseline arm
};

AblationGrid parse_ablation_grid(std::string_view text, const RunConfig& base, std::string_view source = "<grid>");
AblationGrid load_ablation_grid(const std::filesystem::path& path, const RunConfig& base);

}  // namespace moa
