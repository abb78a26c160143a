#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "moa/transformer.hpp"

namespace moa {

// Per-token cost of one FFN sublayer. Multiply-accumulates and activation
// evaluations are kept apart. One evaluation counts as one unit.
struct FlopBreakdown {
  std::uint64_t projection_macs = 0;
  std::uint64_t activation_evals = 0;
  std::uint64_t gate_macs = 0;
  std::uint64_t mixing_macs = 0;

  std::uint64_t total() const noexcept { return projection_macs + activation_evals + gate_macs + mixing_macs; }
};

inline constexpr const char* kFlopUnits =
    "flops = multiply-accumulates + activation evaluations per token (summed over FFN sublayers in reports)";

FlopBreakdown flop_breakdown(const FFNConfig& config);
std::uint64_t analytic_flops(const FFNConfig& config);

// Work a non-baseline variant adds on top of the projections: its activation
// evaluations, gates and mixing. Zero for baselines.
std::uint64_t extra_flops(const FFNConfig& config);
// extra_flops over the analytic cost of the same-flavor baseline at equal d, D.
double extra_flops_ratio(const FFNConfig& config);

struct BenchOptions {
  std::size_t steps = 10;   // timed steps after warmup
  std::size_t warmup = 3;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
};

struct OverheadReport {
  std::string variant;
  Flavor flavor = Flavor::TypeII;
  std::size_t params_total = 0;
  std::int64_t params_delta_vs_baseline = 0;
  std::uint64_t flops_per_token = 0;  // summed over the FFN sublayers
  double mean_step_ms = 0.0;
  double median_step_ms = 0.0;
  std::int64_t peak_alloc_bytes = 0;  // parameters, gradients and the largest step working set
  double ratio_vs_baseline = 1.0;     // mean step time over the baseline's
  std::size_t batch_size = 0;
  std::string note;
};

// Raw timing of full training steps (forward, backward, AdamW) for one model.
struct StepTiming {
  std::vector<double> step_ms;
  std::int64_t peak_alloc_bytes = 0;
  std::size_t batch_size = 0;
  std::string note;
};

StepTiming time_steps(const ModelConfig& config, const BenchOptions& options);

// Times model_config and its same-flavor baseline in this process, alternating
// steps between the two, and reports the variant against the baseline. Throws
// ContractError when steps < 10.
OverheadReport wall_clock(const ModelConfig& model_config, const BenchOptions& options = {});

// Baseline row first (ratio 1), then each variant of the flavor in order.
std::vector<OverheadReport> wall_clock_suite(const ModelConfig& model_config, std::span<const VariantTag> variants,
                                             const BenchOptions& options = {});

void write_overhead_csv(std::span<const OverheadReport> reports, std::ostream& out);
void write_overhead_table(std::span<const OverheadReport> reports, std::ostream& out);

}  // namespace moa
