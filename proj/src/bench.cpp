#include "moa/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/train.hpp"

namespace moa {

namespace {

std::uint64_t u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

// Per-hidden-unit work of each variant.
struct VariantCost {
  std::uint64_t evals_per_unit;  // activation evaluations per hidden unit
  std::uint64_t mix_per_unit;    // mixing multiply-adds per hidden unit
  std::uint64_t gate_rows;
};

VariantCost cost_of(const FFNConfig& c) {
  const std::uint64_t K = u64(c.dictionary.size());
  const std::uint64_t P = K * (K + 1) / 2;
  switch (c.variant.tag) {
    case VariantTag::BaselineI:
    case VariantTag::BaselineII:
      return {1, 0, 0};
    case VariantTag::LA_I:
      return {K, K, 0};
    case VariantTag::MoA_I:
      return {K, K, K};
    case VariantTag::OneLA:
      return {K + 1, K, 0};
    case VariantTag::OneMoA:
      return {K + 1, K, K};
    case VariantTag::BiLA:
      return {2 * K, 2 * K, 0};
    case VariantTag::BiMoA:
      return {2 * K, 2 * K, 2 * K};
    case VariantTag::QdLA:
      return {2 * K, P, 0};
    case VariantTag::QdMoA:
      return {2 * K, P, P};
  }
  return {1, 0, 0};
}

FFNConfig baseline_of(const FFNConfig& c) {
  FFNConfig b = c;
  b.variant.tag = flavor_of(c.variant.tag) == Flavor::TypeI ? VariantTag::BaselineI : VariantTag::BaselineII;
  return b;
}

ModelConfig baseline_of(const ModelConfig& c) {
  ModelConfig b = c;
  b.ffn = baseline_of(c.ffn);
  return b;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

std::uint64_t next_token(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

OverheadReport report_from(const ModelConfig& config, const StepTiming& timing) {
  OverheadReport r;
  r.variant = std::string(name(config.ffn.variant.tag));
  r.flavor = flavor_of(config.ffn.variant.tag);
  r.params_total = build(config, 0).param_count();
  FFNConfig layer = config.ffn;
  layer.d_model = config.d_model;
  r.flops_per_token = analytic_flops(layer) * u64(config.n_layer);
  r.mean_step_ms = mean_of(timing.step_ms);
  r.median_step_ms = median(timing.step_ms);
  r.peak_alloc_bytes = timing.peak_alloc_bytes;
  r.batch_size = timing.batch_size;
  r.note = timing.note;
  return r;
}

void relate(OverheadReport& r, const OverheadReport& baseline) {
  r.params_delta_vs_baseline =
      static_cast<std::int64_t>(r.params_total) - static_cast<std::int64_t>(baseline.params_total);
  r.ratio_vs_baseline = r.mean_step_ms / baseline.mean_step_ms;
}

}  // namespace

FlopBreakdown flop_breakdown(const FFNConfig& config) {
  validate(config);
  const std::uint64_t d = u64(config.d_model), D = u64(resolved_hidden(config));
  const VariantCost s = cost_of(config);
  FlopBreakdown f;
  f.projection_macs = (flavor_of(config.variant.tag) == Flavor::TypeI ? 2 : 3) * d * D;
  f.activation_evals = s.evals_per_unit * D;
  f.gate_macs = s.gate_rows * d;
  f.mixing_macs = s.mix_per_unit * D;
  return f;
}

std::uint64_t analytic_flops(const FFNConfig& config) { return flop_breakdown(config).total(); }

std::uint64_t extra_flops(const FFNConfig& config) {
  if (is_baseline(config.variant.tag)) {
    validate(config);
    return 0;
  }
  const FlopBreakdown f = flop_breakdown(config);
  return f.activation_evals + f.gate_macs + f.mixing_macs;
}

double extra_flops_ratio(const FFNConfig& config) {
  FFNConfig base = baseline_of(config);
  base.hidden = resolved_hidden(config);
  return static_cast<double>(extra_flops(config)) / static_cast<double>(analytic_flops(base));
}

namespace {

// One model under timing: full training steps (zero_grad, forward, backward,
// AdamW) on random tokens.
class StepRunner {
 public:
  StepRunner(const ModelConfig& config, std::uint64_t seed)
      : config_(config), model_(build(config, seed)), params_(model_.parameters()), rng_(seed ^ 0xbe7c4ULL) {
    for (const auto& p : params_) resident_bytes_ += static_cast<std::int64_t>(2 * p.tensor.numel() * sizeof(double));
  }

  double step(std::size_t batch_size) {
    TokenBatch batch{batch_size, config_.seq_len + 1, {}};
    batch.ids.resize(batch.batch * batch.length);
    for (auto& id : batch.ids) id = static_cast<int>(next_token(rng_) % config_.vocab_size);
    reset_peak_memory();
    const std::int64_t live = memory_stats().live_bytes;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& p : params_) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    const Tensor loss = forward_loss(model_, batch);
    backward(loss);
    adamw_step(params_, state_, 1e-4, AdamWOptions{});
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    transient_bytes_ = std::max(transient_bytes_, memory_stats().peak_bytes - live);
    return ms;
  }

  // Parameters and gradients plus the largest per-step working set.
  std::int64_t peak_bytes() const { return resident_bytes_ + transient_bytes_; }

 private:
  ModelConfig config_;
  TransformerModel model_;
  std::vector<NamedParam> params_;
  AdamWState state_;
  std::uint64_t rng_;
  std::int64_t resident_bytes_ = 0;
  std::int64_t transient_bytes_ = 0;
};

// Times the configs round-robin, one step each per round, so drift in machine
// load hits every config alike. The batch doubles (for all of them) while the
// first config's median step is below 1 ms.
std::vector<StepTiming> time_interleaved(const std::vector<ModelConfig>& configs, const BenchOptions& options) {
  if (options.steps < 10) throw ContractError("wall-clock timing needs at least 10 steps after warmup");
  for (const auto& c : configs) validate(c);
  std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  std::string note;
  for (;;) {
    std::vector<StepRunner> runners;
    for (const auto& c : configs) runners.emplace_back(c, options.seed);
    std::vector<StepTiming> out(configs.size());
    for (std::size_t step = 0; step < options.warmup + options.steps; ++step) {
      for (std::size_t i = 0; i < runners.size(); ++i) {
        const double ms = runners[i].step(batch_size);
        if (step >= options.warmup) out[i].step_ms.push_back(ms);
      }
    }
    if (median(out.front().step_ms) >= 1.0 || batch_size >= 4096) {
      for (std::size_t i = 0; i < runners.size(); ++i) {
        out[i].peak_alloc_bytes = runners[i].peak_bytes();
        out[i].batch_size = batch_size;
        out[i].note = note;
      }
      return out;
    }
    batch_size *= 2;
    note = "batch widened to " + std::to_string(batch_size) + " for timer resolution";
  }
}

}  // namespace

StepTiming time_steps(const ModelConfig& config, const BenchOptions& options) {
  return time_interleaved({config}, options).front();
}

OverheadReport wall_clock(const ModelConfig& model_config, const BenchOptions& options) {
  const ModelConfig base = baseline_of(model_config);
  const auto timings = time_interleaved({base, model_config}, options);
  const OverheadReport b = report_from(base, timings[0]);
  OverheadReport r = report_from(model_config, timings[1]);
  relate(r, b);
  return r;
}

std::vector<OverheadReport> wall_clock_suite(const ModelConfig& model_config, std::span<const VariantTag> variants,
                                             const BenchOptions& options) {
  const ModelConfig base = baseline_of(model_config);
  const Flavor flavor = flavor_of(base.ffn.variant.tag);
  std::vector<ModelConfig> configs{base};
  for (const VariantTag tag : variants) {
    if (flavor_of(tag) != flavor)
      throw FlavorError(std::string(name(tag)) + " is not a " + std::string(name(flavor)) + " variant");
    if (tag == base.ffn.variant.tag) continue;
    configs.push_back(model_config);
    configs.back().ffn.variant.tag = tag;
  }
  const auto timings = time_interleaved(configs, options);
  std::vector<OverheadReport> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    out.push_back(report_from(configs[i], timings[i]));
    relate(out.back(), out.front());
  }
  return out;
}

void write_overhead_csv(std::span<const OverheadReport> reports, std::ostream& out) {
  out << "# " << kFlopUnits << "\n";
  out << "variant,flavor,params_total,params_delta_vs_baseline,flops_per_token,mean_step_ms,median_step_ms,"
         "peak_alloc_bytes,ratio_vs_baseline,batch_size,note\n";
  for (const auto& r : reports) {
    out << r.variant << ',' << name(r.flavor) << ',' << r.params_total << ',' << r.params_delta_vs_baseline << ','
        << r.flops_per_token << ',' << std::fixed << std::setprecision(3) << r.mean_step_ms << ','
        << r.median_step_ms << ',' << r.peak_alloc_bytes << ',' << r.ratio_vs_baseline << ',' << r.batch_size << ','
        << r.note << '\n';
    out.unsetf(std::ios::floatfield);
  }
}

void write_overhead_table(std::span<const OverheadReport> reports, std::ostream& out) {
  const std::vector<std::string> head{"variant", "params", "delta", "flops/token", "mean ms", "median ms",
                                      "peak MiB", "ratio"};
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    const auto fmt = [](double v, int prec) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(prec) << v;
      return s.str();
    };
    rows.push_back({r.variant, std::to_string(r.params_total), std::to_string(r.params_delta_vs_baseline),
                    std::to_string(r.flops_per_token), fmt(r.mean_step_ms, 2), fmt(r.median_step_ms, 2),
                    fmt(static_cast<double>(r.peak_alloc_bytes) / (1024.0 * 1024.0), 1),
                    fmt(r.ratio_vs_baseline, 3) + "x"});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  const auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == 0) out << std::left << std::setw(static_cast<int>(width[c])) << cells[c];
      else out << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[c];
    }
    out << '\n';
  };
  out << "# " << kFlopUnits << '\n';
  line(head);
  for (const auto& row : rows) line(row);
  for (const auto& r : reports) {
    if (!r.note.empty()) out << "note (" << r.variant << "): " << r.note << '\n';
  }
}

}  // namespace moa
