#include "moa/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <ostream>
#include <thread>

#include "moa/errors.hpp"

namespace moa {

namespace {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kTrainLossWindow = 20;

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.total_steps == 0) throw ConfigError("train.total_steps must be positive");
  if (c.warmup_steps >= c.total_steps) throw ConfigError("train.warmup_steps must be below train.total_steps");
  if (c.schedule == Schedule::Wsd && c.warmup_steps > wsd_decay_start(c))
    throw ConfigError("train.warmup_steps extends past the wsd decay start");
  if (!(c.max_lr > 0.0) || !std::isfinite(c.max_lr)) throw ConfigError("train.max_lr must be positive");
  if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0,1)");
  if (c.weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (c.seeds.empty()) throw ConfigError("train.seeds must list at least one seed");
}

std::size_t resolved_eval_interval(const TrainConfig& c) {
  return c.eval_interval ? c.eval_interval : std::max<std::size_t>(1, c.total_steps / 20);
}

double evaluate(const TransformerModel& model, const std::vector<int>& data, std::size_t batches,
                std::size_t batch_size) {
  const std::size_t window = model.config.seq_len + 1;
  if (data.size() < window) throw DataError("validation split is shorter than one window");
  const std::size_t count = batches * batch_size;
  const std::size_t span = data.size() - window;
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    TokenBatch tb{batch_size, window, {}};
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t k = b * batch_size + i;
      const std::size_t start = count > 1 ? (span * k) / (count - 1) : 0;
      tb.ids.insert(tb.ids.end(), data.begin() + static_cast<std::ptrdiff_t>(start),
                    data.begin() + static_cast<std::ptrdiff_t>(start + window));
    }
    total += forward_loss(model, tb).item();
  }
  return total / static_cast<double>(batches);
}

RunMetrics run_training(const ModelConfig& model_config, const TrainConfig& cfg, std::uint64_t seed,
                        const Corpus& corpus, const MetricSink& sink, TransformerModel* final_model) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  TransformerModel model = build(model_config, seed);
  const auto params = model.parameters();
  const AdamWOptions opt{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.clip_norm};
  AdamWState state;
  std::uint64_t rng = mix_seed(seed ^ 0x5eedba7c4e5ULL);
  const std::size_t interval = resolved_eval_interval(cfg);

  RunMetrics out;
  out.param_count = model.param_count();
  const auto emit = [&](const MetricRecord& r) {
    out.records.push_back(r);
    if (sink) sink(r);
  };
  const auto eval_at = [&](std::size_t step) {
    const double loss = evaluate(model, corpus.val, cfg.eval_batches, cfg.batch_size);
    if (!std::isfinite(loss)) throw NumericError("non-finite validation loss at step " + std::to_string(step));
    emit({step, MetricRecord::Kind::Eval, loss, lr_at(cfg, step)});
    return loss;
  };

  eval_at(0);
  std::vector<double> recent;
  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    const TokenBatch batch = sample_batch(corpus.train, cfg.batch_size, model_config.seq_len, rng);
    for (const auto& p : params) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    const Tensor loss = forward_loss(model, batch);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite training loss at step " + std::to_string(step));
    backward(loss);
    const double lr = lr_at(cfg, step);
    adamw_step(params, state, lr, opt);
    emit({step, MetricRecord::Kind::Train, value, lr});
    if (step == 1) out.initial_train_loss = value;
    recent.push_back(value);
    if (recent.size() > kTrainLossWindow) recent.erase(recent.begin());
    if (step % interval == 0 || step == cfg.total_steps) {
      const double v = eval_at(step);
      if (step == cfg.total_steps) out.final_val_loss = v;
    }
  }
  double acc = 0.0;
  for (double v : recent) acc += v;
  out.final_train_loss = acc / static_cast<double>(recent.size());
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (final_model) *final_model = std::move(model);
  return out;
}

std::string metric_json(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["kind"] = r.kind == MetricRecord::Kind::Train ? "train" : "eval";
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  return j.dump();
}

void write_metrics_jsonl(const RunMetrics& metrics, std::ostream& out) {
  for (const auto& r : metrics.records) out << metric_json(r) << '\n';
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationResult run_ablation(const std::vector<AblationCell>& cells, const std::string& baseline,
                            const ModelConfig& model_config, const TrainConfig& train_config, const Corpus& corpus,
                            std::size_t jobs) {
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  validate(train_config);
  const auto base_it =
      std::find_if(cells.begin(), cells.end(), [&](const AblationCell& c) { return c.name == baseline; });
  if (base_it == cells.end()) throw ConfigError("baseline cell '" + baseline + "' is not in the grid");

  AblationResult result;
  result.baseline = baseline;
  const std::size_t n_seeds = train_config.seeds.size();
  result.rows.resize(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    result.rows[i].cell = cells[i];
    result.rows[i].val_losses.assign(n_seeds, std::numeric_limits<double>::quiet_NaN());
  }
  std::vector<std::string> errors(cells.size() * n_seeds);

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t task; (task = next.fetch_add(1)) < cells.size() * n_seeds;) {
      const std::size_t ci = task / n_seeds, si = task % n_seeds;
      try {
        ModelConfig mc = model_config;
        mc.ffn = cells[ci].ffn;
        TrainConfig tc = train_config;
        tc.max_lr = cells[ci].max_lr;
        const RunMetrics m = run_training(mc, tc, train_config.seeds[si], corpus);
        result.rows[ci].val_losses[si] = m.final_val_loss;
        if (si == 0) result.rows[ci].param_count = m.param_count;
      } catch (const std::exception& e) {
        errors[task] = e.what();
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(jobs, cells.size() * n_seeds));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    auto& row = result.rows[ci];
    for (std::size_t si = 0; si < n_seeds; ++si) {
      if (!errors[ci * n_seeds + si].empty() && !row.failed) {
        row.failed = true;
        row.error = "seed " + std::to_string(train_config.seeds[si]) + ": " + errors[ci * n_seeds + si];
        std::replace(row.error.begin(), row.error.end(), ',', ';');
        std::replace(row.error.begin(), row.error.end(), '\n', ' ');
      }
    }
    row.median_val_loss = row.failed ? std::numeric_limits<double>::quiet_NaN() : median(row.val_losses);
  }
  const double base = result.rows[static_cast<std::size_t>(base_it - cells.begin())].median_val_loss;
  for (auto& row : result.rows) row.rel_loss = row.median_val_loss - base;

  std::vector<std::string> arms;
  for (const auto& row : result.rows) {
    const std::string arm = row.cell.arm.empty() ? row.cell.name : row.cell.arm;
    if (std::find(arms.begin(), arms.end(), arm) == arms.end()) arms.push_back(arm);
  }
  for (const auto& arm : arms) {
    std::size_t best = result.rows.size();
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
      const auto& row = result.rows[i];
      if ((row.cell.arm.empty() ? row.cell.name : row.cell.arm) != arm || row.failed) continue;
      if (best == result.rows.size() || row.median_val_loss < result.rows[best].median_val_loss) best = i;
    }
    if (best < result.rows.size()) result.best_per_arm.push_back(best);
  }
  return result;
}

void write_ablation_csv(const AblationResult& result, std::ostream& out) {
  out << "name,arm,variant,gating,dictionary,max_lr,val_losses,median_val_loss,rel_loss,params,status\n";
  for (const auto& row : result.rows) {
    const auto& c = row.cell;
    std::string losses;
    for (std::size_t i = 0; i < row.val_losses.size(); ++i) losses += (i ? ";" : "") + fmt(row.val_losses[i], 6);
    out << c.name << ',' << (c.arm.empty() ? c.name : c.arm) << ',' << name(c.ffn.variant.tag) << ','
        << (is_moa(c.ffn.variant.tag) ? std::string(name(c.ffn.gate)) : "-") << ','
        << (is_baseline(c.ffn.variant.tag) ? "-" : render_dictionary(c.ffn.dictionary)) << ',' << fmt_g(c.max_lr)
        << ',' << losses << ',' << fmt(row.median_val_loss, 6) << ',' << fmt(row.rel_loss, 6) << ','
        << row.param_count << ',' << (row.failed ? "failed: " + row.error : "ok") << '\n';
  }
}

void write_ablation_summary_csv(const AblationResult& result, std::ostream& out) {
  const auto arm_of = [](const AblationRow& r) { return r.cell.arm.empty() ? r.cell.name : r.cell.arm; };
  std::string base_arm;
  for (const auto& row : result.rows)
    if (row.cell.name == result.baseline) base_arm = arm_of(row);
  double base = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i : result.best_per_arm)
    if (arm_of(result.rows[i]) == base_arm) base = result.rows[i].median_val_loss;

  // Each arm at its best max_lr, measured against the baseline arm at its best.
  out << "arm,variant,gating,dictionary,median_val_loss,rel_loss,max_lr\n";
  for (std::size_t i : result.best_per_arm) {
    const auto& row = result.rows[i];
    const auto& c = row.cell;
    out << (c.arm.empty() ? c.name : c.arm) << ',' << name(c.ffn.variant.tag) << ','
        << (is_moa(c.ffn.variant.tag) ? std::string(name(c.ffn.gate)) : "-") << ','
        << (is_baseline(c.ffn.variant.tag) ? "-" : render_dictionary(c.ffn.dictionary)) << ','
        << fmt(row.median_val_loss, 6) << ',' << fmt(row.median_val_loss - base, 3) << ',' << fmt_g(c.max_lr) << '\n';
  }
}

}  // namespace moa
