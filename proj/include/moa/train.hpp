#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "moa/transformer.hpp"

namespace moa {

enum class Schedule { Cos, Wsd };

std::string_view name(Schedule schedule) noexcept;
Schedule schedule_from_name(std::string_view name);

struct TrainConfig {
  double max_lr = 3e-3;
  Schedule schedule = Schedule::Cos;
  std::size_t warmup_steps = 50;
  std::size_t total_steps = 500;
  std::size_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::size_t eval_interval = 0;  // 0 selects total_steps / 20
  std::size_t eval_batches = 8;
  std::vector<std::uint64_t> seeds{0};
  std::string corpus_path;
};

void validate(const TrainConfig& config);
std::size_t resolved_eval_interval(const TrainConfig& config);

// Learning rate at a step in [0, total_steps].
//   cos: linear warmup, then cosine from max_lr down to max_lr/20.
//   wsd: linear warmup, flat until floor(0.8·total), then linear to 0.
double lr_at(const TrainConfig& config, std::size_t step);
std::size_t wsd_decay_start(const TrainConfig& config);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// One decoupled-weight-decay Adam update over every parameter, using the
// gradients currently stored on them (absent gradients count as zero). Returns
// the global gradient L2 norm before clipping.
double adamw_step(const std::vector<NamedParam>& params, AdamWState& state, double lr, const AdamWOptions& options);

// ---- data ---------------------------------------------------------------

struct Corpus {
  std::vector<int> train;
  std::vector<int> val;  // final 5% of the bytes
};

Corpus load_corpus(const std::filesystem::path& path);
Corpus split_corpus(const std::string& bytes);

// Deterministic English-like text (word salad over a small Zipfian lexicon).
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);
// Independent uniform bytes.
std::string random_corpus(std::size_t bytes, std::uint64_t seed);

// batch_size windows of seq_len+1 consecutive tokens at uniform offsets.
TokenBatch sample_batch(const std::vector<int>& data, std::size_t batch_size, std::size_t seq_len,
                        std::uint64_t& rng_state);

// ---- runs ------------------------------------------------------------------

struct MetricRecord {
  std::size_t step = 0;
  enum class Kind { Train, Eval } kind = Kind::Train;
  double loss = 0.0;
  double lr = 0.0;
};

struct RunMetrics {
  std::vector<MetricRecord> records;
  double final_val_loss = 0.0;
  double final_train_loss = 0.0;  // mean of the last few train losses
  double initial_train_loss = 0.0;
  double wall_seconds = 0.0;
  std::size_t param_count = 0;
};

using MetricSink = std::function<void(const MetricRecord&)>;

// Trains a freshly built model and returns its metric stream. When
// final_model is set the trained model is stored there.
RunMetrics run_training(const ModelConfig& model_config, const TrainConfig& train_config, std::uint64_t seed,
                        const Corpus& corpus, const MetricSink& sink = {}, TransformerModel* final_model = nullptr);

// Mean validation loss over a fixed set of windows.
double evaluate(const TransformerModel& model, const std::vector<int>& data, std::size_t batches,
                std::size_t batch_size);

void write_metrics_jsonl(const RunMetrics& metrics, std::ostream& out);
std::string metric_json(const MetricRecord& record);

// ---- ablation ----------------------------------------------------------------

struct AblationCell {
  std::string name;
  std::string arm;  // cells sharing an arm differ only in max_lr
  FFNConfig ffn;
  double max_lr = 3e-3;
};

struct AblationRow {
  AblationCell cell;
  std::vector<double> val_losses;  // one per seed
  double median_val_loss = 0.0;
  double rel_loss = 0.0;  // median minus the baseline cell's median
  std::size_t param_count = 0;
  bool failed = false;
  std::string error;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::size_t> best_per_arm;  // row index with the lowest median per arm
  std::string baseline;
};

// Runs every cell for every seed (jobs workers in parallel). A cell that throws
// is marked failed and the remaining cells still run.
AblationResult run_ablation(const std::vector<AblationCell>& cells, const std::string& baseline,
                            const ModelConfig& model_config, const TrainConfig& train_config, const Corpus& corpus,
                            std::size_t jobs = 1);

void write_ablation_csv(const AblationResult& result, std::ostream& out);
void write_ablation_summary_csv(const AblationResult& result, std::ostream& out);

double median(std::vector<double> values);

}  // namespace moa
