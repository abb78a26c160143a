#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/train.hpp"

using namespace moa;

namespace {

TrainConfig schedule(Schedule kind, std::size_t warmup, std::size_t total, double max_lr = 3e-3) {
  TrainConfig c;
  c.schedule = kind;
  c.warmup_steps = warmup;
  c.total_steps = total;
  c.max_lr = max_lr;
  return c;
}

// Leaves grad(p) == g.
void set_grad(const Tensor& p, const std::vector<double>& g) {
  Tensor t = p;
  t.zero_grad();
  backward(sum(hadamard(p, Tensor::from_data(p.shape(), g))));
}

ModelConfig toy_model(VariantTag tag = VariantTag::BaselineII) {
  ModelConfig m;
  m.d_model = 32;
  m.n_head = 2;
  m.n_layer = 1;
  m.seq_len = 32;
  m.ffn.variant.tag = tag;
  if (!is_baseline(tag)) m.ffn.dictionary = parse_dictionary(flavor_of(tag) == Flavor::TypeI ? "gsr2lr" : "gsr2ltr",
                                                             flavor_of(tag));
  return m;
}

TrainConfig toy_train(std::size_t steps) {
  TrainConfig t;
  t.max_lr = 1e-2;
  t.warmup_steps = steps / 10;
  t.total_steps = steps;
  t.batch_size = 8;
  t.eval_batches = 2;
  return t;
}

const Corpus& text_corpus() {
  static const Corpus c = split_corpus(synthetic_corpus(200000, 7));
  return c;
}

}  // namespace

TEST_CASE("cos schedule endpoints") {
  const TrainConfig c = schedule(Schedule::Cos, 100, 1000, 3e-3);
  CHECK(lr_at(c, 0) == 0.0);
  CHECK(lr_at(c, 50) == doctest::Approx(1.5e-3));
  CHECK(lr_at(c, 100) == 3e-3);
  CHECK(lr_at(c, 1000) == 3e-3 / 20.0);
  const double mid = lr_at(c, 550);
  CHECK(mid == doctest::Approx(0.5 * (3e-3 + 3e-3 / 20.0)));
}

TEST_CASE("wsd schedule endpoints") {
  const TrainConfig c = schedule(Schedule::Wsd, 100, 1001, 1e-3);
  CHECK(wsd_decay_start(c) == 800);
  CHECK(lr_at(c, 100) == 1e-3);
  CHECK(lr_at(c, 500) == 1e-3);
  CHECK(lr_at(c, 800) == 1e-3);
  CHECK(lr_at(c, 801) < 1e-3);
  CHECK(lr_at(c, 1001) == 0.0);
  CHECK(lr_at(schedule(Schedule::Wsd, 10, 1000), 800) == 3e-3);
  CHECK(lr_at(schedule(Schedule::Wsd, 10, 1000), 1000) == 0.0);
}

TEST_CASE("lr_at rejects steps past the end") {
  CHECK_THROWS_AS(lr_at(schedule(Schedule::Cos, 10, 100), 101), ContractError);
  CHECK_THROWS_AS(lr_at(schedule(Schedule::Wsd, 10, 100), 101), ContractError);
}

TEST_CASE("schedules change by at most one phase slope per step") {
  for (const Schedule kind : {Schedule::Cos, Schedule::Wsd}) {
    for (const auto [warmup, total] : {std::pair<std::size_t, std::size_t>{10, 100}, {0, 37}, {50, 1000}, {1, 7}}) {
      const TrainConfig c = schedule(kind, warmup, total, 2e-3);
      const double warm_slope = warmup ? c.max_lr / static_cast<double>(warmup) : 0.0;
      const double decay_len = kind == Schedule::Cos ? static_cast<double>(total - warmup)
                                                     : static_cast<double>(total - wsd_decay_start(c));
      // cos: |d/ds| <= (max - min)·π/2 / len; wsd: max / len.
      const double decay_slope = (kind == Schedule::Cos ? c.max_lr * 0.95 * M_PI / 2.0 : c.max_lr) / decay_len;
      const double bound = std::max(warm_slope, decay_slope) * (1.0 + 1e-12);
      double worst = 0.0;
      for (std::size_t s = 0; s < total; ++s) worst = std::max(worst, std::abs(lr_at(c, s + 1) - lr_at(c, s)));
      CAPTURE(name(kind));
      CAPTURE(total);
      CHECK(worst <= bound);
    }
  }
}

TEST_CASE("schedule names round-trip") {
  CHECK(schedule_from_name(name(Schedule::Cos)) == Schedule::Cos);
  CHECK(schedule_from_name(name(Schedule::Wsd)) == Schedule::Wsd);
  CHECK_THROWS_AS(schedule_from_name("linear"), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig c = toy_train(100);
  CHECK_NOTHROW(validate(c));
  c.warmup_steps = 100;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = toy_train(100);
  c.seeds.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = toy_train(100);
  c.max_lr = -1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK(resolved_eval_interval(toy_train(100)) == 5);
}

TEST_CASE("first AdamW step moves by lr against the gradient sign") {
  const Tensor p = Tensor::scalar(0.0, true);
  set_grad(p, {1.0});
  AdamWState state;
  adamw_step({{"p", p, true}}, state, 0.01, {.weight_decay = 0.0, .clip_norm = 0.0});
  CHECK(p.item() == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay with zero gradients") {
  const Tensor p = Tensor::from_data({2}, {2.0, -4.0}, true);
  const Tensor skip = Tensor::from_data({1}, {3.0}, true);
  AdamWState state;
  const std::vector<NamedParam> params{{"p", p, true}, {"skip", skip, false}};
  for (int step = 0; step < 3; ++step) {
    set_grad(p, {0.0, 0.0});
    adamw_step(params, state, 0.5, {.weight_decay = 0.1});
  }
  const double f = std::pow(1.0 - 0.5 * 0.1, 3);
  CHECK(p.at(0) == doctest::Approx(2.0 * f).epsilon(1e-14));
  CHECK(p.at(1) == doctest::Approx(-4.0 * f).epsilon(1e-14));
  CHECK(skip.item() == 3.0);
}

TEST_CASE("clipping makes the update invariant to gradient scale") {
  const std::vector<double> dir{0.6, -0.8};
  const auto run = [&](double factor) {
    const Tensor p = Tensor::from_data({2}, {1.0, 1.0}, true);
    AdamWState state;
    set_grad(p, {dir[0] * factor, dir[1] * factor});
    const double norm = adamw_step({{"p", p, true}}, state, 0.01, {});
    CHECK(norm == doctest::Approx(factor));
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  const auto unit = run(1.0), big = run(1000.0);
  CHECK(unit[0] == big[0]);
  CHECK(unit[1] == big[1]);
}

TEST_CASE("Adam without decay or clipping follows a reference trace") {
  // Reference values from a 40-digit recomputation of the Adam recurrences.
  const double grads[] = {0.3, -1.2, 0.7, 2.0, -0.4, 0.05, 1.1, -0.9, 0.6, -0.2};
  const double expect[] = {0.49000000033333332222, 0.49553401801458319845, 0.49614714438706366098,
                           0.49179852163835569147, 0.48899661069947181454, 0.48644482820969059666,
                           0.48235980234595203485, 0.48049804341212224399, 0.47785141928180211934,
                           0.47580365266652474168};
  const Tensor p = Tensor::scalar(0.5, true);
  AdamWState state;
  for (int t = 0; t < 10; ++t) {
    set_grad(p, {grads[t]});
    adamw_step({{"p", p, true}}, state, 0.01, {.weight_decay = 0.0, .clip_norm = 0.0});
    CAPTURE(t);
    CHECK(p.item() == doctest::Approx(expect[t]).epsilon(1e-14));
  }
  CHECK(state.step == 10);
}

TEST_CASE("non-finite gradient names the parameter") {
  const Tensor p = Tensor::scalar(1.0, true);
  set_grad(p, {std::nan("")});
  AdamWState state;
  try {
    adamw_step({{"blocks.0.ffn.W1", p, true}}, state, 0.01, {});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("blocks.0.ffn.W1") != std::string::npos);
  }
}

TEST_CASE("corpus split and batches") {
  const Corpus c = split_corpus(std::string(1000, 'a'));
  CHECK(c.val.size() == 50);
  CHECK(c.train.size() == 950);
  CHECK(synthetic_corpus(5000, 3) == synthetic_corpus(5000, 3));
  CHECK(synthetic_corpus(5000, 3) != synthetic_corpus(5000, 4));
  CHECK(synthetic_corpus(5000, 3).size() == 5000);

  std::uint64_t rng = 1;
  const TokenBatch b = sample_batch(c.train, 4, 16, rng);
  CHECK(b.batch == 4);
  CHECK(b.length == 17);
  CHECK(b.ids.size() == 68);
  CHECK_THROWS_AS(sample_batch(c.val, 1, 64, rng), DataError);

  CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.txt"), IoError);
  const auto path = std::filesystem::temp_directory_path() / "moa_corpus_test.txt";
  std::ofstream(path) << "hello world, hello corpus";
  CHECK(load_corpus(path).train.size() + load_corpus(path).val.size() == 25);
  std::filesystem::remove(path);
}

TEST_CASE("training is deterministic and learns structured text") {
  const TrainConfig t = toy_train(150);
  std::vector<MetricRecord> streamed;
  const RunMetrics a = run_training(toy_model(), t, 3, text_corpus(), [&](const MetricRecord& r) {
    streamed.push_back(r);
  });
  const RunMetrics b = run_training(toy_model(), t, 3, text_corpus());
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss == b.records[i].loss);
    CHECK(a.records[i].lr == b.records[i].lr);
  }
  CHECK(streamed.size() == a.records.size());
  CHECK(a.records.front().kind == MetricRecord::Kind::Eval);
  CHECK(a.records.front().step == 0);

  std::size_t last_step = 0, evals = 0;
  for (const auto& r : a.records) {
    CHECK(std::isfinite(r.loss));
    if (r.kind == MetricRecord::Kind::Train) {
      CHECK(r.step > last_step);
      last_step = r.step;
    } else {
      ++evals;
    }
  }
  CHECK(evals == 1 + 150 / 7 + 1);  // step 0, every 7th step, the final step
  CHECK(a.initial_train_loss == doctest::Approx(std::log(256.0)).epsilon(0.05));
  CHECK(a.final_train_loss < a.initial_train_loss - 1.0);
  CHECK(a.final_val_loss < std::log(256.0) - 1.0);
  CHECK(a.param_count == build(toy_model(), 0).param_count());

  const RunMetrics other = run_training(toy_model(), t, 4, text_corpus());
  CHECK(other.records[5].loss != a.records[5].loss);

  std::ostringstream jsonl;
  write_metrics_jsonl(a, jsonl);
  CHECK(jsonl.str().rfind("{\"step\":0,\"kind\":\"eval\",\"loss\":", 0) == 0);
}

TEST_CASE("uniform random bytes stay near ln 256") {
  const Corpus noise = split_corpus(random_corpus(200000, 11));
  TrainConfig t = toy_train(100);
  t.max_lr = 3e-3;
  t.eval_batches = 8;
  const RunMetrics m = run_training(toy_model(VariantTag::BiMoA), t, 0, noise);
  CHECK(std::abs(m.final_val_loss - std::log(256.0)) <= 0.05);
}

TEST_CASE("ablation relative loss and failure handling") {
  const ModelConfig model = toy_model();
  TrainConfig t = toy_train(20);
  t.seeds = {1, 2};
  FFNConfig base;
  base.variant.tag = VariantTag::BaselineII;

  SUBCASE("baseline alone has zero relative loss") {
    const auto r = run_ablation({{"base", "", base, 1e-2}}, "base", model, t, text_corpus());
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].rel_loss == 0.0);
    CHECK(r.rows[0].val_losses.size() == 2);
    CHECK(r.rows[0].median_val_loss == doctest::Approx(0.5 * (r.rows[0].val_losses[0] + r.rows[0].val_losses[1])));
  }
  SUBCASE("a duplicated baseline differs by exactly zero") {
    const auto r = run_ablation({{"base", "", base, 1e-2}, {"copy", "", base, 1e-2}}, "base", model, t,
                                text_corpus(), 2);
    CHECK(r.rows[1].rel_loss == 0.0);
    CHECK(r.rows[0].val_losses == r.rows[1].val_losses);
  }
  SUBCASE("a failing cell is reported and the table still emitted") {
    FFNConfig bad;
    bad.variant.tag = VariantTag::BiMoA;  // empty dictionary
    FFNConfig moa = toy_model(VariantTag::BiMoA).ffn;
    const auto r = run_ablation({{"base", "", base, 1e-2}, {"bad", "", bad, 1e-2}, {"bimoa", "", moa, 1e-2}}, "base",
                                model, t, text_corpus());
    CHECK_FALSE(r.rows[0].failed);
    CHECK(r.rows[1].failed);
    CHECK_FALSE(r.rows[1].error.empty());
    CHECK_FALSE(r.rows[2].failed);
    CHECK(std::isfinite(r.rows[2].rel_loss));
    std::ostringstream csv;
    write_ablation_csv(r, csv);
    CHECK(csv.str().find("\nbad,") != std::string::npos);
    CHECK(csv.str().find("failed: ") != std::string::npos);
    CHECK(csv.str().rfind("name,arm,variant,gating,dictionary,max_lr,", 0) == 0);
  }
  SUBCASE("best learning rate per arm") {
    const auto r = run_ablation({{"base-a", "base", base, 1e-2}, {"base-b", "base", base, 1e-7}}, "base-a", model, t,
                                text_corpus());
    REQUIRE(r.best_per_arm.size() == 1);
    CHECK(r.best_per_arm[0] == 0);
    std::ostringstream csv;
    write_ablation_summary_csv(r, csv);
    CHECK(csv.str().find("base,BaselineII,-,-,") != std::string::npos);
  }
  CHECK_THROWS_AS(run_ablation({}, "base", model, t, text_corpus()), ConfigError);
  CHECK_THROWS_AS(run_ablation({{"base", "", base, 1e-2}}, "missing", model, t, text_corpus()), ConfigError);
}
