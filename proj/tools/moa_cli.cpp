// moa: command-line entry point for training, ablations, witness checks,
// overhead benchmarks and gradient checks.
//
// Exit codes: 0 success, 2 configuration or input, 3 numeric, 4 theorem check.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "moa/checkpoint.hpp"
#include "moa/config.hpp"
#include "moa/errors.hpp"
#include "moa/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitTheorem = 4;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file (key = value lines)");
  cmd->add_option("--set", c.overrides, "override one key, e.g. --set ffn.gate=Softmax")->take_all();
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--jobs", c.jobs, "worker cap");
  cmd->add_option("--out", c.out, "output directory (MOA_OUT takes precedence)");
}

moa::RunConfig resolve(const Common& c) {
  moa::RunConfig config = c.config_path.empty() ? moa::RunConfig{} : moa::load_config(c.config_path);
  for (const auto& o : c.overrides) moa::apply_override(config, o);
  if (c.seed) config.seed = *c.seed;
  if (c.jobs) config.jobs = *c.jobs;
  if (!c.out.empty()) config.output_dir = c.out;
  if (const char* env = std::getenv("MOA_OUT"); env && *env) config.output_dir = env;
  if (config.jobs == 0) throw moa::ConfigError("run.jobs must be positive");
  return config;
}

moa::Corpus corpus_for(const moa::RunConfig& config) {
  if (config.train.corpus_path.empty()) throw moa::ConfigError("train.corpus_path is not set");
  if (!fs::exists(config.train.corpus_path))
    throw moa::ConfigError("train.corpus_path '" + config.train.corpus_path + "' does not exist");
  return moa::load_corpus(config.train.corpus_path);
}

template <class Write>
void write_report(const moa::RunDirectory& dir, const std::string& file, Write&& write) {
  std::ostringstream s;
  write(s);
  moa::write_text(dir.reports() / file, s.str());
  std::cout << "wrote " << (dir.reports() / file).string() << '\n';
}

std::vector<std::pair<std::string, std::string>> config_pairs(const moa::RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(moa::render_config(config));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    if (line.rfind("output.dir", 0) == 0) continue;  // keeps checkpoints independent of where they land
    out.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return out;
}

int cmd_train(const Common& common) {
  const moa::RunConfig config = resolve(common);
  const moa::ModelConfig model = moa::resolved_model(config);
  moa::validate(model);
  moa::validate(config.train);
  const moa::Corpus corpus = corpus_for(config);
  const moa::RunDirectory dir = moa::prepare_run_directory(config.output_dir, config);
  moa::log_line(dir, "train " + std::string(moa::name(model.ffn.variant.tag)) + " seed " + std::to_string(config.seed));

  moa::TransformerModel trained;
  const moa::RunMetrics metrics = moa::run_training(
      model, config.train, config.seed, corpus,
      [&](const moa::MetricRecord& r) {
        if (r.kind == moa::MetricRecord::Kind::Eval) moa::log_line(dir, moa::metric_json(r));
      },
      &trained);

  std::ostringstream jsonl;
  moa::write_metrics_jsonl(metrics, jsonl);
  moa::write_text(dir.metrics(), jsonl.str());
  moa::save_checkpoint(dir.checkpoints() / "final.ckpt", config_pairs(config), trained.parameters());
  write_report(dir, "train_summary.csv", [&](std::ostream& out) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.6f,%.6f,%.6f\n", static_cast<unsigned long long>(config.seed),
                  metrics.param_count, metrics.initial_train_loss, metrics.final_train_loss, metrics.final_val_loss);
    out << "seed,params,initial_train_loss,final_train_loss,final_val_loss\n" << buf;
  });
  moa::log_line(dir, "done in " + std::to_string(metrics.wall_seconds) + " s");
  std::printf("final val loss %.4f (train %.4f, start %.4f)\n", metrics.final_val_loss, metrics.final_train_loss,
              metrics.initial_train_loss);
  return 0;
}

int cmd_ablate(const Common& common, const std::string& grid_path) {
  const moa::RunConfig config = resolve(common);
  const moa::AblationGrid grid = moa::load_ablation_grid(grid_path, config);
  const moa::ModelConfig model = moa::resolved_model(config);
  moa::validate(model);
  const moa::Corpus corpus = corpus_for(config);
  const moa::RunDirectory dir = moa::prepare_run_directory(config.output_dir, config);
  moa::log_line(dir, "ablate " + grid_path + ": " + std::to_string(grid.cells.size()) + " cells");

  const moa::AblationResult result =
      moa::run_ablation(grid.cells, grid.baseline, model, config.train, corpus, config.jobs);
  write_report(dir, "ablation_cells.csv", [&](std::ostream& out) { moa::write_ablation_csv(result, out); });
  write_report(dir, "ablation.csv", [&](std::ostream& out) { moa::write_ablation_summary_csv(result, out); });
  moa::write_ablation_summary_csv(result, std::cout);
  int code = 0;
  for (const auto& row : result.rows) {
    if (!row.failed) continue;
    std::cerr << "cell " << row.cell.name << " failed: " << row.error << '\n';
    code = kExitNumeric;
  }
  moa::log_line(dir, "ablate finished");
  return code;
}

int cmd_witness(const Common& common, const std::string& suite_name, bool tamper, bool no_fits) {
  const moa::RunConfig config = resolve(common);
  const moa::WitnessSuite suite = moa::suite_from_name(suite_name);
  moa::WitnessOptions options;
  options.budget = config.fit;
  options.budget.seed = config.seed;
  options.budget.jobs = config.jobs;
  options.report_budget = config.report_fit;
  options.report_budget.seed = config.seed;
  options.report_budget.jobs = config.jobs;
  options.grid_points = config.grid.points_per_axis;
  options.tamper_relu2 = tamper;
  options.fits = !no_fits;
  const moa::RunDirectory dir = moa::prepare_run_directory(config.output_dir, config);
  moa::log_line(dir, "witness " + suite_name + (tamper ? " (tampered)" : ""));

  const moa::WitnessReport report = moa::run_witness_suite(suite, options, [&](const moa::WitnessRow& row) {
    std::printf("%-5s %-16s %-14s %-22s m=%zu total=%.3e threshold=%.3e\n",
                row.hard ? (row.pass ? "pass" : "FAIL") : "info", row.check.c_str(), row.target.c_str(),
                row.family.c_str(), row.width, row.total, row.threshold);
    std::fflush(stdout);
    moa::log_line(dir, row.check + " " + row.target + " " + row.family);
  });
  write_report(dir, "witness_report.csv", [&](std::ostream& out) { moa::write_witness_csv(report, out); });
  if (report.all_passed()) return 0;
  std::cerr << "violated bounds:\n";
  for (const auto& v : report.violations()) std::cerr << "  " << v << '\n';
  return kExitTheorem;
}

int cmd_bench(const Common& common, const std::string& flavor_name) {
  const moa::RunConfig config = resolve(common);
  moa::Flavor flavor;
  if (flavor_name == "type1") {
    flavor = moa::Flavor::TypeI;
  } else if (flavor_name == "type2") {
    flavor = moa::Flavor::TypeII;
  } else {
    throw moa::ConfigError("--flavor must be type1 or type2, got '" + flavor_name + "'");
  }
  moa::RunConfig flavored = config;
  flavored.model.ffn.variant.tag = flavor == moa::Flavor::TypeI ? moa::VariantTag::BaselineI : moa::VariantTag::BaselineII;
  moa::ModelConfig model = moa::resolved_model(flavored);
  model.ffn.dictionary = moa::resolved_dictionary(config, flavor);
  moa::validate(model);
  std::vector<moa::VariantTag> variants;
  for (const moa::VariantTag tag : moa::kAllVariants) {
    if (moa::flavor_of(tag) == flavor && !moa::is_baseline(tag)) variants.push_back(tag);
  }
  moa::BenchOptions options = config.bench;
  options.seed = config.seed;
  const moa::RunDirectory dir = moa::prepare_run_directory(config.output_dir, config);
  moa::log_line(dir, "bench " + flavor_name);
  const auto reports = moa::wall_clock_suite(model, variants, options);
  write_report(dir, "bench_" + flavor_name + ".csv", [&](std::ostream& out) { moa::write_overhead_csv(reports, out); });
  moa::write_overhead_table(reports, std::cout);
  return 0;
}

int cmd_grad_check(const Common& common) {
  const moa::RunConfig config = resolve(common);
  moa::GradCheckOptions options;
  options.seed = config.seed;
  const moa::RunDirectory dir = moa::prepare_run_directory(config.output_dir, config);
  const auto rows = moa::grad_check_variants(options);
  write_report(dir, "grad_check.csv", [&](std::ostream& out) { moa::write_grad_check_csv(rows, out); });
  moa::write_grad_check_csv(rows, std::cout);
  for (const auto& r : rows) {
    if (!r.pass) return kExitNumeric;
  }
  return 0;
}

int cmd_corpus(const std::string& path, std::size_t bytes, const std::string& kind, std::uint64_t seed) {
  std::string text;
  if (kind == "synthetic") {
    text = moa::synthetic_corpus(bytes, seed);
  } else if (kind == "random") {
    text = moa::random_corpus(bytes, seed);
  } else {
    throw moa::ConfigError("--kind must be synthetic or random, got '" + kind + "'");
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  moa::write_text(path, text);
  std::cout << "wrote " << bytes << " bytes to " << path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable-activation and mixture-of-activation FFN toolkit"};
  app.require_subcommand(1);

  Common common;
  auto* train = app.add_subcommand("train", "train a toy byte-level LM");
  add_common(train, common);

  std::string grid_path;
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid over seeds and learning rates");
  add_common(ablate, common);
  ablate->add_option("--grid", grid_path, "ablation grid file")->required();

  std::string suite = "all";
  bool tamper = false, no_fits = false;
  auto* witness = app.add_subcommand("witness", "run the expressivity witness checks");
  add_common(witness, common);
  witness->add_option("suite", suite, "all, theorem1 or theorem2");
  witness->add_flag("--tamper-relu2", tamper, "evaluate ReLU^2 as ReLU in the constructions");
  witness->add_flag("--no-fits", no_fits, "skip the fitted floor and report rows");

  std::string flavor = "type2";
  auto* bench = app.add_subcommand("bench", "parameter, FLOP and step-time overhead");
  add_common(bench, common);
  bench->add_option("--flavor", flavor, "type1 or type2");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every FFN variant");
  add_common(grad, common);

  std::string corpus_out, corpus_kind = "synthetic";
  std::size_t corpus_bytes = 2'000'000;
  std::uint64_t corpus_seed = 0;
  auto* corpus = app.add_subcommand("corpus", "write a deterministic training corpus");
  corpus->add_option("path", corpus_out, "output file")->required();
  corpus->add_option("--bytes", corpus_bytes, "corpus size");
  corpus->add_option("--kind", corpus_kind, "synthetic or random");
  corpus->add_option("--seed", corpus_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(common);
    if (*ablate) return cmd_ablate(common, grid_path);
    if (*witness) return cmd_witness(common, suite, tamper, no_fits);
    if (*bench) return cmd_bench(common, flavor);
    if (*grad) return cmd_grad_check(common);
    if (*corpus) return cmd_corpus(corpus_out, corpus_bytes, corpus_kind, corpus_seed);
  } catch (const moa::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const moa::FitError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const moa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
