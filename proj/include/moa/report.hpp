#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "moa/config.hpp"

namespace moa {

// ---- gradient suite ------------------------------------------------------------

struct GradCheckOptions {
  std::size_t points = 20;  // random parameter/input draws per variant
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  std::size_t d_model = 4;
  std::size_t hidden = 6;
  // Draws where a ReLU-type pre-activation lies closer than this to zero are
  // redrawn, so the central differences never straddle a kink.
  double kink_margin = 1e-3;
};

struct GradCheckRow {
  std::string variant;
  Flavor flavor = Flavor::TypeI;
  std::size_t points = 0;
  std::size_t redraws = 0;
  double max_param_error = 0.0;
  double max_input_error = 0.0;
  bool pass = false;
};

// One row per FFN variant. Gates carry a bias and cycle through Softmax,
// Sigmoid and Tanh across the draws.
std::vector<GradCheckRow> grad_check_variants(const GradCheckOptions& options = {});
void write_grad_check_csv(const std::vector<GradCheckRow>& rows, std::ostream& out);

// ---- run directories -------------------------------------------------------------

// <root>/config.cfg      rendered config
//        metrics.jsonl
//        checkpoints/
//        reports/
//        run.log         the only file carrying timestamps
struct RunDirectory {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.cfg"; }
  std::filesystem::path metrics() const { return root / "metrics.jsonl"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path log() const { return root / "run.log"; }
};

// Creates the layout and writes the config echo. IoError when it cannot.
RunDirectory prepare_run_directory(const std::filesystem::path& root, const RunConfig& config);

// Appends a timestamped line to run.log.
void log_line(const RunDirectory& dir, const std::string& message);

// Writes a file atomically enough for reports: temp file, then rename.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace moa
