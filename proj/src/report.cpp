#include "moa/report.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <random>

#include "moa/errors.hpp"

namespace moa {

namespace {

bool any_jump(const FFNConfig& c) {
  if (is_baseline(c.variant.tag)) return has_derivative_jump(c.variant.baseline_activation);
  for (const auto& k : c.dictionary.entries) {
    if (has_derivative_jump(k)) return true;
  }
  return false;
}

// Smallest |x·wᵀ| over the rows of x and w.
double min_preactivation(const Tensor& x, const Tensor& w) {
  double m = INFINITY;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.cols(); ++i) s += x.at(n, i) * w.at(j, i);
      m = std::min(m, std::abs(s));
    }
  }
  return m;
}

}  // namespace

std::vector<GradCheckRow> grad_check_variants(const GradCheckOptions& options) {
  if (options.points == 0) throw ContractError("grad check needs at least one point");
  constexpr GateKind kGates[] = {GateKind::Softmax, GateKind::Sigmoid, GateKind::Tanh};
  std::vector<GradCheckRow> rows;
  for (const VariantTag tag : kAllVariants) {
    GradCheckRow row;
    row.variant = std::string(name(tag));
    row.flavor = flavor_of(tag);
    std::mt19937_64 rng(options.seed ^ (0x9c0ffeeULL * (static_cast<std::uint64_t>(tag) + 1)));
    std::normal_distribution<double> normal(0.0, 1.0);
    while (row.points < options.points) {
      FFNConfig c;
      c.d_model = options.d_model;
      c.hidden = options.hidden;
      c.variant.tag = tag;
      c.gate = kGates[row.points % 3];
      c.gate_bias = true;
      c.seed = rng();
      if (!is_baseline(tag))
        c.dictionary = parse_dictionary(row.flavor == Flavor::TypeI ? "gsr2lr" : "gsr2ltri", row.flavor);
      FFNLayer layer = init(c);
      std::vector<Tensor> params;
      for (auto& p : layer.parameters()) {
        for (double& v : p.tensor.mutable_data()) v = 0.6 * normal(rng);
        params.push_back(p.tensor);
      }
      std::vector<double> xs(3 * options.d_model);
      for (double& v : xs) v = normal(rng);
      const Tensor x = Tensor::from_data({3, options.d_model}, std::move(xs));

      if (any_jump(c)) {
        double margin = min_preactivation(x, layer.W1);
        if (row.flavor == Flavor::TypeII) margin = std::min(margin, min_preactivation(x, layer.W2));
        if (margin < options.kink_margin) {
          ++row.redraws;
          continue;
        }
      }
      row.max_param_error = std::max(
          row.max_param_error, grad_check_params([&] { return sum(forward(layer, x)); }, params, options.step));
      row.max_input_error = std::max(
          row.max_input_error, grad_check([&](const Tensor& xi) { return sum(forward(layer, xi)); }, x, options.step));
      ++row.points;
    }
    row.pass = row.max_param_error <= options.tolerance && row.max_input_error <= options.tolerance;
    rows.push_back(row);
  }
  return rows;
}

void write_grad_check_csv(const std::vector<GradCheckRow>& rows, std::ostream& out) {
  out << "variant,flavor,points,redraws,max_param_rel_error,max_input_rel_error,pass\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e,%.3e", r.max_param_error, r.max_input_error);
    out << r.variant << ',' << name(r.flavor) << ',' << r.points << ',' << r.redraws << ',' << buf << ','
        << (r.pass ? "pass" : "FAIL") << '\n';
  }
}

RunDirectory prepare_run_directory(const std::filesystem::path& root, const RunConfig& config) {
  RunDirectory dir{root};
  std::error_code ec;
  for (const auto& p : {dir.root, dir.checkpoints(), dir.reports()}) {
    std::filesystem::create_directories(p, ec);
    if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
  }
  write_text(dir.config(), render_config(config));
  return dir;
}

void log_line(const RunDirectory& dir, const std::string& message) {
  std::ofstream out(dir.log(), std::ios::app);
  if (!out) return;  // logging is best effort
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  out << stamp << ' ' << message << '\n';
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace moa
