#include "moa/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "moa/errors.hpp"

namespace moa {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string show(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class T>
T parse_number(std::string_view v) {
  T out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::vector<std::uint64_t> parse_seeds(std::string_view v) {
  std::vector<std::uint64_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_number<std::uint64_t>(trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

std::string show_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field unsigned_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](RunConfig& c, std::string_view v) { c.*section.*member = parse_number<std::size_t>(v); },
          [=](const RunConfig& c) { return std::to_string(c.*section.*member); }};
}

template <class T>
Field double_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, std::string_view v) { c.*section.*member = parse_number<double>(v); },
          [=](const RunConfig& c) { return show(c.*section.*member); }};
}

// Ordered so that rendering follows the section layout.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.push_back({"schema_version",
                 {[](RunConfig& c, std::string_view v) { c.schema_version = parse_number<int>(v); },
                  [](const RunConfig& c) { return std::to_string(c.schema_version); }}});
    t.push_back({"output.dir", {[](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
                                [](const RunConfig& c) { return c.output_dir; }}});
    t.push_back({"run.seed", {[](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>(v); },
                              [](const RunConfig& c) { return std::to_string(c.seed); }}});
    t.push_back({"run.jobs", {[](RunConfig& c, std::string_view v) { c.jobs = parse_number<std::size_t>(v); },
                              [](const RunConfig& c) { return std::to_string(c.jobs); }}});

    t.push_back({"model.d_model", unsigned_field(&RunConfig::model, &ModelConfig::d_model)});
    t.push_back({"model.n_head", unsigned_field(&RunConfig::model, &ModelConfig::n_head)});
    t.push_back({"model.n_layer", unsigned_field(&RunConfig::model, &ModelConfig::n_layer)});
    t.push_back({"model.vocab_size", unsigned_field(&RunConfig::model, &ModelConfig::vocab_size)});
    t.push_back({"model.seq_len", unsigned_field(&RunConfig::model, &ModelConfig::seq_len)});
    t.push_back({"model.tie_embeddings",
                 {[](RunConfig& c, std::string_view v) { c.model.tie_embeddings = parse_bool(v); },
                  [](const RunConfig& c) { return std::string(c.model.tie_embeddings ? "true" : "false"); }}});

    t.push_back({"ffn.variant",
                 {[](RunConfig& c, std::string_view v) { c.model.ffn.variant.tag = variant_from_name(v); },
                  [](const RunConfig& c) { return std::string(name(c.model.ffn.variant.tag)); }}});
    t.push_back({"ffn.hidden",
                 {[](RunConfig& c, std::string_view v) { c.model.ffn.hidden = parse_number<std::size_t>(v); },
                  [](const RunConfig& c) { return std::to_string(c.model.ffn.hidden); }}});
    t.push_back({"ffn.baseline_activation",
                 {[](RunConfig& c, std::string_view v) { c.model.ffn.variant.baseline_activation = activation_from_name(v); },
                  [](const RunConfig& c) { return std::string(name(c.model.ffn.variant.baseline_activation.tag)); }}});
    t.push_back({"ffn.dictionary", {[](RunConfig& c, std::string_view v) { c.dictionary = std::string(v); },
                                    [](const RunConfig& c) { return c.dictionary; }}});
    t.push_back({"ffn.leaky_slope", {[](RunConfig& c, std::string_view v) { c.leaky_slope = parse_number<double>(v); },
                                     [](const RunConfig& c) { return show(c.leaky_slope); }}});
    t.push_back({"ffn.gate", {[](RunConfig& c, std::string_view v) { c.model.ffn.gate = gate_from_name(v); },
                              [](const RunConfig& c) { return std::string(name(c.model.ffn.gate)); }}});
    t.push_back({"ffn.gate_bias", {[](RunConfig& c, std::string_view v) { c.model.ffn.gate_bias = parse_bool(v); },
                                   [](const RunConfig& c) { return std::string(c.model.ffn.gate_bias ? "true" : "false"); }}});

    t.push_back({"train.max_lr", double_field(&RunConfig::train, &TrainConfig::max_lr)});
    t.push_back({"train.schedule", {[](RunConfig& c, std::string_view v) { c.train.schedule = schedule_from_name(v); },
                                    [](const RunConfig& c) { return std::string(name(c.train.schedule)); }}});
    t.push_back({"train.warmup_steps", unsigned_field(&RunConfig::train, &TrainConfig::warmup_steps)});
    t.push_back({"train.total_steps", unsigned_field(&RunConfig::train, &TrainConfig::total_steps)});
    t.push_back({"train.batch_size", unsigned_field(&RunConfig::train, &TrainConfig::batch_size)});
    t.push_back({"train.beta1", double_field(&RunConfig::train, &TrainConfig::beta1)});
    t.push_back({"train.beta2", double_field(&RunConfig::train, &TrainConfig::beta2)});
    t.push_back({"train.eps", double_field(&RunConfig::train, &TrainConfig::eps)});
    t.push_back({"train.weight_decay", double_field(&RunConfig::train, &TrainConfig::weight_decay)});
    t.push_back({"train.clip_norm", double_field(&RunConfig::train, &TrainConfig::clip_norm)});
    t.push_back({"train.eval_interval", unsigned_field(&RunConfig::train, &TrainConfig::eval_interval)});
    t.push_back({"train.eval_batches", unsigned_field(&RunConfig::train, &TrainConfig::eval_batches)});
    t.push_back({"train.seeds", {[](RunConfig& c, std::string_view v) { c.train.seeds = parse_seeds(v); },
                                 [](const RunConfig& c) { return show_seeds(c.train.seeds); }}});
    t.push_back({"train.corpus_path", {[](RunConfig& c, std::string_view v) { c.train.corpus_path = std::string(v); },
                                       [](const RunConfig& c) { return c.train.corpus_path; }}});

    t.push_back({"grid.points_per_axis", unsigned_field(&RunConfig::grid, &GridSpec::points_per_axis)});
    t.push_back({"grid.half_width", double_field(&RunConfig::grid, &GridSpec::half_width)});
    t.push_back({"grid.kink_exclusion_radius", double_field(&RunConfig::grid, &GridSpec::kink_exclusion_radius)});
    t.push_back({"grid.trace_offset", double_field(&RunConfig::grid, &GridSpec::trace_offset)});

    t.push_back({"fit.restarts", unsigned_field(&RunConfig::fit, &FitBudget::restarts)});
    t.push_back({"fit.steps", unsigned_field(&RunConfig::fit, &FitBudget::steps)});
    t.push_back({"fit.lr", double_field(&RunConfig::fit, &FitBudget::lr)});
    t.push_back({"fit.points_per_axis", unsigned_field(&RunConfig::fit, &FitBudget::fit_points_per_axis)});
    t.push_back({"fit.polish_iterations", unsigned_field(&RunConfig::fit, &FitBudget::polish_iterations)});
    t.push_back({"fit.report_restarts", unsigned_field(&RunConfig::report_fit, &FitBudget::restarts)});
    t.push_back({"fit.report_steps", unsigned_field(&RunConfig::report_fit, &FitBudget::steps)});

    t.push_back({"bench.steps", unsigned_field(&RunConfig::bench, &BenchOptions::steps)});
    t.push_back({"bench.warmup", unsigned_field(&RunConfig::bench, &BenchOptions::warmup)});
    t.push_back({"bench.batch_size", unsigned_field(&RunConfig::bench, &BenchOptions::batch_size)});
    return t;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [k, f] : fields()) {
    if (k == key) return f;
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

void set_key(RunConfig& c, std::string_view key, std::string_view value, const std::string& where) {
  try {
    field(key).set(c, value);
  } catch (const Error& e) {
    throw ConfigError(where + ": " + std::string(key) + ": " + e.what());
  }
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

RunConfig parse_config(std::string_view text, std::string_view source) {
  RunConfig c;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + ": duplicate key '" + std::string(key) + "'");
    set_key(c, key, value, where);
  }
  if (!seen.count("schema_version")) throw ConfigError(std::string(source) + ": missing schema_version");
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError(std::string(source) + ": schema_version " + std::to_string(c.schema_version) +
                      " is not supported (expected " + std::to_string(kConfigSchemaVersion) + ")");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str(), path.string());
}

std::string render_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& [key, f] : fields()) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    if (sec != section && !out.empty()) out += '\n';
    section = sec;
    out += key + " = " + f.get(config) + '\n';
  }
  return out;
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  set_key(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "--set");
}

ActivationDictionary resolved_dictionary(const RunConfig& config, Flavor flavor) {
  const std::string code = config.dictionary.empty() ? (flavor == Flavor::TypeI ? "gsr2lr" : "gsr2ltr") : config.dictionary;
  try {
    return parse_dictionary(code, flavor, config.leaky_slope);
  } catch (const Error& e) {
    throw ConfigError(std::string("ffn.dictionary: ") + e.what());
  }
}

ModelConfig resolved_model(const RunConfig& config) {
  ModelConfig m = config.model;
  m.ffn.dictionary = is_baseline(m.ffn.variant.tag) ? ActivationDictionary{}
                                                    : resolved_dictionary(config, flavor_of(m.ffn.variant.tag));
  return m;
}

namespace {

std::vector<double> parse_lrs(std::string_view v, char sep) {
  std::vector<double> out;
  while (!v.empty()) {
    const auto cut = v.find(sep);
    const double lr = parse_number<double>(trim(v.substr(0, cut)));
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
    out.push_back(lr);
    if (cut == std::string_view::npos) break;
    v.remove_prefix(cut + 1);
  }
  if (out.empty()) throw ConfigError("learning-rate list is empty");
  return out;
}

}  // namespace

AblationGrid parse_ablation_grid(std::string_view text, const RunConfig& base, std::string_view source) {
  AblationGrid grid;
  std::vector<double> lrs;
  bool have_version = false;
  std::string baseline_arm;
  struct Arm {
    std::string name;
    AblationCell proto;
    std::vector<double> lrs;  // empty: the grid-wide list
  };
  std::vector<Arm> arms;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    try {
      if (key == "schema_version") {
        if (parse_number<int>(value) != kConfigSchemaVersion) throw ConfigError("unsupported schema_version");
        have_version = true;
      } else if (key == "baseline") {
        baseline_arm = std::string(value);
      } else if (key == "max_lrs") {
        lrs = parse_lrs(value, ',');
      } else if (key.rfind("arm.", 0) == 0 && key.size() > 4) {
        const std::string arm = key.substr(4);
        for (const Arm& existing : arms) {
          if (existing.name == arm) throw ConfigError("duplicate arm '" + arm + "'");
        }
        RunConfig c = base;
        std::vector<double> arm_lrs;
        std::string_view rest = value;
        while (!rest.empty()) {
          const auto sp = rest.find(' ');
          const std::string_view item = trim(rest.substr(0, sp));
          rest = sp == std::string_view::npos ? std::string_view{} : trim(rest.substr(sp + 1));
          if (item.empty()) continue;
          const auto ieq = item.find('=');
          if (ieq == std::string_view::npos) throw ConfigError("arm setting '" + std::string(item) + "' needs key=value");
          const std::string_view k = item.substr(0, ieq), v = item.substr(ieq + 1);
          if (k == "max_lrs") {
            arm_lrs = parse_lrs(v, ':');
          } else if (k == "variant" || k == "gate" || k == "gate_bias" || k == "dictionary" ||
                     k == "baseline_activation" || k == "hidden" || k == "leaky_slope") {
            field("ffn." + std::string(k)).set(c, v);
          } else {
            throw ConfigError("unknown arm setting '" + std::string(k) + "'");
          }
        }
        AblationCell cell;
        cell.arm = arm;
        cell.ffn = resolved_model(c).ffn;
        arms.push_back({arm, std::move(cell), std::move(arm_lrs)});
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  if (!have_version) throw ConfigError(std::string(source) + ": missing schema_version");
  if (arms.empty()) throw ConfigError(std::string(source) + ": no arms");
  if (baseline_arm.empty()) throw ConfigError(std::string(source) + ": missing baseline");

  auto label = [](double lr) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", lr);
    return std::string(buf);
  };
  for (const Arm& arm : arms) {
    if (arm.lrs.empty() && lrs.empty()) throw ConfigError(std::string(source) + ": arm '" + arm.name + "' has no max_lrs");
    for (const double lr : arm.lrs.empty() ? lrs : arm.lrs) {
      AblationCell c = arm.proto;
      c.max_lr = lr;
      c.name = arm.name + "@" + label(lr);
      if (arm.name == baseline_arm && grid.baseline.empty()) grid.baseline = c.name;
      grid.cells.push_back(std::move(c));
    }
  }
  if (grid.baseline.empty())
    throw ConfigError(std::string(source) + ": baseline arm '" + baseline_arm + "' is not defined");
  return grid;
}

AblationGrid load_ablation_grid(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read ablation grid " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_ablation_grid(s.str(), base, path.string());
}

}  // namespace moa
