#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"

namespace moa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kExactTol = 1e-12;
constexpr double kJumpTol = 1e-6;
constexpr double kConstantJumpTol = 1e-9;
constexpr double kFloorSlack = 0.9;

class Suite {
 public:
  Suite(const WitnessOptions& options, const WitnessProgress& progress) : options_(options), progress_(progress) {}

  WitnessReport finish() { return std::move(report_); }

  void theorem1() {
    exactness(make_target(TargetTag::TLA_I));
    for (const double lambda : {1.0, 2.0, 3.0}) exactness(make_target(TargetTag::TMoA_I, lambda));
    inclusion(TheoryFamily::FixedI, ActivationTag::GELU, ActivationTag::GELU);
    for (const double lambda : {1.0, 2.0}) {
      const WitnessTarget t = make_target(TargetTag::TMoA_I, lambda);
      target_jump(t, [lambda](double x1) { return std::tanh(lambda * x1); });
      target_oscillation(t);
    }
    constant_jump();
    for (const double lambda : {1.0, 2.0}) ridge_bound(lambda);
    if (!options_.fits) return;
    for (const ActivationKind sigma : {ActivationKind(ActivationTag::ReLU), ActivationKind(ActivationTag::GELU)}) {
      for (const std::size_t m : {1u, 2u, 4u}) {
        floor_check(make_target(TargetTag::TLA_I), TheoryFamily::FixedI, m, sigma, 1.0 / static_cast<double>(m + 1));
      }
    }
    exact_fit(make_target(TargetTag::TLA_I), TheoryFamily::LA_I);
    for (const double lambda : {1.0, 2.0}) {
      for (const std::size_t m : {1u, 2u, 4u}) {
        floor_check(make_target(TargetTag::TMoA_I, lambda), TheoryFamily::LA_I, m, ActivationTag::ReLU,
                    0.5 * std::tanh(lambda));
      }
    }
    report_fit(make_target(TargetTag::TMoA_I, 2.0), TheoryFamily::MoA_I, 1, ActivationTag::ReLU, ActivationTag::ReLU,
               "gated class contains the target");
  }

  void theorem2() {
    exactness(make_target(TargetTag::TLA_II));
    for (const double lambda : {1.0, 2.0, 3.0}) exactness(make_target(TargetTag::TMoA_II, lambda));
    inclusion(TheoryFamily::FixedII, ActivationTag::Tanh, ActivationTag::ReLU);
    target_jump(make_target(TargetTag::TLA_II), [](double x1) { return std::max(x1, 0.0) + std::tanh(x1); });
    for (const double lambda : {1.0, 2.0, 3.0}) {
      target_jump(make_target(TargetTag::TMoA_II, lambda),
                  [lambda](double x1) { return std::max(x1, 0.0) * std::tanh(lambda * x1); });
    }
    if (!options_.fits) return;
    const char* no_floor = "no quantitative lower bound for this class; reported only";
    for (const std::size_t m : {1u, 2u}) {
      report_fit(make_target(TargetTag::TLA_II), TheoryFamily::FixedII, m, ActivationTag::ReLU, ActivationTag::ReLU,
                 no_floor);
    }
    for (const std::size_t m : {1u, 2u}) {
      report_fit(make_target(TargetTag::TMoA_II, 1.0), TheoryFamily::QdLA_II, m, ActivationTag::ReLU,
                 ActivationTag::ReLU, no_floor);
    }
  }

 private:
  WitnessRow row(std::string check, const WitnessTarget* t) const {
    WitnessRow r;
    r.check = std::move(check);
    if (t) {
      r.target = std::string(name(t->tag));
      r.lambda = (t->tag == TargetTag::TMoA_I || t->tag == TargetTag::TMoA_II) ? t->lambda : kNaN;
    } else {
      r.lambda = kNaN;
    }
    r.bound = kNaN;
    return r;
  }

  void emit(WitnessRow r) {
    if (progress_) progress_(r);
    report_.rows.push_back(std::move(r));
  }

  GridSpec grid(std::size_t dim) const {
    GridSpec g;
    g.dim = dim;
    g.points_per_axis = options_.grid_points;
    return g;
  }

  std::vector<ActivationKind> dictionary_for(const WitnessTarget& t) const {
    std::vector<ActivationKind> dict =
        target_flavor(t) == Flavor::TypeI ? theory_dictionary_i() : theory_dictionary_ii();
    if (options_.tamper_relu2) {
      for (auto& k : dict) {
        if (k.tag == ActivationTag::ReLU2) k = ActivationTag::ReLU;
      }
    }
    return dict;
  }

  void exactness(const WitnessTarget& t) {
    const TheoryNetwork net = exact_construct(t, dictionary_for(t));
    const SobolevEstimate est = sobolev_distance(as_evaluable(net), as_evaluable(t), grid(target_dim(t)));
    WitnessRow r = row("exactness", &t);
    r.family = std::string(name(net.family));
    r.width = net.width;
    r.value_gap = est.sup_value_gap;
    r.gradient_gap = est.sup_gradient_gap;
    r.total = est.total;
    r.threshold = kExactTol;
    r.pass = est.total <= kExactTol;
    if (options_.tamper_relu2) r.note = "tampered dictionary: ReLU2 evaluated as ReLU";
    emit(std::move(r));
  }

  // FixedI/II -> LA -> MoA on random weights, checked on 100 random points.
  void inclusion(TheoryFamily fixed_family, ActivationKind sigma, ActivationKind sigma_q) {
    std::mt19937_64 rng(0x1c1u + static_cast<unsigned>(fixed_family));
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    TheoryNetwork fixed = make_network(fixed_family, 2, 3, sigma, sigma_q);
    for (auto* block : {&fixed.a, &fixed.w, &fixed.u}) {
      for (double& x : *block) x = uni(rng);
    }
    const TheoryNetwork la = embed_fixed_in_la(fixed);
    TheoryNetwork la_random = la;
    for (double& x : la_random.alpha) x = uni(rng);
    const TheoryNetwork moa = embed_la_in_moa(la_random, 0.5);
    double value_gap = 0.0, gradient_gap = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Point x{uni(rng), uni(rng)};
      for (const auto& [f, g] : {std::pair{&fixed, &la}, std::pair{&la_random, &moa}}) {
        const PointEval a = evaluate(*f, x), b = evaluate(*g, x);
        value_gap = std::max(value_gap, std::abs(a.value - b.value));
        gradient_gap = std::max(gradient_gap, std::hypot(a.gradient[0] - b.gradient[0], a.gradient[1] - b.gradient[1]));
      }
    }
    WitnessRow r = row("inclusion", nullptr);
    r.family = std::string(name(fixed_family)) + ">" + std::string(name(la.family)) + ">" + std::string(name(moa.family));
    r.width = fixed.width;
    r.value_gap = value_gap;
    r.gradient_gap = gradient_gap;
    r.total = value_gap + gradient_gap;
    r.threshold = kExactTol;
    r.pass = r.total <= kExactTol;
    r.note = "100 random points";
    emit(std::move(r));
  }

  template <class Expected>
  void target_jump(const WitnessTarget& t, Expected expected) {
    const JumpProfile jp = jump_profile(t, linspace(-1.0, 1.0, 100), 1e-3);
    double worst = 0.0;
    for (std::size_t i = 0; i < jp.x1_samples.size(); ++i)
      worst = std::max(worst, std::abs(jp.jump_values[i] - expected(jp.x1_samples[i])));
    WitnessRow r = row("jump", &t);
    r.value_gap = worst;
    r.total = worst;
    r.threshold = kJumpTol;
    r.pass = worst <= kJumpTol;
    r.note = "max |jump - closed form| over 100 samples (x1 = 0 is not sampled), eps=1e-3";
    emit(std::move(r));
  }

  void target_oscillation(const WitnessTarget& t) {
    const double osc = jump_profile(t, linspace(-1.0, 1.0, 100), 1e-3).oscillation();
    WitnessRow r = row("jump-oscillation", &t);
    r.total = osc;
    r.bound = 2.0 * std::tanh(t.lambda);
    r.threshold = r.bound * (1.0 - 1e-6);
    r.pass = osc >= r.threshold;
    r.note = "oscillation of the target jump";
    emit(std::move(r));
  }

  // LA network with one ReLU-type ridge on {x2 = 0} and generic ridges elsewhere.
  void constant_jump() {
    TheoryNetwork net = make_network(TheoryFamily::LA_I, 2, 4);
    std::mt19937_64 rng(0xc0457u);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (double& x : net.a) x = uni(rng);
    for (double& x : net.w) x = uni(rng);
    for (double& x : net.alpha) x = uni(rng);
    const double c = -1.3;
    net.w[0] = 0.0;
    net.w[1] = c;
    net.w[2] = 0.0;
    const JumpProfile jp = jump_profile(net, linspace(-1.0, 1.0, 101), 1e-12);
    double mean = 0.0;
    for (const double j : jp.jump_values) mean += j;
    mean /= static_cast<double>(jp.jump_values.size());
    const double eta = theory_dictionary_i()[2].leaky_slope;
    const double predicted = net.a[0] * (net.alpha[0] * std::abs(c) + net.alpha[2] * std::abs(c) * (1.0 - eta));

    WitnessRow r = row("constant-jump", nullptr);
    r.family = "LA_I";
    r.width = net.width;
    r.value_gap = jp.oscillation();
    r.gradient_gap = std::abs(mean - predicted);
    r.total = std::max(r.value_gap, r.gradient_gap);
    r.threshold = kConstantJumpTol;
    r.pass = r.total <= kConstantJumpTol;
    r.note = "value_gap=oscillation, gradient_gap=|mean jump - a*alpha*|c| terms|, eps=1e-12";
    emit(std::move(r));
  }

  void ridge_bound(double lambda) {
    WitnessTarget t;
    t.tag = TargetTag::AdaptiveRidge;
    t.u = {lambda, 0.0};
    const RidgeBound rb = adaptive_ridge_bound(t, grid(2));
    WitnessRow r = row("ridge-bound", &t);
    r.lambda = lambda;
    r.total = rb.quarter_osc;
    r.bound = 0.5 * std::tanh(lambda);
    r.value_gap = std::abs(rb.quarter_osc - r.bound);
    r.threshold = kExactTol;
    r.pass = r.value_gap <= kExactTol;
    r.note = "quarter oscillation of the gate on S equals the gated-target floor";
    emit(std::move(r));
  }

  WitnessRow fit_row(const char* check, const WitnessTarget& t, TheoryFamily family, std::size_t m, ActivationKind sigma,
                     ActivationKind sigma_q, const FitBudget& budget) {
    const FitResult fit = fit_class(t, family, m, budget, sigma, sigma_q, grid(target_dim(t)));
    WitnessRow r = row(check, &t);
    r.family = std::string(name(family));
    if (family == TheoryFamily::FixedI) r.family += "(" + std::string(name(sigma.tag)) + ")";
    if (family == TheoryFamily::FixedII)
      r.family += "(" + std::string(name(sigma.tag)) + "," + std::string(name(sigma_q.tag)) + ")";
    r.width = m;
    r.value_gap = fit.residual.sup_value_gap;
    r.gradient_gap = fit.residual.sup_gradient_gap;
    r.total = fit.residual.total;
    r.note = budget.describe();
    return r;
  }

  void floor_check(const WitnessTarget& t, TheoryFamily family, std::size_t m, ActivationKind sigma, double bound) {
    WitnessRow r = fit_row("floor", t, family, m, sigma, sigma, options_.budget);
    r.bound = bound;
    r.threshold = kFloorSlack * bound;
    r.pass = r.total >= r.threshold;
    emit(std::move(r));
  }

  void exact_fit(const WitnessTarget& t, TheoryFamily family) {
    WitnessRow r = fit_row("exact-fit", t, family, 1, ActivationTag::ReLU, ActivationTag::ReLU, options_.budget);
    r.threshold = 1e-6;
    r.pass = r.total <= r.threshold;
    emit(std::move(r));
  }

  void report_fit(const WitnessTarget& t, TheoryFamily family, std::size_t m, ActivationKind sigma,
                  ActivationKind sigma_q, const char* note) {
    WitnessRow r = fit_row("report", t, family, m, sigma, sigma_q, options_.report_budget);
    r.threshold = kNaN;
    r.hard = false;
    r.note = std::string(note) + "; " + r.note;
    emit(std::move(r));
  }

  const WitnessOptions& options_;
  const WitnessProgress& progress_;
  WitnessReport report_;
};

std::string number(double x) {
  if (std::isnan(x)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

WitnessSuite suite_from_name(std::string_view n) {
  if (n == "all") return WitnessSuite::All;
  if (n == "theorem1") return WitnessSuite::Theorem1;
  if (n == "theorem2") return WitnessSuite::Theorem2;
  throw ConfigError("unknown witness suite '" + std::string(n) + "' (expected all, theorem1 or theorem2)");
}

bool WitnessReport::all_passed() const {
  for (const auto& r : rows) {
    if (r.hard && !r.pass) return false;
  }
  return true;
}

std::vector<std::string> WitnessReport::violations() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (!r.hard || r.pass) continue;
    std::ostringstream s;
    s << r.check << " " << (r.target.empty() ? r.family : r.target);
    if (!std::isnan(r.lambda)) s << " lambda=" << r.lambda;
    if (!r.family.empty() && !r.target.empty()) s << " " << r.family << " m=" << r.width;
    s << ": measured " << number(r.total) << " against threshold " << number(r.threshold);
    out.push_back(s.str());
  }
  return out;
}

WitnessReport run_witness_suite(WitnessSuite suite, const WitnessOptions& options, const WitnessProgress& progress) {
  if (options.grid_points < 3) throw RangeError("witness grid needs at least 3 points per axis");
  Suite s(options, progress);
  if (suite != WitnessSuite::Theorem2) s.theorem1();
  if (suite != WitnessSuite::Theorem1) s.theorem2();
  return s.finish();
}

void write_witness_csv(const WitnessReport& report, std::ostream& out) {
  out << "check,target,lambda,family,width,value_gap,gradient_gap,total,bound,threshold,hard,pass,note\n";
  for (const auto& r : report.rows) {
    out << r.check << ',' << r.target << ',' << number(r.lambda) << ',' << quoted(r.family) << ',' << r.width << ','
        << number(r.value_gap) << ',' << number(r.gradient_gap) << ',' << number(r.total) << ',' << number(r.bound)
        << ',' << number(r.threshold) << ',' << (r.hard ? 1 : 0) << ',' << (r.pass ? 1 : 0) << ',' << quoted(r.note)
        << '\n';
  }
}

}  // namespace moa
