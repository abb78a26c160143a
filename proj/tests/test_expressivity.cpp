#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"
#include "theory_internal.hpp"

using namespace moa;

namespace {

TheoryNetwork random_network(TheoryFamily family, std::size_t dim, std::size_t width, std::uint64_t seed,
                             ActivationKind sigma = ActivationTag::GELU, ActivationKind sigma_q = ActivationTag::Tanh) {
  TheoryNetwork net = make_network(family, dim, width, sigma, sigma_q);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> p = pack(net);
  for (double& x : p) x = uni(rng);
  unpack(net, p);
  return net;
}

GridSpec small_grid(std::size_t dim, std::size_t n = 41) {
  GridSpec g;
  g.dim = dim;
  g.points_per_axis = n;
  return g;
}

}  // namespace

TEST_CASE("target values") {
  CHECK(eval_target(make_target(TargetTag::TLA_I), {0.5, 0.0}).value == 0.75);
  const PointEval e = eval_target(make_target(TargetTag::TMoA_I, 2.0), {1.0, 1.0});
  CHECK(e.value == doctest::Approx(0.9640275800758169).epsilon(1e-15));
  CHECK(eval_target(make_target(TargetTag::TMoA_II, 1.0), {-0.3, 0.7}).value == 0.0);
  CHECK(eval_target(make_target(TargetTag::TLA_II), {0.5, 2.0}).value == doctest::Approx(2.0 * (0.5 + std::tanh(0.5))));
}

TEST_CASE("targets flag their singular sets") {
  CHECK(eval_target(make_target(TargetTag::TLA_I), {0.0, 0.3}).kink);
  CHECK_FALSE(eval_target(make_target(TargetTag::TLA_I), {0.1, 0.0}).kink);
  CHECK(eval_target(make_target(TargetTag::TMoA_I, 1.0), {0.4, 0.0}).kink);
  CHECK(eval_target(make_target(TargetTag::TLA_II), {0.0, 0.4}).kink);
  CHECK_FALSE(eval_target(make_target(TargetTag::TMoA_II, 1.0), {0.0, 0.4}).kink);
}

TEST_CASE("target gradients agree with central differences") {
  WitnessTarget ridge;
  ridge.tag = TargetTag::AdaptiveRidge;
  ridge.u = {0.7, -1.1};
  ridge.beta = 0.2;
  ridge.w = {0.4, 0.9};
  ridge.b = 0.1;
  const WitnessTarget targets[] = {make_target(TargetTag::TMoA_I, 2.0), make_target(TargetTag::TLA_II),
                                   make_target(TargetTag::TMoA_II, 3.0), ridge};
  const Point points[] = {{0.31, 0.52}, {0.77, 0.13}, {0.45, 0.9}};
  for (const auto& t : targets) {
    CAPTURE(describe(t));
    for (const Point& x : points) {
      const PointEval e = eval_target(t, x);
      for (int i = 0; i < 2; ++i) {
        Point hi = x, lo = x;
        hi[i] += 1e-6;
        lo[i] -= 1e-6;
        const double fd = (eval_target(t, hi).value - eval_target(t, lo).value) / 2e-6;
        CHECK(e.gradient[i] == doctest::Approx(fd).epsilon(1e-7));
      }
    }
  }
}

TEST_CASE("lambda must be positive") {
  CHECK_THROWS_AS(make_target(TargetTag::TMoA_I, 0.0), RangeError);
  CHECK_THROWS_AS(make_target(TargetTag::TMoA_II, -1.0), RangeError);
  CHECK_NOTHROW(make_target(TargetTag::TLA_I, 0.0));
  CHECK(target_from_name("TMoA_II") == TargetTag::TMoA_II);
  CHECK_THROWS_AS(target_from_name("T"), ConfigError);
}

TEST_CASE("exact constructions use the stated weights") {
  const TheoryNetwork la = exact_construct(make_target(TargetTag::TLA_I));
  CHECK(la.family == TheoryFamily::LA_I);
  CHECK(la.width == 1);
  CHECK(la.alpha == std::vector<double>{1.0, 1.0, 0.0, 0.0, 0.0, 0.0});

  const TheoryNetwork moa = exact_construct(make_target(TargetTag::TMoA_I, 3.0));
  CHECK(moa.family == TheoryFamily::MoA_I);
  CHECK(moa.w == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(moa.v[0] == 3.0);
  for (std::size_t i = 1; i < moa.v.size(); ++i) CHECK(moa.v[i] == 0.0);

  const TheoryNetwork moa2 = exact_construct(make_target(TargetTag::TMoA_II, 1.0));
  CHECK(moa2.family == TheoryFamily::QdMoA_II);
  std::size_t nonzero_rows = 0;
  for (std::size_t j = 0; j < moa2.pairs.size(); ++j) {
    const bool set = moa2.v[j * 3] != 0.0 || moa2.v[j * 3 + 1] != 0.0 || moa2.v[j * 3 + 2] != 0.0;
    if (!set) continue;
    ++nonzero_rows;
    CHECK(moa2.dictionary[moa2.pairs[j].left].tag == ActivationTag::ReLU);
    CHECK(moa2.dictionary[moa2.pairs[j].right].tag == ActivationTag::ReLU);
    CHECK(moa2.v[j * 3] == 1.0);
  }
  CHECK(nonzero_rows == 1);

  WitnessTarget bad;
  bad.tag = TargetTag::AdaptiveRidge;
  bad.beta = std::nan("");
  CHECK_THROWS_AS(exact_construct(bad), UnsupportedError);
}

TEST_CASE("exact constructions match their targets on the full grid") {
  const WitnessTarget targets[] = {make_target(TargetTag::TLA_I), make_target(TargetTag::TMoA_I, 2.0),
                                   make_target(TargetTag::TLA_II), make_target(TargetTag::TMoA_II, 1.5)};
  for (const auto& t : targets) {
    CAPTURE(describe(t));
    GridSpec g;
    g.dim = target_dim(t);
    const SobolevEstimate est = sobolev_distance(as_evaluable(exact_construct(t)), as_evaluable(t), g);
    CHECK(est.total <= 1e-12);
  }
  WitnessTarget ridge;
  ridge.tag = TargetTag::AdaptiveRidge;
  ridge.u = {1.2, -0.4};
  ridge.beta = 0.3;
  ridge.w = {0.5, 1.0};
  ridge.b = -0.2;
  CHECK(sobolev_distance(as_evaluable(exact_construct(ridge)), as_evaluable(ridge), small_grid(2, 101)).total <= 1e-12);
}

TEST_CASE("a tampered dictionary breaks the ReLU2 construction") {
  std::vector<ActivationKind> dict = theory_dictionary_i();
  dict[1] = ActivationTag::ReLU;
  const WitnessTarget t = make_target(TargetTag::TLA_I);
  CHECK(sobolev_distance(as_evaluable(exact_construct(t, dict)), as_evaluable(t), small_grid(1, 401)).total > 0.1);
  dict.pop_back();
  CHECK_THROWS_AS(exact_construct(t, dict), ContractError);
}

TEST_CASE("distance to zero of the Type-I LA target") {
  GridSpec g;
  g.dim = 1;
  const SobolevEstimate est = sobolev_distance(as_evaluable(make_target(TargetTag::TLA_I)), zero_function(), g);
  CHECK(est.sup_value_gap == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(est.sup_gradient_gap == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(est.total == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(est.value_argmax[0] == 1.0);

  const Evaluable f = as_evaluable(make_target(TargetTag::TMoA_I, 1.0));
  CHECK(sobolev_distance(f, f, small_grid(2)).total == 0.0);
}

TEST_CASE("grid exclusion and probes") {
  GridSpec g = small_grid(2, 5);  // axis -1, -0.5, 0, 0.5, 1
  CHECK(grid_points(g).size() == 4 + 2 * 4);  // default radius 0.75 also drops ±0.5
  g.kink_exclusion_radius = 0.1;
  const auto pts = grid_points(g);
  CHECK(pts.size() == 16 + 4 * 4);
  for (const Point& p : pts) {
    CHECK((p[0] != 0.0 && p[1] != 0.0));
  }
  g.trace_offset = 0.0;
  CHECK(grid_points(g).size() == 16);
  g.points_per_axis = 2;
  CHECK_THROWS_AS(validate(g), RangeError);
  g.points_per_axis = 5;
  g.kink_exclusion_radius = 10.0;
  CHECK_THROWS_AS(validate(g), RangeError);
  g.kink_exclusion_radius = -1.0;
  g.dim = 3;
  CHECK_THROWS_AS(validate(g), DimensionError);
}

TEST_CASE("non-finite evaluations name the point") {
  const Evaluable bad = [](const Point& x) {
    PointEval e;
    e.value = x[0] > 0.9 ? std::nan("") : 0.0;
    return e;
  };
  CHECK_THROWS_AS(sobolev_distance(bad, zero_function(), small_grid(2, 11)), NumericError);
}

TEST_CASE("jump profiles of the targets") {
  const auto xs = linspace(-1.0, 1.0, 101);
  const JumpProfile jp = jump_profile(make_target(TargetTag::TMoA_I, 2.0), xs, 1e-3);
  REQUIRE(jp.jump_values.size() == xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(jp.jump_values[i] - std::tanh(2.0 * xs[i])) <= 1e-6);
  CHECK(jp.oscillation() >= 2.0 * std::tanh(2.0) * (1.0 - 1e-6));

  for (const double lambda : {1.0, 2.0}) {
    const JumpProfile j2 = jump_profile(make_target(TargetTag::TMoA_II, lambda), xs, 1e-3);
    for (std::size_t i = 0; i < xs.size(); ++i)
      CHECK(std::abs(j2.jump_values[i] - std::max(xs[i], 0.0) * std::tanh(lambda * xs[i])) <= 1e-6);
  }

  CHECK_THROWS_AS(jump_profile(make_target(TargetTag::TLA_I), xs, 1e-3), ContractError);
  CHECK_THROWS_AS(jump_profile(make_target(TargetTag::TMoA_I, 1.0), xs, 0.0), ContractError);
}

TEST_CASE("an LA network with one ReLU ridge on S has a constant jump") {
  TheoryNetwork net = random_network(TheoryFamily::LA_I, 2, 3, 11);
  net.w[0] = 0.0;
  net.w[1] = 0.8;
  net.w[2] = 0.0;
  const JumpProfile jp = jump_profile(net, linspace(-1.0, 1.0, 101), 1e-12);
  CHECK(jp.oscillation() <= 1e-9);
  const double eta = kDefaultLeakySlope;
  const double expected = net.a[0] * (net.alpha[0] * 0.8 + net.alpha[2] * 0.8 * (1.0 - eta));
  CHECK(jp.jump_values[17] == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("a probe on a network kink is rejected") {
  TheoryNetwork net = make_network(TheoryFamily::FixedI, 2, 1);
  net.a = {1.0};
  net.w = {0.0, 1.0, -0.5};  // kink on x2 = 0.5
  CHECK_THROWS_AS(jump_profile(net, {0.0}, 0.5), ProbeError);
}

TEST_CASE("adaptive ridge bound") {
  WitnessTarget t;
  t.tag = TargetTag::AdaptiveRidge;
  t.u = {1.0, 0.0};
  RidgeBound rb = adaptive_ridge_bound(t);
  CHECK(rb.osc == doctest::Approx(1.5231883119115295).epsilon(1e-14));
  CHECK(rb.quarter_osc == doctest::Approx(0.3807970779778824).epsilon(1e-14));

  t.u = {0.0, 0.0};
  CHECK(adaptive_ridge_bound(t).osc == 0.0);
  t.u = {0.0, 2.0};
  CHECK(adaptive_ridge_bound(t).osc == 0.0);

  t.u = {1.0, 0.0};
  t.w = {1.0, 1.0};  // diagonal through the corners
  CHECK(adaptive_ridge_bound(t).osc == doctest::Approx(2.0 * std::tanh(1.0)));
  t.b = 3.0;
  CHECK_THROWS_AS(adaptive_ridge_bound(t), GeometryError);
  t.w = {0.0, 0.0};
  CHECK_THROWS_AS(adaptive_ridge_bound(t), GeometryError);
}

TEST_CASE("inclusions preserve the function") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const TheoryNetwork fixed1 = random_network(TheoryFamily::FixedI, 2, 3, 1, ActivationTag::SiLU);
  const TheoryNetwork fixed2 = random_network(TheoryFamily::FixedII, 2, 3, 2, ActivationTag::Tanh, ActivationTag::ReLU);
  const TheoryNetwork la1 = random_network(TheoryFamily::LA_I, 2, 3, 3);
  const TheoryNetwork la2 = random_network(TheoryFamily::QdLA_II, 2, 2, 4);
  const std::pair<TheoryNetwork, TheoryNetwork> cases[] = {
      {fixed1, embed_fixed_in_la(fixed1)},
      {fixed2, embed_fixed_in_la(fixed2)},
      {la1, embed_la_in_moa(la1, 0.5)},
      {la2, embed_la_in_moa(la2, 0.9)},
  };
  for (const auto& [from, to] : cases) {
    CAPTURE(name(from.family));
    for (int i = 0; i < 100; ++i) {
      const Point x{uni(rng), uni(rng)};
      const PointEval a = evaluate(from, x), b = evaluate(to, x);
      CHECK(std::abs(a.value - b.value) <= 1e-12);
      CHECK(std::abs(a.gradient[0] - b.gradient[0]) <= 1e-12);
      CHECK(std::abs(a.gradient[1] - b.gradient[1]) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(embed_la_in_moa(la1, 2.0), RangeError);
  CHECK_THROWS_AS(embed_fixed_in_la(la1), ContractError);
  CHECK_THROWS_AS(embed_fixed_in_la(random_network(TheoryFamily::FixedI, 2, 1, 1, ActivationTag::Sigmoid)),
                  UnsupportedError);
}

TEST_CASE("pack and unpack round-trip") {
  TheoryNetwork net = random_network(TheoryFamily::QdMoA_II, 2, 2, 9);
  const auto p = pack(net);
  CHECK(p.size() == 2 + 6 + 6 + 28 * 3);
  TheoryNetwork copy = make_network(TheoryFamily::QdMoA_II, 2, 2);
  unpack(copy, p);
  CHECK(pack(copy) == p);
  CHECK_THROWS_AS(unpack(copy, std::vector<double>(3)), DimensionError);
}

TEST_CASE("objective gradient agrees with finite differences") {
  const WitnessTarget t = make_target(TargetTag::TMoA_I, 1.5);
  const auto s = detail::sample(as_evaluable(t), 2, grid_points(small_grid(2, 7)));
  const TheoryFamily families[] = {TheoryFamily::FixedI, TheoryFamily::LA_I, TheoryFamily::MoA_I,
                                   TheoryFamily::FixedII, TheoryFamily::QdLA_II, TheoryFamily::QdMoA_II};
  for (const TheoryFamily f : families) {
    CAPTURE(name(f));
    // Smooth activations only, so the differences are clean.
    TheoryNetwork net = random_network(f, 2, 2, 21, ActivationTag::GELU, ActivationTag::SiLU);
    if (f == TheoryFamily::LA_I || f == TheoryFamily::MoA_I) {
      net.dictionary = {ActivationTag::GELU, ActivationTag::SiLU, ActivationTag::Tanh,
                        ActivationTag::GELU, ActivationTag::SiLU, ActivationTag::Tanh};
    }
    if (f == TheoryFamily::QdLA_II || f == TheoryFamily::QdMoA_II) {
      net.dictionary = {ActivationTag::Identity, ActivationTag::GELU, ActivationTag::SiLU, ActivationTag::Tanh,
                        ActivationTag::GELU,     ActivationTag::SiLU, ActivationTag::Tanh};
    }
    std::vector<double> grad;
    detail::fit_objective(net, s, &grad);
    std::vector<double> p = pack(net);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + 1e-6;
      unpack(net, p);
      const double up = detail::fit_objective(net, s, nullptr);
      p[i] = keep - 1e-6;
      unpack(net, p);
      const double down = detail::fit_objective(net, s, nullptr);
      p[i] = keep;
      worst = std::max(worst, std::abs((up - down) / 2e-6 - grad[i]) / std::max(1.0, std::abs(grad[i])));
    }
    unpack(net, p);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("fit floors at a small budget") {
  FitBudget budget;
  budget.restarts = 2;
  budget.steps = 400;
  budget.polish_iterations = 20;
  for (const std::size_t m : {1u, 2u}) {
    const FitResult r = fit_class(make_target(TargetTag::TLA_I), TheoryFamily::FixedI, m, budget, ActivationTag::GELU);
    CHECK(r.residual.total >= 0.9 / static_cast<double>(m + 1));
    CHECK(r.restart_objectives.size() == 2);
    CHECK(r.residual.total == r.residual.sup_value_gap + r.residual.sup_gradient_gap);
  }
  const FitResult la = fit_class(make_target(TargetTag::TMoA_I, 2.0), TheoryFamily::LA_I, 1, budget, ActivationTag::ReLU,
                                 ActivationTag::ReLU, small_grid(2, 101));
  CHECK(la.residual.total >= 0.9 * 0.5 * std::tanh(2.0));
}

TEST_CASE("fits are deterministic and reject ridge families") {
  FitBudget budget;
  budget.restarts = 2;
  budget.steps = 100;
  budget.polish_iterations = 0;
  budget.seed = 3;
  const auto a = fit_class(make_target(TargetTag::TLA_I), TheoryFamily::LA_I, 1, budget);
  budget.jobs = 2;
  const auto b = fit_class(make_target(TargetTag::TLA_I), TheoryFamily::LA_I, 1, budget);
  CHECK(pack(a.network) == pack(b.network));
  CHECK(a.objective == b.objective);
  CHECK_THROWS_AS(fit_class(make_target(TargetTag::TLA_I), TheoryFamily::Ridge1D, 1, budget), UnsupportedError);
  CHECK_THROWS_AS(fit_class(make_target(TargetTag::TLA_I), TheoryFamily::DictRidge1D, 1, budget), UnsupportedError);
}

TEST_CASE("ridge classes evaluate as sums of ridges") {
  TheoryNetwork r = make_network(TheoryFamily::Ridge1D, 1, 2, ActivationTag::ReLU);
  r.a = {1.0, -2.0};
  r.w = {1.0, 0.0, 1.0, -0.5};
  CHECK(evaluate(r, {0.8, 0.0}).value == doctest::Approx(0.8 - 2.0 * 0.3));
  TheoryNetwork dict = make_network(TheoryFamily::DictRidge1D, 1, 1);
  CHECK(dict.a.size() == 7);
  dict.w = {1.0, 0.0};
  dict.a[0] = 2.0;  // identity channel
  CHECK(evaluate(dict, {0.25, 0.0}).value == 0.5);
  CHECK_THROWS_AS(make_network(TheoryFamily::Ridge1D, 2, 1), DimensionError);
}

TEST_CASE("witness suite without fits passes and tampering is caught") {
  WitnessOptions opt;
  opt.fits = false;
  opt.grid_points = 101;
  std::size_t seen = 0;
  const WitnessReport rep = run_witness_suite(WitnessSuite::All, opt, [&](const WitnessRow&) { ++seen; });
  CHECK(rep.all_passed());
  CHECK(seen == rep.rows.size());
  CHECK(rep.violations().empty());

  std::ostringstream a, b;
  write_witness_csv(rep, a);
  write_witness_csv(run_witness_suite(WitnessSuite::All, opt), b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("check,target,lambda,family,width,", 0) == 0);

  opt.tamper_relu2 = true;
  const WitnessReport bad = run_witness_suite(WitnessSuite::Theorem1, opt);
  CHECK_FALSE(bad.all_passed());
  REQUIRE(bad.violations().size() == 1);
  CHECK(bad.violations()[0].find("exactness TLA_I") == 0);
  CHECK_THROWS_AS(suite_from_name("theorem3"), ConfigError);
}
