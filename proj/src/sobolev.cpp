#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"
#include "theory_internal.hpp"

namespace moa {

namespace {

std::string point_text(const Point& p, std::size_t dim) {
  std::ostringstream s;
  s.precision(17);
  s << "(" << p[0];
  if (dim == 2) s << ", " << p[1];
  s << ")";
  return s.str();
}

std::vector<double> axis(const GridSpec& grid) { return linspace(-grid.half_width, grid.half_width, grid.points_per_axis); }

}  // namespace

double GridSpec::spacing() const noexcept {
  return 2.0 * half_width / static_cast<double>(points_per_axis - 1);
}

double GridSpec::exclusion_radius() const noexcept {
  return kink_exclusion_radius < 0.0 ? 1.5 * spacing() : kink_exclusion_radius;
}

void validate(const GridSpec& grid) {
  if (grid.dim != 1 && grid.dim != 2) throw DimensionError("grid dim must be 1 or 2, got " + std::to_string(grid.dim));
  if (grid.points_per_axis < 3) throw RangeError("grid needs at least 3 points per axis");
  if (!(grid.half_width > 0.0) || !std::isfinite(grid.half_width)) throw RangeError("grid half_width must be positive");
  if (grid.exclusion_radius() >= grid.spacing() * static_cast<double>(grid.points_per_axis))
    throw RangeError("kink exclusion radius covers the whole grid");
  if (grid.trace_offset < 0.0 || grid.trace_offset >= grid.half_width)
    throw RangeError("trace offset must lie in [0, half_width)");
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  // Keep the grid symmetric so that the centre of an odd grid is exactly 0.
  for (std::size_t i = 0; i < n / 2; ++i) out[n - 1 - i] = -out[i] + (lo + hi);
  if (n % 2 == 1) out[n / 2] = 0.5 * (lo + hi);
  return out;
}

namespace detail {

std::vector<Point> regular_points(const GridSpec& grid) {
  validate(grid);
  const double r = grid.exclusion_radius();
  std::vector<double> kept;
  for (const double t : axis(grid)) {
    if (std::abs(t) >= r) kept.push_back(t);
  }
  std::vector<Point> out;
  if (grid.dim == 1) {
    for (const double t : kept) out.push_back({t, 0.0});
  } else {
    for (const double x1 : kept) {
      for (const double x2 : kept) out.push_back({x1, x2});
    }
  }
  return out;
}

std::vector<Point> probe_points(const GridSpec& grid) {
  validate(grid);
  std::vector<Point> out;
  const double d = grid.trace_offset;
  if (d == 0.0) return out;
  if (grid.dim == 1) return {{-d, 0.0}, {d, 0.0}};
  const double r = grid.exclusion_radius();
  for (const double t : axis(grid)) {
    if (std::abs(t) < r) continue;
    out.push_back({t, -d});
    out.push_back({t, d});
    out.push_back({-d, t});
    out.push_back({d, t});
  }
  return out;
}

}  // namespace detail

std::vector<Point> grid_points(const GridSpec& grid) {
  std::vector<Point> out = detail::regular_points(grid);
  const std::vector<Point> probes = detail::probe_points(grid);
  out.insert(out.end(), probes.begin(), probes.end());
  return out;
}

Evaluable as_evaluable(const WitnessTarget& t) {
  validate(t);
  return [t](const Point& x) { return eval_target(t, x); };
}

Evaluable as_evaluable(const TheoryNetwork& net) {
  return [net](const Point& x) { return evaluate(net, x); };
}

Evaluable zero_function() {
  return [](const Point&) { return PointEval{}; };
}

SobolevEstimate sobolev_distance(const Evaluable& f, const Evaluable& g, const GridSpec& grid) {
  SobolevEstimate est;
  est.grid = grid;
  for (const Point& p : grid_points(grid)) {
    const PointEval a = f(p);
    const PointEval b = g(p);
    const double dv = std::abs(a.value - b.value);
    const double dg = std::hypot(a.gradient[0] - b.gradient[0], a.gradient[1] - b.gradient[1]);
    if (!std::isfinite(dv) || !std::isfinite(dg))
      throw NumericError("non-finite evaluation at grid point " + point_text(p, grid.dim));
    if (dv > est.sup_value_gap) {
      est.sup_value_gap = dv;
      est.value_argmax = p;
    }
    if (dg > est.sup_gradient_gap) {
      est.sup_gradient_gap = dg;
      est.gradient_argmax = p;
    }
  }
  est.total = est.sup_value_gap + est.sup_gradient_gap;
  return est;
}

double JumpProfile::oscillation() const {
  if (jump_values.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(jump_values.begin(), jump_values.end());
  return *hi - *lo;
}

JumpProfile jump_profile(const Evaluable& f, std::size_t dim, const std::vector<double>& x1_samples, double epsilon) {
  if (dim != 2) throw ContractError("jump profiles need a 2-D function, got dim " + std::to_string(dim));
  if (!(epsilon > 0.0)) throw ContractError("jump profile epsilon must be positive");
  JumpProfile jp;
  jp.x1_samples = x1_samples;
  jp.epsilon = epsilon;
  jp.jump_values.reserve(x1_samples.size());
  for (const double x1 : x1_samples) {
    const PointEval above = f({x1, epsilon});
    const PointEval below = f({x1, -epsilon});
    if (above.kink || below.kink) {
      std::ostringstream s;
      s << "jump probe at x1=" << x1 << ", x2=±" << epsilon << " lies on a kink; use a smaller epsilon";
      throw ProbeError(s.str());
    }
    jp.jump_values.push_back(above.gradient[1] - below.gradient[1]);
  }
  return jp;
}

JumpProfile jump_profile(const WitnessTarget& t, const std::vector<double>& x1_samples, double epsilon) {
  return jump_profile(as_evaluable(t), target_dim(t), x1_samples, epsilon);
}

JumpProfile jump_profile(const TheoryNetwork& net, const std::vector<double>& x1_samples, double epsilon) {
  return jump_profile(as_evaluable(net), net.dim, x1_samples, epsilon);
}

RidgeBound adaptive_ridge_bound(const WitnessTarget& t, const GridSpec& grid) {
  if (t.tag != TargetTag::AdaptiveRidge)
    throw ContractError("adaptive_ridge_bound needs an AdaptiveRidge target, got " + std::string(name(t.tag)));
  if (grid.points_per_axis < 2) throw RangeError("ridge segment needs at least 2 samples");
  const double h = grid.half_width;
  if (t.w[0] == 0.0 && t.w[1] == 0.0) throw GeometryError("ridge normal w is zero; S is not a line");

  // Parametrise S by the coordinate along which it is a graph.
  const std::size_t free = std::abs(t.w[1]) >= std::abs(t.w[0]) ? 0 : 1;
  const std::size_t solved = 1 - free;
  const double slope = -t.w[free] / t.w[solved];
  const double offset = -t.b / t.w[solved];
  double lo = -h, hi = h;
  if (slope == 0.0) {
    if (std::abs(offset) > h) lo = hi = std::numeric_limits<double>::quiet_NaN();
  } else {
    const double ta = (-h - offset) / slope, tb = (h - offset) / slope;
    lo = std::max(lo, std::min(ta, tb));
    hi = std::min(hi, std::max(ta, tb));
  }
  if (!(lo <= hi)) {
    std::ostringstream s;
    s << "ridge line " << t.w[0] << "*x1 + " << t.w[1] << "*x2 + " << t.b << " = 0 misses [-" << h << ", " << h
      << "]^2";
    throw GeometryError(s.str());
  }

  double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
  for (const double s : linspace(lo, hi, grid.points_per_axis)) {
    Point x{};
    x[free] = s;
    x[solved] = slope * s + offset;
    const double g = std::tanh(t.u[0] * x[0] + t.u[1] * x[1] + t.beta);
    gmin = std::min(gmin, g);
    gmax = std::max(gmax, g);
  }
  RidgeBound rb;
  rb.osc = gmax - gmin;
  rb.quarter_osc = 0.25 * rb.osc;
  return rb;
}

}  // namespace moa
