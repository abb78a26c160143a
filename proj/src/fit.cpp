#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"
#include "theory_internal.hpp"

namespace moa {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void randomize(TheoryNetwork& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(net.width));
  for (double& x : net.a) x = a_scale * normal(rng);
  for (double& x : net.w) x = normal(rng);
  for (double& x : net.u) x = normal(rng);
  for (double& x : net.alpha) x = 0.5 * normal(rng);
  for (double& x : net.v) x = normal(rng);
}

struct Restart {
  std::vector<double> params;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double adam_objective = std::numeric_limits<double>::quiet_NaN();
};

Restart adam(TheoryNetwork net, const detail::FitSamples& samples, const FitBudget& budget, std::uint64_t seed) {
  randomize(net, seed);
  std::vector<double> theta = pack(net);
  const std::size_t p = theta.size();
  std::vector<double> m(p, 0.0), v(p, 0.0), grad;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double pi = std::acos(-1.0);
  Restart best;
  best.objective = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t <= budget.steps; ++t) {
    unpack(net, theta);
    const double obj = detail::fit_objective(net, samples, t < budget.steps ? &grad : nullptr);
    if (!std::isfinite(obj)) break;
    if (obj < best.objective) {
      best.objective = obj;
      best.params = theta;
    }
    if (t == budget.steps) break;
    const double lr =
        budget.lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(t) / static_cast<double>(budget.steps)));
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t + 1));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t + 1));
    for (std::size_t i = 0; i < p; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  if (best.params.empty()) best.objective = std::numeric_limits<double>::quiet_NaN();
  return best;
}

// Levenberg-Marquardt on the regular fit points with a finite-difference
// Jacobian; the kinks make analytic second-order terms unreliable anyway.
std::vector<double> polish(TheoryNetwork net, std::vector<double> theta, const detail::FitSamples& samples,
                           std::size_t regular, std::size_t iterations) {
  const std::size_t p = theta.size();
  const std::size_t rows = regular * (1 + samples.dim);
  Eigen::VectorXd r(rows), rp(rows), rm(rows), trial_r(rows);
  Eigen::MatrixXd jac(rows, p);
  auto residuals = [&](const std::vector<double>& th, Eigen::VectorXd& out) {
    unpack(net, th);
    detail::fit_residuals(net, samples, regular, out.data());
  };
  residuals(theta, r);
  double cost = r.squaredNorm();
  double mu = -1.0;
  std::vector<double> probe = theta;
  for (std::size_t it = 0; it < iterations && std::isfinite(cost); ++it) {
    for (std::size_t i = 0; i < p; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(theta[i]));
      probe[i] = theta[i] + h;
      residuals(probe, rp);
      probe[i] = theta[i] - h;
      residuals(probe, rm);
      probe[i] = theta[i];
      jac.col(static_cast<Eigen::Index>(i)) = (rp - rm) / (2.0 * h);
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;
    if (mu < 0.0) mu = 1e-3 * std::max(jtj.diagonal().maxCoeff(), 1e-12);
    bool improved = false;
    while (mu < 1e16) {
      Eigen::MatrixXd a = jtj;
      a.diagonal().array() += mu;
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      std::vector<double> trial(p);
      for (std::size_t i = 0; i < p; ++i) trial[i] = theta[i] + step[static_cast<Eigen::Index>(i)];
      residuals(trial, trial_r);
      const double trial_cost = trial_r.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        const double gain = (cost - trial_cost) / std::max(cost, 1e-300);
        theta = trial;
        probe = theta;
        r = trial_r;
        cost = trial_cost;
        mu = std::max(mu / 3.0, 1e-15);
        improved = gain > 1e-14;
        break;
      }
      mu *= 4.0;
    }
    if (!improved || cost < 1e-30) break;
  }
  return theta;
}

}  // namespace

std::string FitBudget::describe() const {
  std::ostringstream s;
  s << "adam restarts=" << restarts << " steps=" << steps << " lr=" << lr << " cosine fit_grid=" << fit_points_per_axis
    << " lm_polish=" << polish_iterations << " seed=" << seed;
  return s.str();
}

FitResult fit_class(const WitnessTarget& target, TheoryFamily family, std::size_t width, const FitBudget& budget,
                    ActivationKind sigma, ActivationKind sigma_q, const GridSpec& residual_grid) {
  if (family == TheoryFamily::Ridge1D || family == TheoryFamily::DictRidge1D)
    throw UnsupportedError(std::string(name(family)) + " networks are not fitted; they only carry jump profiles");
  validate(target);
  if (budget.restarts == 0 || budget.steps == 0) throw ContractError("fit budget needs restarts and steps");
  const std::size_t dim = target_dim(target);
  GridSpec res_grid = residual_grid;
  res_grid.dim = dim;
  validate(res_grid);

  // A 1-D fit is cheap enough to use the residual grid itself.
  GridSpec fit_grid = res_grid;
  if (dim == 2) {
    fit_grid.points_per_axis = budget.fit_points_per_axis;
    fit_grid.kink_exclusion_radius = -1.0;
  }
  const std::vector<Point> regular = detail::regular_points(fit_grid);
  std::vector<Point> points = regular;
  const std::vector<Point> probes = detail::probe_points(fit_grid);
  points.insert(points.end(), probes.begin(), probes.end());
  const detail::FitSamples samples = detail::sample(as_evaluable(target), dim, points);
  const TheoryNetwork shape = make_network(family, dim, width, sigma, sigma_q);

  // Every finished restart is polished: the Adam ranking does not predict
  // which basin the polish reaches.
  auto run_restart = [&](std::size_t i) {
    Restart r = adam(shape, samples, budget, splitmix(budget.seed * 0x100000001b3ULL + i));
    r.adam_objective = r.objective;
    if (!std::isfinite(r.objective) || budget.polish_iterations == 0) return r;
    TheoryNetwork net = shape;
    std::vector<double> polished = polish(net, r.params, samples, regular.size(), budget.polish_iterations);
    unpack(net, polished);
    const double value = detail::fit_objective(net, samples, nullptr);
    if (value < r.objective) {
      r.params = std::move(polished);
      r.objective = value;
    }
    return r;
  };
  std::vector<Restart> runs(budget.restarts);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) runs[i] = run_restart(i);
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(budget.jobs, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  FitResult result;
  std::size_t best = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    result.restart_objectives.push_back(runs[i].adam_objective);
    if (std::isfinite(runs[i].objective) && (best == runs.size() || runs[i].objective < runs[best].objective)) best = i;
  }
  if (best == runs.size()) {
    std::ostringstream s;
    s << "all " << runs.size() << " restarts diverged fitting " << name(family) << " (m=" << width << ") to "
      << describe(target) << " with " << budget.describe();
    throw FitError(s.str());
  }

  TheoryNetwork net = shape;
  unpack(net, runs[best].params);
  result.network = net;
  result.objective = runs[best].objective;
  result.best_restart = best;
  result.residual = sobolev_distance(as_evaluable(target), as_evaluable(net), res_grid);
  return result;
}

}  // namespace moa
