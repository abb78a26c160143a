#pragma once

#include <vector>

#include "moa/expressivity.hpp"

namespace moa::detail {

// Target values and gradients at the fit points.
struct FitSamples {
  std::size_t dim = 2;
  std::vector<Point> x;
  std::vector<double> value;
  std::vector<Point> gradient;
};

FitSamples sample(const Evaluable& f, std::size_t dim, const std::vector<Point>& points);

// mean over samples of (f - t)^2 + 0.5 |∇f - ∇t|^2. When gradient is given it
// receives the derivative with respect to pack(net), same layout.
double fit_objective(const TheoryNetwork& net, const FitSamples& s, std::vector<double>* gradient);

// Residual vector whose squared norm is the objective over the first count
// samples (scaled by 1/count): count × (1 + dim) entries.
void fit_residuals(const TheoryNetwork& net, const FitSamples& s, std::size_t count, double* out);

// Regular grid points and trace probes, kept apart.
std::vector<Point> regular_points(const GridSpec& grid);
std::vector<Point> probe_points(const GridSpec& grid);

}  // namespace moa::detail
