#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moa/activations.hpp"
#include "moa/ffn.hpp"

namespace moa {

// Points of Ω = [-h, h]^dim with dim in {1, 2}; unused coordinates are zero.
using Point = std::array<double, 2>;

struct PointEval {
  double value = 0.0;
  Point gradient{0.0, 0.0};
  bool kink = false;  // on a set where the classical gradient does not exist
};

// ---- witness targets ----------------------------------------------------------

enum class TargetTag { TLA_I, TMoA_I, TLA_II, TMoA_II, AdaptiveRidge };

std::string_view name(TargetTag tag) noexcept;
TargetTag target_from_name(std::string_view name);

//   TLA_I        ReLU(x1) + ReLU(x1)^2                 (dim 1)
//   TMoA_I       tanh(λ x1) ReLU(x2)
//   TLA_II       ReLU(x2) (ReLU(x1) + tanh(x1))
//   TMoA_II      ReLU(x2) ReLU(x1) tanh(λ x1)
//   AdaptiveRidge tanh(u·x + β) ReLU(w·x + b)
struct WitnessTarget {
  TargetTag tag = TargetTag::TLA_I;
  double lambda = 1.0;
  Point u{0.0, 0.0};
  double beta = 0.0;
  Point w{0.0, 1.0};
  double b = 0.0;
};

WitnessTarget make_target(TargetTag tag, double lambda = 1.0);
std::size_t target_dim(const WitnessTarget& t) noexcept;
Flavor target_flavor(const WitnessTarget& t) noexcept;
void validate(const WitnessTarget& t);  // RangeError unless lambda > 0
std::string describe(const WitnessTarget& t);

PointEval eval_target(const WitnessTarget& t, const Point& x);

// ---- theory networks --------------------------------------------------------------

enum class TheoryFamily { FixedI, LA_I, MoA_I, FixedII, QdLA_II, QdMoA_II, Ridge1D, DictRidge1D };

std::string_view name(TheoryFamily family) noexcept;
TheoryFamily family_from_name(std::string_view name);
bool is_type_ii(TheoryFamily family) noexcept;

// {ReLU, ReLU², LeakyReLU, GELU, SiLU, tanh}
const std::vector<ActivationKind>& theory_dictionary_i();
// {id, ReLU, ReLU², LeakyReLU, GELU, SiLU, tanh}
const std::vector<ActivationKind>& theory_dictionary_ii();

// Width-m network on the augmented input x̄ = (x, 1). Every weight row has
// dim + 1 entries. With channels j (activations for Type-I, activation pairs
// for Type-II) the network computes
//   Σ_k Σ_j c_kj(x) S_j(w_k·x̄, u_k·x̄),
// where S_j is σ_j(z) (Type-I) or σ_p(z)σ_q(y) (Type-II) and c_kj is
//   a_k                 Fixed, Ridge1D
//   a_k α_j             LA
//   a_k tanh(v_j·x̄)     MoA
//   a[k·J + j]          DictRidge1D
struct TheoryNetwork {
  TheoryFamily family = TheoryFamily::LA_I;
  std::size_t dim = 2;
  std::size_t width = 1;
  std::vector<ActivationKind> dictionary;
  std::vector<ActivationPair> pairs;  // Type-II channels into dictionary
  std::vector<double> a;
  std::vector<double> w;      // [width × (dim+1)]
  std::vector<double> u;      // [width × (dim+1)], Type-II second factor
  std::vector<double> alpha;  // [channels], LA
  std::vector<double> v;      // [channels × (dim+1)], MoA gate rows

  std::size_t channels() const noexcept;
};

// Zero-initialised network of the family. sigma / sigma_q pick the activations
// of the fixed families (sigma alone for FixedI and Ridge1D).
TheoryNetwork make_network(TheoryFamily family, std::size_t dim, std::size_t width,
                           ActivationKind sigma = ActivationTag::ReLU, ActivationKind sigma_q = ActivationTag::ReLU);

PointEval evaluate(const TheoryNetwork& net, const Point& x);

// Trainable parameters in the order a, w, u, alpha, v.
std::vector<double> pack(const TheoryNetwork& net);
void unpack(TheoryNetwork& net, std::span<const double> params);

// Lossless inclusions: a fixed network as a one-hot LA network, and an LA
// network as a MoA network with constant gates tanh(arctanh(ρ α_j)) and
// output weights scaled by 1/ρ. RangeError when some |ρ α_j| >= 1.
TheoryNetwork embed_fixed_in_la(const TheoryNetwork& fixed);
TheoryNetwork embed_la_in_moa(const TheoryNetwork& la, double rho);

// Width-1 network in the smallest family that represents the target exactly.
// Pass a tampered dictionary to build the same weights over other activations.
TheoryNetwork exact_construct(const WitnessTarget& t);
TheoryNetwork exact_construct(const WitnessTarget& t, const std::vector<ActivationKind>& dictionary);

// ---- grids, distances, jumps ---------------------------------------------------------

struct GridSpec {
  std::size_t dim = 2;
  double half_width = 1.0;
  std::size_t points_per_axis = 401;
  double kink_exclusion_radius = -1.0;  // < 0 selects 1.5 × spacing
  // One-sided trace probes at this offset from each kink line (0 disables).
  double trace_offset = 1e-9;

  double spacing() const noexcept;
  double exclusion_radius() const noexcept;
};

void validate(const GridSpec& grid);

// Grid points outside the exclusion bands around {x1 = 0} (and {x2 = 0} in
// 2-D), followed by the trace probes.
std::vector<Point> grid_points(const GridSpec& grid);

using Evaluable = std::function<PointEval(const Point&)>;

Evaluable as_evaluable(const WitnessTarget& t);
Evaluable as_evaluable(const TheoryNetwork& net);
Evaluable zero_function();

struct SobolevEstimate {
  double sup_value_gap = 0.0;
  double sup_gradient_gap = 0.0;  // Euclidean norm of the gradient difference
  double total = 0.0;
  Point value_argmax{0.0, 0.0};
  Point gradient_argmax{0.0, 0.0};
  GridSpec grid;
};

// Grid estimate of ‖f - g‖_{W^{1,∞}}; a lower bound of the true distance.
// NumericError naming the point on non-finite values.
SobolevEstimate sobolev_distance(const Evaluable& f, const Evaluable& g, const GridSpec& grid);

struct JumpProfile {
  std::vector<double> x1_samples;
  std::vector<double> jump_values;
  double epsilon = 0.0;

  double oscillation() const;
};

// jump_values[i] = ∂₂f(x1_i, +ε) - ∂₂f(x1_i, -ε). ContractError for 1-D
// functions, ProbeError when a probe lands on a kink.
JumpProfile jump_profile(const Evaluable& f, std::size_t dim, const std::vector<double>& x1_samples, double epsilon);
JumpProfile jump_profile(const WitnessTarget& t, const std::vector<double>& x1_samples, double epsilon);
JumpProfile jump_profile(const TheoryNetwork& net, const std::vector<double>& x1_samples, double epsilon);

std::vector<double> linspace(double lo, double hi, std::size_t n);

struct RidgeBound {
  double osc = 0.0;
  double quarter_osc = 0.0;
};

// Oscillation of tanh(u·x + β) along S ∩ Ω for S = {w·x + b = 0}, sampled at
// grid.points_per_axis points of the segment. GeometryError when w = 0 or the
// line misses Ω.
RidgeBound adaptive_ridge_bound(const WitnessTarget& t, const GridSpec& grid = {});

// ---- fitting -------------------------------------------------------------------------

struct FitBudget {
  std::size_t restarts = 8;
  std::size_t steps = 5000;
  double lr = 1e-2;                    // Adam, cosine-decayed to zero
  std::size_t fit_points_per_axis = 41;
  std::size_t polish_iterations = 200;  // Levenberg-Marquardt on every restart
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  std::string describe() const;
};

struct FitResult {
  TheoryNetwork network;
  SobolevEstimate residual;
  double objective = 0.0;  // value MSE + 0.5 gradient MSE on the fit grid, after polish
  std::size_t best_restart = 0;
  std::vector<double> restart_objectives;  // Adam objective per restart, NaN if diverged
};

// Best of budget.restarts fits of the family to the target. Ridge1D and
// DictRidge1D raise UnsupportedError; FitError when every restart diverges.
FitResult fit_class(const WitnessTarget& target, TheoryFamily family, std::size_t width, const FitBudget& budget,
                    ActivationKind sigma = ActivationTag::ReLU, ActivationKind sigma_q = ActivationTag::ReLU,
                    const GridSpec& residual_grid = {});

// ---- witness suite -------------------------------------------------------------------

enum class WitnessSuite { All, Theorem1, Theorem2 };

WitnessSuite suite_from_name(std::string_view name);

struct WitnessOptions {
  FitBudget budget;
  // Budget for the report-only Type-II fits.
  FitBudget report_budget{.restarts = 2, .steps = 1500};
  std::size_t grid_points = 401;
  // Fault injection for checking the checks: ReLU² is evaluated as ReLU in
  // the constructed networks.
  bool tamper_relu2 = false;
  bool fits = true;
};

struct WitnessRow {
  std::string check;  // exactness, jump, floor, exact-fit, report, ridge-bound
  std::string target;
  double lambda = 0.0;  // NaN when the target has none
  std::string family;
  std::size_t width = 0;
  double value_gap = 0.0;
  double gradient_gap = 0.0;
  double total = 0.0;
  double bound = 0.0;  // NaN when no bound applies
  double threshold = 0.0;
  bool hard = true;  // counts towards the pass/fail verdict
  bool pass = true;
  std::string note;
};

struct WitnessReport {
  std::vector<WitnessRow> rows;
  bool all_passed() const;
  std::vector<std::string> violations() const;
};

using WitnessProgress = std::function<void(const WitnessRow&)>;

WitnessReport run_witness_suite(WitnessSuite suite, const WitnessOptions& options = {},
                                const WitnessProgress& progress = {});

void write_witness_csv(const WitnessReport& report, std::ostream& out);

}  // namespace moa
