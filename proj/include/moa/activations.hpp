#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace moa {

enum class ActivationTag { ReLU, ReLU2, LeakyReLU, GELU, SiLU, Tanh, Identity, Sigmoid };

inline constexpr double kDefaultLeakySlope = 0.01;

struct ActivationKind {
  ActivationTag tag = ActivationTag::ReLU;
  double leaky_slope = kDefaultLeakySlope;  // only read when tag == LeakyReLU

  constexpr ActivationKind() = default;
  constexpr ActivationKind(ActivationTag t, double slope = kDefaultLeakySlope)  // NOLINT
      : tag(t), leaky_slope(slope) {}

  friend bool operator==(const ActivationKind& a, const ActivationKind& b) {
    return a.tag == b.tag && (a.tag != ActivationTag::LeakyReLU || a.leaky_slope == b.leaky_slope);
  }
};

// Activation values and derivatives. All throw NumericError on non-finite input.
// At the ReLU-family kink (t == 0) derivatives take the right-hand value.
double eval(ActivationKind kind, double t);
double deriv(ActivationKind kind, double t);
double second_deriv(ActivationKind kind, double t);

// Unchecked variants for inner loops; callers guarantee finite input.
double eval_unchecked(ActivationKind kind, double t) noexcept;
void eval_with_derivs(ActivationKind kind, double t, double& value, double& d1, double& d2) noexcept;

// Standard normal CDF and density.
double normal_cdf(double t) noexcept;
double normal_pdf(double t) noexcept;

// True for activations whose first derivative jumps at zero (ReLU, LeakyReLU).
bool has_derivative_jump(ActivationKind kind) noexcept;

std::string_view name(ActivationTag tag) noexcept;
std::string name(ActivationKind kind);
ActivationKind activation_from_name(std::string_view name);

enum class Flavor { TypeI, TypeII };

std::string_view name(Flavor flavor) noexcept;

// Ordered, duplicate-free list of candidate activations. Codes use the letters
// g=GELU, s=SiLU, r2=ReLU², l=LeakyReLU, t=Tanh, r=ReLU and i=Identity
// (Identity is only valid for Type-II).
struct ActivationDictionary {
  std::vector<ActivationKind> entries;
  Flavor flavor = Flavor::TypeI;

  std::size_t size() const noexcept { return entries.size(); }
  const ActivationKind& operator[](std::size_t i) const { return entries[i]; }
};

ActivationDictionary parse_dictionary(std::string_view code, Flavor flavor,
                                      double leaky_slope = kDefaultLeakySlope);
std::string render_dictionary(const ActivationDictionary& dict);

// Throws FlavorError / ParseError when the entries violate the dictionary invariants.
void validate_dictionary(const ActivationDictionary& dict);

}  // namespace moa
