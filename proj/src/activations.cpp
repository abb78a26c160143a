#include "moa/activations.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "moa/errors.hpp"

namespace moa {

namespace {

void require_finite(double t) {
  if (!std::isfinite(t)) throw NumericError("activation input is not finite: " + std::to_string(t));
}

double sigmoid(double t) noexcept {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

double normal_cdf(double t) noexcept { return 0.5 * std::erfc(-t * std::numbers::sqrt2 / 2.0); }

double normal_pdf(double t) noexcept {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779399460599343818684758586311649;
  return inv_sqrt_2pi * std::exp(-0.5 * t * t);
}

double eval_unchecked(ActivationKind kind, double t) noexcept {
  switch (kind.tag) {
    case ActivationTag::ReLU:
      return t > 0.0 ? t : 0.0;
    case ActivationTag::ReLU2:
      return t > 0.0 ? t * t : 0.0;
    case ActivationTag::LeakyReLU:
      return t >= 0.0 ? t : kind.leaky_slope * t;
    case ActivationTag::GELU:
      return t * normal_cdf(t);
    case ActivationTag::SiLU:
      return t * sigmoid(t);
    case ActivationTag::Tanh:
      return std::tanh(t);
    case ActivationTag::Identity:
      return t;
    case ActivationTag::Sigmoid:
      return sigmoid(t);
  }
  return 0.0;
}

void eval_with_derivs(ActivationKind kind, double t, double& value, double& d1, double& d2) noexcept {
  switch (kind.tag) {
    case ActivationTag::ReLU:
      value = t > 0.0 ? t : 0.0;
      d1 = t >= 0.0 ? 1.0 : 0.0;
      d2 = 0.0;
      return;
    case ActivationTag::ReLU2:
      value = t > 0.0 ? t * t : 0.0;
      d1 = t > 0.0 ? 2.0 * t : 0.0;
      d2 = t >= 0.0 ? 2.0 : 0.0;
      return;
    case ActivationTag::LeakyReLU:
      value = t >= 0.0 ? t : kind.leaky_slope * t;
      d1 = t >= 0.0 ? 1.0 : kind.leaky_slope;
      d2 = 0.0;
      return;
    case ActivationTag::GELU: {
      const double cdf = normal_cdf(t);
      const double pdf = normal_pdf(t);
      value = t * cdf;
      d1 = cdf + t * pdf;
      d2 = pdf * (2.0 - t * t);
      return;
    }
    case ActivationTag::SiLU: {
      const double s = sigmoid(t);
      const double ds = s * (1.0 - s);
      value = t * s;
      d1 = s + t * ds;
      d2 = ds * (2.0 + t * (1.0 - 2.0 * s));
      return;
    }
    case ActivationTag::Tanh: {
      const double th = std::tanh(t);
      const double sech2 = 1.0 - th * th;
      value = th;
      d1 = sech2;
      d2 = -2.0 * th * sech2;
      return;
    }
    case ActivationTag::Identity:
      value = t;
      d1 = 1.0;
      d2 = 0.0;
      return;
    case ActivationTag::Sigmoid: {
      const double s = sigmoid(t);
      const double ds = s * (1.0 - s);
      value = s;
      d1 = ds;
      d2 = ds * (1.0 - 2.0 * s);
      return;
    }
  }
  value = d1 = d2 = 0.0;
}

double eval(ActivationKind kind, double t) {
  require_finite(t);
  return eval_unchecked(kind, t);
}

double deriv(ActivationKind kind, double t) {
  require_finite(t);
  double v, d1, d2;
  eval_with_derivs(kind, t, v, d1, d2);
  return d1;
}

double second_deriv(ActivationKind kind, double t) {
  require_finite(t);
  double v, d1, d2;
  eval_with_derivs(kind, t, v, d1, d2);
  return d2;
}

bool has_derivative_jump(ActivationKind kind) noexcept {
  return kind.tag == ActivationTag::ReLU || kind.tag == ActivationTag::LeakyReLU;
}

std::string_view name(ActivationTag tag) noexcept {
  switch (tag) {
    case ActivationTag::ReLU: return "ReLU";
    case ActivationTag::ReLU2: return "ReLU2";
    case ActivationTag::LeakyReLU: return "LeakyReLU";
    case ActivationTag::GELU: return "GELU";
    case ActivationTag::SiLU: return "SiLU";
    case ActivationTag::Tanh: return "Tanh";
    case ActivationTag::Identity: return "Identity";
    case ActivationTag::Sigmoid: return "Sigmoid";
  }
  return "?";
}

std::string name(ActivationKind kind) { return std::string(name(kind.tag)); }

ActivationKind activation_from_name(std::string_view n) {
  for (auto tag : {ActivationTag::ReLU, ActivationTag::ReLU2, ActivationTag::LeakyReLU, ActivationTag::GELU,
                   ActivationTag::SiLU, ActivationTag::Tanh, ActivationTag::Identity, ActivationTag::Sigmoid}) {
    if (name(tag) == n) return ActivationKind(tag);
  }
  throw ParseError("unknown activation name '" + std::string(n) + "'", 1);
}

std::string_view name(Flavor flavor) noexcept { return flavor == Flavor::TypeI ? "type1" : "type2"; }

void validate_dictionary(const ActivationDictionary& dict) {
  for (std::size_t i = 0; i < dict.entries.size(); ++i) {
    const auto& k = dict.entries[i];
    if (k.tag == ActivationTag::Sigmoid)
      throw FlavorError("Sigmoid is a gate, not a dictionary activation");
    if (k.tag == ActivationTag::Identity && dict.flavor == Flavor::TypeI)
      throw FlavorError("Identity is only allowed in Type-II dictionaries");
    if (k.tag == ActivationTag::LeakyReLU && !(k.leaky_slope > 0.0 && k.leaky_slope < 1.0))
      throw RangeError("LeakyReLU slope must lie in (0,1)");
    for (std::size_t j = 0; j < i; ++j) {
      if (dict.entries[j].tag == k.tag)
        throw ParseError("duplicate activation " + name(k) + " in dictionary", i + 1);
    }
  }
}

ActivationDictionary parse_dictionary(std::string_view code, Flavor flavor, double leaky_slope) {
  ActivationDictionary dict;
  dict.flavor = flavor;
  std::size_t pos = 0;
  while (pos < code.size()) {
    const std::size_t token_pos = pos + 1;  // 1-based for messages
    ActivationTag tag;
    switch (code[pos]) {
      case 'g': tag = ActivationTag::GELU; break;
      case 's': tag = ActivationTag::SiLU; break;
      case 'l': tag = ActivationTag::LeakyReLU; break;
      case 't': tag = ActivationTag::Tanh; break;
      case 'i': tag = ActivationTag::Identity; break;
      case 'r':
        if (pos + 1 < code.size() && code[pos + 1] == '2') {
          tag = ActivationTag::ReLU2;
          ++pos;
        } else {
          tag = ActivationTag::ReLU;
        }
        break;
      default:
        throw ParseError("unknown activation token '" + std::string(1, code[pos]) + "'", token_pos);
    }
    ++pos;
    if (tag == ActivationTag::Identity && flavor == Flavor::TypeI)
      throw FlavorError("Identity ('i') is not allowed in a Type-I dictionary (position " +
                        std::to_string(token_pos) + ")");
    for (const auto& e : dict.entries) {
      if (e.tag == tag) throw ParseError("duplicate activation token", token_pos);
    }
    dict.entries.emplace_back(tag, leaky_slope);
  }
  if (dict.entries.empty()) throw ParseError("empty activation dictionary", 1);
  validate_dictionary(dict);
  return dict;
}

std::string render_dictionary(const ActivationDictionary& dict) {
  std::string out;
  for (const auto& e : dict.entries) {
    switch (e.tag) {
      case ActivationTag::GELU: out += 'g'; break;
      case ActivationTag::SiLU: out += 's'; break;
      case ActivationTag::ReLU2: out += "r2"; break;
      case ActivationTag::LeakyReLU: out += 'l'; break;
      case ActivationTag::Tanh: out += 't'; break;
      case ActivationTag::ReLU: out += 'r'; break;
      case ActivationTag::Identity: out += 'i'; break;
      case ActivationTag::Sigmoid:
        throw FlavorError("Sigmoid has no dictionary code");
    }
  }
  return out;
}

}  // namespace moa
