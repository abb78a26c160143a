#include <cmath>
#include <sstream>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"

namespace moa {

namespace {

double relu(double t) { return t > 0.0 ? t : 0.0; }
double step(double t) { return t >= 0.0 ? 1.0 : 0.0; }  // right-hand derivative of ReLU

std::size_t index_of(const std::vector<ActivationKind>& dict, ActivationTag tag) {
  for (std::size_t i = 0; i < dict.size(); ++i) {
    if (dict[i].tag == tag) return i;
  }
  throw ContractError("theory dictionary lacks " + std::string(name(tag)));
}

}  // namespace

std::string_view name(TargetTag tag) noexcept {
  switch (tag) {
    case TargetTag::TLA_I: return "TLA_I";
    case TargetTag::TMoA_I: return "TMoA_I";
    case TargetTag::TLA_II: return "TLA_II";
    case TargetTag::TMoA_II: return "TMoA_II";
    case TargetTag::AdaptiveRidge: return "AdaptiveRidge";
  }
  return "?";
}

TargetTag target_from_name(std::string_view n) {
  for (const TargetTag t :
       {TargetTag::TLA_I, TargetTag::TMoA_I, TargetTag::TLA_II, TargetTag::TMoA_II, TargetTag::AdaptiveRidge}) {
    if (name(t) == n) return t;
  }
  throw ConfigError("unknown witness target '" + std::string(n) + "'");
}

WitnessTarget make_target(TargetTag tag, double lambda) {
  WitnessTarget t;
  t.tag = tag;
  t.lambda = lambda;
  validate(t);
  return t;
}

std::size_t target_dim(const WitnessTarget& t) noexcept { return t.tag == TargetTag::TLA_I ? 1 : 2; }

Flavor target_flavor(const WitnessTarget& t) noexcept {
  return (t.tag == TargetTag::TLA_II || t.tag == TargetTag::TMoA_II) ? Flavor::TypeII : Flavor::TypeI;
}

void validate(const WitnessTarget& t) {
  if ((t.tag == TargetTag::TMoA_I || t.tag == TargetTag::TMoA_II) && !(t.lambda > 0.0 && std::isfinite(t.lambda)))
    throw RangeError(std::string(name(t.tag)) + " needs lambda > 0, got " + std::to_string(t.lambda));
}

std::string describe(const WitnessTarget& t) {
  std::ostringstream s;
  s << name(t.tag);
  if (t.tag == TargetTag::TMoA_I || t.tag == TargetTag::TMoA_II) s << "(lambda=" << t.lambda << ")";
  if (t.tag == TargetTag::AdaptiveRidge)
    s << "(u=" << t.u[0] << ";" << t.u[1] << " beta=" << t.beta << " w=" << t.w[0] << ";" << t.w[1] << " b=" << t.b
      << ")";
  return s.str();
}

PointEval eval_target(const WitnessTarget& t, const Point& x) {
  const double x1 = x[0], x2 = x[1];
  PointEval e;
  switch (t.tag) {
    case TargetTag::TLA_I:
      e.value = relu(x1) + relu(x1) * relu(x1);
      e.gradient = {step(x1) * (1.0 + 2.0 * relu(x1)), 0.0};
      e.kink = x1 == 0.0;
      break;
    case TargetTag::TMoA_I: {
      const double th = std::tanh(t.lambda * x1);
      e.value = th * relu(x2);
      e.gradient = {t.lambda * (1.0 - th * th) * relu(x2), th * step(x2)};
      e.kink = x2 == 0.0;
      break;
    }
    case TargetTag::TLA_II: {
      const double th = std::tanh(x1);
      const double inner = relu(x1) + th;
      e.value = relu(x2) * inner;
      e.gradient = {relu(x2) * (step(x1) + 1.0 - th * th), step(x2) * inner};
      e.kink = x1 == 0.0 || x2 == 0.0;
      break;
    }
    case TargetTag::TMoA_II: {
      // ReLU(x1)·tanh(λx1) is C¹ at x1 = 0, so only {x2 = 0} is singular.
      const double th = std::tanh(t.lambda * x1);
      const double inner = relu(x1) * th;
      e.value = relu(x2) * inner;
      e.gradient = {relu(x2) * (step(x1) * th + relu(x1) * t.lambda * (1.0 - th * th)), step(x2) * inner};
      e.kink = x2 == 0.0;
      break;
    }
    case TargetTag::AdaptiveRidge: {
      const double th = std::tanh(t.u[0] * x1 + t.u[1] * x2 + t.beta);
      const double r = t.w[0] * x1 + t.w[1] * x2 + t.b;
      const double sech2 = 1.0 - th * th;
      e.value = th * relu(r);
      e.gradient = {sech2 * t.u[0] * relu(r) + th * step(r) * t.w[0], sech2 * t.u[1] * relu(r) + th * step(r) * t.w[1]};
      e.kink = r == 0.0;
      break;
    }
  }
  return e;
}

TheoryNetwork exact_construct(const WitnessTarget& t) {
  return exact_construct(t, target_flavor(t) == Flavor::TypeI ? theory_dictionary_i() : theory_dictionary_ii());
}

TheoryNetwork exact_construct(const WitnessTarget& t, const std::vector<ActivationKind>& dictionary) {
  validate(t);
  const auto& reference = target_flavor(t) == Flavor::TypeI ? theory_dictionary_i() : theory_dictionary_ii();
  if (dictionary.size() != reference.size())
    throw ContractError("exact_construct: dictionary has " + std::to_string(dictionary.size()) + " entries, expected " +
                        std::to_string(reference.size()));
  const std::size_t relu = index_of(reference, ActivationTag::ReLU);

  TheoryNetwork net;
  switch (t.tag) {
    case TargetTag::TLA_I:
      net = make_network(TheoryFamily::LA_I, 1, 1);
      net.a = {1.0};
      net.w = {1.0, 0.0};
      net.alpha[relu] = 1.0;
      net.alpha[index_of(reference, ActivationTag::ReLU2)] = 1.0;
      break;
    case TargetTag::TMoA_I:
      net = make_network(TheoryFamily::MoA_I, 2, 1);
      net.a = {1.0};
      net.w = {0.0, 1.0, 0.0};
      net.v[relu * 3] = t.lambda;
      break;
    case TargetTag::AdaptiveRidge: {
      for (const double p : {t.u[0], t.u[1], t.beta, t.w[0], t.w[1], t.b}) {
        if (!std::isfinite(p)) throw UnsupportedError("adaptive ridge parameters must be finite: " + describe(t));
      }
      net = make_network(TheoryFamily::MoA_I, 2, 1);
      net.a = {1.0};
      net.w = {t.w[0], t.w[1], t.b};
      net.v[relu * 3 + 0] = t.u[0];
      net.v[relu * 3 + 1] = t.u[1];
      net.v[relu * 3 + 2] = t.beta;
      break;
    }
    case TargetTag::TLA_II:
    case TargetTag::TMoA_II: {
      const bool moa = t.tag == TargetTag::TMoA_II;
      net = make_network(moa ? TheoryFamily::QdMoA_II : TheoryFamily::QdLA_II, 2, 1);
      net.a = {1.0};
      net.w = {0.0, 1.0, 0.0};  // first factor sees x2
      net.u = {1.0, 0.0, 0.0};  // second factor sees x1
      const std::size_t tanh = index_of(reference, ActivationTag::Tanh);
      for (std::size_t j = 0; j < net.pairs.size(); ++j) {
        const auto [p, q] = net.pairs[j];
        if (p != relu) continue;
        if (moa && q == relu) net.v[j * 3] = t.lambda;
        if (!moa && (q == relu || q == tanh)) net.alpha[j] = 1.0;
      }
      break;
    }
  }
  net.dictionary = dictionary;
  return net;
}

}  // namespace moa
