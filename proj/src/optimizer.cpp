#include <cmath>

#include "moa/errors.hpp"
#include "moa/train.hpp"

namespace moa {

double adamw_step(const std::vector<NamedParam>& params, AdamWState& state, double lr, const AdamWOptions& opt) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match the parameter list");

  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    if (state.m[i].size() != t.numel()) throw ContractError("optimizer state shape mismatch for " + params[i].name);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params[i].name);
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = (opt.clip_norm > 0.0 && norm > opt.clip_norm) ? opt.clip_norm / norm : 1.0;

  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    const bool has = t.has_grad();
    const auto grad = has ? t.grad() : std::span<const double>();
    auto data = t.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const double decay = params[i].decay ? 1.0 - lr * opt.weight_decay : 1.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? grad[j] * clip : 0.0;
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g;
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      data[j] = data[j] * decay - lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
  return norm;
}

}  // namespace moa
