#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "moa/activations.hpp"
#include "moa/tensor.hpp"

namespace moa {

enum class GateKind { Softmax, Sigmoid, Tanh };

enum class VariantTag { BaselineI, LA_I, MoA_I, BaselineII, OneLA, BiLA, QdLA, OneMoA, BiMoA, QdMoA };

inline constexpr VariantTag kAllVariants[] = {VariantTag::BaselineI, VariantTag::LA_I,   VariantTag::MoA_I,
                                              VariantTag::BaselineII, VariantTag::OneLA, VariantTag::BiLA,
                                              VariantTag::QdLA,      VariantTag::OneMoA, VariantTag::BiMoA,
                                              VariantTag::QdMoA};

std::string_view name(GateKind gate) noexcept;
GateKind gate_from_name(std::string_view name);
std::string_view name(VariantTag tag) noexcept;
VariantTag variant_from_name(std::string_view name);

Flavor flavor_of(VariantTag tag) noexcept;
bool is_baseline(VariantTag tag) noexcept;
bool is_la(VariantTag tag) noexcept;
bool is_moa(VariantTag tag) noexcept;
bool is_pairwise(VariantTag tag) noexcept;  // QdLA, QdMoA

struct FFNVariant {
  VariantTag tag = VariantTag::BaselineII;
  ActivationKind baseline_activation{ActivationTag::SiLU};  // Baseline variants only
};

struct FFNConfig {
  std::size_t d_model = 0;
  std::size_t hidden = 0;  // 0 selects the flavor default
  FFNVariant variant;
  ActivationDictionary dictionary;
  GateKind gate = GateKind::Sigmoid;
  bool gate_bias = false;  // gates see (x, 1) instead of x
  std::uint64_t seed = 0;
};

// 4d for Type-I, floor(8d/3) for Type-II.
std::size_t default_hidden(Flavor flavor, std::size_t d_model);
std::size_t resolved_hidden(const FFNConfig& config);
// Unordered pairs (k, l) with k <= l in lexicographic order.
std::vector<ActivationPair> activation_pairs(std::size_t dictionary_size);

// Throws ConfigError / FlavorError when the config cannot build a layer.
void validate(const FFNConfig& config);

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;  // receives decoupled weight decay
};

// Weights are stored as W1 [D×d], W2 [d×D] (Type-I) or [D×d] (Type-II),
// W3 [d×D]; tokens are rows, so projections are x·Wᵀ.
struct FFNLayer {
  FFNConfig config;
  Tensor W1, W2, W3;
  Tensor alpha, beta;
  Tensor U, V;          // gate rows
  Tensor bias_u, bias_v;  // gate biases, present only with config.gate_bias
  std::vector<ActivationPair> pairs;

  std::vector<NamedParam> parameters(const std::string& prefix = "") const;
};

FFNLayer init(const FFNConfig& config);
Tensor forward(const FFNLayer& layer, const Tensor& x);

// Per-token mixing weights [N×rows(U)] (or of V when second_gate is set).
Tensor mixing_weights(const FFNLayer& layer, const Tensor& x, bool second_gate = false);

// Constant-gate MoA layer computing the same map as the LA layer: Tanh gates
// with zero weight rows and bias arctanh(rho·alpha), output rescaled by 1/rho.
FFNLayer embed_la_as_moa(const FFNLayer& la, double rho);

// LA layer whose one-hot coefficients reproduce a Baseline layer exactly. For
// Type-II the target is one of OneLA / BiLA / QdLA and the dictionary must
// contain the baseline activation (and Identity for the pairwise form).
FFNLayer la_from_baseline(const FFNLayer& baseline, VariantTag la_tag, const ActivationDictionary& dictionary);

struct ParamBreakdown {
  std::size_t projection_params = 0;
  std::size_t mixing_params = 0;
  std::size_t gate_params = 0;
  std::size_t total() const noexcept { return projection_params + mixing_params + gate_params; }
};

ParamBreakdown param_count(const FFNConfig& config);

}  // namespace moa
