#include "moa/ffn.hpp"

#include <cmath>
#include <random>

#include "moa/errors.hpp"

namespace moa {

namespace {

struct VariantInfo {
  VariantTag tag;
  std::string_view name;
};

constexpr VariantInfo kVariantNames[] = {
    {VariantTag::BaselineI, "BaselineI"}, {VariantTag::LA_I, "LA_I"},     {VariantTag::MoA_I, "MoA_I"},
    {VariantTag::BaselineII, "BaselineII"}, {VariantTag::OneLA, "OneLA"}, {VariantTag::BiLA, "BiLA"},
    {VariantTag::QdLA, "QdLA"},           {VariantTag::OneMoA, "OneMoA"}, {VariantTag::BiMoA, "BiMoA"},
    {VariantTag::QdMoA, "QdMoA"},
};

constexpr double kInitStd = 0.02;

const ActivationKind kSiLU{ActivationTag::SiLU};

std::size_t gate_rows(const FFNConfig& c) {
  const std::size_t K = c.dictionary.size();
  switch (c.variant.tag) {
    case VariantTag::MoA_I:
    case VariantTag::OneMoA:
    case VariantTag::BiMoA: return K;
    case VariantTag::QdMoA: return K * (K + 1) / 2;
    default: return 0;
  }
}

std::size_t second_gate_rows(const FFNConfig& c) {
  return c.variant.tag == VariantTag::BiMoA ? c.dictionary.size() : 0;
}

std::size_t alpha_len(const FFNConfig& c) {
  const std::size_t K = c.dictionary.size();
  switch (c.variant.tag) {
    case VariantTag::LA_I:
    case VariantTag::OneLA:
    case VariantTag::BiLA: return K;
    case VariantTag::QdLA: return K * (K + 1) / 2;
    default: return 0;
  }
}

std::size_t beta_len(const FFNConfig& c) { return c.variant.tag == VariantTag::BiLA ? c.dictionary.size() : 0; }

Tensor normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> nd(0.0, kInitStd);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data({rows, cols}, std::move(v), true);
}

Tensor gate_probabilities(GateKind gate, const Tensor& logits) {
  switch (gate) {
    case GateKind::Softmax: return softmax_rows(logits);
    case GateKind::Sigmoid: return activation(logits, ActivationTag::Sigmoid);
    case GateKind::Tanh: return activation(logits, ActivationTag::Tanh);
  }
  throw ContractError("unknown gate kind");
}

Tensor gate(const FFNLayer& layer, const Tensor& x, const Tensor& rows, const Tensor& bias) {
  Tensor logits = matmul_nt(x, rows);
  if (layer.config.gate_bias) logits = add_row(logits, bias);
  return gate_probabilities(layer.config.gate, logits);
}

Tensor copy_of(const Tensor& t) {
  return t.defined() ? Tensor::from_data(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true)
                     : Tensor();
}

}  // namespace

std::string_view name(GateKind gate) noexcept {
  switch (gate) {
    case GateKind::Softmax: return "Softmax";
    case GateKind::Sigmoid: return "Sigmoid";
    case GateKind::Tanh: return "Tanh";
  }
  return "?";
}

GateKind gate_from_name(std::string_view n) {
  for (auto g : {GateKind::Softmax, GateKind::Sigmoid, GateKind::Tanh}) {
    if (name(g) == n) return g;
  }
  throw ConfigError("unknown gate '" + std::string(n) + "' (expected Softmax, Sigmoid or Tanh)");
}

std::string_view name(VariantTag tag) noexcept {
  for (const auto& v : kVariantNames) {
    if (v.tag == tag) return v.name;
  }
  return "?";
}

VariantTag variant_from_name(std::string_view n) {
  for (const auto& v : kVariantNames) {
    if (v.name == n) return v.tag;
  }
  throw ConfigError("unknown FFN variant '" + std::string(n) + "'");
}

Flavor flavor_of(VariantTag tag) noexcept {
  return (tag == VariantTag::BaselineI || tag == VariantTag::LA_I || tag == VariantTag::MoA_I) ? Flavor::TypeI
                                                                                               : Flavor::TypeII;
}

bool is_baseline(VariantTag tag) noexcept { return tag == VariantTag::BaselineI || tag == VariantTag::BaselineII; }

bool is_la(VariantTag tag) noexcept {
  return tag == VariantTag::LA_I || tag == VariantTag::OneLA || tag == VariantTag::BiLA || tag == VariantTag::QdLA;
}

bool is_moa(VariantTag tag) noexcept {
  return tag == VariantTag::MoA_I || tag == VariantTag::OneMoA || tag == VariantTag::BiMoA || tag == VariantTag::QdMoA;
}

bool is_pairwise(VariantTag tag) noexcept { return tag == VariantTag::QdLA || tag == VariantTag::QdMoA; }

std::size_t default_hidden(Flavor flavor, std::size_t d_model) {
  return flavor == Flavor::TypeI ? 4 * d_model : (8 * d_model) / 3;
}

std::size_t resolved_hidden(const FFNConfig& config) {
  return config.hidden ? config.hidden : default_hidden(flavor_of(config.variant.tag), config.d_model);
}

std::vector<ActivationPair> activation_pairs(std::size_t n) {
  std::vector<ActivationPair> pairs;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = k; l < n; ++l) pairs.push_back({k, l});
  return pairs;
}

void validate(const FFNConfig& config) {
  if (config.d_model == 0) throw ConfigError("ffn d_model must be positive");
  if (resolved_hidden(config) == 0) throw ConfigError("ffn hidden width must be positive");
  if (is_baseline(config.variant.tag)) {
    const auto tag = config.variant.baseline_activation.tag;
    if (tag == ActivationTag::Sigmoid) throw FlavorError("Sigmoid is not a baseline activation");
    if (tag == ActivationTag::Identity && config.variant.tag == VariantTag::BaselineI)
      throw FlavorError("Identity is only allowed in Type-II layers");
    return;
  }
  if (config.dictionary.size() == 0) throw ConfigError("variant " + std::string(name(config.variant.tag)) +
                                                       " needs a non-empty activation dictionary");
  if (config.dictionary.flavor != flavor_of(config.variant.tag))
    throw FlavorError("dictionary flavor " + std::string(name(config.dictionary.flavor)) + " does not match variant " +
                      std::string(name(config.variant.tag)));
  validate_dictionary(config.dictionary);
}

std::vector<NamedParam> FFNLayer::parameters(const std::string& prefix) const {
  std::vector<NamedParam> out;
  const auto push = [&](const char* n, const Tensor& t, bool decay) {
    if (t.defined()) out.push_back({prefix + n, t, decay});
  };
  push("W1", W1, true);
  push("W2", W2, true);
  push("W3", W3, true);
  push("alpha", alpha, false);
  push("beta", beta, false);
  push("U", U, true);
  push("V", V, true);
  push("bias_u", bias_u, false);
  push("bias_v", bias_v, false);
  return out;
}

FFNLayer init(const FFNConfig& config) {
  validate(config);
  FFNLayer layer;
  layer.config = config;
  layer.config.hidden = resolved_hidden(config);
  const std::size_t d = config.d_model, D = layer.config.hidden;
  std::mt19937_64 rng(config.seed);
  layer.W1 = normal_matrix(rng, D, d);
  if (flavor_of(config.variant.tag) == Flavor::TypeI) {
    layer.W2 = normal_matrix(rng, d, D);
  } else {
    layer.W2 = normal_matrix(rng, D, d);
    layer.W3 = normal_matrix(rng, d, D);
  }
  if (const auto n = alpha_len(config)) layer.alpha = Tensor::full({n}, 1.0, true);
  if (const auto n = beta_len(config)) layer.beta = Tensor::full({n}, 1.0, true);
  if (const auto n = gate_rows(config)) {
    layer.U = normal_matrix(rng, n, d);
    if (config.gate_bias) layer.bias_u = Tensor::zeros({n}, true);
  }
  if (const auto n = second_gate_rows(config)) {
    layer.V = normal_matrix(rng, n, d);
    if (config.gate_bias) layer.bias_v = Tensor::zeros({n}, true);
  }
  if (is_pairwise(config.variant.tag)) layer.pairs = activation_pairs(config.dictionary.size());
  return layer;
}

Tensor mixing_weights(const FFNLayer& layer, const Tensor& x, bool second_gate) {
  if (!is_moa(layer.config.variant.tag))
    throw ContractError("variant " + std::string(name(layer.config.variant.tag)) + " has no gates");
  if (second_gate) {
    if (!layer.V.defined()) throw ContractError("variant has no second gate");
    return gate(layer, x, layer.V, layer.bias_v);
  }
  return gate(layer, x, layer.U, layer.bias_u);
}

Tensor forward(const FFNLayer& layer, const Tensor& x) {
  const auto& cfg = layer.config;
  if (x.rank() != 2 || x.cols() != cfg.d_model)
    throw DimensionError("ffn input " + x.shape_str() + " does not have d_model=" + std::to_string(cfg.d_model) +
                         " columns");
  const auto& dict = cfg.dictionary.entries;
  const Tensor y = matmul_nt(x, layer.W1);
  Tensor hidden;
  switch (cfg.variant.tag) {
    case VariantTag::BaselineI:
      hidden = activation(y, cfg.variant.baseline_activation);
      break;
    case VariantTag::LA_I:
      hidden = mix_activations(y, dict, layer.alpha);
      break;
    case VariantTag::MoA_I:
      hidden = mix_activations(y, dict, mixing_weights(layer, x));
      break;
    default: {
      const Tensor z = matmul_nt(x, layer.W2);
      switch (cfg.variant.tag) {
        case VariantTag::BaselineII:
          hidden = hadamard(activation(y, cfg.variant.baseline_activation), z);
          break;
        case VariantTag::OneLA:
          hidden = hadamard(activation(y, kSiLU), mix_activations(z, dict, layer.alpha));
          break;
        case VariantTag::BiLA:
          hidden = hadamard(mix_activations(y, dict, layer.beta), mix_activations(z, dict, layer.alpha));
          break;
        case VariantTag::QdLA:
          hidden = pair_mix(y, z, dict, layer.pairs, layer.alpha);
          break;
        case VariantTag::OneMoA:
          hidden = hadamard(activation(y, kSiLU), mix_activations(z, dict, mixing_weights(layer, x)));
          break;
        case VariantTag::BiMoA:
          hidden = hadamard(mix_activations(y, dict, mixing_weights(layer, x, true)),
                            mix_activations(z, dict, mixing_weights(layer, x)));
          break;
        case VariantTag::QdMoA:
          hidden = pair_mix(y, z, dict, layer.pairs, mixing_weights(layer, x));
          break;
        default:
          break;
      }
    }
  }
  const Tensor out = matmul_nt(hidden, flavor_of(cfg.variant.tag) == Flavor::TypeI ? layer.W2 : layer.W3);
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite output from " + std::string(name(cfg.variant.tag)) + " layer");
  }
  return out;
}

FFNLayer embed_la_as_moa(const FFNLayer& la, double rho) {
  const auto tag = la.config.variant.tag;
  if (!is_la(tag)) throw ContractError("embed_la_as_moa needs an LA layer, got " + std::string(name(tag)));
  if (!(rho > 0.0) || !std::isfinite(rho)) throw RangeError("rho must be positive and finite");
  const auto biases = [rho](const Tensor& coeffs) {
    std::vector<double> b(coeffs.numel());
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double s = rho * coeffs.at(i);
      if (!(std::abs(s) < 1.0))
        throw RangeError("|rho*alpha| = " + std::to_string(std::abs(s)) + " at index " + std::to_string(i) +
                         " must be below 1");
      b[i] = std::atanh(s);
    }
    const std::size_t n = b.size();
    return Tensor::from_data({n}, std::move(b), true);
  };

  FFNLayer moa;
  moa.config = la.config;
  moa.config.gate = GateKind::Tanh;
  moa.config.gate_bias = true;
  moa.pairs = la.pairs;
  moa.W1 = copy_of(la.W1);
  moa.W2 = copy_of(la.W2);
  const std::size_t d = la.config.d_model;

  double out_scale = 1.0 / rho;
  switch (tag) {
    case VariantTag::LA_I: moa.config.variant.tag = VariantTag::MoA_I; break;
    case VariantTag::OneLA: moa.config.variant.tag = VariantTag::OneMoA; break;
    case VariantTag::QdLA: moa.config.variant.tag = VariantTag::QdMoA; break;
    case VariantTag::BiLA:
      moa.config.variant.tag = VariantTag::BiMoA;
      out_scale = 1.0 / (rho * rho);
      break;
    default: break;
  }
  moa.bias_u = biases(la.alpha);
  moa.U = Tensor::zeros({la.alpha.numel(), d}, true);
  if (tag == VariantTag::BiLA) {
    moa.bias_v = biases(la.beta);
    moa.V = Tensor::zeros({la.beta.numel(), d}, true);
  }

  Tensor& out_weight = flavor_of(tag) == Flavor::TypeI ? moa.W2 : moa.W3;
  out_weight = copy_of(flavor_of(tag) == Flavor::TypeI ? la.W2 : la.W3);
  for (auto& v : out_weight.mutable_data()) v *= out_scale;
  return moa;
}

FFNLayer la_from_baseline(const FFNLayer& baseline, VariantTag la_tag, const ActivationDictionary& dictionary) {
  const auto tag = baseline.config.variant.tag;
  if (!is_baseline(tag)) throw ContractError("la_from_baseline needs a baseline layer");
  if (!is_la(la_tag) || flavor_of(la_tag) != flavor_of(tag))
    throw FlavorError(std::string(name(la_tag)) + " is not an LA variant of the baseline's flavor");
  const ActivationKind sigma = baseline.config.variant.baseline_activation;
  const auto index_of = [&](ActivationKind kind) {
    for (std::size_t i = 0; i < dictionary.size(); ++i) {
      if (dictionary[i] == kind) return i;
    }
    throw ContractError("dictionary " + render_dictionary(dictionary) + " lacks " + name(kind));
  };
  const std::size_t K = dictionary.size();
  const auto one_hot = [](std::size_t n, std::size_t at) {
    std::vector<double> v(n, 0.0);
    v[at] = 1.0;
    return Tensor::from_data({n}, std::move(v), true);
  };

  FFNLayer la;
  la.config = baseline.config;
  la.config.variant.tag = la_tag;
  la.config.dictionary = dictionary;
  validate(la.config);
  la.W1 = copy_of(baseline.W1);
  la.W2 = copy_of(baseline.W2);
  la.W3 = copy_of(baseline.W3);
  const std::size_t id = flavor_of(tag) == Flavor::TypeII ? index_of(ActivationTag::Identity) : 0;
  switch (la_tag) {
    case VariantTag::LA_I:
      la.alpha = one_hot(K, index_of(sigma));
      break;
    case VariantTag::OneLA:
      if (!(sigma == kSiLU)) throw ContractError("OneLA keeps SiLU on the first branch; baseline uses " + name(sigma));
      la.alpha = one_hot(K, id);
      break;
    case VariantTag::BiLA:
      la.beta = one_hot(K, index_of(sigma));
      la.alpha = one_hot(K, id);
      break;
    case VariantTag::QdLA: {
      la.pairs = activation_pairs(K);
      const std::size_t s = index_of(sigma);
      if (s > id)
        throw ContractError("pair (" + name(sigma) + ", Identity) is not enumerated; list Identity after " + name(sigma));
      std::size_t at = 0;
      while (!(la.pairs[at].left == s && la.pairs[at].right == id)) ++at;
      la.alpha = one_hot(la.pairs.size(), at);
      break;
    }
    default:
      break;
  }
  return la;
}

ParamBreakdown param_count(const FFNConfig& config) {
  validate(config);
  const std::size_t d = config.d_model, D = resolved_hidden(config);
  ParamBreakdown b;
  b.projection_params = (flavor_of(config.variant.tag) == Flavor::TypeI ? 2 : 3) * d * D;
  b.mixing_params = alpha_len(config) + beta_len(config);
  const std::size_t rows = gate_rows(config) + second_gate_rows(config);
  b.gate_params = rows * d + (config.gate_bias ? rows : 0);
  return b;
}

}  // namespace moa
