#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moa/ffn.hpp"

namespace moa {

inline constexpr double kRmsNormEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_head = 4;
  std::size_t n_layer = 2;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 64;
  FFNConfig ffn;  // d_model and seed are filled in per layer by build()
  bool tie_embeddings = true;
};

void validate(const ModelConfig& config);

struct Block {
  Tensor attn_norm;
  Tensor Wq, Wk, Wv, Wo;  // [d×d], applied as x·Wᵀ
  Tensor ffn_norm;
  FFNLayer ffn;
};

// Pre-norm decoder: x += Attn(RMSNorm(x)); x += FFN(RMSNorm(x)).
struct TransformerModel {
  ModelConfig config;
  Tensor embed;  // [vocab×d]
  std::vector<Block> blocks;
  Tensor final_norm;
  Tensor head;  // [vocab×d]; absent when embeddings are tied

  std::vector<NamedParam> parameters() const;
  std::size_t param_count() const;
};

TransformerModel build(const ModelConfig& config, std::uint64_t seed);

// Sequences laid out row-major as [batch × length].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
};

// Logits [batch·length × vocab] for every position of every sequence.
Tensor logits(const TransformerModel& model, const TokenBatch& inputs);

// Mean next-token cross-entropy (nats): positions 0..length-2 predict 1..length-1.
Tensor forward_loss(const TransformerModel& model, const TokenBatch& tokens);

// Order-sensitive fingerprint of every parameter value.
double parameter_checksum(const std::vector<NamedParam>& params);

}  // namespace moa
