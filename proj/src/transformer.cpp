#include "moa/transformer.hpp"

#include <random>

#include "moa/errors.hpp"

namespace moa {

namespace {

constexpr double kInitStd = 0.02;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Tensor normal(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> nd(0.0, kInitStd);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data({rows, cols}, std::move(v), true);
}

}  // namespace

void validate(const ModelConfig& c) {
  if (c.d_model == 0 || c.n_head == 0 || c.n_layer == 0 || c.vocab_size == 0 || c.seq_len == 0)
    throw ConfigError("model dimensions must be positive");
  if (c.d_model % c.n_head != 0)
    throw ConfigError("d_model " + std::to_string(c.d_model) + " is not divisible by n_head " +
                      std::to_string(c.n_head));
  if ((c.d_model / c.n_head) % 2 != 0) throw ConfigError("head dimension must be even for rotary embeddings");
  if (c.seq_len > 512) throw ConfigError("seq_len above 512 is not supported");
}

std::vector<NamedParam> TransformerModel::parameters() const {
  std::vector<NamedParam> out{{"embed", embed, true}};
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", b.attn_norm, false});
    out.push_back({p + "Wq", b.Wq, true});
    out.push_back({p + "Wk", b.Wk, true});
    out.push_back({p + "Wv", b.Wv, true});
    out.push_back({p + "Wo", b.Wo, true});
    out.push_back({p + "ffn_norm", b.ffn_norm, false});
    for (auto& fp : b.ffn.parameters(p + "ffn.")) out.push_back(std::move(fp));
  }
  out.push_back({"final_norm", final_norm, false});
  if (head.defined()) out.push_back({"head", head, true});
  return out;
}

std::size_t TransformerModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

TransformerModel build(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  TransformerModel m;
  m.config = config;
  m.config.ffn.d_model = config.d_model;
  const std::size_t d = config.d_model;
  std::mt19937_64 rng(splitmix64(seed));
  m.embed = normal(rng, config.vocab_size, d);
  for (std::size_t l = 0; l < config.n_layer; ++l) {
    Block b;
    b.attn_norm = Tensor::full({d}, 1.0, true);
    b.Wq = normal(rng, d, d);
    b.Wk = normal(rng, d, d);
    b.Wv = normal(rng, d, d);
    b.Wo = normal(rng, d, d);
    b.ffn_norm = Tensor::full({d}, 1.0, true);
    FFNConfig fc = m.config.ffn;
    fc.seed = splitmix64(seed ^ splitmix64(l + 1));
    b.ffn = init(fc);
    m.blocks.push_back(std::move(b));
  }
  m.config.ffn.hidden = m.blocks.front().ffn.config.hidden;
  m.final_norm = Tensor::full({d}, 1.0, true);
  if (!config.tie_embeddings) m.head = normal(rng, config.vocab_size, d);
  return m;
}

Tensor logits(const TransformerModel& model, const TokenBatch& inputs) {
  const auto& c = model.config;
  if (inputs.length == 0 || inputs.length > c.seq_len)
    throw DataError("sequence length " + std::to_string(inputs.length) + " outside 1.." + std::to_string(c.seq_len));
  if (inputs.ids.size() != inputs.batch * inputs.length) throw DataError("token batch size does not match its shape");
  Tensor x = embedding(model.embed, inputs.ids);
  for (const auto& b : model.blocks) {
    const Tensor h = rmsnorm(x, b.attn_norm, kRmsNormEps);
    const Tensor q = rope(matmul_nt(h, b.Wq), inputs.length, c.n_head, kRopeBase);
    const Tensor k = rope(matmul_nt(h, b.Wk), inputs.length, c.n_head, kRopeBase);
    const Tensor v = matmul_nt(h, b.Wv);
    x = add(x, matmul_nt(causal_attention(q, k, v, inputs.length, c.n_head), b.Wo));
    x = add(x, forward(b.ffn, rmsnorm(x, b.ffn_norm, kRmsNormEps)));
  }
  const Tensor h = rmsnorm(x, model.final_norm, kRmsNormEps);
  return matmul_nt(h, model.head.defined() ? model.head : model.embed);
}

Tensor forward_loss(const TransformerModel& model, const TokenBatch& tokens) {
  if (tokens.length < 2) throw DataError("need at least two tokens per sequence");
  if (tokens.ids.size() != tokens.batch * tokens.length) throw DataError("token batch size does not match its shape");
  TokenBatch in{tokens.batch, tokens.length - 1, {}};
  std::vector<int> targets;
  in.ids.reserve(tokens.batch * in.length);
  targets.reserve(tokens.batch * in.length);
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    const int* row = tokens.ids.data() + b * tokens.length;
    in.ids.insert(in.ids.end(), row, row + in.length);
    targets.insert(targets.end(), row + 1, row + tokens.length);
  }
  return cross_entropy(logits(model, in), targets);
}

double parameter_checksum(const std::vector<NamedParam>& params) {
  double acc = 0.0;
  std::size_t i = 0;
  for (const auto& p : params)
    for (double v : p.tensor.data()) acc += v * static_cast<double>(++i % 1009 + 1);
  return acc;
}

}  // namespace moa
