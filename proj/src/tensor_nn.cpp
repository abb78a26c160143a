#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "moa/errors.hpp"
#include "moa/tensor.hpp"
#include "activation_chunk.hpp"
#include "tensor_internal.hpp"

namespace moa {

using detail::ActivationChunk;
using detail::for_each_chunk;
using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

std::vector<double>& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const std::vector<double>& pdata(const Node& self, std::size_t i) { return self.parents[i]->data; }
bool pneeds(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

void check_order(int order, const char* op) {
  if (order != 0 && order != 1) throw ContractError(std::string(op) + ": derivative order must be 0 or 1");
}

void require_finite_input(std::span<const double> x, const char* op) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]))
      throw NumericError(std::string(op) + ": non-finite input at element " + std::to_string(i));
  }
}

// Resolves the weight layout of mix_activations / pair_mix.
bool per_row_weights(const Tensor& weights, std::size_t rows, std::size_t count, const char* op) {
  if (weights.rank() == 2 && weights.rows() == rows && weights.cols() == count) return rows > 1;
  if (weights.numel() == count) return false;
  throw DimensionError(std::string(op) + ": weights " + weights.shape_str() + " match neither [" +
                       std::to_string(count) + "] nor [" + std::to_string(rows) + "x" + std::to_string(count) + "]");
}

}  // namespace

namespace {

std::size_t leading_rows(const Tensor& a) { return a.rank() == 2 ? a.rows() : 1; }

using ChunkCache = std::shared_ptr<ActivationChunk::Cache>;

// A cache only when the op will be recorded for backward.
ChunkCache cache_if_recording(std::initializer_list<const Tensor*> inputs) {
  if (!grad_mode_enabled()) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return std::make_shared<ActivationChunk::Cache>();
  }
  return nullptr;
}

}  // namespace

Tensor activation(const Tensor& a, ActivationKind kind, int order) {
  check_order(order, "activation");
  const auto x = a.data();
  require_finite_input(x, "activation");
  const std::size_t n = leading_rows(a), c = x.size() / n;
  std::vector<double> out(x.size());
  const ChunkCache cache = cache_if_recording({&a});
  ActivationChunk::Block f;
  for_each_chunk(n, c, [&](std::size_t, std::size_t at, std::size_t len) {
    ActivationChunk chunk(x.data() + at, static_cast<Eigen::Index>(len));
    chunk.eval(kind, order, f);
    std::copy_n(f.data(), len, out.data() + at);
    if (cache) chunk.keep(*cache, at, x.size());
  });
  return make_result(a.shape(), std::move(out), {&a}, [kind, order, n, c, cache](Node& self) {
    const auto& xs = pdata(self, 0);
    auto& g = pgrad(self, 0);
    ActivationChunk::Block df;
    for_each_chunk(n, c, [&](std::size_t, std::size_t at, std::size_t len) {
      ActivationChunk chunk(xs.data() + at, static_cast<Eigen::Index>(len));
      if (cache) chunk.adopt(*cache, at);
      chunk.eval(kind, order + 1, df);
      for (std::size_t j = 0; j < len; ++j) g[at + j] += self.grad[at + j] * df[static_cast<Eigen::Index>(j)];
    });
  });
}

Tensor softmax_rows(const Tensor& a) {
  const auto n = a.rows(), c = a.cols();
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_result(a.shape(), std::move(out), {&a}, [n, c, probs](Node& self) {
    auto& g = pgrad(self, 0);
    const auto& p = *probs;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * p[i * c + j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += p[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

Tensor mix_activations(const Tensor& y, std::span<const ActivationKind> kinds_in, const Tensor& weights, int order) {
  check_order(order, "mix_activations");
  if (kinds_in.empty()) throw ContractError("mix_activations: empty activation list");
  const auto n = y.rows(), c = y.cols(), K = kinds_in.size();
  const bool per_row = per_row_weights(weights, n, K, "mix_activations");
  const auto x = y.data();
  require_finite_input(x, "mix_activations");
  const auto w = weights.data();
  std::vector<ActivationKind> kinds(kinds_in.begin(), kinds_in.end());
  std::vector<double> out(n * c);
  const ChunkCache cache = cache_if_recording({&y, &weights});
  for_each_chunk(n, c, [&](std::size_t i, std::size_t at, std::size_t len) {
    const double* wi = w.data() + (per_row ? i * K : 0);
    ActivationChunk chunk(x.data() + at, static_cast<Eigen::Index>(len));
    double* o = out.data() + at;
    const auto m = static_cast<Eigen::Index>(len);
    std::fill_n(o, len, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double wk = wi[k];
      chunk.with(kinds[k], order, [&](auto f) {
        for (Eigen::Index j = 0; j < m; ++j) o[j] += wk * f(j);
      });
    }
    if (cache) chunk.keep(*cache, at, n * c);
  });
  return make_result(y.shape(), std::move(out), {&y, &weights}, [n, c, K, per_row, order, kinds, cache](Node& self) {
    const auto& xs = pdata(self, 0);
    const auto& ws = pdata(self, 1);
    const bool need_y = pneeds(self, 0), need_w = pneeds(self, 1);
    std::vector<double>* gy = need_y ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gw = need_w ? &pgrad(self, 1) : nullptr;
    ActivationChunk::Block dy, gf(ActivationChunk::kMax);
    double* gfp = gf.data();
    for_each_chunk(n, c, [&](std::size_t i, std::size_t at, std::size_t len) {
      const auto m = static_cast<Eigen::Index>(len);
      const double* wi = ws.data() + (per_row ? i * K : 0);
      double* gwi = need_w ? gw->data() + (per_row ? i * K : 0) : nullptr;
      const double* g = self.grad.data() + at;
      ActivationChunk chunk(xs.data() + at, m);
      if (cache) chunk.adopt(*cache, at);
      dy.setZero(m);
      double* dyp = dy.data();
      for (std::size_t k = 0; k < K; ++k) {
        const double wk = wi[k];
        if (need_y && need_w) {
          chunk.with(kinds[k], order, [&](auto f) {
            chunk.with(kinds[k], order + 1, [&](auto df) {
              for (Eigen::Index j = 0; j < m; ++j) {
                dyp[j] += wk * df(j);
                gfp[j] = g[j] * f(j);
              }
            });
            gwi[k] += gf.head(m).sum();
          });
        } else if (need_y) {
          chunk.with(kinds[k], order + 1, [&](auto df) {
            for (Eigen::Index j = 0; j < m; ++j) dyp[j] += wk * df(j);
          });
        } else if (need_w) {
          chunk.with(kinds[k], order, [&](auto f) {
            for (Eigen::Index j = 0; j < m; ++j) gfp[j] = g[j] * f(j);
          });
          gwi[k] += gf.head(m).sum();
        }
      }
      if (need_y) {
        double* gyi = gy->data() + at;
        for (Eigen::Index j = 0; j < m; ++j) gyi[j] += g[j] * dyp[j];
      }
    });
  });
}

Tensor pair_mix(const Tensor& y, const Tensor& z, std::span<const ActivationKind> kinds_in,
                std::span<const ActivationPair> pairs_in, const Tensor& weights, int order_y, int order_z) {
  check_order(order_y, "pair_mix");
  check_order(order_z, "pair_mix");
  if (y.shape() != z.shape())
    throw DimensionError("pair_mix: branch shapes differ, " + y.shape_str() + " vs " + z.shape_str());
  if (pairs_in.empty()) throw ContractError("pair_mix: empty pair list");
  const auto n = y.rows(), c = y.cols(), K = kinds_in.size(), P = pairs_in.size();
  for (const auto& p : pairs_in) {
    if (p.left >= K || p.right >= K) throw ContractError("pair_mix: pair index outside the activation list");
  }
  const bool per_row = per_row_weights(weights, n, P, "pair_mix");
  const auto xy = y.data(), xz = z.data();
  require_finite_input(xy, "pair_mix");
  require_finite_input(xz, "pair_mix");
  const auto w = weights.data();
  std::vector<ActivationKind> kinds(kinds_in.begin(), kinds_in.end());
  std::vector<ActivationPair> pairs(pairs_in.begin(), pairs_in.end());
  std::vector<double> out(n * c);
  const ChunkCache cache_y = cache_if_recording({&y, &z, &weights});
  const ChunkCache cache_z = cache_y ? std::make_shared<ActivationChunk::Cache>() : nullptr;
  std::vector<ActivationChunk::Block> fy(K), fz(K);
  ActivationChunk::Block acc;
  for_each_chunk(n, c, [&](std::size_t i, std::size_t at, std::size_t len) {
    const auto m = static_cast<Eigen::Index>(len);
    const double* wi = w.data() + (per_row ? i * P : 0);
    ActivationChunk cy(xy.data() + at, m), cz(xz.data() + at, m);
    for (std::size_t k = 0; k < K; ++k) {
      cy.eval(kinds[k], order_y, fy[k]);
      cz.eval(kinds[k], order_z, fz[k]);
    }
    acc.setZero(m);
    for (std::size_t p = 0; p < P; ++p) acc += wi[p] * fy[pairs[p].left] * fz[pairs[p].right];
    std::copy_n(acc.data(), len, out.data() + at);
    if (cache_y) {
      cy.keep(*cache_y, at, n * c);
      cz.keep(*cache_z, at, n * c);
    }
  });
  return make_result(
      y.shape(), std::move(out), {&y, &z, &weights}, [n, c, K, P, per_row, order_y, order_z, kinds, pairs, cache_y, cache_z](Node& self) {
        const auto& ys = pdata(self, 0);
        const auto& zs = pdata(self, 1);
        const auto& ws = pdata(self, 2);
        const bool need_y = pneeds(self, 0), need_z = pneeds(self, 1), need_w = pneeds(self, 2);
        std::vector<double>* gy = need_y ? &pgrad(self, 0) : nullptr;
        std::vector<double>* gz = need_z ? &pgrad(self, 1) : nullptr;
        std::vector<double>* gw = need_w ? &pgrad(self, 2) : nullptr;
        std::vector<ActivationChunk::Block> fy(K), dfy(K), fz(K), dfz(K);
        ActivationChunk::Block dy, dz;
        for_each_chunk(n, c, [&](std::size_t i, std::size_t at, std::size_t len) {
          const auto m = static_cast<Eigen::Index>(len);
          const double* wi = ws.data() + (per_row ? i * P : 0);
          double* gwi = need_w ? gw->data() + (per_row ? i * P : 0) : nullptr;
          const Eigen::Map<const Eigen::ArrayXd> g(self.grad.data() + at, m);
          ActivationChunk cy(ys.data() + at, m), cz(zs.data() + at, m);
          if (cache_y) {
            cy.adopt(*cache_y, at);
            cz.adopt(*cache_z, at);
          }
          for (std::size_t k = 0; k < K; ++k) {
            cy.eval(kinds[k], order_y, fy[k]);
            cz.eval(kinds[k], order_z, fz[k]);
            if (need_y) cy.eval(kinds[k], order_y + 1, dfy[k]);
            if (need_z) cz.eval(kinds[k], order_z + 1, dfz[k]);
          }
          dy.setZero(m);
          dz.setZero(m);
          for (std::size_t p = 0; p < P; ++p) {
            const auto [l, r] = pairs[p];
            if (need_y) dy += wi[p] * dfy[l] * fz[r];
            if (need_z) dz += wi[p] * fy[l] * dfz[r];
            if (need_w) gwi[p] += (g * fy[l] * fz[r]).sum();
          }
          if (need_y) Eigen::Map<Eigen::ArrayXd>(gy->data() + at, m) += g * dy;
          if (need_z) Eigen::Map<Eigen::ArrayXd>(gz->data() + at, m) += g * dz;
        });
      });
}

// ---- sequence-model operations ------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids_in) {
  const auto vocab = table.rows(), d = table.cols();
  std::vector<int> ids(ids_in.begin(), ids_in.end());
  if (ids.empty()) throw DimensionError("embedding: no ids");
  const auto t = table.data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw DataError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {&table}, [ids, d](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>(ids[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
    }
  });
}

Tensor rmsnorm(const Tensor& x, const Tensor& scale, double eps) {
  const auto n = x.rows(), d = x.cols();
  if (scale.numel() != d) throw DimensionError("rmsnorm: scale " + scale.shape_str() + " vs input " + x.shape_str());
  const auto xs = x.data(), s = scale.data();
  std::vector<double> out(n * d);
  auto inv = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xs[i * d + j] * xs[i * d + j];
    const double r = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    (*inv)[i] = r;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xs[i * d + j] * r * s[j];
  }
  return make_result(x.shape(), std::move(out), {&x, &scale}, [n, d, inv](Node& self) {
    const auto& xv = pdata(self, 0);
    const auto& sv = pdata(self, 1);
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = (*inv)[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += self.grad[i * d + j] * sv[j] * xv[i * d + j];
        const double coef = r * r * r * dot / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += r * self.grad[i * d + j] * sv[j] - coef * xv[i * d + j];
      }
    }
    if (pneeds(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xv[i * d + j] * (*inv)[i];
    }
  });
}

namespace {

// Rotates interleaved pairs (2i, 2i+1) of every head by ±angle(pos, i).
void apply_rope(const double* in, double* out, std::size_t n, std::size_t c, std::size_t seq_len, std::size_t n_head,
                double base, std::size_t offset, double sign) {
  const std::size_t hd = c / n_head;
  for (std::size_t r = 0; r < n; ++r) {
    const double pos = static_cast<double>(r % seq_len + offset);
    for (std::size_t h = 0; h < n_head; ++h) {
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double theta = pos * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
        const double cs = std::cos(theta), sn = sign * std::sin(theta);
        const std::size_t idx = r * c + h * hd + 2 * i;
        const double a = in[idx], b = in[idx + 1];
        out[idx] = a * cs - b * sn;
        out[idx + 1] = a * sn + b * cs;
      }
    }
  }
}

void check_heads(std::size_t n, std::size_t c, std::size_t seq_len, std::size_t n_head, const char* op) {
  if (seq_len == 0 || n % seq_len != 0)
    throw DimensionError(std::string(op) + ": row count " + std::to_string(n) + " is not a multiple of sequence length " +
                         std::to_string(seq_len));
  if (n_head == 0 || c % n_head != 0 || (c / n_head) % 2 != 0)
    throw DimensionError(std::string(op) + ": width " + std::to_string(c) + " does not split into " +
                         std::to_string(n_head) + " even-sized heads");
}

}  // namespace

Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_head, double base, std::size_t position_offset) {
  const auto n = x.rows(), c = x.cols();
  check_heads(n, c, seq_len, n_head, "rope");
  std::vector<double> out(n * c);
  apply_rope(x.data().data(), out.data(), n, c, seq_len, n_head, base, position_offset, 1.0);
  return make_result(x.shape(), std::move(out), {&x}, [=](Node& self) {
    std::vector<double> back(n * c);
    apply_rope(self.grad.data(), back.data(), n, c, seq_len, n_head, base, position_offset, -1.0);
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len, std::size_t n_head) {
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw DimensionError("causal_attention: q/k/v shapes differ");
  const auto n = q.rows(), c = q.cols();
  check_heads(n, c, seq_len, n_head, "causal_attention");
  const std::size_t hd = c / n_head, T = seq_len, B = n / seq_len;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(c));

  // probs holds the T×T attention matrix of every (batch, head) block.
  auto probs = std::make_shared<std::vector<double>>(B * n_head * T * T, 0.0);
  std::vector<double> out(n * c);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < n_head; ++h) {
      const std::size_t off = b * T * c + h * hd;
      StridedC Q(q.data().data() + off, T, hd, stride), K(k.data().data() + off, T, hd, stride),
          V(v.data().data() + off, T, hd, stride);
      Eigen::Map<RowMat> P(probs->data() + (b * n_head + h) * T * T, T, T);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (std::size_t i = 0; i < T; ++i) {
        const double mx = P.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (P(i, j) = std::exp(P(i, j) - mx));
        for (std::size_t j = 0; j <= i; ++j) P(i, j) /= z;
        for (std::size_t j = i + 1; j < T; ++j) P(i, j) = 0.0;
      }
      Strided O(out.data() + off, T, hd, stride);
      O.noalias() = P * V;
    }
  }
  return make_result(q.shape(), std::move(out), {&q, &k, &v}, [=](Node& self) {
    const bool nq = pneeds(self, 0), nk = pneeds(self, 1), nv = pneeds(self, 2);
    std::vector<double>* gq = nq ? &pgrad(self, 0) : nullptr;
    std::vector<double>* gk = nk ? &pgrad(self, 1) : nullptr;
    std::vector<double>* gv = nv ? &pgrad(self, 2) : nullptr;
    RowMat dP(T, T), dS(T, T);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < n_head; ++h) {
        const std::size_t off = b * T * c + h * hd;
        StridedC Q(pdata(self, 0).data() + off, T, hd, stride), K(pdata(self, 1).data() + off, T, hd, stride),
            V(pdata(self, 2).data() + off, T, hd, stride), dO(self.grad.data() + off, T, hd, stride);
        Eigen::Map<const RowMat> P(probs->data() + (b * n_head + h) * T * T, T, T);
        if (nv) Strided(gv->data() + off, T, hd, stride).noalias() += P.transpose() * dO;
        if (!nq && !nk) continue;
        dP.noalias() = dO * V.transpose();
        for (std::size_t i = 0; i < T; ++i) {
          const double dot = P.row(i).dot(dP.row(i));
          dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix()) * inv_sqrt;
        }
        if (nq) Strided(gq->data() + off, T, hd, stride).noalias() += dS * K;
        if (nk) Strided(gk->data() + off, T, hd, stride).noalias() += dS.transpose() * Q;
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets_in) {
  const auto n = logits.rows(), V = logits.cols();
  if (targets_in.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(targets_in.size()) + " targets for " + logits.shape_str());
  std::vector<int> targets(targets_in.begin(), targets_in.end());
  const auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * V);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw DataError("target id " + std::to_string(targets[i]) + " outside vocabulary of size " + std::to_string(V));
    const double* row = x.data() + i * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += ((*probs)[i * V + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < V; ++j) (*probs)[i * V + j] /= z;
    total += std::log(z) + mx - row[targets[i]];
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  return make_result({1}, {loss}, {&logits}, [n, V, probs, targets](Node& self) {
    auto& g = pgrad(self, 0);
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < V; ++j) g[i * V + j] += s * (*probs)[i * V + j];
      g[i * V + static_cast<std::size_t>(targets[i])] -= s;
    }
  });
}

}  // namespace moa
