#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <optional>
#include <vector>

#include "moa/activations.hpp"

namespace moa::detail {

// Activation derivatives over a short block of inputs, with transcendental
// intermediates shared between kinds. Results depend only on the input block,
// so callers that walk a tensor with the same chunking get bit-identical
// values whichever kinds they request.
class ActivationChunk {
 public:
  static constexpr Eigen::Index kMax = 256;
  using Block = Eigen::Array<double, Eigen::Dynamic, 1, 0, kMax, 1>;

  ActivationChunk(const double* x, Eigen::Index n);

  Eigen::Index size() const { return x_.size(); }

  // Calls sink(f) once, where f(i) is the d-th derivative (d in {0, 1, 2}) of
  // kind at element i. The sink's loop is compiled per kind, so fused
  // consumers make a single pass over the chunk. Branches only pick between
  // constants so the loops stay vectorisable.
  template <typename Sink>
  void with(ActivationKind kind, int d, Sink&& sink);

  void eval(ActivationKind kind, int d, Block& out) {
    out.resize(size());
    double* o = out.data();
    with(kind, d, [&](auto f) {
      for (Eigen::Index i = 0; i < size(); ++i) o[i] = f(i);
    });
  }

  // exp(-x) and Φ(x) are the expensive shared intermediates. A forward pass
  // can keep whichever it computed and the backward pass adopt them.
  struct Cache {
    std::vector<double> exp_neg, cdf;
  };
  void keep(Cache& cache, std::size_t offset, std::size_t total) const;
  void adopt(const Cache& cache, std::size_t offset);

 private:
  const double* sigmoid();
  const double* tanh();
  const double* pdf();
  const double* cdf();

  Block x_;
  std::optional<Block> e_, sig_, tanh_, pdf_, cdf_;
};

template <typename Sink>
void ActivationChunk::with(ActivationKind kind, int d, Sink&& sink) {
  using I = Eigen::Index;
  const double* x = x_.data();
  const auto zero = [](I) { return 0.0; };
  switch (kind.tag) {
    case ActivationTag::ReLU:
      if (d == 0) sink([x](I i) { return std::max(x[i], 0.0); });
      else if (d == 1) sink([x](I i) { return x[i] >= 0.0 ? 1.0 : 0.0; });
      else sink(zero);
      return;
    case ActivationTag::ReLU2:
      if (d == 0) sink([x](I i) {
        const double m = std::max(x[i], 0.0);
        return m * m;
      });
      else if (d == 1) sink([x](I i) { return 2.0 * std::max(x[i], 0.0); });
      else sink([x](I i) { return x[i] >= 0.0 ? 2.0 : 0.0; });
      return;
    case ActivationTag::LeakyReLU: {
      const double eta = kind.leaky_slope;
      if (d == 0) sink([x, eta](I i) { return std::max(x[i], 0.0) + eta * std::min(x[i], 0.0); });
      else if (d == 1) sink([x, eta](I i) { return x[i] >= 0.0 ? 1.0 : eta; });
      else sink(zero);
      return;
    }
    case ActivationTag::Identity:
      if (d == 0) sink([x](I i) { return x[i]; });
      else if (d == 1) sink([](I) { return 1.0; });
      else sink(zero);
      return;
    case ActivationTag::Sigmoid: {
      const double* s = sigmoid();
      if (d == 0) sink([s](I i) { return s[i]; });
      else if (d == 1) sink([s](I i) { return s[i] * (1.0 - s[i]); });
      else sink([s](I i) { return s[i] * (1.0 - s[i]) * (1.0 - 2.0 * s[i]); });
      return;
    }
    case ActivationTag::SiLU: {
      const double* s = sigmoid();
      if (d == 0) sink([x, s](I i) { return x[i] * s[i]; });
      else if (d == 1) sink([x, s](I i) { return s[i] * (1.0 + x[i] * (1.0 - s[i])); });
      else sink([x, s](I i) { return s[i] * (1.0 - s[i]) * (2.0 + x[i] * (1.0 - 2.0 * s[i])); });
      return;
    }
    case ActivationTag::Tanh: {
      const double* th = tanh();
      if (d == 0) sink([th](I i) { return th[i]; });
      else if (d == 1) sink([th](I i) { return 1.0 - th[i] * th[i]; });
      else sink([th](I i) { return -2.0 * th[i] * (1.0 - th[i] * th[i]); });
      return;
    }
    case ActivationTag::GELU: {
      if (d == 0) {
        const double* c = cdf();
        sink([x, c](I i) { return x[i] * c[i]; });
      } else if (d == 1) {
        const double* c = cdf();
        const double* p = pdf();
        sink([x, c, p](I i) { return c[i] + x[i] * p[i]; });
      } else {
        const double* p = pdf();
        sink([x, p](I i) { return p[i] * (2.0 - x[i] * x[i]); });
      }
      return;
    }
  }
}

// Calls fn(offset, length) over consecutive chunks of each row.
template <typename Fn>
void for_each_chunk(std::size_t rows, std::size_t cols, Fn&& fn) {
  const auto step = static_cast<std::size_t>(ActivationChunk::kMax);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; j += step) fn(i, i * cols + j, std::min(step, cols - j));
  }
}

}  // namespace moa::detail
