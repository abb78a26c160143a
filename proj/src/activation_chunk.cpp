#include <algorithm>
#include <cmath>
#include <numbers>

#include "activation_chunk.hpp"

namespace moa::detail {

namespace {

using Block = ActivationChunk::Block;

// Chebyshev fit of erfc(z) for z >= 0 (absolute error below 5e-16).
constexpr double kErfcCoef[28] = {
    -1.3026537197817094,   6.4196979235649026e-1, 1.9476473204185836e-2, -9.561514786808631e-3,
    -9.46595344482036e-4,  3.66839497852761e-4,   4.2523324806907e-5,    -2.0278578112534e-5,
    -1.624290004647e-6,    1.303655835580e-6,     1.5626441722e-8,       -8.5238095915e-8,
    6.529054439e-9,        5.059343495e-9,        -9.91364156e-10,       -2.27365122e-10,
    9.6467911e-11,         2.394038e-12,          -6.886027e-12,         8.94487e-13,
    3.13092e-13,           -1.12708e-13,          3.81e-16,              7.106e-15,
    -1.523e-15,            -9.4e-17,              1.21e-16,              -2.8e-17};

}  // namespace

ActivationChunk::ActivationChunk(const double* x, Eigen::Index n) : x_(Eigen::Map<const Eigen::ArrayXd>(x, n)) {}

void ActivationChunk::keep(Cache& cache, std::size_t offset, std::size_t total) const {
  const auto put = [&](const std::optional<Block>& from, std::vector<double>& to) {
    if (!from) return;
    if (to.empty()) to.resize(total);
    std::copy_n(from->data(), from->size(), to.data() + offset);
  };
  put(e_, cache.exp_neg);
  put(cdf_, cache.cdf);
}

void ActivationChunk::adopt(const Cache& cache, std::size_t offset) {
  const auto n = size();
  if (!cache.exp_neg.empty()) e_ = Eigen::Map<const Eigen::ArrayXd>(cache.exp_neg.data() + offset, n);
  if (!cache.cdf.empty()) cdf_ = Eigen::Map<const Eigen::ArrayXd>(cache.cdf.data() + offset, n);
}

const double* ActivationChunk::sigmoid() {
  if (!sig_) {
    if (!e_) e_ = (-x_).exp();
    sig_ = 1.0 / (1.0 + *e_);
  }
  return sig_->data();
}

const double* ActivationChunk::tanh() {
  if (!tanh_) {
    if (!e_) e_ = (-x_).exp();
    tanh_ = 2.0 / (1.0 + e_->square()) - 1.0;
  }
  return tanh_->data();
}

const double* ActivationChunk::pdf() {
  if (!pdf_) pdf_ = (-0.5 * x_.square()).exp() * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return pdf_->data();
}

// Φ(t) = erfc(-t/√2)/2, erfc by Clenshaw recurrence.
const double* ActivationChunk::cdf() {
  if (!cdf_) {
    const Block z = x_.abs() * (0.5 * std::numbers::sqrt2);
    const Block tt = 2.0 / (2.0 + z);
    const Block ty = 4.0 * tt - 2.0;
    // Two recurrence steps per pass so the buffers swap roles without copies.
    Block d = Block::Constant(x_.size(), kErfcCoef[27]), dd = Block::Zero(x_.size());
    for (int j = 26; j > 0; j -= 2) {
      dd = ty * d - dd + kErfcCoef[j];
      d = ty * dd - d + kErfcCoef[j - 1];
    }
    const Block r = tt * (-z.square() + 0.5 * (kErfcCoef[0] + ty * d) - dd).exp();
    const double* x = x_.data();
    cdf_.emplace(x_.size());
    double* c = cdf_->data();
    for (Eigen::Index i = 0; i < x_.size(); ++i) {
      const bool lower = x[i] <= 0.0;
      c[i] = (lower ? 0.0 : 1.0) + (lower ? 0.5 : -0.5) * r[i];
    }
  }
  return cdf_->data();
}

}  // namespace moa::detail
