#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moa/activations.hpp"

namespace moa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Node(Shape s, std::vector<double> d, bool rg);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Allocates (zero-filled) on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major float64 array. Copies share storage; results of operations on
// tensors that require gradients remember their inputs and a backward rule.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // In-place writes are reserved for leaves (parameter updates, perturbation in tests).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;
  std::string shape_str() const { return shape_string(shape()); }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

// The recorded operations reachable from a root, in recording order.
class Tape {
 public:
  static Tape from_root(const Tensor& root);

  const std::vector<detail::Node*>& nodes() const noexcept { return nodes_; }
  // Runs every backward rule once, newest node first.
  void backward(detail::Node& root) const;

 private:
  std::vector<detail::Node*> nodes_;
  std::vector<std::shared_ptr<detail::Node>> keep_alive_;
};

// Populates grads of every requires_grad leaf reachable from root. root must be
// a scalar. Leaf grads accumulate across calls until zero_grads.
void backward(const Tensor& root);
void zero_grads(std::span<Tensor> tensors);

struct MemoryStats {
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
};
MemoryStats memory_stats() noexcept;
void reset_peak_memory() noexcept;

// ---- core operations ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul_scalar(const Tensor& a, const Tensor& s);  // s has one element
Tensor add_row(const Tensor& a, const Tensor& row);   // a[N×C] + row[C]
Tensor mul_row(const Tensor& a, const Tensor& row);   // a[N×C] ⊙ row[C]
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, Shape shape);

// Elementwise σ (order 0) or σ' (order 1).
Tensor activation(const Tensor& a, ActivationKind kind, int order = 0);
Tensor softmax_rows(const Tensor& a);

// out[n,j] = Σ_k w_k σ_k^(order)(y[n,j]); weights is either K values shared by
// every row or an [N×K] matrix of per-row weights.
Tensor mix_activations(const Tensor& y, std::span<const ActivationKind> kinds, const Tensor& weights,
                       int order = 0);

struct ActivationPair {
  std::size_t left;
  std::size_t right;
};

// out[n,j] = Σ_p w_p σ_{left_p}^(order_y)(y[n,j]) σ_{right_p}^(order_z)(z[n,j]);
// weights shared ([P]) or per row ([N×P]).
Tensor pair_mix(const Tensor& y, const Tensor& z, std::span<const ActivationKind> kinds,
                std::span<const ActivationPair> pairs, const Tensor& weights, int order_y = 0, int order_z = 0);

// ---- sequence-model operations ------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor rmsnorm(const Tensor& x, const Tensor& scale, double eps);
// Rows are laid out as batch-major [B*T × d]; row r sits at position
// (r mod seq_len) + position_offset.
Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_head, double base, std::size_t position_offset = 0);
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len, std::size_t n_head);
// Mean negative log-likelihood of targets under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// ---- gradient checking ----------------------------------------------------

// Max over coordinates of |autodiff - central difference| / max(1, |central difference|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step);
// Same, differentiating with respect to every element of every tensor in params
// (perturbed in place and restored).
double grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double step);

}  // namespace moa
