#include "moa/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "moa/errors.hpp"
#include "tensor_internal.hpp"

namespace moa {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;

void track_alloc(std::int64_t bytes) noexcept {
  const auto now = g_live_bytes.fetch_add(bytes) + bytes;
  auto peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

Node::Node(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg), seq(g_next_seq.fetch_add(1)) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  track_alloc(static_cast<std::int64_t>(data.size() * sizeof(double)));
}

Node::~Node() {
  g_live_bytes.fetch_sub(static_cast<std::int64_t>((data.size() + grad.size()) * sizeof(double)));
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) {
    grad.assign(data.size(), 0.0);
    track_alloc(static_cast<std::int64_t>(grad.size() * sizeof(double)));
  }
  return grad;
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  }
  auto node = std::make_shared<Node>(std::move(shape), std::move(data), needs);
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  auto node = std::make_shared<Node>(std::move(shape), std::move(data), needs);
  if (needs) {
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

using detail::make_result;
using detail::Node;

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::make_shared<Node>(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(std::make_shared<Node>(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

namespace {
const Node& checked(const std::shared_ptr<Node>& n) {
  if (!n) throw ContractError("operation on an undefined tensor");
  return *n;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw DimensionError("dimension index out of range for " + shape_string(s));
  return s[i];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str());
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str());
  return shape()[1];
}

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  if (!node_->parents.empty()) throw ContractError("in-place writes are only allowed on leaf tensors");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str());
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::is_leaf() const { return checked(node_).parents.empty(); }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), std::vector<double>(data().begin(), data().end())); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() noexcept { return t_grad_enabled; }

MemoryStats memory_stats() noexcept { return {g_live_bytes.load(), g_peak_bytes.load()}; }
void reset_peak_memory() noexcept { g_peak_bytes.store(g_live_bytes.load()); }

// ---- Tape / backward --------------------------------------------------------

Tape Tape::from_root(const Tensor& root) {
  Tape tape;
  std::vector<Node*> stack{root.node().get()};
  std::vector<Node*> seen;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || std::find(seen.begin(), seen.end(), n) != seen.end()) continue;
    seen.push_back(n);
    for (auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(seen.begin(), seen.end(), [](const Node* a, const Node* b) { return a->seq < b->seq; });
  tape.nodes_ = std::move(seen);
  tape.keep_alive_.push_back(root.node());
  return tape;
}

void Tape::backward(Node& root) const {
  for (Node* n : nodes_) {
    if (!n->parents.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  root.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ContractError("backward() needs a scalar root, got shape " + root.shape_str());
  if (!root.requires_grad()) throw ContractError("backward() root does not require grad");
  const Tape tape = Tape::from_root(root);
  tape.backward(*root.node());
}

void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

// ---- helpers -----------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + t.shape_str());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

std::vector<double>& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const std::vector<double>& pdata(const Node& self, std::size_t i) { return self.parents[i]->data; }
bool pneeds(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_str() + " x " + b.shape_str());
  std::vector<double> out(m * n);
  MapM(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    MapC g(self.grad.data(), m, n);
    if (pneeds(self, 0)) MapM(pgrad(self, 0).data(), m, k).noalias() += g * MapC(pdata(self, 1).data(), k, n).transpose();
    if (pneeds(self, 1)) MapM(pgrad(self, 1).data(), k, n).noalias() += MapC(pdata(self, 0).data(), m, k).transpose() * g;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree, " + a.shape_str() + " x " + b.shape_str() + "^T");
  std::vector<double> out(m * n);
  MapM(out.data(), m, n).noalias() = MapC(a.data().data(), m, k) * MapC(b.data().data(), n, k).transpose();
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    MapC g(self.grad.data(), m, n);
    if (pneeds(self, 0)) MapM(pgrad(self, 0).data(), m, k).noalias() += g * MapC(pdata(self, 1).data(), n, k);
    if (pneeds(self, 1)) MapM(pgrad(self, 1).data(), n, k).noalias() += g.transpose() * MapC(pdata(self, 0).data(), m, k);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!pneeds(self, p)) continue;
      auto& g = pgrad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pneeds(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.numel());
  const auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& xa = pdata(self, 0);
    const auto& xb = pdata(self, 1);
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (pneeds(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {&a}, [factor](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: factor must have one element, got " + s.shape_str());
  const double f = s.item();
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= f;
  return make_result(a.shape(), std::move(out), {&a, &s}, [](Node& self) {
    const double fac = pdata(self, 1)[0];
    const auto& xa = pdata(self, 0);
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += fac * self.grad[i];
    }
    if (pneeds(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xa.size(); ++i) acc += self.grad[i] * xa[i];
      pgrad(self, 1)[0] += acc;
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  const auto n = a.rows(), c = a.cols();
  if (row.numel() != c)
    throw DimensionError("add_row: row " + row.shape_str() + " does not match columns of " + a.shape_str());
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += r[j];
  return make_result(a.shape(), std::move(out), {&a, &row}, [n, c](Node& self) {
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pneeds(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "mul_row");
  const auto n = a.rows(), c = a.cols();
  if (row.numel() != c)
    throw DimensionError("mul_row: row " + row.shape_str() + " does not match columns of " + a.shape_str());
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= r[j];
  return make_result(a.shape(), std::move(out), {&a, &row}, [n, c](Node& self) {
    const auto& xa = pdata(self, 0);
    const auto& xr = pdata(self, 1);
    if (pneeds(self, 0)) {
      auto& g = pgrad(self, 0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * xr[j];
    }
    if (pneeds(self, 1)) {
      auto& g = pgrad(self, 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xa[i * c + j];
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({1}, {acc}, {&a}, [](Node& self) {
    auto& g = pgrad(self, 0);
    const double s = self.grad[0];
    for (auto& v : g) v += s;
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const auto n = a.rows(), c = a.cols();
  if (begin >= end || end > c)
    throw DimensionError("slice_cols: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") for " + a.shape_str());
  const auto w = end - begin;
  std::vector<double> out(n * w);
  const auto d = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = d[i * c + begin + j];
  return make_result({n, w}, std::move(out), {&a}, [n, c, w, begin](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row mismatch " + p.shape_str());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offset + j] = d[i * widths[k] + j];
    offset += widths[k];
  }
  return make_result({n, total}, std::move(out), parts, [n, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (pneeds(self, k)) {
        auto& g = pgrad(self, k);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + a.shape_str() + " as " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {&a}, [](Node& self) {
    auto& g = pgrad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---- gradient checking ------------------------------------------------------------

namespace {

double central_difference(const std::function<double()>& eval, double& coordinate, double step, std::size_t index) {
  const double saved = coordinate;
  coordinate = saved + step;
  const double plus = eval();
  coordinate = saved - step;
  const double minus = eval();
  coordinate = saved;
  if (!std::isfinite(plus) || !std::isfinite(minus))
    throw NumericError("grad_check: non-finite value when perturbing coordinate " + std::to_string(index));
  return (plus - minus) / (2.0 * step);
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double step) {
  Tensor leaf = Tensor::from_data(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
  Tensor root = f(leaf);
  if (root.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  if (!std::isfinite(root.item())) throw NumericError("grad_check: non-finite value at the base point");
  backward(root);
  const std::vector<double> analytic = leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                                      : std::vector<double>(leaf.numel(), 0.0);
  auto data = leaf.mutable_data();
  const auto eval = [&] {
    NoGradGuard guard;
    return f(leaf).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double fd = central_difference(eval, data[i], step, i);
    if (!std::isfinite(analytic[i]))
      throw NumericError("grad_check: non-finite gradient at coordinate " + std::to_string(i));
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& f, std::vector<Tensor> params, double step) {
  for (auto& p : params) p.zero_grad();
  Tensor root = f();
  if (root.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  if (!std::isfinite(root.item())) throw NumericError("grad_check: non-finite value at the base point");
  backward(root);
  const auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };
  double worst = 0.0;
  std::size_t flat = 0;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.numel(), 0.0);
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i, ++flat) {
      const double fd = central_difference(eval, data[i], step, flat);
      if (!std::isfinite(analytic[i]))
        throw NumericError("grad_check: non-finite gradient at coordinate " + std::to_string(flat));
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace moa
