#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "moa/activations.hpp"
#include "moa/errors.hpp"
#include "moa/tensor.hpp"

using namespace moa;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul hand products") {
  auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto col = Tensor::from_data({2, 1}, {3, 4});
  auto r = matmul(eye, col);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0) == 3.0);
  CHECK(r.at(1) == 4.0);

  auto row = Tensor::from_data({1, 2}, {1, 2});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul is exact against identity on both sides") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({3, 4}, rng, false);
  std::vector<double> i3(9, 0.0), i4(16, 0.0);
  for (int k = 0; k < 3; ++k) i3[k * 4] = 1.0;
  for (int k = 0; k < 4; ++k) i4[k * 5] = 1.0;
  auto left = matmul(Tensor::from_data({3, 3}, i3), a);
  auto right = matmul(a, Tensor::from_data({4, 4}, i4));
  for (std::size_t k = 0; k < a.numel(); ++k) {
    CHECK(left.at(k) == a.at(k));
    CHECK(right.at(k) == a.at(k));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum equals ones times b transpose") {
  std::mt19937_64 rng(7);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng, false);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double expect = b.at(k, 0) + b.at(k, 1);
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  const double err = grad_check([&](const Tensor& x) { return sum(matmul(x, b)); }, a, 1e-5);
  CHECK(err <= 1e-8);
}

TEST_CASE("hadamard values and gradients") {
  auto a = Tensor::from_data({3}, {1, 2, 3}, true);
  auto b = Tensor::from_data({3}, {4, 5, 6});
  auto p = hadamard(a, b);
  CHECK(p.at(0) == 4.0);
  CHECK(p.at(1) == 10.0);
  CHECK(p.at(2) == 18.0);
  auto same = hadamard(a, Tensor::full({3}, 1.0));
  for (std::size_t i = 0; i < 3; ++i) CHECK(same.at(i) == a.at(i));
  backward(sum(p));
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.grad()[i] == b.at(i));
  CHECK_THROWS_AS(hadamard(a, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("backward basics") {
  auto x = Tensor::from_data({4}, {0.5, -1.0, 2.0, 3.0}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  backward(sum(hadamard(x, x)));
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2.0 * x.at(i));

  SUBCASE("repeated calls accumulate") {
    backward(sum(x));
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == 2.0 * x.at(i) + 1.0);
  }
  SUBCASE("non-scalar root is rejected") { CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError); }
}

TEST_CASE("backward is deterministic across resets") {
  std::mt19937_64 rng(11);
  auto w = random_tensor({5, 3}, rng);
  auto x = random_tensor({4, 3}, rng);
  auto loss = [&] {
    return sum(mix_activations(matmul_nt(x, w), std::vector<ActivationKind>{ActivationTag::GELU, ActivationTag::Tanh},
                               Tensor::from_data({2}, {0.7, -0.2})));
  };
  backward(loss());
  std::vector<double> first(w.grad().begin(), w.grad().end());
  w.zero_grad();
  x.zero_grad();
  backward(loss());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(w.grad()[i] == first[i]);
}

TEST_CASE("shared subexpressions receive gradient from every use") {
  auto x = Tensor::from_data({2}, {1.5, -0.5}, true);
  auto y = scale(x, 3.0);
  backward(sum(add(hadamard(y, y), y)));
  for (std::size_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == doctest::Approx(18.0 * x.at(i) + 3.0));
}

TEST_CASE("no-grad guard stops recording") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = scale(x, 2.0);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(scale(x, 2.0).requires_grad());
}

TEST_CASE("grad_check on sum is tight") {
  std::mt19937_64 rng(5);
  auto p = random_tensor({6}, rng);
  CHECK(grad_check([](const Tensor& x) { return sum(x); }, p, 1e-5) <= 1e-10);
}

TEST_CASE("grad_check reports non-finite values") {
  auto p = Tensor::from_data({2}, {1.0, 1.0});
  auto f = [](const Tensor& x) { return sum(scale(x, std::numeric_limits<double>::infinity())); };
  CHECK_THROWS_AS(grad_check(f, p, 1e-5), NumericError);
}

TEST_CASE("vectorised activation op agrees with the scalar definitions") {
  std::vector<double> xs;
  for (int i = -30000; i <= 30000; ++i) xs.push_back(i * 1e-3 + 1e-7);
  xs.push_back(0.0);
  const std::size_t n = xs.size();
  const Tensor x = Tensor::from_data({n}, xs);
  const ActivationTag tags[] = {ActivationTag::ReLU, ActivationTag::ReLU2, ActivationTag::LeakyReLU, ActivationTag::GELU,
                                ActivationTag::SiLU, ActivationTag::Tanh,  ActivationTag::Identity,  ActivationTag::Sigmoid};
  for (auto tag : tags) {
    CAPTURE(name(tag));
    const Tensor tv = activation(x, tag, 0), td = activation(x, tag, 1);
    const auto v = tv.data(), d = td.data();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double scale = 1.0 + std::abs(xs[i]);
      worst = std::max({worst, std::abs(v[i] - eval(tag, xs[i])) / scale, std::abs(d[i] - deriv(tag, xs[i])) / scale});
    }
    CHECK(worst <= 4e-15);
  }
}

TEST_CASE("elementwise and structural ops pass finite differences") {
  std::mt19937_64 rng(21);
  const std::vector<ActivationKind> dict{ActivationTag::GELU, ActivationTag::SiLU, ActivationTag::Tanh,
                                         ActivationTag::Identity};
  auto b = random_tensor({3, 4}, rng, false);
  auto row = random_tensor({4}, rng, false);
  for (int trial = 0; trial < 20; ++trial) {
    auto point = random_tensor({3, 4}, rng, false);
    auto weights = random_tensor({3, 4}, rng, false);
    const auto check = [&](auto&& f) { CHECK(grad_check(f, point, 1e-5) <= 1e-5); };
    check([&](const Tensor& x) { return sum(hadamard(sub(x, b), add(x, b))); });
    check([&](const Tensor& x) { return sum(hadamard(softmax_rows(x), b)); });
    check([&](const Tensor& x) { return sum(mul_row(add_row(x, row), row)); });
    check([&](const Tensor& x) { return mean(hadamard(concat_cols({slice_cols(x, 1, 3), x}), concat_cols({b, slice_cols(b, 0, 2)}))); });
    check([&](const Tensor& x) { return sum(hadamard(mix_activations(x, dict, weights, 0), b)); });
    check([&](const Tensor& x) { return sum(hadamard(mix_activations(x, dict, weights, 1), b)); });
    check([&](const Tensor& x) { return sum(mix_activations(b, dict, x, 1)); });
    const std::vector<ActivationPair> pairs{{0, 0}, {0, 3}, {1, 2}, {2, 3}};
    check([&](const Tensor& x) { return sum(hadamard(pair_mix(x, b, dict, pairs, weights, 0, 1), b)); });
    check([&](const Tensor& x) { return sum(hadamard(pair_mix(b, x, dict, pairs, weights, 1, 0), b)); });
    check([&](const Tensor& x) { return sum(pair_mix(b, hadamard(b, b), dict, pairs, x, 1, 1)); });
  }
}

TEST_CASE("sequence ops pass finite differences") {
  std::mt19937_64 rng(33);
  const std::size_t T = 3, heads = 2, c = 8;
  auto k = random_tensor({2 * T, c}, rng, false);
  auto v = random_tensor({2 * T, c}, rng, false);
  auto w = random_tensor({2 * T, c}, rng, false);
  auto s = random_tensor({c}, rng, false);
  for (int trial = 0; trial < 5; ++trial) {
    auto point = random_tensor({2 * T, c}, rng, false);
    CHECK(grad_check([&](const Tensor& x) { return sum(hadamard(rope(x, T, heads, 10000.0), w)); }, point, 1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& x) { return sum(hadamard(rmsnorm(x, s, 1e-6), w)); }, point, 1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& x) { return sum(hadamard(causal_attention(x, k, v, T, heads), w)); }, point,
                     1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& x) { return sum(hadamard(causal_attention(k, x, v, T, heads), w)); }, point,
                     1e-5) <= 1e-6);
    CHECK(grad_check([&](const Tensor& x) { return sum(hadamard(causal_attention(k, v, x, T, heads), w)); }, point,
                     1e-5) <= 1e-6);
    const std::vector<int> targets{0, 3, 7, 1, 1, 5};
    CHECK(grad_check([&](const Tensor& x) { return cross_entropy(x, targets); }, point, 1e-5) <= 1e-6);
  }
  auto table = random_tensor({5, 3}, rng, false);
  const std::vector<int> ids{4, 0, 4};
  auto wt = random_tensor({3, 3}, rng, false);
  CHECK(grad_check([&](const Tensor& t) { return sum(hadamard(embedding(t, ids), wt)); }, table, 1e-5) <= 1e-8);
  CHECK_THROWS_AS(embedding(table, std::vector<int>{5}), DataError);
}

TEST_CASE("rope preserves relative positions") {
  std::mt19937_64 rng(8);
  const std::size_t T = 6, heads = 2, c = 8;
  auto q = random_tensor({T, c}, rng, false);
  auto k = random_tensor({T, c}, rng, false);
  auto scores = [&](std::size_t offset) {
    return matmul_nt(rope(q, T, heads, 10000.0, offset), rope(k, T, heads, 10000.0, offset));
  };
  auto s0 = scores(0), s1 = scores(37);
  for (std::size_t i = 0; i < s0.numel(); ++i) CHECK(std::abs(s0.at(i) - s1.at(i)) <= 1e-10);
}

TEST_CASE("causal attention ignores later positions") {
  std::mt19937_64 rng(9);
  const std::size_t T = 5;
  auto q = random_tensor({T, 4}, rng, false);
  auto k = random_tensor({T, 4}, rng, false);
  auto v = random_tensor({T, 4}, rng, false);
  auto base = causal_attention(q, k, v, T, 1);
  std::vector<double> kd(k.data().begin(), k.data().end()), vd(v.data().begin(), v.data().end());
  for (std::size_t j = 0; j < 4; ++j) {
    kd[4 * 4 + j] += 1.0;
    vd[4 * 4 + j] -= 2.0;
  }
  auto moved = causal_attention(q, Tensor::from_data({T, 4}, kd), Tensor::from_data({T, 4}, vd), T, 1);
  for (std::size_t i = 0; i < 4 * 4; ++i) CHECK(base.at(i) == moved.at(i));
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  auto before = memory_stats().live_bytes;
  {
    auto big = Tensor::zeros({100, 100});
    CHECK(memory_stats().live_bytes >= before + 80000);
  }
  CHECK(memory_stats().live_bytes == before);
}
