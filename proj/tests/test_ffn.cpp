#include <doctest.h>

#include <cmath>
#include <random>

#include "moa/errors.hpp"
#include "moa/ffn.hpp"

using namespace moa;

namespace {

Tensor random_input(std::size_t n, std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n * d);
  for (auto& x : v) x = nd(rng);
  return Tensor::from_data({n, d}, std::move(v));
}

void randomize(Tensor& t, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : t.mutable_data()) v = nd(rng);
}

FFNConfig make_config(VariantTag tag, std::size_t d, std::size_t D, GateKind gate = GateKind::Sigmoid,
                      bool bias = false) {
  FFNConfig c;
  c.d_model = d;
  c.hidden = D;
  c.variant.tag = tag;
  c.gate = gate;
  c.gate_bias = bias;
  c.seed = 42;
  if (!is_baseline(tag))
    c.dictionary = flavor_of(tag) == Flavor::TypeI ? parse_dictionary("gsr2lr", Flavor::TypeI)
                                                   : parse_dictionary("gsr2lti", Flavor::TypeII);
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

}  // namespace

TEST_CASE("hidden width defaults") {
  CHECK(default_hidden(Flavor::TypeI, 64) == 256);
  CHECK(default_hidden(Flavor::TypeII, 64) == 170);
  CHECK(default_hidden(Flavor::TypeII, 768) == 2048);
}

TEST_CASE("init follows the recipes") {
  auto la = init(make_config(VariantTag::LA_I, 8, 32));
  REQUIRE(la.alpha.numel() == 5);
  for (double a : la.alpha.data()) CHECK(a == 1.0);

  auto moa = init(make_config(VariantTag::MoA_I, 8, 32));
  REQUIRE(moa.U.shape() == Shape{5, 8});
  double mean = 0.0, sq = 0.0;
  for (double u : moa.U.data()) mean += u;
  mean /= 40.0;
  for (double u : moa.U.data()) sq += (u - mean) * (u - mean);
  const double sd = std::sqrt(sq / 39.0);
  CHECK(std::abs(mean) < 0.02);
  CHECK(sd > 0.01);
  CHECK(sd < 0.03);

  auto again = init(make_config(VariantTag::MoA_I, 8, 32));
  auto p1 = moa.parameters(), p2 = again.parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    for (std::size_t j = 0; j < p1[i].tensor.numel(); ++j) CHECK(p1[i].tensor.at(j) == p2[i].tensor.at(j));

  auto zero = make_config(VariantTag::LA_I, 0, 32);
  CHECK_THROWS_AS(init(zero), ConfigError);
}

TEST_CASE("parameter shapes per variant") {
  for (auto tag : kAllVariants) {
    auto layer = init(make_config(tag, 6, 12));
    CAPTURE(name(tag));
    const std::size_t K = 6, P = 21;
    switch (tag) {
      case VariantTag::LA_I: CHECK(layer.alpha.numel() == 5); break;
      case VariantTag::MoA_I: CHECK(layer.U.rows() == 5); break;
      case VariantTag::OneLA: CHECK(layer.alpha.numel() == K); break;
      case VariantTag::BiLA:
        CHECK(layer.alpha.numel() == K);
        CHECK(layer.beta.numel() == K);
        break;
      case VariantTag::QdLA: CHECK(layer.alpha.numel() == P); break;
      case VariantTag::OneMoA: CHECK(layer.U.rows() == K); break;
      case VariantTag::BiMoA:
        CHECK(layer.U.rows() == K);
        CHECK(layer.V.rows() == K);
        break;
      case VariantTag::QdMoA: CHECK(layer.U.rows() == P); break;
      default: CHECK_FALSE(layer.alpha.defined()); break;
    }
  }
}

TEST_CASE("Type-I baseline by hand") {
  FFNConfig c = make_config(VariantTag::BaselineI, 2, 2);
  c.variant.baseline_activation = ActivationTag::ReLU2;
  auto layer = init(c);
  std::copy_n(std::vector<double>{1, 0, 0, 1}.begin(), 4, layer.W1.mutable_data().begin());
  std::copy_n(std::vector<double>{1, 0, 0, 1}.begin(), 4, layer.W2.mutable_data().begin());
  auto out = forward(layer, Tensor::from_data({1, 2}, {2, -3}));
  CHECK(out.at(0) == 4.0);
  CHECK(out.at(1) == 0.0);
  CHECK_THROWS_AS(forward(layer, Tensor::zeros({1, 3})), DimensionError);
}

TEST_CASE("zero gate rows with sigmoid halve the LA output") {
  std::mt19937_64 rng(1);
  auto moa = init(make_config(VariantTag::MoA_I, 8, 16));
  for (auto& u : moa.U.mutable_data()) u = 0.0;
  auto la_cfg = make_config(VariantTag::LA_I, 8, 16);
  auto la = init(la_cfg);
  std::copy(moa.W1.data().begin(), moa.W1.data().end(), la.W1.mutable_data().begin());
  std::copy(moa.W2.data().begin(), moa.W2.data().end(), la.W2.mutable_data().begin());
  auto x = random_input(10, 8, rng);
  auto a = forward(moa, x), b = forward(la, x);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == doctest::Approx(0.5 * b.at(i)).epsilon(1e-14));
}

TEST_CASE("softmax gate weights sum to one per token") {
  std::mt19937_64 rng(2);
  auto layer = init(make_config(VariantTag::OneMoA, 8, 16, GateKind::Softmax));
  randomize(layer.U, rng, 1.0);
  auto pi = mixing_weights(layer, random_input(64, 8, rng));
  for (std::size_t n = 0; n < 64; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < pi.cols(); ++k) s += pi.at(n, k);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("gates are token adaptive") {
  std::mt19937_64 rng(4);
  for (auto tag : {VariantTag::MoA_I, VariantTag::OneMoA, VariantTag::BiMoA, VariantTag::QdMoA}) {
    auto layer = init(make_config(tag, 8, 16));
    auto pi = mixing_weights(layer, random_input(64, 8, rng));
    double spread = 0.0;
    for (std::size_t n = 1; n < 64; ++n)
      for (std::size_t k = 0; k < pi.cols(); ++k) spread = std::max(spread, std::abs(pi.at(n, k) - pi.at(0, k)));
    CHECK(spread > 1e-3);
  }
}

TEST_CASE("one-hot LA reproduces every fixed baseline bit for bit") {
  std::mt19937_64 rng(6);
  auto x = random_input(16, 6, rng);
  const auto type1 = parse_dictionary("gsr2ltr", Flavor::TypeI);
  for (const auto& sigma : type1.entries) {
    auto cfg = make_config(VariantTag::BaselineI, 6, 10);
    cfg.variant.baseline_activation = sigma;
    auto base = init(cfg);
    auto la = la_from_baseline(base, VariantTag::LA_I, type1);
    auto a = forward(base, x), b = forward(la, x);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
  }
  // Identity listed last so every (sigma, Identity) pair is enumerated.
  const auto type2 = parse_dictionary("gsr2ltri", Flavor::TypeII);
  for (const auto& sigma : type2.entries) {
    auto cfg = make_config(VariantTag::BaselineII, 6, 10);
    cfg.variant.baseline_activation = sigma;
    auto base = init(cfg);
    auto a = forward(base, x);
    for (auto tag : {VariantTag::BiLA, VariantTag::QdLA}) {
      auto b = forward(la_from_baseline(base, tag, type2), x);
      for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
    }
    if (sigma == ActivationKind(ActivationTag::SiLU)) {
      auto b = forward(la_from_baseline(base, VariantTag::OneLA, type2), x);
      for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == b.at(i));
    }
  }
}

TEST_CASE("arctanh constant gates reproduce LA layers") {
  std::mt19937_64 rng(8);
  for (auto tag : {VariantTag::LA_I, VariantTag::OneLA, VariantTag::BiLA, VariantTag::QdLA}) {
    CAPTURE(name(tag));
    auto la = init(make_config(tag, 6, 12));
    randomize(la.alpha, rng, 1.0);
    if (la.beta.defined()) randomize(la.beta, rng, 1.0);
    randomize(la.W1, rng, 0.5);
    randomize(la.W2, rng, 0.5);
    if (la.W3.defined()) randomize(la.W3, rng, 0.5);
    auto moa = embed_la_as_moa(la, 0.25);
    CHECK(is_moa(moa.config.variant.tag));
    auto x = random_input(100, 6, rng);
    CHECK(max_abs_diff(forward(la, x), forward(moa, x)) <= 1e-12);
  }
}

TEST_CASE("embedding biases and edge cases") {
  auto la = init(make_config(VariantTag::LA_I, 4, 8));
  la.alpha = Tensor::from_data({2}, {1.0, 1.0}, true);
  la.config.dictionary = parse_dictionary("rg", Flavor::TypeI);
  auto moa = embed_la_as_moa(la, 0.5);
  CHECK(moa.bias_u.at(0) == doctest::Approx(0.5493061443340548).epsilon(1e-15));
  CHECK(moa.bias_u.at(1) == doctest::Approx(0.5493061443340548).epsilon(1e-15));
  CHECK_THROWS_AS(embed_la_as_moa(la, 1.0), RangeError);

  la.alpha = Tensor::from_data({2}, {0.0, 0.0}, true);
  auto silent = embed_la_as_moa(la, 0.5);
  std::mt19937_64 rng(3);
  auto out = forward(silent, random_input(5, 4, rng));
  for (double v : out.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(embed_la_as_moa(init(make_config(VariantTag::MoA_I, 4, 8)), 0.5), ContractError);
}

TEST_CASE("parameter accounting") {
  auto moa1 = make_config(VariantTag::MoA_I, 768, 3072);
  moa1.dictionary = parse_dictionary("gsr2lr", Flavor::TypeI);
  CHECK(param_count(moa1).gate_params == 3840);
  CHECK(param_count(moa1).projection_params == 2 * 768 * 3072);
  CHECK(param_count(moa1).mixing_params == 0);

  auto bi = make_config(VariantTag::BiMoA, 768, 0);
  bi.dictionary = parse_dictionary("gsr2ltr", Flavor::TypeII);
  CHECK(param_count(bi).gate_params == 9216);
  bi.gate_bias = true;
  CHECK(param_count(bi).gate_params == 9216 + 12);

  auto qd = make_config(VariantTag::QdLA, 16, 0);
  qd.dictionary = parse_dictionary("gsr2", Flavor::TypeII);
  CHECK(param_count(qd).mixing_params == 6);

  for (auto tag : kAllVariants) {
    for (std::size_t D : {64u, 512u}) {
      auto c = make_config(tag, 32, D);
      auto b = param_count(c);
      CHECK(b.gate_params + b.mixing_params <= 2 * 6 * 6 * 32);
      std::size_t counted = 0;
      for (const auto& p : init(c).parameters()) counted += p.tensor.numel();
      CHECK(counted == b.total());
    }
  }
}

TEST_CASE("every variant passes finite-difference checks for every parameter group") {
  std::mt19937_64 rng(12);
  for (auto gate_kind : {GateKind::Softmax, GateKind::Sigmoid, GateKind::Tanh}) {
    for (auto tag : kAllVariants) {
      CAPTURE(name(tag));
      auto layer = init(make_config(tag, 4, 6, gate_kind, true));
      for (auto& p : layer.parameters()) randomize(p.tensor, rng, 0.6);
      auto x = random_input(3, 4, rng);
      std::vector<Tensor> params;
      for (auto& p : layer.parameters()) params.push_back(p.tensor);
      CHECK(grad_check_params([&] { return sum(forward(layer, x)); }, params, 1e-5) <= 1e-5);
      CHECK(grad_check([&](const Tensor& xi) { return sum(forward(layer, xi)); }, x, 1e-5) <= 1e-5);
    }
  }
}

TEST_CASE("config validation") {
  auto c = make_config(VariantTag::LA_I, 4, 8);
  c.dictionary = parse_dictionary("gs", Flavor::TypeII);
  CHECK_THROWS_AS(init(c), FlavorError);
  auto b = make_config(VariantTag::BaselineI, 4, 8);
  b.variant.baseline_activation = ActivationTag::Identity;
  CHECK_THROWS_AS(init(b), FlavorError);
  CHECK(variant_from_name("QdMoA") == VariantTag::QdMoA);
  CHECK_THROWS_AS(variant_from_name("Nope"), ConfigError);
  CHECK(gate_from_name("Softmax") == GateKind::Softmax);
}
