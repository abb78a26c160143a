#include <algorithm>
#include <cmath>

#include "moa/errors.hpp"
#include "moa/expressivity.hpp"
#include "theory_internal.hpp"

namespace moa {

namespace {

constexpr TheoryFamily kFamilies[] = {TheoryFamily::FixedI,   TheoryFamily::LA_I,    TheoryFamily::MoA_I,
                                      TheoryFamily::FixedII,  TheoryFamily::QdLA_II, TheoryFamily::QdMoA_II,
                                      TheoryFamily::Ridge1D,  TheoryFamily::DictRidge1D};

bool is_la(TheoryFamily f) { return f == TheoryFamily::LA_I || f == TheoryFamily::QdLA_II; }
bool is_moa(TheoryFamily f) { return f == TheoryFamily::MoA_I || f == TheoryFamily::QdMoA_II; }

std::vector<ActivationPair> upper_pairs(std::size_t k) {
  std::vector<ActivationPair> pairs;
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = p; q < k; ++q) pairs.push_back({p, q});
  }
  return pairs;
}

double dot(const double* row, const double* xb, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += row[i] * xb[i];
  return s;
}

std::size_t find_entry(const std::vector<ActivationKind>& dict, ActivationKind kind) {
  const auto it = std::find(dict.begin(), dict.end(), kind);
  if (it == dict.end())
    throw UnsupportedError("activation " + std::string(name(kind.tag)) + " is not in the theory dictionary");
  return static_cast<std::size_t>(it - dict.begin());
}

// Per-point forward state with enough intermediates for the reverse sweep.
class Kernel {
 public:
  explicit Kernel(const TheoryNetwork& net)
      : net_(net),
        n_(net.dim + 1),
        k_(net.dictionary.size()),
        j_(net.channels()),
        type_ii_(is_type_ii(net.family)),
        zv_(k_), zd1_(k_), zd2_(k_), yv_(k_), yd1_(k_), yd2_(k_),
        gate_(j_, 0.0), tau_(j_, 0.0),
        s_(net.width * j_), sz_(s_.size()), sy_(s_.size()), szz_(s_.size()), syy_(s_.size()), szy_(s_.size()) {}

  PointEval forward(const Point& x) {
    xb_[0] = x[0];
    xb_[1] = net_.dim == 2 ? x[1] : 1.0;
    xb_[2] = 1.0;
    const std::size_t d = net_.dim;
    const bool moa = is_moa(net_.family);
    if (moa) {
      for (std::size_t j = 0; j < j_; ++j) {
        gate_[j] = std::tanh(dot(&net_.v[j * n_], xb_, n_));
        tau_[j] = 1.0 - gate_[j] * gate_[j];
      }
    }
    PointEval e;
    for (std::size_t k = 0; k < net_.width; ++k) {
      const double* wk = &net_.w[k * n_];
      const double* uk = type_ii_ ? &net_.u[k * n_] : nullptr;
      const double z = dot(wk, xb_, n_);
      const double y = type_ii_ ? dot(uk, xb_, n_) : 0.0;
      for (std::size_t c = 0; c < k_; ++c) {
        eval_with_derivs(net_.dictionary[c], z, zv_[c], zd1_[c], zd2_[c]);
        if (type_ii_) eval_with_derivs(net_.dictionary[c], y, yv_[c], yd1_[c], yd2_[c]);
      }
      for (std::size_t j = 0; j < j_; ++j) {
        const std::size_t at = k * j_ + j;
        std::size_t p = j, q = 0;
        if (type_ii_) {
          p = net_.pairs[j].left;
          q = net_.pairs[j].right;
          s_[at] = zv_[p] * yv_[q];
          sz_[at] = zd1_[p] * yv_[q];
          sy_[at] = zv_[p] * yd1_[q];
          szz_[at] = zd2_[p] * yv_[q];
          syy_[at] = zv_[p] * yd2_[q];
          szy_[at] = zd1_[p] * yd1_[q];
        } else {
          s_[at] = zv_[j];
          sz_[at] = zd1_[j];
          szz_[at] = zd2_[j];
          sy_[at] = syy_[at] = szy_[at] = 0.0;
        }
        const double ak = coefficient(k, j);
        const double c = ak * gamma(j);
        if (c != 0.0) {
          const bool on_kink = (z == 0.0 && has_derivative_jump(net_.dictionary[p])) ||
                               (type_ii_ && y == 0.0 && has_derivative_jump(net_.dictionary[q]));
          e.kink = e.kink || on_kink;
        }
        e.value += c * s_[at];
        for (std::size_t i = 0; i < d; ++i) {
          double g = c * (sz_[at] * wk[i] + (type_ii_ ? sy_[at] * uk[i] : 0.0));
          if (moa) g += ak * s_[at] * tau_[j] * net_.v[j * n_ + i];
          e.gradient[i] += g;
        }
      }
    }
    return e;
  }

  // Adds E ∂f/∂θ + Σ_i G_i ∂(∂_i f)/∂θ for the last forward point.
  void backward(double E, const Point& G, double* grad) const {
    const std::size_t d = net_.dim;
    const bool moa = is_moa(net_.family);
    const bool la = is_la(net_.family);
    const std::size_t ow = net_.a.size();
    const std::size_t ou = ow + net_.w.size();
    const std::size_t oal = ou + net_.u.size();
    const std::size_t ov = oal + net_.alpha.size();
    auto dotg = [&](const double* row) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += G[i] * row[i];
      return s;
    };
    for (std::size_t k = 0; k < net_.width; ++k) {
      const double gw = dotg(&net_.w[k * n_]);
      const double gu = type_ii_ ? dotg(&net_.u[k * n_]) : 0.0;
      double az = 0.0, ay = 0.0, pz = 0.0, py = 0.0;
      for (std::size_t j = 0; j < j_; ++j) {
        const std::size_t at = k * j_ + j;
        const double S = s_[at], Sz = sz_[at], Sy = sy_[at];
        const double ak = coefficient(k, j);
        const double gj = gamma(j);
        const double c = ak * gj;
        const double gv = moa ? dotg(&net_.v[j * n_]) : 0.0;
        const double g_dgamma = moa ? tau_[j] * gv : 0.0;
        const double along = Sz * gw + Sy * gu;

        const double da = E * gj * S + gj * along + g_dgamma * S;
        grad[net_.family == TheoryFamily::DictRidge1D ? at : k] += da;

        az += c * Sz;
        ay += c * Sy;
        pz += E * c * Sz + c * (szz_[at] * gw + szy_[at] * gu) + ak * g_dgamma * Sz;
        py += E * c * Sy + c * (syy_[at] * gu + szy_[at] * gw) + ak * g_dgamma * Sy;

        if (la) grad[oal + j] += ak * (E * S + along);
        if (moa) {
          const double r = ak * S;
          const double t = tau_[j] * (E * r + ak * along - 2.0 * gate_[j] * gv * r);
          for (std::size_t l = 0; l < n_; ++l) {
            grad[ov + j * n_ + l] += xb_[l] * t + (l < d ? tau_[j] * G[l] * r : 0.0);
          }
        }
      }
      for (std::size_t l = 0; l < n_; ++l) {
        grad[ow + k * n_ + l] += xb_[l] * pz + (l < d ? G[l] * az : 0.0);
        if (type_ii_) grad[ou + k * n_ + l] += xb_[l] * py + (l < d ? G[l] * ay : 0.0);
      }
    }
  }

 private:
  double coefficient(std::size_t k, std::size_t j) const {
    return net_.family == TheoryFamily::DictRidge1D ? net_.a[k * j_ + j] : net_.a[k];
  }
  double gamma(std::size_t j) const {
    if (is_la(net_.family)) return net_.alpha[j];
    if (is_moa(net_.family)) return gate_[j];
    return 1.0;
  }

  const TheoryNetwork& net_;
  std::size_t n_, k_, j_;
  bool type_ii_;
  double xb_[3] = {0.0, 0.0, 1.0};
  std::vector<double> zv_, zd1_, zd2_, yv_, yd1_, yd2_;
  std::vector<double> gate_, tau_;
  std::vector<double> s_, sz_, sy_, szz_, syy_, szy_;
};

}  // namespace

std::string_view name(TheoryFamily family) noexcept {
  switch (family) {
    case TheoryFamily::FixedI: return "FixedI";
    case TheoryFamily::LA_I: return "LA_I";
    case TheoryFamily::MoA_I: return "MoA_I";
    case TheoryFamily::FixedII: return "FixedII";
    case TheoryFamily::QdLA_II: return "QdLA_II";
    case TheoryFamily::QdMoA_II: return "QdMoA_II";
    case TheoryFamily::Ridge1D: return "Ridge1D";
    case TheoryFamily::DictRidge1D: return "DictRidge1D";
  }
  return "?";
}

TheoryFamily family_from_name(std::string_view n) {
  for (const TheoryFamily f : kFamilies) {
    if (name(f) == n) return f;
  }
  throw ConfigError("unknown theory family '" + std::string(n) + "'");
}

bool is_type_ii(TheoryFamily family) noexcept {
  return family == TheoryFamily::FixedII || family == TheoryFamily::QdLA_II || family == TheoryFamily::QdMoA_II;
}

const std::vector<ActivationKind>& theory_dictionary_i() {
  static const std::vector<ActivationKind> dict = {ActivationTag::ReLU, ActivationTag::ReLU2, ActivationTag::LeakyReLU,
                                                   ActivationTag::GELU, ActivationTag::SiLU,  ActivationTag::Tanh};
  return dict;
}

const std::vector<ActivationKind>& theory_dictionary_ii() {
  static const std::vector<ActivationKind> dict = {ActivationTag::Identity,  ActivationTag::ReLU, ActivationTag::ReLU2,
                                                   ActivationTag::LeakyReLU, ActivationTag::GELU, ActivationTag::SiLU,
                                                   ActivationTag::Tanh};
  return dict;
}

std::size_t TheoryNetwork::channels() const noexcept {
  return is_type_ii(family) ? pairs.size() : dictionary.size();
}

TheoryNetwork make_network(TheoryFamily family, std::size_t dim, std::size_t width, ActivationKind sigma,
                           ActivationKind sigma_q) {
  const bool ridge = family == TheoryFamily::Ridge1D || family == TheoryFamily::DictRidge1D;
  if (ridge && dim != 1) throw DimensionError(std::string(name(family)) + " is one-dimensional");
  if (dim != 1 && dim != 2) throw DimensionError("theory networks take dim 1 or 2, got " + std::to_string(dim));
  if (width == 0) throw ContractError("network width must be positive");

  TheoryNetwork net;
  net.family = family;
  net.dim = dim;
  net.width = width;
  switch (family) {
    case TheoryFamily::FixedI:
    case TheoryFamily::Ridge1D: net.dictionary = {sigma}; break;
    case TheoryFamily::FixedII:
      net.dictionary = {sigma, sigma_q};
      net.pairs = {{0, 1}};
      break;
    case TheoryFamily::LA_I:
    case TheoryFamily::MoA_I: net.dictionary = theory_dictionary_i(); break;
    case TheoryFamily::QdLA_II:
    case TheoryFamily::QdMoA_II:
      net.dictionary = theory_dictionary_ii();
      net.pairs = upper_pairs(net.dictionary.size());
      break;
    case TheoryFamily::DictRidge1D: net.dictionary = theory_dictionary_ii(); break;
  }
  const std::size_t n = dim + 1;
  const std::size_t j = net.channels();
  net.a.assign(family == TheoryFamily::DictRidge1D ? width * j : width, 0.0);
  net.w.assign(width * n, 0.0);
  if (is_type_ii(family)) net.u.assign(width * n, 0.0);
  if (is_la(family)) net.alpha.assign(j, 0.0);
  if (is_moa(family)) net.v.assign(j * n, 0.0);
  return net;
}

PointEval evaluate(const TheoryNetwork& net, const Point& x) { return Kernel(net).forward(x); }

std::vector<double> pack(const TheoryNetwork& net) {
  std::vector<double> p;
  p.reserve(net.a.size() + net.w.size() + net.u.size() + net.alpha.size() + net.v.size());
  for (const auto* block : {&net.a, &net.w, &net.u, &net.alpha, &net.v}) p.insert(p.end(), block->begin(), block->end());
  return p;
}

void unpack(TheoryNetwork& net, std::span<const double> params) {
  const std::size_t total = net.a.size() + net.w.size() + net.u.size() + net.alpha.size() + net.v.size();
  if (params.size() != total)
    throw DimensionError("unpack: expected " + std::to_string(total) + " parameters, got " +
                         std::to_string(params.size()));
  std::size_t at = 0;
  for (auto* block : {&net.a, &net.w, &net.u, &net.alpha, &net.v}) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(at), block->size(), block->begin());
    at += block->size();
  }
}

TheoryNetwork embed_fixed_in_la(const TheoryNetwork& fixed) {
  if (fixed.family == TheoryFamily::FixedI) {
    TheoryNetwork la = make_network(TheoryFamily::LA_I, fixed.dim, fixed.width);
    la.a = fixed.a;
    la.w = fixed.w;
    la.alpha[find_entry(la.dictionary, fixed.dictionary[0])] = 1.0;
    return la;
  }
  if (fixed.family == TheoryFamily::FixedII) {
    TheoryNetwork la = make_network(TheoryFamily::QdLA_II, fixed.dim, fixed.width);
    la.a = fixed.a;
    std::size_t p = find_entry(la.dictionary, fixed.dictionary[0]);
    std::size_t q = find_entry(la.dictionary, fixed.dictionary[1]);
    la.w = fixed.w;
    la.u = fixed.u;
    if (p > q) {  // channels keep p <= q, so the factors trade rows
      std::swap(p, q);
      std::swap(la.w, la.u);
    }
    for (std::size_t j = 0; j < la.pairs.size(); ++j) {
      if (la.pairs[j].left == p && la.pairs[j].right == q) la.alpha[j] = 1.0;
    }
    return la;
  }
  throw ContractError("embed_fixed_in_la needs a FixedI or FixedII network, got " + std::string(name(fixed.family)));
}

TheoryNetwork embed_la_in_moa(const TheoryNetwork& la, double rho) {
  if (!is_la(la.family))
    throw ContractError("embed_la_in_moa needs an LA network, got " + std::string(name(la.family)));
  if (!(rho > 0.0)) throw RangeError("embed_la_in_moa: rho must be positive");
  TheoryNetwork moa = la;
  moa.family = la.family == TheoryFamily::LA_I ? TheoryFamily::MoA_I : TheoryFamily::QdMoA_II;
  moa.alpha.clear();
  const std::size_t n = la.dim + 1;
  moa.v.assign(la.channels() * n, 0.0);
  for (std::size_t j = 0; j < la.channels(); ++j) {
    const double g = rho * la.alpha[j];
    if (!(std::abs(g) < 1.0))
      throw RangeError("embed_la_in_moa: |rho * alpha_" + std::to_string(j) + "| = " + std::to_string(std::abs(g)) +
                       " must be below 1");
    moa.v[j * n + la.dim] = std::atanh(g);  // constant gate through the bias coordinate
  }
  for (double& a : moa.a) a /= rho;
  return moa;
}

namespace detail {

FitSamples sample(const Evaluable& f, std::size_t dim, const std::vector<Point>& points) {
  FitSamples s;
  s.dim = dim;
  s.x = points;
  s.value.reserve(points.size());
  s.gradient.reserve(points.size());
  for (const Point& p : points) {
    const PointEval e = f(p);
    s.value.push_back(e.value);
    s.gradient.push_back(e.gradient);
  }
  return s;
}

double fit_objective(const TheoryNetwork& net, const FitSamples& s, std::vector<double>* gradient) {
  Kernel kernel(net);
  const double inv = 1.0 / static_cast<double>(s.x.size());
  if (gradient) gradient->assign(pack(net).size(), 0.0);
  double loss = 0.0;
  for (std::size_t n = 0; n < s.x.size(); ++n) {
    const PointEval e = kernel.forward(s.x[n]);
    const double err = e.value - s.value[n];
    Point eps{0.0, 0.0};
    double sq = err * err;
    for (std::size_t i = 0; i < s.dim; ++i) {
      eps[i] = e.gradient[i] - s.gradient[n][i];
      sq += 0.5 * eps[i] * eps[i];
    }
    loss += sq;
    if (gradient) kernel.backward(2.0 * err * inv, {eps[0] * inv, eps[1] * inv}, gradient->data());
  }
  return loss * inv;
}

void fit_residuals(const TheoryNetwork& net, const FitSamples& s, std::size_t count, double* out) {
  Kernel kernel(net);
  const double scale = 1.0 / std::sqrt(static_cast<double>(count));
  const double half = std::sqrt(0.5);
  for (std::size_t n = 0; n < count; ++n) {
    const PointEval e = kernel.forward(s.x[n]);
    *out++ = scale * (e.value - s.value[n]);
    for (std::size_t i = 0; i < s.dim; ++i) *out++ = scale * half * (e.gradient[i] - s.gradient[n][i]);
  }
}

}  // namespace detail

}  // namespace moa
