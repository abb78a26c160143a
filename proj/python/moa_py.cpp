#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

#include "moa/bench.hpp"
#include "moa/config.hpp"
#include "moa/errors.hpp"
#include "moa/expressivity.hpp"
#include "moa/report.hpp"
#include "moa/train.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

moa::Flavor parse_flavor(const std::string& s) {
  if (s == "type1") return moa::Flavor::TypeI;
  if (s == "type2") return moa::Flavor::TypeII;
  throw moa::ConfigError("flavor must be type1 or type2, got '" + s + "'");
}

moa::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw moa::DimensionError("expected a 2-D array");
  const auto* p = a.data();
  std::vector<double> data(p, p + a.size());
  return moa::Tensor::from_data({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                                std::move(data));
}

Array to_array(const moa::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

moa::FFNConfig ffn_config(const std::string& variant, std::size_t d_model, std::size_t hidden,
                          const std::string& dictionary, const std::string& gate, bool gate_bias, std::uint64_t seed) {
  moa::FFNConfig c;
  c.variant.tag = moa::variant_from_name(variant);
  c.d_model = d_model;
  c.hidden = hidden;
  c.gate = moa::gate_from_name(gate);
  c.gate_bias = gate_bias;
  c.seed = seed;
  if (!moa::is_baseline(c.variant.tag)) {
    const moa::Flavor f = moa::flavor_of(c.variant.tag);
    c.dictionary = moa::parse_dictionary(
        dictionary.empty() ? (f == moa::Flavor::TypeI ? "gsr2lr" : "gsr2ltr") : dictionary, f);
  }
  return c;
}

class PyFFN {
 public:
  PyFFN(const std::string& variant, std::size_t d_model, std::size_t hidden, const std::string& dictionary,
        const std::string& gate, bool gate_bias, std::uint64_t seed)
      : layer_(moa::init(ffn_config(variant, d_model, hidden, dictionary, gate, gate_bias, seed))) {}

  Array forward(const Array& x) const { return to_array(moa::forward(layer_, to_tensor(x))); }

  py::dict parameters() const {
    py::dict out;
    for (const auto& p : layer_.parameters()) out[py::str(p.name)] = to_array(p.tensor);
    return out;
  }

  void set_parameter(const std::string& name, const Array& value) {
    for (auto& p : layer_.parameters()) {
      if (p.name != name) continue;
      if (static_cast<std::size_t>(value.size()) != p.tensor.numel())
        throw moa::DimensionError("parameter " + name + " has " + std::to_string(p.tensor.numel()) + " values");
      std::copy(value.data(), value.data() + value.size(), p.tensor.mutable_data().begin());
      return;
    }
    throw moa::ConfigError("no parameter named '" + name + "'");
  }

  std::size_t param_count() const { return moa::param_count(layer_.config).total(); }
  std::string variant() const { return std::string(moa::name(layer_.config.variant.tag)); }

 private:
  moa::FFNLayer layer_;
};

py::dict witness_row(const moa::WitnessRow& r) {
  py::dict d;
  d["check"] = r.check;
  d["target"] = r.target;
  d["lambda"] = r.lambda;
  d["family"] = r.family;
  d["width"] = r.width;
  d["total"] = r.total;
  d["threshold"] = r.threshold;
  d["hard"] = r.hard;
  d["pass"] = r.pass;
  d["note"] = r.note;
  return d;
}

}  // namespace

PYBIND11_MODULE(_moa, m) {
  m.doc() = "Learnable-activation and mixture-of-activation FFN layers, witness checks and schedules";

  auto error = py::register_exception<moa::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<moa::ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<moa::NumericError>(m, "NumericError", error.ptr());
  py::register_exception<moa::DimensionError>(m, "DimensionError", error.ptr());

  m.def(
      "activation",
      [](const std::string& name, double t) {
        const moa::ActivationKind k = moa::activation_from_name(name);
        return py::make_tuple(moa::eval(k, t), moa::deriv(k, t));
      },
      py::arg("name"), py::arg("t"), "(value, derivative) of a named activation");
  m.def(
      "parse_dictionary",
      [](const std::string& code, const std::string& flavor) {
        std::vector<std::string> out;
        for (const auto& k : moa::parse_dictionary(code, parse_flavor(flavor)).entries) out.push_back(moa::name(k));
        return out;
      },
      py::arg("code"), py::arg("flavor") = "type1");

  py::class_<PyFFN>(m, "FFN")
      .def(py::init<const std::string&, std::size_t, std::size_t, const std::string&, const std::string&, bool,
                    std::uint64_t>(),
           py::arg("variant"), py::arg("d_model"), py::arg("hidden") = 0, py::arg("dictionary") = "",
           py::arg("gate") = "Sigmoid", py::arg("gate_bias") = false, py::arg("seed") = 0)
      .def("forward", &PyFFN::forward, py::arg("x"), "rows of x are tokens")
      .def("__call__", &PyFFN::forward, py::arg("x"))
      .def("parameters", &PyFFN::parameters)
      .def("set_parameter", &PyFFN::set_parameter, py::arg("name"), py::arg("value"))
      .def_property_readonly("param_count", &PyFFN::param_count)
      .def_property_readonly("variant", &PyFFN::variant);

  m.def(
      "analytic_flops",
      [](const std::string& variant, std::size_t d_model, std::size_t hidden, const std::string& dictionary) {
        return moa::analytic_flops(ffn_config(variant, d_model, hidden, dictionary, "Sigmoid", false, 0));
      },
      py::arg("variant"), py::arg("d_model"), py::arg("hidden") = 0, py::arg("dictionary") = "");

  m.def(
      "lr_at",
      [](double max_lr, const std::string& schedule, std::size_t warmup, std::size_t total, std::size_t step) {
        moa::TrainConfig c;
        c.max_lr = max_lr;
        c.schedule = moa::schedule_from_name(schedule);
        c.warmup_steps = warmup;
        c.total_steps = total;
        return moa::lr_at(c, step);
      },
      py::arg("max_lr"), py::arg("schedule"), py::arg("warmup"), py::arg("total"), py::arg("step"));

  m.def(
      "exactness_residual",
      [](const std::string& target, double lambda, std::size_t points) {
        const moa::WitnessTarget t = moa::make_target(moa::target_from_name(target), lambda);
        moa::GridSpec g;
        g.dim = moa::target_dim(t);
        g.points_per_axis = points;
        return moa::sobolev_distance(moa::as_evaluable(t), moa::as_evaluable(moa::exact_construct(t)), g).total;
      },
      py::arg("target"), py::arg("lam") = 1.0, py::arg("points") = 401);

  m.def(
      "jump_profile",
      [](const std::string& target, double lambda, const std::vector<double>& xs, double epsilon) {
        return moa::jump_profile(moa::make_target(moa::target_from_name(target), lambda), xs, epsilon).jump_values;
      },
      py::arg("target"), py::arg("lam"), py::arg("x1"), py::arg("epsilon") = 1e-3);

  m.def(
      "witness_suite",
      [](const std::string& suite, bool fits, bool tamper_relu2) {
        moa::WitnessOptions o;
        o.fits = fits;
        o.tamper_relu2 = tamper_relu2;
        moa::WitnessReport r;
        {
          py::gil_scoped_release release;
          r = moa::run_witness_suite(moa::suite_from_name(suite), o);
        }
        py::list rows;
        for (const auto& row : r.rows) rows.append(witness_row(row));
        return rows;
      },
      py::arg("suite") = "all", py::arg("fits") = false, py::arg("tamper_relu2") = false);

  m.def(
      "grad_check",
      [](std::size_t points, std::uint64_t seed) {
        moa::GradCheckOptions o;
        o.points = points;
        o.seed = seed;
        py::list rows;
        for (const auto& r : moa::grad_check_variants(o)) {
          py::dict d;
          d["variant"] = r.variant;
          d["max_param_error"] = r.max_param_error;
          d["max_input_error"] = r.max_input_error;
          d["pass"] = r.pass;
          rows.append(d);
        }
        return rows;
      },
      py::arg("points") = 20, py::arg("seed") = 0);

  m.def(
      "normalize_config", [](const std::string& text) { return moa::render_config(moa::parse_config(text)); },
      py::arg("text"), "parse and re-render a run config");
  m.def("config_keys", &moa::config_keys);
}
