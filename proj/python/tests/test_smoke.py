import math

import numpy as np
import pytest

import moa


def test_activation_values():
    value, slope = moa.activation("ReLU", -0.5)
    assert (value, slope) == (0.0, 0.0)
    value, slope = moa.activation("Tanh", 0.0)
    assert value == 0.0 and slope == pytest.approx(1.0)
    assert moa.parse_dictionary("gsr2lr") == ["GELU", "SiLU", "ReLU2", "LeakyReLU", "ReLU"]


def test_ffn_forward_shapes_and_params():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 8))
    for variant in ["BaselineI", "LA_I", "MoA_I", "BaselineII", "BiMoA", "QdMoA"]:
        layer = moa.FFN(variant, d_model=8, hidden=16, seed=1)
        y = layer(x)
        assert y.shape == (5, 8)
        assert np.all(np.isfinite(y))
        counted = sum(p.size for p in layer.parameters().values())
        assert counted == layer.param_count


def test_set_parameter_changes_output():
    layer = moa.FFN("MoA_I", d_model=4, hidden=8)
    x = np.ones((2, 4))
    name = next(iter(layer.parameters()))
    before = layer(x)
    layer.set_parameter(name, np.zeros_like(layer.parameters()[name]))
    assert not np.array_equal(before, layer(x))
    with pytest.raises(moa.DimensionError):
        layer.set_parameter(name, np.zeros(1))
    with pytest.raises(moa.ConfigError):
        layer.set_parameter("nope", np.zeros(1))


def test_errors_map_to_python_exceptions():
    with pytest.raises(moa.ConfigError):
        moa.FFN("NoSuchVariant", d_model=4)
    with pytest.raises(moa.Error):
        moa.FFN("LA_I", d_model=4).forward(np.ones((2, 3)))


def test_flops_and_schedules():
    assert moa.analytic_flops("BaselineI", 64, 256) == 2 * 64 * 256 + 256
    assert moa.lr_at(3e-3, "cos", 10, 100, 100) == 3e-3 / 20
    assert moa.lr_at(3e-3, "wsd", 10, 100, 80) == 3e-3
    assert moa.lr_at(3e-3, "wsd", 10, 100, 100) == 0.0


def test_witness_checks():
    for target, lam in [("TLA_I", 1.0), ("TMoA_I", 2.0), ("TLA_II", 1.0), ("TMoA_II", 3.0)]:
        assert moa.exactness_residual(target, lam, points=101) <= 1e-12
    xs = [-0.75, -0.25, 0.5, 1.0]
    jumps = moa.jump_profile("TMoA_I", 2.0, xs)
    assert jumps == pytest.approx([math.tanh(2 * x) for x in xs], abs=1e-9)
    rows = moa.witness_suite("theorem1")
    assert all(r["pass"] for r in rows if r["hard"])
    tampered = moa.witness_suite("theorem1", tamper_relu2=True)
    assert [r["target"] for r in tampered if r["hard"] and not r["pass"]] == ["TLA_I"]


def test_grad_check_and_config():
    rows = moa.grad_check(points=2)
    assert len(rows) == 10 and all(r["pass"] for r in rows)
    text = moa.normalize_config("schema_version = 1\nffn.gate = Softmax\n")
    assert "ffn.gate = Softmax" in text
    assert "train.max_lr" in moa.config_keys()
    with pytest.raises(moa.ConfigError, match="unknown key"):
        moa.normalize_config("schema_version = 1\nffn.colour = red\n")
