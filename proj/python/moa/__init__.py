"""Learnable-activation and mixture-of-activation FFN layers."""

from ._moa import (
    FFN,
    ConfigError,
    DimensionError,
    Error,
    NumericError,
    activation,
    analytic_flops,
    config_keys,
    exactness_residual,
    grad_check,
    jump_profile,
    lr_at,
    normalize_config,
    parse_dictionary,
    witness_suite,
)

__all__ = [
    "FFN",
    "ConfigError",
    "DimensionError",
    "Error",
    "NumericError",
    "activation",
    "analytic_flops",
    "config_keys",
    "exactness_residual",
    "grad_check",
    "jump_profile",
    "lr_at",
    "normalize_config",
    "parse_dictionary",
    "witness_suite",
]
