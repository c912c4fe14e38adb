"""Run configuration: defaults, named presets, schema validation, merging.

A run configuration is a plain JSON document that fully determines a run.
Resolution layers, later wins: built-in defaults, a named preset, a config
file, explicit overrides. The resolved document (all defaults expanded) is
what gets written next to a run's outputs; feeding it back reproduces the
run bit for bit.

Presets follow the ``{dataset}-n{size}`` naming scheme and carry the
size-dependent threshold-adaptation and scaling constants plus the epoch
budget that grows with network size.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .encoding import EncodingParams
from .engine import SimParams
from .neurodyn import ThetaParams
from .plasticity import ScalingParams
from .topology import NetworkConfig


class ConfigError(Exception):
    """Invalid, unknown, or contradictory run configuration."""


DEFAULTS: dict = {
    "preset": None,
    "dataset": "mnist",
    "mode": "simultaneous",
    "seed": 0,
    "epochs": 3,
    "phase2_epochs": 1,
    "n_hidden": 100,
    "hidden_blocks": 1,
    "beta": 0.1,
    "beta_out": 0.8,
    "theta": {
        "tau_theta": 6.0e6,
        "alpha": 8.4e5,
        "theta_init": 20.0,
        "denom_floor": 0.01,
    },
    "network": {
        "w_max_in": 1.0,
        "w_max_out": 8.0,
        "w_exc_to_inh": 10.4,
        "w_inh_to_exc": 17.4,
        "init_fraction": 0.3,
    },
    "sim": {
        "dt": 0.5,
        "t_present": 350.0,
        "t_rest": 150.0,
        "retry_in_eval": True,
    },
    "encoding": {
        "base_divisor": 4.0,
        "rate_boost": 32.0,
        "max_retries": 10,
        "teacher_rate": 200.0,
        "retry_min_spikes": 5,
    },
    "eval_every": 10_000,
    "eval_samples": None,
    "workers": 1,
    "checkpoint_every": None,
    "stop_after": None,
    "use_kernel": True,
}

# size-dependent constants straight from the per-size result tables
PRESETS: dict[str, dict] = {
    "mnist-n100": {
        "dataset": "mnist", "n_hidden": 100, "epochs": 3,
        "theta": {"tau_theta": 6.0e6, "alpha": 8.4e5}, "beta": 0.1,
    },
    "mnist-n400": {
        "dataset": "mnist", "n_hidden": 400, "epochs": 5,
        "theta": {"tau_theta": 6.0e6, "alpha": 8.4e5}, "beta": 0.1,
    },
    "mnist-n1600": {
        "dataset": "mnist", "n_hidden": 1600, "epochs": 7,
        "theta": {"tau_theta": 8.0e6, "alpha": 1.12e6}, "beta": 0.1,
    },
    "mnist-n6400": {
        "dataset": "mnist", "n_hidden": 6400, "epochs": 10,
        "theta": {"tau_theta": 2.0e7, "alpha": 2.0e6}, "beta": 0.1,
    },
    "mnist-n10000": {
        "dataset": "mnist", "n_hidden": 10000, "epochs": 20,
        "theta": {"tau_theta": 2.0e7, "alpha": 2.0e6}, "beta": 0.1,
    },
    "fashion-n400": {
        "dataset": "fashion-mnist", "n_hidden": 400, "epochs": 5,
        "theta": {"tau_theta": 5.0e7, "alpha": 5.0e6}, "beta": 0.05,
    },
    "fashion-n6400": {
        "dataset": "fashion-mnist", "n_hidden": 6400, "epochs": 10,
        "theta": {"tau_theta": 2.0e7, "alpha": 2.0e6}, "beta": 0.025,
    },
}

_NON_NEGATIVE_INT = {"type": "integer", "minimum": 0}
_POSITIVE_NUMBER = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": ["string", "null"]},
        "dataset": {"enum": ["mnist", "fashion-mnist"]},
        "mode": {"enum": ["simultaneous", "layer_by_layer", "unsupervised_only"]},
        "seed": _NON_NEGATIVE_INT,
        "epochs": {"type": "integer", "minimum": 1},
        "phase2_epochs": _NON_NEGATIVE_INT,
        "n_hidden": _NON_NEGATIVE_INT,
        "hidden_blocks": {"enum": [0, 1]},
        "beta": _POSITIVE_NUMBER,
        "beta_out": _POSITIVE_NUMBER,
        "theta": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_theta": _POSITIVE_NUMBER,
                "alpha": {"type": "number", "minimum": 0},
                "theta_init": _POSITIVE_NUMBER,
                "denom_floor": _POSITIVE_NUMBER,
            },
        },
        "network": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "w_max_in": _POSITIVE_NUMBER,
                "w_max_out": _POSITIVE_NUMBER,
                "w_exc_to_inh": _POSITIVE_NUMBER,
                "w_inh_to_exc": _POSITIVE_NUMBER,
                "init_fraction": {
                    "type": "number", "exclusiveMinimum": 0, "maximum": 1,
                },
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _POSITIVE_NUMBER,
                "t_present": _POSITIVE_NUMBER,
                "t_rest": {"type": "number", "minimum": 0},
                "retry_in_eval": {"type": "boolean"},
            },
        },
        "encoding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_divisor": _POSITIVE_NUMBER,
                "rate_boost": {"type": "number", "minimum": 0},
                "max_retries": _NON_NEGATIVE_INT,
                "teacher_rate": {"type": "number", "minimum": 0},
                "retry_min_spikes": _NON_NEGATIVE_INT,
            },
        },
        "eval_every": _NON_NEGATIVE_INT,
        "eval_samples": {"type": ["integer", "null"], "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "checkpoint_every": {"type": ["integer", "null"], "minimum": 1},
        "stop_after": {"type": ["integer", "null"], "minimum": 1},
        "use_kernel": {"type": "boolean"},
    },
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def _deep_merge(base: dict, extra: dict) -> dict:
    """Nested dicts merge key by key; anything else replaces."""
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    if config["hidden_blocks"] == 1 and config["n_hidden"] < 1:
        raise ConfigError("n_hidden must be at least 1 when a hidden block exists")
    if config["hidden_blocks"] == 0 and config["mode"] != "simultaneous":
        raise ConfigError(f"mode {config['mode']!r} needs a hidden block")


def resolve_config(
    preset: str | None = None,
    file_config: dict | None = None,
    overrides: dict | None = None,
) -> dict:
    """Merge defaults <- preset <- file <- overrides and validate the result."""
    merged = copy.deepcopy(DEFAULTS)
    file_config = dict(file_config or {})
    preset = preset or file_config.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(preset_names())}"
            )
        merged = _deep_merge(merged, PRESETS[preset])
        merged["preset"] = preset
    merged = _deep_merge(merged, file_config)
    if overrides:
        merged = _deep_merge(merged, overrides)
    validate_config(merged)
    return merged


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def write_config(path: str | Path, config: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def network_config_from_run(config: dict, n_input: int, n_labels: int = 10) -> NetworkConfig:
    """Build the structural config for a run; sizes come from the data."""
    theta = config["theta"]
    hidden_theta = ThetaParams(
        tau_theta=theta["tau_theta"],
        alpha=theta["alpha"],
        theta_init=theta["theta_init"],
        denom_floor=theta["denom_floor"],
        enabled=True,
    )
    # The two plastic matrices get separate scaling budgets. The feature
    # matrix spreads its column sum over ~150-200 active pixels, so beta=0.1
    # keeps per-synapse weights well inside [0, w_max_in]. The readout fans in
    # from the hidden layer where only ~1 cell in 10 serves a given class;
    # beta_out=0.8 puts those cells at w_max_out, which is what the readout
    # needs to reach threshold from a handful of presynaptic spikes.
    scaling = ScalingParams(beta=config["beta"])
    scaling_out = ScalingParams(beta=config["beta_out"])
    net = config["network"]
    return NetworkConfig(
        n_input=n_input,
        n_hidden=config["n_hidden"],
        n_labels=n_labels,
        hidden_blocks=config["hidden_blocks"],
        seed=config["seed"],
        w_max_in=net["w_max_in"],
        w_max_out=net["w_max_out"],
        w_exc_to_inh=net["w_exc_to_inh"],
        w_inh_to_exc=net["w_inh_to_exc"],
        init_fraction=net["init_fraction"],
        theta_exc=hidden_theta,
        scaling_in=scaling,
        scaling_out=scaling_out,
    )


def sim_params_from_run(config: dict) -> SimParams:
    sim = config["sim"]
    return SimParams(
        dt=sim["dt"],
        t_present=sim["t_present"],
        t_rest=sim["t_rest"],
        retry_in_eval=sim["retry_in_eval"],
    )


def encoding_params_from_run(config: dict) -> EncodingParams:
    enc = config["encoding"]
    return EncodingParams(
        base_divisor=enc["base_divisor"],
        rate_boost=enc["rate_boost"],
        max_retries=enc["max_retries"],
        teacher_rate=enc["teacher_rate"],
        dt=config["sim"]["dt"],
        retry_min_spikes=enc["retry_min_spikes"],
    )
