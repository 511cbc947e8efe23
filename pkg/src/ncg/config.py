"""Experiment configuration: JSON documents validated before any work starts."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from . import model as M
from .signals import DEFAULT_N, DEFAULT_TAU, NoiseSpec
from .train import TrainConfig

_NOISE = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["ar1", "gaussian", "binary", "ternary_balanced", "ternary_unbalanced"]},
        "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1.5707963267948966},
        "cos_theta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_LAYER = {
    "type": "object",
    "properties": {
        "width": {"type": "integer", "minimum": 1},
        "channels": {"type": "integer", "minimum": 1},
        "batchnorm": {"type": "boolean"},
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    },
    "required": ["width", "channels"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "data": {
            "type": "object",
            "properties": {
                "a": _NOISE,
                "b": _NOISE,
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "n": {"type": "integer", "minimum": 1},
                "n_test": {"type": "integer", "minimum": 1},
                "dir": {"type": "string"},
                "csv": {"type": "string"},
                "test_csv": {"type": "string"},
                "column": {"type": ["string", "integer"]},
            },
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "preset": {"enum": sorted(M.PRESETS)},
                "hidden": {"type": "integer", "minimum": 1},
                "transformer_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "predictor_widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "K": {"type": "integer", "minimum": 2},
                "delta": {"type": "integer", "minimum": 1},
                "spec": {
                    "type": "object",
                    "properties": {
                        "transformer": {"type": "array", "items": _LAYER, "minItems": 1},
                        "predictor": {"type": "array", "items": _LAYER, "minItems": 1},
                        "K": {"type": "integer", "minimum": 2},
                        "delta": {"type": "integer", "minimum": 1},
                        "in_channels": {"type": "integer", "minimum": 1},
                        "alpha": {"type": "number", "minimum": 0},
                        "allow_overlap": {"type": "boolean"},
                        "stop_target_grad": {"type": "boolean"},
                    },
                    "required": ["transformer", "predictor", "K", "delta"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps_adam": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "chunk_length": {"type": "integer", "minimum": 1},
                "precision": {"enum": ["f32", "f64"]},
                "clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "checkpoint_every": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "eval": {
            "type": "object",
            "properties": {
                "correlation": {"type": "boolean"},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "plot_points": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "object",
            "properties": {
                "parameter": {"type": "string"},
                "values": {"type": "array"},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "seed": 0,
    "output": "ncg-out",
    "data": {"a": {"kind": "ar1", "cos_theta": 0.8660254037844386}, "b": {"kind": "gaussian"},
             "tau": DEFAULT_TAU, "n": DEFAULT_N},
    "model": {"preset": "noise-default"},
    "train": {"lr": 2e-3, "epochs": 200, "batch_size": 50_000, "chunk_length": 1000},
    "eval": {"correlation": True, "threshold": 0.2, "plot_points": 2000},
    "sweep": {"seeds": [0, 1, 2]},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("a", "b", "spec"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    for side in ("a", "b"):
        spec = cfg.get("data", {}).get(side)
        if spec is not None:
            try:
                NoiseSpec.from_dict(spec)
            except ValueError as exc:
                raise ConfigError(f"config error at data/{side}: {exc}") from None
    return cfg


def load(path=None, overrides: dict | None = None) -> dict:
    """Read a config (or just defaults), apply ``overrides``, validate, fill defaults."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    validate(user)
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    if "spec" in user.get("model", {}) and "preset" not in user.get("model", {}):
        cfg["model"].pop("preset", None)
    return validate(cfg)


def model_spec(cfg: dict) -> M.ModelSpec:
    m = cfg["model"]
    try:
        if "spec" in m:
            return M.ModelSpec.from_dict(m["spec"])
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in m.items() if k != "preset"}
        return M.preset(m.get("preset", "noise-default"), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config error at model: {exc}") from None


def train_config(cfg: dict) -> TrainConfig:
    t = {k: v for k, v in cfg["train"].items() if k != "checkpoint_every"}
    return TrainConfig(seed=cfg["seed"], **t)


def noise_specs(cfg: dict) -> tuple[NoiseSpec, NoiseSpec]:
    return NoiseSpec.from_dict(cfg["data"]["a"]), NoiseSpec.from_dict(cfg["data"]["b"])


ALIASES = {"cos_theta": "data.a.cos_theta", "theta": "data.a.theta", "batch_size": "train.batch_size",
           "lr": "train.lr", "epochs": "train.epochs", "tau": "data.tau", "hidden": "model.hidden",
           "delta": "model.delta"}


def set_path(cfg: dict, name: str, value) -> dict:
    """Return a copy of ``cfg`` with the dotted parameter ``name`` set to ``value``."""
    path = ALIASES.get(name, name).split(".")
    out = copy.deepcopy(cfg)
    node = out
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value
    if path[:2] == ["data", "a"] or path[:2] == ["data", "b"]:
        other = {"theta": "cos_theta", "cos_theta": "theta"}.get(path[-1])
        if other:
            node.pop(other, None)
            node["kind"] = "ar1"
    return validate(out)
